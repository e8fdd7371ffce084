from unittest import TestCase

import numpy as np
from scipy import special

from nbvae import diffmath
from nbvae.diffmath import (
    Parameter,
    affine,
    backward,
    clamp,
    constant,
    digamma_values,
    elementwise,
    lgamma,
    lgamma_values,
    log_softmax,
    reduce,
    reset,
)
from nbvae.exc import ContractError, DimensionError, NumericDomainError


class TestSpecialFunctions(TestCase):
    def test_lgamma_matches_scipy(self):
        x = np.concatenate((np.linspace(1e-3, 0.5, 50), np.linspace(0.5, 200, 500)))
        expected = special.gammaln(x)
        error = np.abs(lgamma_values(x) - expected) / np.maximum(1, np.abs(expected))
        self.assertLess(error.max(), 1e-10)

    def test_lgamma_known_values(self):
        self.assertAlmostEqual(float(lgamma_values(1.0)), 0.0, places=12)
        self.assertAlmostEqual(float(lgamma_values(2.0)), 0.0, places=12)
        self.assertAlmostEqual(
            float(lgamma_values(0.5)), 0.5 * np.log(np.pi), places=12
        )

    def test_digamma_matches_scipy(self):
        x = np.concatenate((np.linspace(1e-2, 1, 50), np.linspace(1, 300, 500)))
        expected = special.digamma(x)
        error = np.abs(digamma_values(x) - expected) / np.maximum(1, np.abs(expected))
        self.assertLess(error.max(), 1e-10)

    def test_domain(self):
        with self.assertRaises(NumericDomainError) as context:
            lgamma_values(np.array([1.0, 0.0, 2.0]))
        self.assertEqual(context.exception.op, "lgamma")
        self.assertEqual(context.exception.index, (1,))
        self.assertRaises(NumericDomainError, digamma_values, -1.0)


class TestDiffNode(TestCase):
    def test_shapes(self):
        self.assertEqual(constant(3.0).shape, (1, 1))
        self.assertEqual(constant([1.0, 2.0]).shape, (1, 2))
        self.assertRaises(DimensionError, constant, np.zeros((2, 2, 2)))

    def test_item_needs_scalar(self):
        self.assertEqual(constant(2.5).item(), 2.5)
        self.assertRaises(ContractError, constant([1.0, 2.0]).item)

    def test_product_rule(self):
        x = Parameter("x", [[2.0, -3.0]])
        loss = (x * x + 3.0 * x).sum()
        loss.backward()
        self.assertEqual(x.grad.tolist(), [[7.0, -3.0]])

    def test_division(self):
        a = Parameter("a", [[6.0]])
        b = Parameter("b", [[2.0]])
        (a / b).sum().backward()
        self.assertAlmostEqual(a.grad[0, 0], 0.5)
        self.assertAlmostEqual(b.grad[0, 0], -1.5)

    def test_shared_subexpression_visited_once(self):
        x = Parameter("x", [[1.5]])
        y = x.exp()
        loss = (y + y).sum()
        loss.backward()
        self.assertAlmostEqual(x.grad[0, 0], 2 * np.exp(1.5))

    def test_broadcast_gradients_sum_to_operand_shape(self):
        x = constant(np.ones((3, 2)))
        row = Parameter("row", [[1.0, 2.0]])
        column = Parameter("column", [[1.0], [2.0], [3.0]])
        ((x + row) * column).sum().backward()
        self.assertEqual(row.grad.tolist(), [[6.0, 6.0]])
        self.assertEqual(column.grad.tolist(), [[5.0], [7.0], [9.0]])

    def test_incompatible_shapes(self):
        self.assertRaises(
            DimensionError, diffmath.add, np.zeros((2, 3)), np.zeros((3, 2))
        )

    def test_affine(self):
        x = constant([[1.0, 2.0]])
        W = Parameter("W", [[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
        b = Parameter("b", [[0.5, 0.5, 0.5]])
        y = affine(x, W, b)
        self.assertEqual(y.values.tolist(), [[1.5, 2.5, 4.5]])
        y.sum().backward()
        self.assertEqual(W.grad.tolist(), [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
        self.assertEqual(b.grad.tolist(), [[1.0, 1.0, 1.0]])
        self.assertRaises(DimensionError, affine, constant([[1.0]]), W, b)

    def test_reductions(self):
        x = Parameter("x", np.arange(6.0).reshape(2, 3))
        self.assertEqual(reduce("sum", x, "rows").values.tolist(), [[3.0, 5.0, 7.0]])
        self.assertEqual(reduce("mean", x, "cols").values.tolist(), [[1.0], [4.0]])
        loss = reduce("mean", x, "all")
        self.assertEqual(loss.item(), 2.5)
        loss.backward()
        self.assertTrue(np.allclose(x.grad, 1 / 6))
        self.assertRaises(ContractError, reduce, "max", x, "all")
        self.assertRaises(ContractError, reduce, "sum", x, "diagonal")

    def test_log_softmax_rows_normalize(self):
        x = Parameter("x", [[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
        y = log_softmax(x)
        self.assertTrue(np.allclose(np.exp(y.values).sum(axis=1), 1.0))
        self.assertTrue(np.allclose(y.values[1], -np.log(3.0)))
        # Each row's log-probabilities sum to a constant minus 3 * logsumexp
        y.sum().backward()
        self.assertTrue(np.allclose(x.grad.sum(axis=1), 0.0))

    def test_clamp_gradient_zero_outside(self):
        x = Parameter("x", [[-2.0, 0.5, 3.0]])
        clamp(x, -1.0, 1.0).sum().backward()
        self.assertEqual(x.grad.tolist(), [[0.0, 1.0, 0.0]])

    def test_lgamma_backward_is_digamma(self):
        x = Parameter("x", [[0.3, 4.0, 25.0]])
        lgamma(x).sum().backward()
        self.assertTrue(np.allclose(x.grad, special.digamma(x.values), atol=1e-10))

    def test_domain_errors_name_the_op(self):
        with self.assertRaises(NumericDomainError) as context:
            constant([[1.0, -1.0]]).log()
        self.assertEqual(context.exception.op, "log")
        self.assertEqual(context.exception.index, (0, 1))
        self.assertEqual(context.exception.exit_code, 3)
        self.assertRaises(NumericDomainError, elementwise, "log1mexp", constant(0.5))

    def test_unknown_op(self):
        self.assertRaises(ContractError, elementwise, "erf", constant(1.0))


class TestBackward(TestCase):
    def test_needs_scalar_loss(self):
        x = Parameter("x", [[1.0, 2.0]])
        self.assertRaises(ContractError, backward, x * 2.0)

    def test_second_call_needs_reset(self):
        x = Parameter("x", [[1.0]])
        loss = (x * 3.0).sum()
        loss.backward()
        self.assertRaises(ContractError, loss.backward)
        reset(loss)
        loss.backward()
        # Parameter gradients accumulate until zeroed
        self.assertEqual(x.grad[0, 0], 6.0)
        x.zero_grad()
        self.assertEqual(x.grad[0, 0], 0.0)

    def test_constants_get_no_gradient(self):
        c = constant([[2.0]])
        x = Parameter("x", [[3.0]])
        (c * x).sum().backward()
        self.assertEqual(c.grad[0, 0], 0.0)
        self.assertEqual(x.grad[0, 0], 2.0)

    def test_rules_looked_up_at_call_time(self):
        original = diffmath.ELEMENTWISE_RULES["exp"]
        broken = diffmath.ElementwiseRule(np.exp, lambda x, y: 2 * y)
        diffmath.ELEMENTWISE_RULES["exp"] = broken
        try:
            x = Parameter("x", [[0.0]])
            x.exp().sum().backward()
        finally:
            diffmath.ELEMENTWISE_RULES["exp"] = original
        self.assertEqual(x.grad[0, 0], 2.0)
