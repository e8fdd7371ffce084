"""Finite-difference verification of every backward rule.

Each check builds a small graph from random inputs, backpropagates a
randomly weighted sum of its output, and compares the accumulated
gradients against central differences. The relative error of a
gradient entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import diffmath
from .diffmath import (
    ELEMENTWISE_RULES,
    Parameter,
    affine,
    backward,
    clamp,
    elementwise,
    log_softmax,
    reduce,
)
from .exc import ContractError, GradcheckFailure
from .models import VARIANTS, Batch, Model, ModelConfig


__all__ = ["GradcheckReport", "OpResult", "check_gradients"]


log = logging.getLogger(__name__)


ELEMENTWISE_TOLERANCE = 1e-6
GRAPH_TOLERANCE = 1e-4
STEP = 1e-5

INPUT_RANGES: Dict[str, Tuple[float, float]] = {
    "log": (0.5, 3.0),
    "sqrt": (0.5, 3.0),
    "log1mexp": (-3.0, -0.1),
    "lgamma": (0.2, 12.0),
}
"""Where to sample inputs for elementwise ops; others use (-2, 2)."""


@dataclass
class OpResult:
    op: str
    worst_relative_error: float
    tolerance: float
    n_checks: int

    @property
    def passed(self) -> bool:
        return self.worst_relative_error < self.tolerance


@dataclass
class GradcheckReport:
    results: Dict[str, OpResult] = field(default_factory=dict)

    @property
    def failing_ops(self) -> List[str]:
        return [op for op, result in self.results.items() if not result.passed]

    @property
    def passed(self) -> bool:
        return not self.failing_ops

    def add(self, op, error, tolerance):
        result = self.results.get(op)
        if result is None:
            self.results[op] = OpResult(op, error, tolerance, 1)
        else:
            result.worst_relative_error = max(result.worst_relative_error, error)
            result.n_checks += 1

    def raise_for_failures(self):
        if not self.passed:
            raise GradcheckFailure(self.failing_ops)


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_gradients(loss: Callable[[], float], arrays, step=STEP) -> List[np.ndarray]:
    """Central differences of ``loss()`` w.r.t. each array, perturbed in place."""
    gradients = []
    for array in arrays:
        gradient = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + step
            plus = loss()
            array[index] = original - step
            minus = loss()
            array[index] = original
            gradient[index] = (plus - minus) / (2 * step)
        gradients.append(gradient)
    return gradients


def check_graph(build: Callable, parameters: Sequence[Parameter], step=STEP) -> float:
    """Worst relative error of the gradients of ``build()`` w.r.t. parameters.

    ``build`` must construct a fresh 1x1 graph from the parameters'
    current values each time it's called.

    """
    for parameter in parameters:
        parameter.zero_grad()
    backward(build())
    analytic = [parameter.grad.copy() for parameter in parameters]
    numeric = numeric_gradients(
        lambda: build().item(), [parameter.values for parameter in parameters], step
    )
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _weighted_sum(node, weights):
    return (node * weights).sum()


# Elementwise ops ------------------------------------------------------


def check_elementwise(op_tag: str, rng: np.random.Generator, step=STEP) -> float:
    """Compare an elementwise op's backward rule with its own forward.

    Since an elementwise op's Jacobian is diagonal, every entry's
    central difference is computed at once.

    """
    low, high = INPUT_RANGES.get(op_tag, (-2.0, 2.0))
    x = Parameter("x", rng.uniform(low, high, size=(3, 4)))
    weights = rng.standard_normal((3, 4))
    backward(_weighted_sum(elementwise(op_tag, x), weights))
    forward = ELEMENTWISE_RULES[op_tag].forward
    numeric = (
        weights * (forward(x.values + step) - forward(x.values - step)) / (2 * step)
    )
    return relative_error(x.grad, numeric)


# Graph-level ops ------------------------------------------------------


def _parameters(rng, **shapes):
    return [
        Parameter(name, rng.standard_normal(shape)) for name, shape in shapes.items()
    ]


def _binary_check(fn, b_shape, positive_b=False):
    def check(rng):
        a = Parameter("a", rng.standard_normal((3, 4)))
        if positive_b:
            b = Parameter("b", rng.uniform(0.5, 2.0, size=b_shape))
        else:
            b = Parameter("b", rng.standard_normal(b_shape))
        weights = rng.standard_normal((3, 4))
        return check_graph(lambda: _weighted_sum(fn(a, b), weights), [a, b])

    return check


def _affine_check(rng):
    x, W, b = _parameters(rng, x=(3, 4), W=(4, 2), b=(1, 2))
    weights = rng.standard_normal((3, 2))
    return check_graph(lambda: _weighted_sum(affine(x, W, b), weights), [x, W, b])


def _reduce_check(op_tag, axis):
    def check(rng):
        (x,) = _parameters(rng, x=(3, 4))
        out_shape = {"rows": (1, 4), "cols": (3, 1), "all": (1, 1)}[axis]
        weights = rng.standard_normal(out_shape)
        return check_graph(lambda: _weighted_sum(reduce(op_tag, x, axis), weights), [x])

    return check


def _log_softmax_check(rng):
    (x,) = _parameters(rng, x=(3, 4))
    weights = rng.standard_normal((3, 4))
    return check_graph(lambda: _weighted_sum(log_softmax(x), weights), [x])


def _clamp_check(rng):
    # Keep inputs away from the bounds, where the gradient jumps
    values = rng.uniform(-2.0, 2.0, size=(3, 4))
    values[np.abs(np.abs(values) - 1.0) < 0.01] += 0.05
    x = Parameter("x", values)
    weights = rng.standard_normal((3, 4))
    return check_graph(lambda: _weighted_sum(clamp(x, -1.0, 1.0), weights), [x])


GRAPH_CHECKS: Dict[str, Callable[[np.random.Generator], float]] = {
    "add": _binary_check(diffmath.add, (1, 4)),
    "sub": _binary_check(diffmath.sub, (3, 1)),
    "mul": _binary_check(diffmath.mul, (1, 1)),
    "div": _binary_check(diffmath.div, (1, 4), positive_b=True),
    "affine": _affine_check,
    "sum[rows]": _reduce_check("sum", "rows"),
    "sum[cols]": _reduce_check("sum", "cols"),
    "sum[all]": _reduce_check("sum", "all"),
    "mean[rows]": _reduce_check("mean", "rows"),
    "mean[cols]": _reduce_check("mean", "cols"),
    "mean[all]": _reduce_check("mean", "all"),
    "log_softmax": _log_softmax_check,
    "clamp": _clamp_check,
}


# Model ELBO graphs ----------------------------------------------------


def elbo_check_configs() -> Dict[str, Tuple[ModelConfig, bool]]:
    """Small model configs whose full ELBO graphs are checked.

    Values are (config without a seed, sample_from_prior).

    """
    configs = {}
    for variant in VARIANTS:
        feature_dim = 3 if variant == "nbvae_c" else None
        config = ModelConfig(
            variant,
            input_dim=4,
            latent_dim=2,
            encoder_layers=(3,),
            feature_dim=feature_dim,
        )
        configs[f"elbo[{variant}]"] = (config, False)
    configs["elbo[nbvae_c,prior_sample]"] = (configs["elbo[nbvae_c]"][0], True)
    configs["elbo[nbvae,separate_decoders]"] = (
        ModelConfig("nbvae", 4, 2, encoder_layers=(3,), shared_decoder=False),
        False,
    )
    return configs


def check_elbo(config: ModelConfig, sample_from_prior, rng) -> float:
    model = Model(config)
    for parameter in model.params:
        parameter.values[...] = rng.uniform(-0.5, 0.5, size=parameter.shape)
    n_rows = 3
    if config.variant in ("nbvae_b", "nbvae_c"):
        counts = (rng.random((n_rows, config.input_dim)) < 0.5).astype(np.float64)
    else:
        counts = rng.poisson(2.0, size=(n_rows, config.input_dim)).astype(np.float64)
    features = None
    if config.feature_dim is not None:
        features = rng.standard_normal((n_rows, config.feature_dim))
    batch = Batch(counts, features)
    noise = rng.standard_normal((n_rows, config.latent_dim))
    return check_graph(
        lambda: model.elbo(batch, 0.5, noise, sample_from_prior), list(model.params)
    )


# Suite ----------------------------------------------------------------


def check_gradients(
    seeds: Iterable[int] = range(100),
    tolerance: float = GRAPH_TOLERANCE,
    elementwise_tolerance: float = ELEMENTWISE_TOLERANCE,
    ops: Optional[Sequence[str]] = None,
) -> GradcheckReport:
    """Run the gradient suite over the given seeds.

    Args:
        seeds: One round of checks runs per seed.
        tolerance: Maximum relative error for graph-level checks.
        elementwise_tolerance: Maximum relative error for elementwise
            ops.
        ops: Restrict the suite to these op names.

    Returns:
        The worst relative error seen for every op.

    """
    elbo_configs = elbo_check_configs()
    available = list(ELEMENTWISE_RULES) + list(GRAPH_CHECKS) + list(elbo_configs)
    if ops is not None:
        unknown = sorted(set(ops) - set(available))
        if unknown:
            raise ContractError(f"Unknown gradient checks: {', '.join(unknown)}")
        selected = [op for op in available if op in ops]
    else:
        selected = available
    report = GradcheckReport()
    for seed in seeds:
        for op in selected:
            rng = np.random.default_rng([seed, available.index(op)])
            if op in ELEMENTWISE_RULES:
                report.add(op, check_elementwise(op, rng), elementwise_tolerance)
            elif op in GRAPH_CHECKS:
                report.add(op, GRAPH_CHECKS[op](rng), tolerance)
            else:
                config, sample_from_prior = elbo_configs[op]
                config = ModelConfig(**{**config.as_dict(), "seed": seed})
                report.add(op, check_elbo(config, sample_from_prior, rng), tolerance)
    for result in report.results.values():
        log.debug(
            "%s: worst relative error %.3e", result.op, result.worst_relative_error
        )
    if not report.passed:
        log.warning("Gradient check failed for %s", ", ".join(report.failing_ops))
    return report
