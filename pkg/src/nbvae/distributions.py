"""Log-likelihoods, KL divergences, and reparameterized sampling.

The ``*_rows`` functions build graph nodes holding one value per row
(shape ``(n, 1)``); models use them to assemble the ELBO. The functions
without the suffix evaluate the same graphs on plain arrays and return
a float summed over all rows and dimensions.

Negative-binomial parameterization: ``NB(y; r, p)`` has pmf
``Gamma(y + r) / (Gamma(r) y!) * p**y * (1 - p)**r``, so ``p`` is the
probability attached to each count.

"""
from dataclasses import dataclass

import numpy as np

from .diffmath import (
    DiffNode,
    as_matrix,
    constant,
    elementwise,
    lgamma,
    lgamma_values,
    log_softmax,
)
from .exc import ContractError, DimensionError, NumericDomainError


__all__ = [
    "LatentGaussian",
    "bernoulli_link_loglik",
    "bernoulli_link_loglik_rows",
    "bernoulli_link_probability",
    "dirmulti_logpmf",
    "dirmulti_logpmf_rows",
    "kl_general",
    "kl_general_rows",
    "kl_standard",
    "kl_standard_rows",
    "multinomial_loglik",
    "multinomial_loglik_rows",
    "nb_logpmf",
    "nb_logpmf_rows",
    "reparam_sample",
]


@dataclass(frozen=True, eq=False)
class LatentGaussian:

    """Diagonal Gaussians over the K-dimensional latent code, one per row.

    Stored as mean and log-variance nodes of shape ``(n, K)`` so the
    variance is positive by construction.

    """

    mean: DiffNode
    log_variance: DiffNode

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise DimensionError(
                f"Mean {self.mean.shape} and log-variance "
                f"{self.log_variance.shape} shapes differ"
            )

    @classmethod
    def from_values(cls, mean, variance) -> "LatentGaussian":
        mean, variance = as_matrix(mean), as_matrix(variance)
        if not (variance > 0).all():
            raise ContractError("Variance must be strictly positive")
        return cls(constant(mean), constant(np.log(variance)))

    @classmethod
    def standard(cls, n_rows, latent_dim) -> "LatentGaussian":
        zeros = np.zeros((n_rows, latent_dim))
        return cls(constant(zeros), constant(zeros))

    @property
    def variance(self) -> DiffNode:
        return self.log_variance.exp()

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[1]


def _require(op, values, mask, detail):
    if not mask.all():
        index = tuple(int(i) for i in np.argwhere(~mask)[0])
        raise NumericDomainError(op, index, float(values[index]), detail)


def _check_counts(op, y):
    _require(op, y.values, y.values >= 0, "counts must be non-negative")


def _check_rate(op, r):
    _require(op, r.values, r.values > 0, "r must be positive")


def _check_probability(op, p):
    _require(op, p.values, (p.values > 0) & (p.values < 1), "p must lie in (0, 1)")


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# Likelihoods ----------------------------------------------------------


def nb_logpmf_rows(y, r, p) -> DiffNode:
    """Per-row negative-binomial log pmf summed over dimensions.

    ``p`` may be ``(n, V)`` or a per-row ``(n, 1)`` column.

    """
    y, r, p = constant(y), constant(r), constant(p)
    _check_same_shape("nb_logpmf", y, r)
    _check_counts("nb_logpmf", y)
    _check_rate("nb_logpmf", r)
    _check_probability("nb_logpmf", p)
    log_coefficient = lgamma_values(y.values + 1.0)
    ll = (
        lgamma(r + y)
        - lgamma(r)
        - log_coefficient
        + y * p.log()
        + r * elementwise("log", 1.0 - p)
    )
    return ll.sum("cols")


def dirmulti_logpmf_rows(y, r) -> DiffNode:
    """Per-row Dirichlet-multinomial log pmf given the row total."""
    y, r = constant(y), constant(r)
    _check_same_shape("dirmulti_logpmf", y, r)
    _check_counts("dirmulti_logpmf", y)
    _check_rate("dirmulti_logpmf", r)
    total = y.values.sum(axis=1, keepdims=True)
    log_coefficient = lgamma_values(total + 1.0) - lgamma_values(y.values + 1.0).sum(
        axis=1, keepdims=True
    )
    r_total = r.sum("cols")
    return (
        log_coefficient
        + lgamma(r_total)
        - lgamma(r_total + total)
        + (lgamma(y + r) - lgamma(r)).sum("cols")
    )


def multinomial_loglik_rows(y, logits) -> DiffNode:
    """Per-row ``sum_v y_v log softmax(logits)_v``.

    The multinomial coefficient is left out; it doesn't depend on any
    parameter.

    """
    y, logits = constant(y), constant(logits)
    _check_same_shape("multinomial_loglik", y, logits)
    return (y * log_softmax(logits)).sum("cols")


def bernoulli_link_loglik_rows(y, r, p) -> DiffNode:
    """Per-row log-likelihood of binary ``y`` under the NB threshold link.

    ``y_v = 1`` with probability ``1 - (1 - p_v)**r_v``, i.e. the
    probability that an ``NB(r_v, p_v)`` count is at least one.

    """
    y, r, p = constant(y), constant(r), constant(p)
    _check_same_shape("bernoulli_link_loglik", y, r)
    if not np.isin(y.values, (0.0, 1.0)).all():
        raise ContractError("bernoulli_link_loglik needs binary y")
    _check_rate("bernoulli_link_loglik", r)
    _check_probability("bernoulli_link_loglik", p)
    # log P(m = 0) = r log(1 - p)
    log_zero = r * elementwise("log", 1.0 - p)
    ll = y * elementwise("log1mexp", log_zero) + (1.0 - y) * log_zero
    return ll.sum("cols")


def bernoulli_link_probability(r, p) -> np.ndarray:
    """``1 - (1 - p)**r`` evaluated stably on arrays."""
    r, p = np.asarray(r, dtype=np.float64), np.asarray(p, dtype=np.float64)
    return -np.expm1(r * np.log1p(-p))


# KL divergences & sampling --------------------------------------------


def kl_standard_rows(q: LatentGaussian) -> DiffNode:
    """Per-row KL(q || N(0, I))."""
    terms = elementwise("square", q.mean) + q.variance - 1.0 - q.log_variance
    return 0.5 * terms.sum("cols")


def kl_general_rows(q: LatentGaussian, p: LatentGaussian) -> DiffNode:
    """Per-row KL(q || p) between diagonal Gaussians."""
    if q.mean.shape != p.mean.shape:
        raise DimensionError(f"KL between shapes {q.mean.shape} and {p.mean.shape}")
    difference = elementwise("square", q.mean - p.mean)
    terms = p.log_variance - q.log_variance + (q.variance + difference) / p.variance
    return 0.5 * (terms - 1.0).sum("cols")


def reparam_sample(q: LatentGaussian, noise) -> DiffNode:
    """Draw ``z = mean + sqrt(variance) * noise``, differentiable in q."""
    noise = constant(noise)
    if noise.shape != q.mean.shape:
        raise DimensionError(
            f"Noise shape {noise.shape} != latent shape {q.mean.shape}"
        )
    return q.mean + elementwise("exp", 0.5 * q.log_variance) * noise


# Scalar evaluation ----------------------------------------------------


def nb_logpmf(y, r, p) -> float:
    """Negative-binomial log pmf of ``y`` summed over dimensions."""
    return nb_logpmf_rows(y, r, p).sum().item()


def dirmulti_logpmf(y, r) -> float:
    """Dirichlet-multinomial log pmf of ``y`` conditioned on its total."""
    return dirmulti_logpmf_rows(y, r).sum().item()


def multinomial_loglik(y, logits) -> float:
    return multinomial_loglik_rows(y, logits).sum().item()


def bernoulli_link_loglik(y, r, p) -> float:
    return bernoulli_link_loglik_rows(y, r, p).sum().item()


def kl_standard(q: LatentGaussian) -> float:
    return kl_standard_rows(q).sum().item()


def kl_general(q: LatentGaussian, p: LatentGaussian) -> float:
    return kl_general_rows(q, p).sum().item()
