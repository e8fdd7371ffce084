"""Seeded synthetic datasets for desk-scale experiments.

Every generator draws from ``numpy.random.default_rng(seed)`` only, so
the same arguments always produce the same data.

"""
import logging

import numpy as np

from .data import BinaryMatrix, Dataset, FeatureMatrix, SparseCountMatrix
from .exc import ContractError


__all__ = [
    "bursty_corpus",
    "latent_factor_binary",
    "nb_mixture_corpus",
    "planted_multilabel",
]


log = logging.getLogger(__name__)


def _positive(**kwargs):
    for name, value in kwargs.items():
        if value < 1:
            raise ContractError(f"{name} must be >= 1; got {value}")


def nb_mixture_corpus(
    n_docs=500, vocab_size=50, n_components=3, seed=0, mean_length=60.0
) -> Dataset:
    """Documents drawn from a mixture of negative-binomial components.

    Each component has its own per-word dispersion ``r`` and a shared
    probability ``p`` chosen so an average document holds about
    ``mean_length`` tokens.

    """
    _positive(n_docs=n_docs, vocab_size=vocab_size, n_components=n_components)
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(n_components))
    # Each component concentrates its mass on a different block of words
    r = rng.gamma(0.5, 0.2, size=(n_components, vocab_size))
    for k, block in enumerate(np.array_split(np.arange(vocab_size), n_components)):
        r[k, block] += rng.gamma(2.0, 1.0, size=len(block))
    # E[y] = r p / (1 - p)
    odds = mean_length / r.sum(axis=1, keepdims=True)
    p = odds / (1.0 + odds)
    components = rng.choice(n_components, size=n_docs, p=weights)
    counts = rng.negative_binomial(r[components], 1.0 - p[components])
    log.debug("Generated NB mixture corpus: %d docs x %d words", n_docs, vocab_size)
    return Dataset(
        SparseCountMatrix.from_dense(counts),
        modality="counts",
        name=f"nb-mixture-{n_docs}x{vocab_size}-seed{seed}",
    )


def bursty_corpus(
    n_docs=2000,
    vocab_size=2000,
    n_topics=20,
    seed=0,
    mean_length=150.0,
    burstiness=0.05,
) -> Dataset:
    """Topic-mixture text with per-document burstiness.

    Word probabilities for a document come from its topic mixture. The
    document then draws its own word distribution from a Dirichlet
    centered there with total concentration ``burstiness * vocab_size``
    (smaller is burstier) before sampling its tokens.

    """
    _positive(n_docs=n_docs, vocab_size=vocab_size, n_topics=n_topics)
    rng = np.random.default_rng(seed)
    topics = rng.dirichlet(np.full(vocab_size, 0.05), size=n_topics)
    mixtures = rng.dirichlet(np.full(n_topics, 0.3), size=n_docs)
    probabilities = mixtures @ topics
    concentration = burstiness * vocab_size
    lengths = rng.poisson(mean_length, size=n_docs) + 1
    counts = np.empty((n_docs, vocab_size), dtype=np.int64)
    for j in range(n_docs):
        alpha = np.maximum(concentration * probabilities[j], 1e-3)
        counts[j] = rng.multinomial(lengths[j], rng.dirichlet(alpha))
    log.debug("Generated bursty corpus: %d docs x %d words", n_docs, vocab_size)
    return Dataset(
        SparseCountMatrix.from_dense(counts),
        modality="counts",
        name=f"bursty-{n_docs}x{vocab_size}-seed{seed}",
    )


def latent_factor_binary(
    n_users=2000, n_items=500, rank=10, seed=0, density=0.05
) -> Dataset:
    """Implicit feedback from a latent-factor Bernoulli model.

    ``P(user u consumed item i) = sigmoid(u . i / sqrt(rank) + b)`` with
    ``b`` set from the target ``density``. Item popularity is skewed by
    a per-item offset.

    """
    _positive(n_users=n_users, n_items=n_items, rank=rank)
    if not 0 < density < 1:
        raise ContractError(f"density must be in (0, 1); got {density}")
    rng = np.random.default_rng(seed)
    users = rng.standard_normal((n_users, rank))
    items = rng.standard_normal((n_items, rank))
    popularity = rng.normal(0.0, 1.0, size=n_items)
    logits = 2.0 * users @ items.T / np.sqrt(rank) + popularity
    logits += np.log(density / (1.0 - density)) - 1.0
    interactions = rng.random((n_users, n_items)) < 1.0 / (1.0 + np.exp(-logits))
    log.debug(
        "Generated binary matrix: %d users x %d items, density %.4f",
        n_users,
        n_items,
        interactions.mean(),
    )
    return Dataset(
        BinaryMatrix.from_dense(interactions.astype(np.int64)),
        modality="binary",
        name=f"latent-factor-{n_users}x{n_items}-seed{seed}",
    )


def planted_multilabel(
    n_samples=5000,
    n_features=50,
    n_labels=100,
    seed=0,
    signal=3.0,
    offset=-4.0,
    p=0.5,
) -> Dataset:
    """Labels generated from features by a planted linear map.

    ``log r = signal * x A / sqrt(D) + offset`` for a random ``A``, and
    label ``l`` is on with probability ``1 - (1 - p)**r_l``, the NB
    threshold link.

    """
    _positive(n_samples=n_samples, n_features=n_features, n_labels=n_labels)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, n_features))
    planted = rng.standard_normal((n_features, n_labels))
    log_r = signal * x @ planted / np.sqrt(n_features) + offset
    probability = -np.expm1(np.exp(log_r) * np.log1p(-p))
    labels = rng.random((n_samples, n_labels)) < probability
    log.debug(
        "Generated multi-label set: %d samples, %d features, %.2f labels/sample",
        n_samples,
        n_features,
        labels.sum(axis=1).mean(),
    )
    return Dataset(
        BinaryMatrix.from_dense(labels.astype(np.int64)),
        FeatureMatrix.from_dense(x),
        modality="multilabel",
        name=f"planted-multilabel-{n_samples}x{n_labels}-seed{seed}",
    )
