"""Predictive rates and the held-out evaluation protocols.

Three protocols are supported:

- Text: per-heldout-word perplexity. Each test row's tokens are split
  into observed and heldout parts, the encoder mean is computed from
  the observed part, and the heldout tokens are scored under the
  normalized predictive rate.
- Collaborative filtering: Recall@R and NDCG@R under fold-in. Each test
  user's items are split the same way; observed items are fed to the
  encoder and excluded from the ranking.
- Multi-label: Precision@R of labels scored from features alone.

Rows are scored in chunks, optionally on a thread pool, and the chunk
results are always reduced in row order so reports don't depend on the
number of threads.

"""
import hashlib
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import BinaryMatrix, Dataset, SparseCountMatrix, split_heldout
from .distributions import bernoulli_link_probability
from .exc import ConfigurationError, ContractError, EvaluationError, NumericDomainError
from .models import Batch, Model


__all__ = [
    "EvalReport",
    "PredictiveRate",
    "evaluate",
    "evaluate_elbo",
    "evaluate_fold_in",
    "evaluate_multilabel",
    "evaluate_perplexity",
    "map_chunks",
    "perplexity",
    "precision_at_R",
    "predictive_rate",
    "rank_metrics",
    "score_items",
    "score_labels",
    "validation_score",
]


log = logging.getLogger(__name__)


RATE_VARIANTS = ("multivae", "nbvae", "nbvae_dm", "pfa", "lda", "nbfa")
"""Variants with a predictive rate; pfa, lda, and nbfa are diagnostic."""

CHUNK_SIZE = 256

METRIC_PATTERN = re.compile(r"^(?P<kind>recall|ndcg|precision)@(?P<R>[1-9][0-9]*)$")


@dataclass(frozen=True, eq=False)
class PredictiveRate:

    """Unnormalized predictive rates and the distribution they define.

    Both arrays have the shape of the observed counts they were
    computed for: ``(V,)`` for one row or ``(n, V)`` for many.

    """

    rates: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        if not (self.rates > 0).all():
            index = tuple(int(i) for i in np.argwhere(~(self.rates > 0))[0])
            raise NumericDomainError(
                "predictive_rate", index, float(self.rates[index]), "rates must be > 0"
            )


@dataclass
class EvalReport:

    """Metric values plus what they were computed from.

    ``wall_clock`` (seconds) isn't part of :meth:`as_dict`, so reports
    from identical runs serialize identically.

    """

    metrics: Dict[str, float]
    R_values: Tuple[int, ...] = ()
    dataset_name: str = ""
    dataset_sha256: str = ""
    checkpoint_sha256: Optional[str] = None
    n_rows: int = 0
    n_skipped: int = 0
    wall_clock: float = field(default=0.0, compare=False)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if not math.isfinite(value):
                raise EvaluationError(f"Metric {name} is not finite: {value}")

    def as_dict(self) -> Dict:
        return {
            "metrics": dict(self.metrics),
            "R_values": list(self.R_values),
            "dataset": {"name": self.dataset_name, "sha256": self.dataset_sha256},
            "checkpoint": self.checkpoint_sha256,
            "n_rows": self.n_rows,
            "n_skipped": self.n_skipped,
        }

    def merge(self, other: "EvalReport") -> "EvalReport":
        """Combine the metrics of two reports on the same data."""
        return EvalReport(
            metrics={**self.metrics, **other.metrics},
            R_values=tuple(sorted(set(self.R_values) | set(other.R_values))),
            dataset_name=self.dataset_name,
            dataset_sha256=self.dataset_sha256,
            checkpoint_sha256=self.checkpoint_sha256,
            n_rows=max(self.n_rows, other.n_rows),
            n_skipped=max(self.n_skipped, other.n_skipped),
            wall_clock=self.wall_clock + other.wall_clock,
        )


def dataset_sha256(dataset: Dataset) -> str:
    """Digest of a dataset's stored values and structure."""
    digest = hashlib.sha256()
    digest.update(dataset.modality.encode())
    matrices = [dataset.labels.matrix]
    if dataset.features is not None:
        matrices.append(dataset.features.matrix)
    for matrix in matrices:
        digest.update(np.asarray(matrix.shape, dtype=np.int64).tobytes())
        for array in (matrix.indptr, matrix.indices, matrix.data):
            digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


# Predictive rates -----------------------------------------------------


def _values(params, name):
    if isinstance(params, dict):
        value = params.get(name)
    else:
        value = getattr(params, name, None)
    if value is None:
        raise ContractError(f"Predictive rate needs parameter {name!r}")
    return np.asarray(getattr(value, "values", value), dtype=np.float64)


def predictive_rates(variant, params, observed) -> Tuple[np.ndarray, np.ndarray]:
    """Compute ``(rates, normalized)`` arrays row-wise.

    ``params`` is a :class:`nbvae.models.LikelihoodParams` (or a dict)
    whose fields broadcast against ``observed``. For the diagnostic
    rows, ``params`` holds ``phi`` (V x K), ``theta`` (K, or K x n),
    and for nbfa ``p``.

    """
    observed = np.asarray(observed, dtype=np.float64)
    if variant == "multivae":
        logits = _values(params, "logits")
        shifted = logits - logits.max(axis=-1, keepdims=True)
        rates = np.exp(shifted)
        return rates, rates / rates.sum(axis=-1, keepdims=True)
    if variant == "nbvae":
        rates = (observed + _values(params, "r")) * _values(params, "p")
    elif variant == "nbvae_dm":
        rates = observed + _values(params, "r")
    elif variant in ("pfa", "lda", "nbfa"):
        phi, theta = _values(params, "phi"), _values(params, "theta")
        intensity = phi @ theta
        theta_total = theta.sum(axis=0)
        if theta.ndim == 2:
            intensity = intensity.T
            theta_total = theta_total[:, np.newaxis]
        if variant == "lda":
            rates = intensity / theta_total
        elif variant == "nbfa":
            rates = (observed + intensity) * _values(params, "p")
        else:
            rates = intensity
    else:
        raise ContractError(
            f"{variant} has no predictive rate; use label or item scoring instead"
        )
    rates = np.broadcast_to(rates, np.broadcast_shapes(rates.shape, observed.shape))
    return rates, rates / rates.sum(axis=-1, keepdims=True)


def predictive_rate(variant: str, params, observed) -> PredictiveRate:
    """Predictive rate of the next event in a row given its observed counts.

    Pass zeros as ``observed`` to condition on nothing.

    Raises:
        ContractError: ``variant`` has no predictive rate (nbvae_b and
            nbvae_c score labels instead).

    """
    rates, normalized = predictive_rates(variant, params, observed)
    return PredictiveRate(np.array(rates), np.array(normalized))


# Scoring --------------------------------------------------------------


def score_items(model: Model, observed) -> np.ndarray:
    """Per-row item scores for ranking, given each row's observed items.

    Count variants and multivae rank by the normalized predictive rate;
    nbvae_b ranks by the probability an item is present.

    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim == 1:
        observed = observed.reshape(1, -1)
    if model.variant == "nbvae_c":
        raise ContractError("nbvae_c scores labels from features; use score_labels")
    z = model.encode(observed).mean.values
    decoded = model.decode(z)
    if model.variant == "nbvae_b":
        return bernoulli_link_probability(decoded.r.values, decoded.p.values)
    return predictive_rates(model.variant, decoded, observed)[1]


def score_labels(model: Model, x) -> np.ndarray:
    """Label scores ``1 - (1 - p)**r`` decoded from the feature prior mean.

    ``x`` is a feature vector or an ``(n, D)`` array; the result has one
    row per feature row.

    """
    if model.variant != "nbvae_c":
        raise ContractError(f"Label scoring needs nbvae_c; got {model.variant}")
    z = model.feature_encode(x).mean.values
    decoded = model.decode(z)
    return bernoulli_link_probability(decoded.r.values, decoded.p.values)


def score_labels_without_features(model: Model, n_rows: int) -> np.ndarray:
    """Label scores decoded from the standard-normal prior mean (z = 0).

    Serves as the feature-encoder ablation of nbvae_c: an nbvae_b model
    trained on the labels alone.

    """
    if model.variant != "nbvae_b":
        raise ContractError(f"Prior label scoring needs nbvae_b; got {model.variant}")
    decoded = model.decode(np.zeros((1, model.config.latent_dim)))
    scores = bernoulli_link_probability(decoded.r.values, decoded.p.values)
    return np.repeat(scores, n_rows, axis=0)


# Metrics --------------------------------------------------------------


def _top(scores, candidates, R) -> np.ndarray:
    # Stable sort on negated scores ranks ties by ascending index
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:R]]


def rank_metrics(
    scores, heldout, exclude, R_values: Sequence[int]
) -> Optional[Tuple[Dict[int, float], Dict[int, float]]]:
    """Recall@R and NDCG@R of one row's ranking.

    Items in ``exclude`` are removed before ranking. Ties rank the lower
    index first. Returns ``None`` when ``heldout`` is empty (the row
    can't be evaluated).

    Returns:
        ({R: recall}, {R: ndcg})

    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    heldout = np.asarray(heldout).ravel() > 0
    exclude = np.asarray(exclude).ravel() > 0
    if not (scores.shape == heldout.shape == exclude.shape):
        raise ContractError("scores, heldout, and exclude must have the same length")
    if (heldout & exclude).any():
        raise ContractError("Excluded items can't also be heldout")
    n_heldout = int(heldout.sum())
    if n_heldout == 0:
        return None
    candidates = np.flatnonzero(~exclude)
    recall, ndcg = {}, {}
    for R in R_values:
        hits = heldout[_top(scores, candidates, R)].astype(np.float64)
        discounts = 1.0 / np.log2(np.arange(2, len(hits) + 2))
        ideal = (1.0 / np.log2(np.arange(2, min(R, n_heldout) + 2))).sum()
        recall[R] = float(hits.sum() / min(R, n_heldout))
        ndcg[R] = float((hits * discounts).sum() / ideal)
    return recall, ndcg


def precision_at_R(scores, true_labels, R_values: Sequence[int]) -> Dict[int, float]:
    """Fraction of the top-R scored labels that are true, for each R."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    true_labels = np.asarray(true_labels).ravel() > 0
    if scores.shape != true_labels.shape:
        raise ContractError("scores and true_labels must have the same length")
    candidates = np.arange(len(scores))
    return {
        R: float(true_labels[_top(scores, candidates, R)].sum() / R) for R in R_values
    }


def perplexity_from_rates(normalized, heldout) -> Tuple[float, float, int]:
    """Heldout log-likelihood, heldout token count, and skipped rows.

    Rows without heldout tokens are skipped.

    """
    normalized = np.asarray(normalized, dtype=np.float64)
    heldout = np.asarray(heldout, dtype=np.float64)
    totals = heldout.sum(axis=1)
    keep = totals > 0
    mask = heldout[keep] > 0
    with np.errstate(divide="ignore"):
        log_s = np.log(normalized[keep][mask])
    loglik = float((heldout[keep][mask] * log_s).sum())
    return loglik, float(totals[keep].sum()), int((~keep).sum())


def perplexity(
    model: Model,
    test_matrix: SparseCountMatrix,
    split_fraction: float = 0.2,
    seed: int = 0,
    threads: int = 1,
) -> float:
    """Per-heldout-word perplexity of ``model`` on ``test_matrix``.

    Raises:
        EvaluationError: No row has heldout tokens, or some heldout
            token has zero probability.

    """
    split = split_heldout(test_matrix, split_fraction, seed)
    return _perplexity(model, split.observed, split.heldout, threads)[0]


def _perplexity(model, observed, heldout, threads) -> Tuple[float, int]:
    def score_chunk(rows):
        y = observed.to_dense(rows)
        z = model.encode(y).mean.values
        normalized = predictive_rates(model.variant, model.decode(z), y)[1]
        return perplexity_from_rates(normalized, heldout.to_dense(rows))

    results = map_chunks(score_chunk, observed.n_rows, threads)
    loglik = sum(r[0] for r in results)
    n_tokens = sum(r[1] for r in results)
    n_skipped = sum(r[2] for r in results)
    if n_skipped:
        log.warning("Skipped %d rows with no heldout tokens", n_skipped)
    if n_tokens == 0:
        raise EvaluationError("No row has heldout tokens; perplexity is undefined")
    value = math.exp(-loglik / n_tokens)
    if not math.isfinite(value):
        raise EvaluationError("A heldout token has zero predictive probability")
    return value, n_skipped


def map_chunks(fn: Callable, n_rows: int, threads: int = 1) -> List:
    """Apply ``fn`` to consecutive chunks of row indices, in row order."""
    chunks = [
        np.arange(start, min(start + CHUNK_SIZE, n_rows))
        for start in range(0, n_rows, CHUNK_SIZE)
    ]
    if threads <= 1 or len(chunks) <= 1:
        return [fn(chunk) for chunk in chunks]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        # map() yields results in submission order
        return list(executor.map(fn, chunks))


# Dataset-level drivers ------------------------------------------------


def _report(metrics, dataset, checkpoint, started, **kwargs) -> EvalReport:
    report = EvalReport(
        metrics=metrics,
        dataset_name=dataset.name,
        dataset_sha256=dataset_sha256(dataset),
        checkpoint_sha256=checkpoint,
        n_rows=dataset.n_rows,
        wall_clock=time.perf_counter() - started,
        **kwargs,
    )
    log.debug("Evaluated %s in %.2fs: %s", dataset.name, report.wall_clock, metrics)
    return report


def evaluate_elbo(
    model: Model,
    dataset: Dataset,
    batch_size: int = 100,
    seed: int = 0,
    checkpoint: Optional[str] = None,
) -> EvalReport:
    """Row-averaged ELBO (beta = 1) over a dataset, with seeded noise."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, dataset.n_rows, batch_size):
        rows = np.arange(start, min(start + batch_size, dataset.n_rows))
        batch = Batch.from_dataset(dataset, rows)
        noise = rng.standard_normal((len(rows), model.config.latent_dim))
        total += model.elbo(batch, 1.0, noise).item() * len(rows)
    if dataset.n_rows == 0:
        raise EvaluationError("Can't compute the ELBO of an empty dataset")
    return _report({"elbo": total / dataset.n_rows}, dataset, checkpoint, started)


def evaluate_perplexity(
    model: Model,
    dataset: Dataset,
    fraction: float = 0.2,
    seed: int = 0,
    threads: int = 1,
    checkpoint: Optional[str] = None,
) -> EvalReport:
    started = time.perf_counter()
    split = split_heldout(dataset.labels, fraction, seed)
    value, n_skipped = _perplexity(model, split.observed, split.heldout, threads)
    return _report(
        {"perplexity": value}, dataset, checkpoint, started, n_skipped=n_skipped
    )


def evaluate_fold_in(
    model: Model,
    dataset: Dataset,
    R_values: Sequence[int] = (5, 10, 20, 50),
    fraction: float = 0.2,
    seed: int = 0,
    threads: int = 1,
    checkpoint: Optional[str] = None,
) -> EvalReport:
    """Average Recall@R and NDCG@R over users with heldout items.

    Interactions are binarized first, so every item lands wholly in
    either the observed or the heldout part.

    """
    started = time.perf_counter()
    split = split_heldout(BinaryMatrix.from_counts(dataset.labels), fraction, seed)

    def score_chunk(rows):
        observed = split.observed.to_dense(rows)
        heldout = split.heldout.to_dense(rows)
        scores = score_items(model, observed)
        return [
            rank_metrics(scores[i], heldout[i], observed[i], R_values)
            for i in range(len(rows))
        ]

    per_row = [
        row
        for chunk in map_chunks(score_chunk, dataset.n_rows, threads)
        for row in chunk
    ]
    evaluated = [row for row in per_row if row is not None]
    n_skipped = len(per_row) - len(evaluated)
    if n_skipped:
        log.warning("Skipped %d users with no heldout items", n_skipped)
    if not evaluated:
        raise EvaluationError("No user has heldout items")
    metrics = {}
    for R in R_values:
        metrics[f"recall@{R}"] = float(np.mean([recall[R] for recall, _ in evaluated]))
    for R in R_values:
        metrics[f"ndcg@{R}"] = float(np.mean([ndcg[R] for _, ndcg in evaluated]))
    return _report(
        metrics,
        dataset,
        checkpoint,
        started,
        R_values=tuple(R_values),
        n_skipped=n_skipped,
    )


def evaluate_multilabel(
    model: Model,
    dataset: Dataset,
    R_values: Sequence[int] = (1, 3, 5),
    threads: int = 1,
    checkpoint: Optional[str] = None,
) -> EvalReport:
    """Average Precision@R over all rows.

    nbvae_c scores labels from features; an nbvae_b model (the
    feature-encoder ablation) scores every row from the prior mean.

    """
    started = time.perf_counter()
    if model.variant == "nbvae_c" and dataset.features is None:
        raise ConfigurationError("Multi-label evaluation needs features")

    def score_chunk(rows):
        if model.variant == "nbvae_b":
            scores = score_labels_without_features(model, len(rows))
        else:
            scores = score_labels(model, dataset.features.to_dense(rows))
        labels = dataset.labels.to_dense(rows)
        return [
            precision_at_R(scores[i], labels[i], R_values) for i in range(len(rows))
        ]

    per_row = [
        row
        for chunk in map_chunks(score_chunk, dataset.n_rows, threads)
        for row in chunk
    ]
    if not per_row:
        raise EvaluationError("Can't evaluate an empty dataset")
    metrics = {
        f"precision@{R}": float(np.mean([row[R] for row in per_row])) for R in R_values
    }
    return _report(metrics, dataset, checkpoint, started, R_values=tuple(R_values))


# Metric names ---------------------------------------------------------


def parse_metric(name: str) -> Tuple[str, Optional[int]]:
    """Split a metric name into (kind, R).

    Raises:
        ConfigurationError: The name isn't elbo, perplexity, or one of
            recall@R, ndcg@R, precision@R with a positive integer R.

    """
    if name in ("elbo", "perplexity"):
        return name, None
    match = METRIC_PATTERN.match(name)
    if match is None:
        raise ConfigurationError(f"Unknown metric: {name}")
    return match.group("kind"), int(match.group("R"))


def evaluate(
    model: Model,
    dataset: Dataset,
    metrics: Sequence[str],
    fraction: float = 0.2,
    seed: int = 0,
    batch_size: int = 100,
    threads: int = 1,
    checkpoint: Optional[str] = None,
) -> EvalReport:
    """Compute the named metrics and combine them into one report."""
    parsed = [parse_metric(name) for name in metrics]
    kinds = {kind for kind, _ in parsed}
    report: Optional[EvalReport] = None

    def add(new):
        nonlocal report
        report = new if report is None else report.merge(new)

    if "elbo" in kinds:
        add(evaluate_elbo(model, dataset, batch_size, seed, checkpoint))
    if "perplexity" in kinds:
        add(evaluate_perplexity(model, dataset, fraction, seed, threads, checkpoint))
    rank_R = sorted({R for kind, R in parsed if kind in ("recall", "ndcg")})
    if rank_R:
        fold_in = evaluate_fold_in(
            model, dataset, rank_R, fraction, seed, threads, checkpoint
        )
        fold_in.metrics = {k: v for k, v in fold_in.metrics.items() if k in metrics}
        add(fold_in)
    precision_R = sorted({R for kind, R in parsed if kind == "precision"})
    if precision_R:
        add(evaluate_multilabel(model, dataset, precision_R, threads, checkpoint))
    if report is None:
        raise ConfigurationError("No metrics requested")
    report.metrics = {name: report.metrics[name] for name in metrics}
    return report


def validation_score(
    model: Model,
    dataset: Dataset,
    metric_name: str,
    batch_size: int = 100,
    fraction: float = 0.2,
    seed: int = 0,
    threads: int = 1,
) -> float:
    """The single metric value used for early stopping."""
    report = evaluate(
        model,
        dataset,
        [metric_name],
        fraction=fraction,
        seed=seed,
        batch_size=batch_size,
        threads=threads,
    )
    return report.metrics[metric_name]
