"""Multi-seed comparisons on synthetic stand-ins for the benchmark data.

Each comparison generates a dataset per seed, splits its rows into
training and test sets, trains every contender with the same budget,
and scores the test rows with the protocol's headline metric. A
contender "wins" a seed when it beats the baseline on that seed.

- text: perplexity of nbvae and nbvae_dm vs multivae
- binary: fold-in NDCG@5 of nbvae_b vs multivae
- multilabel: Precision@1 of nbvae_c vs nbvae_c with the feature
  encoder ablated (an nbvae_b model trained on the labels alone)

"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional

from .data import Dataset, split_rows
from .evaluation import evaluate_fold_in, evaluate_multilabel, evaluate_perplexity
from .exc import ConfigurationError
from .models import ModelConfig
from .synthetic import bursty_corpus, latent_factor_binary, planted_multilabel
from .training import TrainConfig, train


__all__ = ["EXPERIMENTS", "ComparisonResult", "run_comparison"]


log = logging.getLogger(__name__)


@dataclass
class ComparisonResult:
    name: str
    metric: str
    baseline: str
    lower_is_better: bool
    seeds: List[int] = field(default_factory=list)
    scores: List[Dict[str, float]] = field(default_factory=list)

    def wins(self) -> Dict[str, int]:
        """Number of seeds on which each contender beat the baseline."""
        counts = {}
        for row in self.scores:
            for contender, score in row.items():
                if contender == self.baseline:
                    continue
                baseline = row[self.baseline]
                better = score < baseline if self.lower_is_better else score > baseline
                counts[contender] = counts.get(contender, 0) + int(better)
        return counts

    def as_dict(self) -> Dict:
        return {
            "name": self.name,
            "metric": self.metric,
            "baseline": self.baseline,
            "lower_is_better": self.lower_is_better,
            "runs": [
                {"seed": seed, "scores": scores}
                for seed, scores in zip(self.seeds, self.scores)
            ],
            "wins": self.wins(),
        }


def _train_test(dataset: Dataset, seed: int):
    train_rows, test_rows = split_rows(dataset.n_rows, (0.8, 0.2), seed)
    return dataset.select_rows(train_rows), dataset.select_rows(test_rows)


def _fit(variant, data, train_config, seed, **model_options):
    config = ModelConfig(
        variant,
        input_dim=data.labels.n_cols,
        latent_dim=model_options.pop("latent_dim", 64),
        encoder_layers=model_options.pop("encoder_layers", (128, 64)),
        seed=seed,
        **model_options,
    )
    log.info("Training %s (seed %d)", variant, seed)
    return train(config, replace(train_config, seed=seed), data).model


def text_seed(seed, train_config, threads=1, n_docs=2000, vocab_size=2000):
    corpus = bursty_corpus(n_docs=n_docs, vocab_size=vocab_size, seed=seed)
    data, test = _train_test(corpus, seed)
    scores = {}
    for variant in ("nbvae", "nbvae_dm", "multivae"):
        model = _fit(variant, data, train_config, seed)
        report = evaluate_perplexity(model, test, 0.2, seed, threads)
        scores[variant] = report.metrics["perplexity"]
    return scores


def binary_seed(seed, train_config, threads=1, n_users=2000, n_items=500):
    matrix = latent_factor_binary(n_users=n_users, n_items=n_items, seed=seed)
    data, test = _train_test(matrix, seed)
    scores = {}
    for variant in ("nbvae_b", "multivae"):
        model = _fit(variant, data, train_config, seed, latent_dim=32)
        report = evaluate_fold_in(model, test, (5,), 0.2, seed, threads)
        scores[variant] = report.metrics["ndcg@5"]
    return scores


def multilabel_seed(
    seed, train_config, threads=1, n_samples=5000, n_features=50, n_labels=100
):
    samples = planted_multilabel(
        n_samples=n_samples, n_features=n_features, n_labels=n_labels, seed=seed
    )
    data, test = _train_test(samples, seed)
    conditional = _fit(
        "nbvae_c", data, train_config, seed, latent_dim=32, feature_dim=n_features
    )
    labels_only = Dataset(data.labels, modality="binary", name=data.name)
    ablated = _fit("nbvae_b", labels_only, train_config, seed, latent_dim=32)
    return {
        "nbvae_c": evaluate_multilabel(conditional, test, (1,), threads).metrics[
            "precision@1"
        ],
        "nbvae_c_ablated": evaluate_multilabel(ablated, test, (1,), threads).metrics[
            "precision@1"
        ],
    }


@dataclass(frozen=True)
class Experiment:
    run_seed: Callable[..., Dict[str, float]]
    metric: str
    baseline: str
    lower_is_better: bool
    train_config: TrainConfig


EXPERIMENTS: Dict[str, Experiment] = {
    "text": Experiment(
        text_seed,
        "perplexity",
        "multivae",
        True,
        TrainConfig(batch_size=100, max_epochs=30, anneal_steps=2000, patience=30),
    ),
    "binary": Experiment(
        binary_seed,
        "ndcg@5",
        "multivae",
        False,
        TrainConfig(
            batch_size=100,
            max_epochs=30,
            anneal_steps=2000,
            beta_max=0.2,
            patience=30,
        ),
    ),
    "multilabel": Experiment(
        multilabel_seed,
        "precision@1",
        "nbvae_c_ablated",
        False,
        TrainConfig(batch_size=100, max_epochs=30, anneal_steps=2000, patience=30),
    ),
}


def run_comparison(
    name: str,
    seeds: Iterable[int] = range(5),
    train_config: Optional[TrainConfig] = None,
    threads: int = 1,
    **data_options,
) -> ComparisonResult:
    """Run one of :data:`EXPERIMENTS` over the given seeds.

    ``data_options`` are passed to the dataset generator (e.g.
    ``n_docs`` or ``vocab_size`` for the text comparison).

    """
    try:
        experiment = EXPERIMENTS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}"
        )
    train_config = train_config or experiment.train_config
    result = ComparisonResult(
        name, experiment.metric, experiment.baseline, experiment.lower_is_better
    )
    for seed in seeds:
        scores = experiment.run_seed(seed, train_config, threads, **data_options)
        log.info("%s seed %d: %s", name, seed, scores)
        result.seeds.append(seed)
        result.scores.append(scores)
    log.info("%s wins over %s: %s", name, experiment.baseline, result.wins())
    return result
