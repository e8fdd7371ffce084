"""Implementations of the command line subcommands.

Each ``run_*`` function takes resolved settings (see
:mod:`nbvae.settings`), does its work, writes its outputs, and returns
a result object. Errors are raised as :class:`nbvae.exc.NBVAEError`
subclasses; :mod:`nbvae.cli` turns them into exit codes.

"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_dataset, save_bow, save_multilabel, split_rows
from .evaluation import (
    EvalReport,
    evaluate,
    map_chunks,
    parse_metric,
    score_items,
    score_labels,
)
from .exc import ConfigurationError, NumericAbort
from .experiments import ComparisonResult, run_comparison
from .gradcheck import GradcheckReport, check_gradients
from .models import MODALITIES, Model, ModelConfig
from .renderers import CSVRenderer, JSONRenderer
from .settings import get_setting
from .training import TrainConfig, TrainState, check_modality, train


__all__ = [
    "run_evaluate",
    "run_experiment",
    "run_gradcheck",
    "run_predict",
    "run_prepare",
    "run_train",
]


log = logging.getLogger(__name__)


HISTORY_FIELDS = ("step", "epoch", "elbo", "kl", "beta", "validation_metric")

FORMAT_MODALITIES = {"counts": "counts", "binary": "binary", "multilabel": "multilabel"}


@dataclass
class TrainRun:
    out_dir: str
    checkpoint: str
    checkpoint_sha256: str
    history: str
    report: str
    eval_report: EvalReport
    stopped_early: bool = False


@dataclass
class PreparedData:
    paths: Dict[str, str] = field(default_factory=dict)
    n_rows: Dict[str, int] = field(default_factory=dict)
    config: str = ""


def output_path(settings, *names) -> str:
    return os.path.join(get_setting(settings, "output.dir"), *names)


def write_resolved_config(settings) -> str:
    """Write the fully resolved settings beside the run's outputs."""
    path = output_path(settings, "config.json")
    JSONRenderer().write(settings, path)
    log.debug("Wrote resolved config to %s", path)
    return path


# Data & configs -------------------------------------------------------


def load_data(settings, which: str, path: Optional[str] = None) -> Dataset:
    """Load the ``data.<which>`` file (or ``path``) in the configured format.

    Raises:
        ConfigurationError: No path is configured or the file doesn't
            exist. The message contains the path.

    """
    path = path or get_setting(settings, f"data.{which}")
    if not path:
        raise ConfigurationError(f"Setting data.{which} is required")
    if not os.path.isfile(path):
        raise ConfigurationError(f"Data file for data.{which} not found: {path}")
    data_format = get_setting(settings, "data.format")
    if data_format not in FORMAT_MODALITIES:
        raise ConfigurationError(
            f"Setting data.format must be one of {', '.join(FORMAT_MODALITIES)}; "
            f"got {data_format!r}"
        )
    dataset = load_dataset(path, FORMAT_MODALITIES[data_format], name=path)
    log.info(
        "Loaded %s: %d rows x %d columns", path, dataset.n_rows, dataset.labels.n_cols
    )
    return dataset


def check_variant_format(settings):
    variant = get_setting(settings, "model.variant")
    if variant not in MODALITIES:
        raise ConfigurationError(
            f"Setting model.variant must be one of {', '.join(MODALITIES)}; "
            f"got {variant!r}"
        )
    modality = FORMAT_MODALITIES.get(get_setting(settings, "data.format"))
    if modality not in MODALITIES[variant]:
        raise ConfigurationError(
            f"Setting model.variant {variant} can't be used with data.format "
            f"{get_setting(settings, 'data.format')}"
        )


def check_metrics(names: Sequence[str], variant: str):
    """Reject unknown metric names and metrics the variant can't produce."""
    for name in names:
        kind, _ = parse_metric(name)
        if kind == "perplexity" and variant not in ("nbvae", "nbvae_dm", "multivae"):
            raise ConfigurationError(f"Metric {name} isn't defined for {variant}")
        if kind == "precision" and variant not in ("nbvae_c", "nbvae_b"):
            raise ConfigurationError(f"Metric {name} needs a multi-label model")
        if kind in ("recall", "ndcg") and variant == "nbvae_c":
            raise ConfigurationError(f"Metric {name} isn't defined for nbvae_c")


def model_config_from(settings, dataset: Dataset) -> ModelConfig:
    variant = get_setting(settings, "model.variant")
    decoder_layers = get_setting(settings, "model.decoder_layers")
    return ModelConfig(
        variant=variant,
        input_dim=dataset.labels.n_cols,
        latent_dim=get_setting(settings, "model.latent_dim"),
        encoder_layers=tuple(get_setting(settings, "model.encoder_layers")),
        decoder_layers=None if decoder_layers is None else tuple(decoder_layers),
        feature_dim=dataset.features.n_dims if variant == "nbvae_c" else None,
        feature_layers=tuple(get_setting(settings, "model.feature_layers")),
        shared_decoder=get_setting(settings, "model.shared_decoder"),
        seed=get_setting(settings, "model.seed"),
    )


def train_config_from(settings) -> TrainConfig:
    names = TrainConfig.__dataclass_fields__
    values = {name: get_setting(settings, f"train.{name}") for name in names}
    return TrainConfig(**values)


# Subcommands ----------------------------------------------------------


def run_prepare(settings) -> PreparedData:
    """Validate ``data.train`` and write train/validation/test row splits.

    Rows are partitioned by ``data.split`` (three fractions) with
    ``data.split_seed``. A config pointing at the split files is
    written to the output directory.

    """
    dataset = load_data(settings, "train")
    fractions = get_setting(settings, "data.split")
    if len(fractions) != 3:
        raise ConfigurationError("Setting data.split must have three fractions")
    split_seed = get_setting(settings, "data.split_seed")
    groups = split_rows(dataset.n_rows, fractions, split_seed)
    prepared = PreparedData()
    prepared_settings = {**settings, "data": dict(settings["data"])}
    for which, rows in zip(("train", "validation", "test"), groups):
        part = dataset.select_rows(rows)
        path = output_path(settings, f"{which}.txt")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        if dataset.modality == "multilabel":
            save_multilabel(part.features, part.labels, path)
        else:
            save_bow(part.labels, path)
        prepared.paths[which] = path
        prepared.n_rows[which] = part.n_rows
        prepared_settings["data"][which] = path
        log.info("Wrote %d %s rows to %s", part.n_rows, which, path)
    prepared.config = write_resolved_config(prepared_settings)
    return prepared


def run_train(settings) -> TrainRun:
    """Train a model, writing checkpoint, history, report, and config.

    The checkpoint is rewritten whenever the validation metric improves
    and once more at the end with the best parameters. On a numeric
    abort, the last finite parameters are saved before the error
    propagates.

    """
    check_variant_format(settings)
    variant = get_setting(settings, "model.variant")
    metrics = get_setting(settings, "evaluation.metrics")
    check_metrics(metrics, variant)
    train_config = train_config_from(settings)
    if train_config.validation_metric != "elbo":
        check_metrics([train_config.validation_metric], variant)
    data = load_data(settings, "train")
    validation = None
    if get_setting(settings, "data.validation"):
        validation = load_data(settings, "validation")
    model_config = model_config_from(settings, data)
    check_modality(model_config, data)
    if validation is not None:
        check_modality(model_config, validation)

    out_dir = get_setting(settings, "output.dir")
    os.makedirs(out_dir, exist_ok=True)
    write_resolved_config(settings)
    checkpoint_path = output_path(settings, "checkpoint")
    threads = get_setting(settings, "output.threads")

    def on_improvement(model: Model, state: TrainState):
        metadata = _checkpoint_metadata(state, train_config)
        save_checkpoint(checkpoint_path, model, metadata)

    try:
        result = train(
            model_config, train_config, data, validation, on_improvement, threads
        )
    except NumericAbort as exc:
        state = exc.last_good_state
        if state is not None:
            last_good = Model(model_config, state.params)
            save_checkpoint(
                output_path(settings, "checkpoint-last-good"),
                last_good,
                _checkpoint_metadata(state, train_config),
            )
        raise

    digest = save_checkpoint(
        checkpoint_path, result.model, _checkpoint_metadata(result.state, train_config)
    )
    history_path = output_path(settings, "history.csv")
    history = (row.as_dict() for row in result.history)
    CSVRenderer(HISTORY_FIELDS).write(history, history_path)

    report_data = validation if validation is not None else data
    if validation is None:
        log.warning("No validation data; reporting metrics on the training data")
    eval_report = evaluate(
        result.model,
        report_data,
        metrics,
        fraction=get_setting(settings, "evaluation.heldout_fraction"),
        seed=get_setting(settings, "evaluation.seed"),
        batch_size=train_config.batch_size,
        threads=threads,
        checkpoint=digest,
    )
    report_path = output_path(settings, "report.json")
    JSONRenderer().write(eval_report.as_dict(), report_path)
    return TrainRun(
        out_dir=out_dir,
        checkpoint=f"{checkpoint_path}.json",
        checkpoint_sha256=digest,
        history=history_path,
        report=report_path,
        eval_report=eval_report,
        stopped_early=result.stopped_early,
    )


def _checkpoint_metadata(state: TrainState, train_config: TrainConfig) -> Dict:
    best = state.best_validation_metric
    return {
        "validation_metric": train_config.validation_metric,
        "best_validation_metric": best if np.isfinite(best) else None,
        "global_step": state.global_step,
    }


def load_model_for(checkpoint: str, dataset: Dataset) -> Tuple[Model, Dict]:
    """Load a checkpoint and check it fits the dataset's dimensions."""
    if not checkpoint:
        raise ConfigurationError("No checkpoint given; pass --checkpoint <path>")
    model, manifest = load_checkpoint(checkpoint)
    config = model.config
    if dataset.labels.n_cols != config.input_dim:
        raise ConfigurationError(
            f"Checkpoint expects {config.input_dim} columns; data has "
            f"{dataset.labels.n_cols}"
        )
    if config.variant == "nbvae_c":
        if dataset.features is None or dataset.features.n_dims != config.feature_dim:
            raise ConfigurationError(
                f"Checkpoint expects {config.feature_dim} features; data has "
                f"{None if dataset.features is None else dataset.features.n_dims}"
            )
    return model, manifest


def run_evaluate(
    settings, checkpoint: str, data_path: Optional[str] = None
) -> EvalReport:
    """Evaluate a checkpoint on ``data.test`` (or ``data_path``)."""
    metrics = get_setting(settings, "evaluation.metrics")
    for name in metrics:
        parse_metric(name)
    which = "test" if get_setting(settings, "data.test") or data_path else "validation"
    dataset = load_data(settings, which, data_path)
    model, manifest = load_model_for(checkpoint, dataset)
    check_metrics(metrics, model.variant)
    report = evaluate(
        model,
        dataset,
        metrics,
        fraction=get_setting(settings, "evaluation.heldout_fraction"),
        seed=get_setting(settings, "evaluation.seed"),
        batch_size=get_setting(settings, "train.batch_size"),
        threads=get_setting(settings, "output.threads"),
        checkpoint=manifest["sha256"],
    )
    os.makedirs(get_setting(settings, "output.dir"), exist_ok=True)
    write_resolved_config(settings)
    JSONRenderer().write(report.as_dict(), output_path(settings, "report.json"))
    return report


def run_predict(
    settings, checkpoint: str, data_path: Optional[str] = None, top: int = 10
) -> str:
    """Write the ``top`` scored items (or labels) of every row as CSV.

    Items already observed in a row are excluded from its item ranking.
    Returns the path of the CSV file.

    """
    which = "test" if get_setting(settings, "data.test") or data_path else "validation"
    dataset = load_data(settings, which, data_path)
    model, _ = load_model_for(checkpoint, dataset)

    def predict_chunk(indices) -> List[Dict]:
        if model.variant == "nbvae_c":
            scores = score_labels(model, dataset.features.to_dense(indices))
        else:
            observed = dataset.labels.to_dense(indices)
            scores = score_items(model, observed)
            scores = np.where(observed > 0, -np.inf, scores)
        chunk_rows = []
        for row, row_scores in zip(indices, scores):
            order = np.argsort(-row_scores, kind="stable")[:top]
            for rank, index in enumerate(order, 1):
                if not np.isfinite(row_scores[index]):
                    break
                chunk_rows.append(
                    {
                        "row": int(row),
                        "rank": rank,
                        "index": int(index),
                        "score": float(row_scores[index]),
                    }
                )
        return chunk_rows

    threads = get_setting(settings, "output.threads")
    chunks = map_chunks(predict_chunk, dataset.n_rows, threads)
    rows = [row for chunk in chunks for row in chunk]
    path = output_path(settings, "predictions.csv")
    CSVRenderer(("row", "rank", "index", "score")).write(rows, path)
    log.info("Wrote predictions for %d rows to %s", dataset.n_rows, path)
    return path


def run_gradcheck(
    n_seeds: int = 100, ops: Optional[Sequence[str]] = None
) -> GradcheckReport:
    return check_gradients(seeds=range(n_seeds), ops=ops)


def run_experiment(settings, name: str, seeds: Sequence[int]) -> ComparisonResult:
    """Run a multi-seed comparison and write its results as JSON."""
    result = run_comparison(
        name, seeds=seeds, threads=get_setting(settings, "output.threads")
    )
    path = output_path(settings, f"experiment-{name}.json")
    JSONRenderer().write(result.as_dict(), path)
    return result
