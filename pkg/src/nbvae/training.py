import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, List, Optional

import numpy as np

from .data import Dataset, minibatches
from .diffmath import Parameter, backward
from .evaluation import validation_score
from .exc import ConfigurationError, ContractError, NumericAbort, NumericDomainError
from .models import MODALITIES, Batch, Model, ModelConfig, ModelParams


__all__ = [
    "HistoryRow",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "adam_step",
    "kl_beta",
    "train",
]


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:

    """Optimization settings.

    ``validation_metric`` is "elbo" or a metric name understood by
    :func:`nbvae.evaluation.validation_score` ("ndcg@10",
    "precision@1", ...). ``alternate_prior`` enables drawing z from the
    feature encoder on odd-numbered steps for nbvae_c.

    """

    batch_size: int = 100
    max_epochs: int = 50
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    anneal_steps: int = 10_000
    beta_max: float = 1.0
    patience: int = 10
    seed: int = 0
    validation_metric: str = "elbo"
    validation_fraction: float = 0.2
    alternate_prior: bool = True

    def __post_init__(self):
        for name in ("batch_size", "anneal_steps", "patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"train.{name} must be >= 1")
        if self.max_epochs < 0:
            raise ConfigurationError("train.max_epochs must be >= 0")
        for name in ("learning_rate", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"train.{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigurationError(f"train.{name} must be in [0, 1)")
        if not 0 <= self.beta_max <= 1:
            raise ConfigurationError("train.beta_max must be in [0, 1]")
        if not 0 < self.validation_fraction < 1:
            raise ConfigurationError("train.validation_fraction must be in (0, 1)")


@dataclass
class TrainState:
    epoch: int
    global_step: int
    best_validation_metric: float
    params: ModelParams


@dataclass
class HistoryRow:
    step: int
    epoch: int
    elbo: float
    kl: float
    beta: float
    validation_metric: Optional[float] = None

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    state: TrainState
    history: List[HistoryRow] = field(default_factory=list)
    stopped_early: bool = False


def kl_beta(global_step: int, anneal_steps: int, beta_max: float) -> float:
    """Linear KL annealing: ``min(beta_max, global_step / anneal_steps)``."""
    if anneal_steps < 1:
        raise ContractError(f"anneal_steps must be >= 1; got {anneal_steps}")
    return min(beta_max, global_step / anneal_steps)


def adam_step(
    parameters: Iterable[Parameter],
    t: int,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Apply one bias-corrected Adam update using each parameter's gradient.

    ``t`` is the 1-based step number. Every update is computed and
    checked before anything is written, so an abort leaves all
    parameters and moments untouched.

    Raises:
        NumericAbort: A gradient, moment, or updated value is
            non-finite; the message names the parameter.

    """
    parameters = list(parameters)
    for parameter in parameters:
        if not np.isfinite(parameter.grad).all():
            raise NumericAbort(
                f"Non-finite gradient for parameter {parameter.name}",
                parameter=parameter.name,
            )
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    updates = []
    for parameter in parameters:
        g = parameter.grad
        m = beta1 * parameter.first_moment + (1.0 - beta1) * g
        v = beta2 * parameter.second_moment + (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        values = parameter.values - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if not (np.isfinite(values).all() and np.isfinite(v).all()):
            raise NumericAbort(
                f"Non-finite update for parameter {parameter.name}",
                parameter=parameter.name,
            )
        updates.append((parameter, m, v, values))
    for parameter, m, v, values in updates:
        parameter.first_moment[...] = m
        parameter.second_moment[...] = v
        parameter.values[...] = values


def improves(metric_name: str, value: float, best: float) -> bool:
    """Is ``value`` better than ``best`` for the named metric?"""
    if metric_name == "perplexity":
        return value < best
    return value > best


def initial_best(metric_name: str) -> float:
    return math.inf if metric_name == "perplexity" else -math.inf


def check_modality(config: ModelConfig, dataset: Dataset):
    allowed = MODALITIES[config.variant]
    if dataset.modality not in allowed:
        raise ConfigurationError(
            f"{config.variant} can't be trained on {dataset.modality} data "
            f"(expected {' or '.join(allowed)})"
        )
    if dataset.labels.n_cols != config.input_dim:
        raise ConfigurationError(
            f"Data has {dataset.labels.n_cols} columns; model.input_dim is "
            f"{config.input_dim}"
        )
    if config.variant == "nbvae_c" and dataset.features.n_dims != config.feature_dim:
        raise ConfigurationError(
            f"Data has {dataset.features.n_dims} features; model.feature_dim is "
            f"{config.feature_dim}"
        )


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    data: Dataset,
    validation: Optional[Dataset] = None,
    on_improvement: Optional[Callable[[Model, TrainState], None]] = None,
    threads: int = 1,
) -> TrainResult:
    """Fit a model with Adam on minibatches of ``data``.

    After each epoch the validation metric is computed on
    ``validation``. Without validation data the epoch's mean training
    ELBO is used instead, whatever ``validation_metric`` says. Training
    stops after ``patience`` epochs without improvement and the
    parameters from the best epoch are restored.
    ``on_improvement`` is called whenever a new best is reached.

    Raises:
        NumericAbort: The ELBO or a gradient became non-finite. The
            exception carries the last state whose values were finite.

    """
    check_modality(model_config, data)
    if validation is not None:
        check_modality(model_config, validation)

    model = Model(model_config)
    params = model.params
    # Without validation data the epoch metric is the mean training ELBO
    metric_name = "elbo" if validation is None else train_config.validation_metric
    state = TrainState(
        epoch=0,
        global_step=0,
        best_validation_metric=initial_best(metric_name),
        params=params,
    )
    result = TrainResult(model=model, state=state)
    if train_config.max_epochs == 0:
        return result

    noise_rng = np.random.default_rng([train_config.seed, 1])
    alternate = model_config.variant == "nbvae_c" and train_config.alternate_prior
    best_values = params.snapshot()
    epochs_without_improvement = 0

    for epoch in range(1, train_config.max_epochs + 1):
        state.epoch = epoch
        epoch_elbos = []
        seed = train_config.seed + epoch
        batches = minibatches(data, train_config.batch_size, seed)
        for rows in batches:
            t = state.global_step + 1
            beta = kl_beta(
                state.global_step, train_config.anneal_steps, train_config.beta_max
            )
            batch = Batch.from_dataset(data, rows)
            noise = noise_rng.standard_normal((len(rows), model_config.latent_dim))
            params.zero_grad()
            try:
                terms = model.elbo_terms(
                    batch, beta, noise, sample_from_prior=alternate and t % 2 == 1
                )
            except NumericDomainError as exc:
                raise NumericAbort(
                    f"Numeric failure at step {t} (epoch {epoch}): {exc}",
                    last_good_state=state,
                ) from exc
            elbo = terms.elbo.item()
            if not math.isfinite(elbo):
                raise NumericAbort(
                    f"Non-finite ELBO at step {t} (epoch {epoch})",
                    last_good_state=state,
                )
            backward(-terms.elbo)
            try:
                adam_step(
                    params,
                    t,
                    train_config.learning_rate,
                    train_config.adam_beta1,
                    train_config.adam_beta2,
                    train_config.adam_eps,
                )
            except NumericAbort as exc:
                exc.last_good_state = state
                raise
            state.global_step = t
            epoch_elbos.append(elbo)
            result.history.append(HistoryRow(t, epoch, elbo, terms.kl.item(), beta))
            log.debug("Step %d: elbo=%.6f beta=%.4f", t, elbo, beta)

        if validation is None:
            metric = float(np.mean(epoch_elbos))
        else:
            metric = validation_score(
                model,
                validation,
                metric_name,
                batch_size=train_config.batch_size,
                fraction=train_config.validation_fraction,
                seed=train_config.seed,
                threads=threads,
            )
        result.history[-1].validation_metric = metric
        log.info("Epoch %d: %s = %.6f", epoch, metric_name, metric)

        if improves(metric_name, metric, state.best_validation_metric):
            state.best_validation_metric = metric
            best_values = params.snapshot()
            epochs_without_improvement = 0
            if on_improvement is not None:
                on_improvement(model, replace(state))
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= train_config.patience:
                log.info(
                    "Stopping early after epoch %d; best %s = %.6f",
                    epoch,
                    metric_name,
                    state.best_validation_metric,
                )
                result.stopped_early = True
                break

    params.restore(best_values)
    return result
