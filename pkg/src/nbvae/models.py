"""Encoders, decoders, and ELBO assembly for every model variant.

Variants:

- nbvae: counts ~ NB(r, p) with r and p per dimension
- nbvae_dm: counts ~ DirMulti(total, r), the row total being observed
- nbvae_b: binary data through the NB threshold link
- nbvae_c: nbvae_b with a prior on z computed from features
- multivae: counts ~ Multinomial(total, softmax(logits)), the baseline

"""
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .diffmath import (
    DiffNode,
    Parameter,
    affine,
    clamp,
    constant,
    elementwise,
)
from .distributions import (
    LatentGaussian,
    bernoulli_link_loglik_rows,
    dirmulti_logpmf_rows,
    kl_general_rows,
    kl_standard_rows,
    multinomial_loglik_rows,
    nb_logpmf_rows,
    reparam_sample,
)
from .exc import ConfigurationError, ContractError, DimensionError


__all__ = [
    "VARIANTS",
    "Batch",
    "ELBOTerms",
    "LikelihoodParams",
    "Model",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "parameter_shapes",
]


log = logging.getLogger(__name__)


VARIANTS = ("nbvae", "nbvae_dm", "nbvae_b", "nbvae_c", "multivae")

MODALITIES = {
    "nbvae": ("counts",),
    "nbvae_dm": ("counts",),
    "nbvae_b": ("binary",),
    "nbvae_c": ("multilabel",),
    "multivae": ("counts", "binary"),
}
"""Data modalities each variant can be trained on."""

BINARY_VARIANTS = ("nbvae_b", "nbvae_c")

P_MIN = 1e-7
P_MAX = 1 - 1e-7
MAX_LOG_RATE = 30.0
LOG_VARIANCE_BOUNDS = (-10.0, 10.0)


@dataclass(frozen=True)
class ModelConfig:

    """Architecture of a model.

    Args:
        variant: One of :data:`VARIANTS`.
        input_dim: V, the vocabulary/item/label count.
        latent_dim: K.
        encoder_layers: Hidden layer widths of the encoder.
        decoder_layers: Hidden layer widths of the decoder trunk. When
            ``None``, the encoder widths reversed.
        feature_dim: D, the feature count (nbvae_c only).
        feature_layers: Hidden layer widths of the feature encoder
            (nbvae_c only). Empty means affine heads directly on the
            features.
        shared_decoder: Whether the r and p heads sit on one shared
            decoder trunk (otherwise each head gets its own trunk).
        seed: Seed for weight initialization.

    """

    variant: str
    input_dim: int
    latent_dim: int
    encoder_layers: Tuple[int, ...] = (128, 64)
    decoder_layers: Optional[Tuple[int, ...]] = None
    feature_dim: Optional[int] = None
    feature_layers: Tuple[int, ...] = ()
    shared_decoder: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"model.variant must be one of {', '.join(VARIANTS)}; "
                f"got {self.variant!r}"
            )
        if self.input_dim < 1:
            raise ConfigurationError("model.input_dim must be >= 1")
        if self.latent_dim < 1:
            raise ConfigurationError("model.latent_dim must be >= 1")
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "feature_layers", tuple(self.feature_layers))
        if self.decoder_layers is None:
            object.__setattr__(
                self, "decoder_layers", tuple(reversed(self.encoder_layers))
            )
        else:
            object.__setattr__(self, "decoder_layers", tuple(self.decoder_layers))
        for name in ("encoder_layers", "decoder_layers", "feature_layers"):
            if any(width < 1 for width in getattr(self, name)):
                raise ConfigurationError(f"model.{name} widths must be >= 1")
        if self.variant == "nbvae_c":
            if self.feature_dim is None or self.feature_dim < 1:
                raise ConfigurationError("model.feature_dim is required for nbvae_c")
        else:
            if self.feature_dim is not None:
                raise ConfigurationError(
                    f"model.feature_dim only applies to nbvae_c, not {self.variant}"
                )
            if self.feature_layers:
                raise ConfigurationError(
                    f"model.feature_layers only applies to nbvae_c, not {self.variant}"
                )

    @property
    def p_dim(self) -> int:
        """Width of the p head (0 means there's no p head)."""
        if self.variant == "multivae":
            return 0
        if self.variant == "nbvae_dm":
            return 1
        return self.input_dim

    def as_dict(self) -> Dict:
        data = asdict(self)
        for name in ("encoder_layers", "decoder_layers", "feature_layers"):
            data[name] = list(data[name])
        return data


# Parameters -----------------------------------------------------------


def _mlp_shapes(prefix, input_dim, widths) -> List[Tuple[str, Tuple[int, int]]]:
    shapes = []
    for i, width in enumerate(widths):
        shapes.append((f"{prefix}.{i}.weight", (input_dim, width)))
        shapes.append((f"{prefix}.{i}.bias", (1, width)))
        input_dim = width
    return shapes


def _head_shapes(prefix, input_dim, width):
    return [(f"{prefix}.weight", (input_dim, width)), (f"{prefix}.bias", (1, width))]


def _last_width(input_dim, widths):
    return widths[-1] if widths else input_dim


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, int]]":
    """Names and shapes of every parameter ``config`` calls for, in order.

    Output heads are named ``<network>.<head>``; hidden layers are named
    ``<network>.<index>``.

    """
    V, K = config.input_dim, config.latent_dim
    shapes = _mlp_shapes("encoder", V, config.encoder_layers)
    hidden = _last_width(V, config.encoder_layers)
    shapes += _head_shapes("encoder.mean", hidden, K)
    shapes += _head_shapes("encoder.log_variance", hidden, K)

    decoder_hidden = _last_width(K, config.decoder_layers)
    if config.variant == "multivae":
        shapes += _mlp_shapes("decoder", K, config.decoder_layers)
        shapes += _head_shapes("decoder.logits", decoder_hidden, V)
    elif config.shared_decoder:
        shapes += _mlp_shapes("decoder", K, config.decoder_layers)
        shapes += _head_shapes("decoder.r", decoder_hidden, V)
        shapes += _head_shapes("decoder.p", decoder_hidden, config.p_dim)
    else:
        shapes += _mlp_shapes("decoder_r", K, config.decoder_layers)
        shapes += _head_shapes("decoder_r.r", decoder_hidden, V)
        shapes += _mlp_shapes("decoder_p", K, config.decoder_layers)
        shapes += _head_shapes("decoder_p.p", decoder_hidden, config.p_dim)

    if config.variant == "nbvae_c":
        D = config.feature_dim
        shapes += _mlp_shapes("feature_encoder", D, config.feature_layers)
        feature_hidden = _last_width(D, config.feature_layers)
        shapes += _head_shapes("feature_encoder.mean", feature_hidden, K)
        shapes += _head_shapes("feature_encoder.log_variance", feature_hidden, K)
    return OrderedDict(shapes)


HEAD_NAMES = ("mean", "log_variance", "r", "p", "logits")


def is_head(name: str) -> bool:
    return name.rsplit(".", 2)[-2] in HEAD_NAMES


class ModelParams:

    """All trainable weights of a model, keyed by name."""

    def __init__(self, parameters: Sequence[Parameter]):
        self._parameters: Dict[str, Parameter] = OrderedDict(
            (p.name, p) for p in parameters
        )

    def __getitem__(self, name) -> Parameter:
        return self._parameters[name]

    def __contains__(self, name) -> bool:
        return name in self._parameters

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._parameters.values())

    def __len__(self):
        return len(self._parameters)

    def names(self) -> List[str]:
        return list(self._parameters)

    def zero_grad(self):
        for parameter in self:
            parameter.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Copies of the current values, keyed by name."""
        return {p.name: p.values.copy() for p in self}

    def restore(self, snapshot: Dict[str, np.ndarray]):
        for name, values in snapshot.items():
            parameter = self[name]
            if values.shape != parameter.shape:
                raise DimensionError(
                    f"Cannot restore {name}: shape {values.shape} != {parameter.shape}"
                )
            parameter.values[...] = values

    def copy(self) -> "ModelParams":
        copies = []
        for parameter in self:
            clone = Parameter(parameter.name, parameter.values)
            clone.first_moment = parameter.first_moment.copy()
            clone.second_moment = parameter.second_moment.copy()
            copies.append(clone)
        return ModelParams(copies)

    def all_finite(self) -> bool:
        return all(np.isfinite(p.values).all() for p in self)


def init_params(config: ModelConfig, zero_heads=False) -> ModelParams:
    """Initialize parameters from ``config.seed``.

    Weights are drawn uniformly from +/- sqrt(6 / (fan_in + fan_out));
    biases start at zero. With ``zero_heads``, every output head's
    weights start at zero too.

    """
    rng = np.random.default_rng(config.seed)
    parameters = []
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias") or (zero_heads and is_head(name)):
            values = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            values = rng.uniform(-limit, limit, size=shape)
        parameters.append(Parameter(name, values))
    return ModelParams(parameters)


# Model ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Batch:

    """Dense rows for one gradient step.

    ``counts`` holds the rows being modelled (counts, binary
    interactions, or labels); ``features`` is set for nbvae_c.

    """

    counts: np.ndarray
    features: Optional[np.ndarray] = None

    @classmethod
    def from_dataset(cls, dataset: Dataset, rows=None) -> "Batch":
        features = None
        if dataset.features is not None:
            features = dataset.features.to_dense(rows)
        return cls(dataset.labels.to_dense(rows), features)

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True, eq=False)
class LikelihoodParams:

    """Decoder outputs; which fields are set depends on the variant."""

    r: Optional[DiffNode] = None
    p: Optional[DiffNode] = None
    logits: Optional[DiffNode] = None


@dataclass(frozen=True, eq=False)
class ELBOTerms:
    elbo: DiffNode
    log_likelihood: DiffNode
    kl: DiffNode


@dataclass(eq=False)
class Model:

    """A model variant bound to its parameters."""

    config: ModelConfig
    params: ModelParams = field(default=None)  # type: ignore

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.config)
        expected = parameter_shapes(self.config)
        if list(expected) != self.params.names():
            raise ConfigurationError(
                f"Parameters don't match the {self.config.variant} architecture"
            )
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigurationError(
                    f"Parameter {name} has shape {self.params[name].shape}; "
                    f"the model config calls for {shape}"
                )

    @property
    def variant(self) -> str:
        return self.config.variant

    def _layer(self, name, x):
        return affine(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _mlp(self, prefix, x, widths):
        for i in range(len(widths)):
            x = elementwise("tanh", self._layer(f"{prefix}.{i}", x))
        return x

    def _gaussian_heads(self, prefix, hidden) -> LatentGaussian:
        mean = self._layer(f"{prefix}.mean", hidden)
        log_variance = clamp(
            self._layer(f"{prefix}.log_variance", hidden), *LOG_VARIANCE_BOUNDS
        )
        return LatentGaussian(mean, log_variance)

    def encode(self, y) -> LatentGaussian:
        """q(z | y): the encoder applied to log(1 + y)."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y.reshape(1, -1)
        if y.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"Encoder expects {self.config.input_dim} columns; got {y.shape[1]}"
            )
        hidden = self._mlp("encoder", constant(np.log1p(y)), self.config.encoder_layers)
        return self._gaussian_heads("encoder", hidden)

    def feature_encode(self, x) -> LatentGaussian:
        """p(z | x): the feature encoder (nbvae_c only)."""
        if self.variant != "nbvae_c":
            raise ContractError(f"{self.variant} has no feature encoder")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.config.feature_dim:
            raise DimensionError(
                f"Feature encoder expects {self.config.feature_dim} columns; "
                f"got {x.shape[1]}"
            )
        hidden = self._mlp("feature_encoder", constant(x), self.config.feature_layers)
        return self._gaussian_heads("feature_encoder", hidden)

    def decode(self, z) -> LikelihoodParams:
        """Map latent codes to likelihood parameters.

        ``r = exp(f_r(z))`` with the exponent capped at 30 and
        ``p = sigmoid(f_p(z))`` clamped to [1e-7, 1 - 1e-7]. For
        multivae, the raw logits are returned instead.

        """
        z = constant(z)
        if z.shape[1] != self.config.latent_dim:
            raise DimensionError(
                f"Decoder expects {self.config.latent_dim} latent dims; "
                f"got {z.shape[1]}"
            )
        widths = self.config.decoder_layers
        if self.variant == "multivae":
            hidden = self._mlp("decoder", z, widths)
            return LikelihoodParams(logits=self._layer("decoder.logits", hidden))
        if self.config.shared_decoder:
            hidden_r = hidden_p = self._mlp("decoder", z, widths)
            r_name, p_name = "decoder.r", "decoder.p"
        else:
            hidden_r = self._mlp("decoder_r", z, widths)
            hidden_p = self._mlp("decoder_p", z, widths)
            r_name, p_name = "decoder_r.r", "decoder_p.p"
        log_r = clamp(self._layer(r_name, hidden_r), upper=MAX_LOG_RATE)
        p = elementwise("sigmoid", self._layer(p_name, hidden_p))
        return LikelihoodParams(r=log_r.exp(), p=clamp(p, P_MIN, P_MAX))

    def log_likelihood_rows(self, y, decoded: LikelihoodParams) -> DiffNode:
        """Per-row log p(y | z) for this variant."""
        variant = self.variant
        if variant == "nbvae":
            return nb_logpmf_rows(y, decoded.r, decoded.p)
        if variant == "nbvae_dm":
            return dirmulti_logpmf_rows(y, decoded.r)
        if variant in BINARY_VARIANTS:
            return bernoulli_link_loglik_rows(y, decoded.r, decoded.p)
        return multinomial_loglik_rows(y, decoded.logits)

    def check_batch(self, batch: Batch):
        counts = batch.counts
        if counts.ndim != 2 or counts.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"Batch has shape {counts.shape}; expected (n, {self.config.input_dim})"
            )
        if self.variant in BINARY_VARIANTS and (counts > 1).any():
            raise ContractError(f"{self.variant} needs binary data; got counts > 1")
        if self.variant == "nbvae_c" and batch.features is None:
            raise ContractError("nbvae_c needs features in every batch")

    def elbo_terms(
        self, batch: Batch, beta: float, noise, sample_from_prior=False
    ) -> ELBOTerms:
        """Build the ELBO graph for a batch.

        Args:
            batch: Rows to score.
            beta: Weight on the KL term (>= 0).
            noise: Standard-normal draws, shape (batch rows, K).
            sample_from_prior: For nbvae_c, draw z from the feature
                encoder instead of the encoder. The likelihood still
                scores the batch's labels and the KL term is unchanged.

        Returns:
            The batch-mean ELBO, log-likelihood, and KL as 1x1 nodes.

        """
        if beta < 0:
            raise ContractError(f"beta must be >= 0; got {beta}")
        self.check_batch(batch)
        q = self.encode(batch.counts)
        if self.variant == "nbvae_c":
            prior = self.feature_encode(batch.features)
            kl = kl_general_rows(q, prior)
        else:
            if sample_from_prior:
                raise ContractError(f"{self.variant} has no feature encoder prior")
            prior = None
            kl = kl_standard_rows(q)
        source = prior if sample_from_prior else q
        z = reparam_sample(source, noise)
        log_likelihood = self.log_likelihood_rows(batch.counts, self.decode(z))
        elbo = (log_likelihood - beta * kl).mean()
        return ELBOTerms(elbo, log_likelihood.mean(), kl.mean())

    def elbo(self, batch: Batch, beta: float, noise, sample_from_prior=False):
        """Batch-mean ``log p(y | z) - beta * KL(q || prior)`` as a 1x1 node."""
        return self.elbo_terms(batch, beta, noise, sample_from_prior).elbo
