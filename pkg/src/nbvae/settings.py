"""Run settings: defaults, task presets, types, and resolution.

Settings are nested JSON objects with the sections ``data``, ``model``,
``train``, ``evaluation``, and ``output`` plus the top-level ``task``
and ``log_level`` keys. Individual settings are addressed by dotted
names such as ``train.seed``.

Resolution order (later wins):

1. :data:`DEFAULT_SETTINGS`
2. :data:`TASK_DEFAULTS` for the selected task
3. The JSON config file
4. Command line overrides

"""
import json
import logging
from typing import Any, Dict, List, Mapping, Optional

from .exc import ConfigurationError
from .util import NOT_SET, as_bool, as_list, is_sequence, merge_dicts


__all__ = [
    "DEFAULT_SETTINGS",
    "TASK_DEFAULTS",
    "get_setting",
    "resolve_settings",
    "set_setting",
]


log = logging.getLogger(__name__)


TASKS = ("text", "cf", "multilabel")


DEFAULT_SETTINGS: Dict[str, Any] = {
    "task": "text",
    "log_level": "INFO",
    "data": {
        "train": None,
        "validation": None,
        "test": None,
        "format": "counts",
        "split": [0.8, 0.1, 0.1],
        "split_seed": 0,
    },
    "model": {
        "variant": "nbvae",
        "latent_dim": 64,
        "encoder_layers": [128, 64],
        "decoder_layers": None,
        "feature_layers": [],
        "shared_decoder": True,
        "seed": 0,
    },
    "train": {
        "batch_size": 100,
        "max_epochs": 50,
        "learning_rate": 1e-3,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "anneal_steps": 10_000,
        "beta_max": 1.0,
        "patience": 10,
        "seed": 0,
        "validation_metric": "elbo",
        "validation_fraction": 0.2,
        "alternate_prior": True,
    },
    "evaluation": {
        "metrics": ["perplexity"],
        "heldout_fraction": 0.2,
        "seed": 0,
        "gradcheck_seeds": 100,
    },
    "output": {
        "dir": "runs/latest",
        "threads": 1,
    },
}
"""Default settings.

``data.train`` must be set before training. ``model.input_dim`` and
``model.feature_dim`` aren't settings; they're read from the data.

"""


TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "text": {
        "data": {"format": "counts"},
        "train": {"beta_max": 1.0, "validation_metric": "elbo"},
        "evaluation": {"metrics": ["perplexity"]},
    },
    "cf": {
        "data": {"format": "binary"},
        "train": {"beta_max": 0.2, "validation_metric": "ndcg@10"},
        "evaluation": {"metrics": ["recall@20", "recall@50", "ndcg@100"]},
    },
    "multilabel": {
        "data": {"format": "multilabel"},
        "model": {"variant": "nbvae_c"},
        "train": {"beta_max": 1.0, "validation_metric": "precision@1"},
        "evaluation": {"metrics": ["precision@1", "precision@3", "precision@5"]},
    },
}
"""Per-task overrides of :data:`DEFAULT_SETTINGS`."""


TYPES: Dict[str, Any] = {
    "task": str,
    "log_level": str,
    "data.train": Optional[str],
    "data.validation": Optional[str],
    "data.test": Optional[str],
    "data.format": str,
    "data.split": List[float],
    "data.split_seed": int,
    "model.variant": str,
    "model.latent_dim": int,
    "model.encoder_layers": List[int],
    "model.decoder_layers": Optional[List[int]],
    "model.feature_layers": List[int],
    "model.shared_decoder": bool,
    "model.seed": int,
    "train.batch_size": int,
    "train.max_epochs": int,
    "train.learning_rate": float,
    "train.adam_beta1": float,
    "train.adam_beta2": float,
    "train.adam_eps": float,
    "train.anneal_steps": int,
    "train.beta_max": float,
    "train.patience": int,
    "train.seed": int,
    "train.validation_metric": str,
    "train.validation_fraction": float,
    "train.alternate_prior": bool,
    "evaluation.metrics": List[str],
    "evaluation.heldout_fraction": float,
    "evaluation.seed": int,
    "evaluation.gradcheck_seeds": int,
    "output.dir": str,
    "output.threads": int,
}
"""Types of the :data:`DEFAULT_SETTINGS`, keyed by dotted name.

Used to convert string values (from the command line) and to check
values read from config files.

"""


LIST_ITEM_TYPES = {
    List[int]: int,
    List[float]: float,
    List[str]: str,
    Optional[List[int]]: int,
}


def _check_scalar(name, type_, value):
    if type_ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if type_ is int and isinstance(value, bool):
        raise ConfigurationError(f"Setting {name} must be int; got {value!r}")
    if not isinstance(value, type_):
        raise ConfigurationError(
            f"Setting {name} must be {type_.__name__}; got {value!r}"
        )
    return value


def convert_setting(name, value):
    """Convert setting value according to its defined type.

    Strings are parsed (e.g. "true" for bools, "128,64" for lists of
    ints); other values are checked against the type.

    Raises:
        ConfigurationError: ``name`` isn't a known setting or ``value``
            can't be converted to its type.

    """
    if name not in TYPES:
        raise ConfigurationError(f"Unknown setting: {name}")
    type_ = TYPES[name]
    optional = type_ in (Optional[str], Optional[List[int]])
    if value is None:
        if optional:
            return None
        raise ConfigurationError(f"Setting {name} can't be null")
    try:
        if type_ in LIST_ITEM_TYPES:
            item_type = LIST_ITEM_TYPES[type_]
            if isinstance(value, str):
                if optional and value.strip().lower() in ("", "none", "null"):
                    return None
                value = [item_type(item) for item in as_list(value)]
            elif is_sequence(value):
                value = [
                    item_type(item) if isinstance(item, str) else item
                    for item in value
                ]
            else:
                raise ConfigurationError(
                    f"Setting {name} must be a list; got {value!r}"
                )
            return [_check_scalar(name, item_type, item) for item in value]
        if type_ is Optional[str]:
            if isinstance(value, str) and not value.strip():
                return None
            return _check_scalar(name, str, value)
        if isinstance(value, str) and type_ is not str:
            value = as_bool(value) if type_ is bool else type_(value)
        return _check_scalar(name, type_, value)
    except ValueError as exc:
        raise ConfigurationError(f"Bad value for setting {name}: {value!r} ({exc})")


def _lookup(settings, name):
    *sections, key = name.split(".")
    for section in sections:
        settings = settings.get(section, {})
    return settings, key


def get_setting(settings: Mapping, name: str, default=NOT_SET):
    """Get a setting by dotted name.

    If the setting isn't present in ``settings``, the passed ``default``
    value will be used. If a ``default`` value wasn't passed, the
    default from :data:`DEFAULT_SETTINGS` will be used.

    """
    if name not in TYPES:
        raise ConfigurationError(f"Unknown setting: {name}")
    section, key = _lookup(settings, name)
    if key in section:
        value = section[key]
    elif default is NOT_SET:
        section, key = _lookup(DEFAULT_SETTINGS, name)
        value = section[key]
    else:
        value = default
    return convert_setting(name, value)


def set_setting(settings: Dict, name: str, value) -> Any:
    """Set a setting by dotted name, creating its section if needed.

    The value is converted according to its defined type; the converted
    value is returned.

    """
    value = convert_setting(name, value)
    *sections, key = name.split(".")
    target = settings
    for section in sections:
        target = target.setdefault(section, {})
    target[key] = value
    return value


def _check_keys(data, defaults, prefix=""):
    if not isinstance(data, dict):
        section = prefix.rstrip(".") or "<root>"
        raise ConfigurationError(f"Section {section} must be an object")
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigurationError(f"Unknown setting: {name}")
        if isinstance(defaults[key], dict):
            _check_keys(value, defaults[key], f"{name}.")


def _flatten(data, prefix=""):
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, f"{name}.")
        else:
            yield name, value


def read_config(path) -> Dict:
    """Read a JSON config file, rejecting unknown keys."""
    try:
        with open(path) as fp:
            data = json.load(fp)
    except FileNotFoundError:
        raise ConfigurationError(f"Config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Config file {path} isn't valid JSON: {exc}")
    _check_keys(data, DEFAULT_SETTINGS)
    return data


def resolve_settings(
    config: Optional[Dict] = None, overrides: Optional[Mapping[str, Any]] = None
) -> Dict:
    """Produce a complete, type-checked settings dict.

    Args:
        config: Settings read from a config file (may be partial).
        overrides: Dotted names mapped to values; strings are converted.

    Raises:
        ConfigurationError: On an unknown key, unknown task, or a value
            of the wrong type. The message names the dotted key.

    """
    config = config or {}
    overrides = dict(overrides or {})
    _check_keys(config, DEFAULT_SETTINGS)
    task = overrides.get("task", config.get("task", DEFAULT_SETTINGS["task"]))
    if task not in TASK_DEFAULTS:
        raise ConfigurationError(
            f"Setting task must be one of {', '.join(TASKS)}; got {task!r}"
        )
    settings = merge_dicts(DEFAULT_SETTINGS, TASK_DEFAULTS[task], config)
    for name, value in overrides.items():
        set_setting(settings, name, value)
    for name, value in list(_flatten(settings)):
        set_setting(settings, name, value)
    log.debug("Resolved settings for task %s", task)
    return settings
