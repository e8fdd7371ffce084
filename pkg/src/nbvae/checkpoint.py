"""Checkpoint files: a JSON manifest plus a flat float64 payload.

The manifest lists every tensor's name, shape, byte offset, and byte
length within the payload, which stores the values as little-endian
64-bit floats, row-major, back to back. The manifest also records the
model config (so loading can validate shapes), free-form metadata, and
the payload's SHA-256 digest, which serves as the checkpoint identity.

"""
import hashlib
import json
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np

from .diffmath import Parameter
from .exc import ConfigurationError
from .models import Model, ModelConfig, ModelParams, parameter_shapes


__all__ = ["load_checkpoint", "save_checkpoint"]


log = logging.getLogger(__name__)


FORMAT = "nbvae-checkpoint"
VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f8")


def _paths(path) -> Tuple[str, str]:
    path = str(path)
    base = path[: -len(".json")] if path.endswith(".json") else path
    return f"{base}.json", f"{base}.bin"


def save_checkpoint(path, model: Model, metadata: Optional[Dict] = None) -> str:
    """Write ``<path>.json`` and ``<path>.bin``; return the payload digest.

    Output depends only on the model and metadata, so saving the same
    model twice produces byte-identical files.

    """
    manifest_path, payload_path = _paths(path)
    tensors = []
    chunks = []
    offset = 0
    for parameter in model.params:
        data = np.ascontiguousarray(parameter.values, dtype=PAYLOAD_DTYPE).tobytes()
        tensors.append(
            {
                "name": parameter.name,
                "shape": list(parameter.shape),
                "offset": offset,
                "length": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float64-le",
        "config": model.config.as_dict(),
        "tensors": tensors,
        "sha256": digest,
        "metadata": metadata or {},
    }
    directory = os.path.dirname(manifest_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(payload_path, "wb") as fp:
        fp.write(payload)
    with open(manifest_path, "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    log.info(
        "Wrote checkpoint %s (%d tensors, sha256 %s)",
        manifest_path,
        len(tensors),
        digest[:12],
    )
    return digest


def read_manifest(path) -> Dict:
    manifest_path, _ = _paths(path)
    try:
        with open(manifest_path) as fp:
            manifest = json.load(fp)
    except FileNotFoundError:
        raise ConfigurationError(f"Checkpoint not found: {manifest_path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"Checkpoint manifest {manifest_path} isn't JSON: {exc}"
        )
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise ConfigurationError(
            f"{manifest_path} isn't a version {VERSION} checkpoint"
        )
    return manifest


def load_checkpoint(path) -> Tuple[Model, Dict]:
    """Load a model and its manifest.

    Raises:
        ConfigurationError: The files are missing or corrupt, or the
            stored tensors don't have the shapes the stored model config
            calls for.

    """
    manifest_path, payload_path = _paths(path)
    manifest = read_manifest(path)
    try:
        config = ModelConfig(**manifest["config"])
    except TypeError as exc:
        raise ConfigurationError(f"Bad model config in {manifest_path}: {exc}")
    try:
        with open(payload_path, "rb") as fp:
            payload = fp.read()
    except FileNotFoundError:
        raise ConfigurationError(f"Checkpoint payload not found: {payload_path}")
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ConfigurationError(f"Checkpoint payload {payload_path} is corrupt")
    expected = parameter_shapes(config)
    stored = {t["name"]: t for t in manifest["tensors"]}
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ConfigurationError(
            f"Checkpoint tensors don't match the model config "
            f"(missing: {missing}; unexpected: {extra})"
        )
    parameters = []
    for name, shape in expected.items():
        tensor = stored[name]
        if tuple(tensor["shape"]) != shape:
            raise ConfigurationError(
                f"Checkpoint tensor {name} has shape {tuple(tensor['shape'])}; "
                f"the model config calls for {shape}"
            )
        start, length = tensor["offset"], tensor["length"]
        values = np.frombuffer(payload[start : start + length], dtype=PAYLOAD_DTYPE)
        parameters.append(Parameter(name, values.reshape(shape)))
    model = Model(config, ModelParams(parameters))
    log.debug("Loaded %s checkpoint from %s", config.variant, manifest_path)
    return model, manifest
