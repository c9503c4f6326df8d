"""Parameter checkpoint serialization.

A checkpoint is a pair of files sharing one path prefix:
  <prefix>.json  manifest: format tag, parameter names + shapes (in file
                 order), hyperparameters, config hash
  <prefix>.bin   the raw values, little-endian IEEE-754 float64, one
                 block per parameter in manifest order
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor, parameter

FORMAT_TAG = "mcrfm-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed or incompatible checkpoints."""


def save_checkpoint(
    prefix: str | Path,
    params: dict[str, Tensor],
    hyperparameters: dict | None = None,
    config_hash: str | None = None,
) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "hyperparameters": hyperparameters or {},
        "params": [{"name": n, "shape": list(params[n].value.shape)} for n in names],
    }
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(prefix.with_suffix(".bin"), "wb") as f:
        for n in names:
            f.write(np.ascontiguousarray(params[n].value, dtype="<f8").tobytes())
    return prefix.with_suffix(".json")


def load_checkpoint(prefix: str | Path) -> tuple[dict[str, Tensor], dict]:
    """Returns (params, manifest). Raises CheckpointError on any mismatch."""
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".json")
    values_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not values_path.exists():
        raise FileNotFoundError(f"checkpoint files {manifest_path} / {values_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint manifest {manifest_path}: {e}") from e
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"not a checkpoint manifest: {manifest_path}")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('version')} (expected {FORMAT_VERSION})"
        )
    raw = values_path.read_bytes()
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"]) * 8
    if len(raw) != expected:
        raise CheckpointError(
            f"checkpoint value file has {len(raw)} bytes, manifest expects {expected}"
        )
    params: dict[str, Tensor] = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        block = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = parameter(block.reshape(shape).copy(), entry["name"])
        offset += count * 8
    return params, manifest
