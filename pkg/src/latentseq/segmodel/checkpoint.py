"""Flat binary tensor archive with a JSON manifest.

``<stem>.bin`` holds every parameter as little-endian float64, back to back;
``<stem>.json`` lists names, shapes and byte offsets plus the model config and
vocabulary needed to rebuild the model.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Vocab
from .model import SegModel, SegModelConfig

FORMAT = "latentseq-tensors/1"
DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def _paths(stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_tensors(tensors: dict[str, np.ndarray], stem: str | Path, extra: dict | None = None) -> tuple[Path, Path]:
    bin_path, json_path = _paths(stem)
    entries, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
            entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
            fh.write(raw)
            offset += len(raw)
    manifest = {"format": FORMAT, "dtype": "float64-le", "total_bytes": offset, "tensors": entries}
    manifest.update(extra or {})
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path, json_path


def load_tensors(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    bin_path, json_path = _paths(stem)
    manifest = json.loads(json_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unknown archive format {manifest.get('format')!r}")
    raw = bin_path.read_bytes()
    if len(raw) != manifest["total_bytes"]:
        raise CheckpointError(f"archive holds {len(raw)} bytes, manifest expects {manifest['total_bytes']}")
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=int))
        if count * DTYPE.itemsize != entry["nbytes"]:
            raise CheckpointError(f"{entry['name']}: shape disagrees with byte count")
        flat = np.frombuffer(raw, dtype=DTYPE, count=count, offset=entry["offset"])
        tensors[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64)
    return tensors, manifest


def save_model(model: SegModel, stem: str | Path) -> tuple[Path, Path]:
    extra = {"config": model.config.to_dict(), "vocab": model.vocab.itos}
    return save_tensors(model.params.state(), stem, extra)


def load_model(stem: str | Path) -> SegModel:
    tensors, manifest = load_tensors(stem)
    try:
        config = SegModelConfig(**manifest["config"])
        vocab = Vocab(manifest["vocab"][4:])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"manifest lacks model metadata: {exc}") from exc
    if vocab.itos != manifest["vocab"]:
        raise CheckpointError("vocabulary in manifest is malformed")
    model = SegModel(config, vocab)
    expected = set(model.params)
    if set(tensors) != expected:
        missing, unexpected = sorted(expected - set(tensors)), sorted(set(tensors) - expected)
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {unexpected}")
    try:
        model.params.load(tensors)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model
