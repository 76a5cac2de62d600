"""Checkpoint directories: ``manifest.json`` (config, metadata, tensor index) + ``params.bin``.

``params.bin`` holds every parameter as little-endian float64, concatenated in
sorted-name order; the manifest maps each name to its element offset and shape.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoders import EncoderConfig, ParamTree

FORMAT = "disgcmae-ckpt/1"


class CheckpointError(Exception):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


def save_checkpoint(path, params: ParamTree, cfg: EncoderConfig, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = {}
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        offset += arr.size
        chunks.append(arr.ravel())
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    with open(path / "params.bin", "wb") as fh:
        fh.write(blob.astype("<f8").tobytes())
    manifest = {"format": FORMAT, "config": cfg.to_dict(), "meta": meta or {}, "tensors": index}
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path) -> tuple[ParamTree, EncoderConfig, dict]:
    """Returns (params, encoder config, metadata)."""
    path = Path(path)
    mf = path / "manifest.json"
    try:
        with open(mf, encoding="utf-8") as fh:
            manifest = json.load(fh)
        blob = np.fromfile(path / "params.bin", dtype="<f8")
    except FileNotFoundError as exc:
        raise CheckpointError(exc.filename or path, "missing checkpoint file") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(mf, f"invalid JSON ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(mf, f"unsupported format {manifest.get('format')!r}")
    try:
        cfg = EncoderConfig(**manifest["config"])
        params = {}
        for name, ent in manifest["tensors"].items():
            size = int(np.prod(ent["shape"], dtype=np.int64))
            start = int(ent["offset"])
            if start + size > blob.size:
                raise CheckpointError(path / "params.bin", f"truncated data for {name}")
            params[name] = blob[start : start + size].astype(np.float64).reshape(ent["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(mf, f"malformed manifest ({exc})") from None
    return params, cfg, manifest.get("meta", {})
