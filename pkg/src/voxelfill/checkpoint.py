"""Checkpoint container: JSON manifest + raw float32 arrays in a zip.

Entries are stored uncompressed with pinned timestamps so identical
parameters produce identical bytes. Loading verifies the format version,
model kind and config hash, and rejects truncated payloads or manifest
shapes that disagree with the stored byte counts.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, IoFailure, ShapeMismatch, TruncatedFile

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp for byte determinism


def save_checkpoint(path, model_kind: str, arrays: dict, step: int,
                    config_hash: str) -> None:
    """Write named float32 arrays plus a manifest describing them."""
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model_kind,
        "config_hash": config_hash,
        "step": int(step),
        "params": [
            {"name": name, "shape": list(np.asarray(a).shape)}
            for name, a in arrays.items()
        ],
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", _EPOCH),
                    json.dumps(manifest, indent=2))
        for name, a in arrays.items():
            payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
            zf.writestr(zipfile.ZipInfo(f"arrays/{name}", _EPOCH), payload)
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expect_model: str = None, expect_hash: str = None):
    """Read a checkpoint; returns (manifest dict, {name: float32 array})."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blobs = {e["name"]: zf.read(f"arrays/{e['name']}")
                     for e in manifest["params"]}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise TruncatedFile(f"{path}: corrupt checkpoint container: {exc}") from exc

    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatch(
            f"{path}: format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    if expect_model is not None and manifest.get("model") != expect_model:
        raise CheckpointMismatch(
            f"{path}: checkpoint is for model {manifest.get('model')!r}, "
            f"expected {expect_model!r}")
    if expect_hash is not None and manifest.get("config_hash") != expect_hash:
        raise CheckpointMismatch(f"{path}: config hash mismatch")

    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        blob = blobs[entry["name"]]
        if len(blob) != int(np.prod(shape, dtype=np.int64)) * 4:
            raise ShapeMismatch(
                f"{path}: entry {entry['name']} holds {len(blob)} bytes, "
                f"manifest shape {shape} needs {int(np.prod(shape)) * 4}")
        arrays[entry["name"]] = np.frombuffer(blob, "<f4").reshape(shape).copy()
    return manifest, arrays
