"""Checkpoint format: JSON manifest (dims, toggles, field table) plus a flat
little-endian float32 payload, fields in sorted-name order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .model import ModelConfig

CHECKPOINT_FORMAT = "tsq-checkpoint-v1"
MANIFEST_NAME = "checkpoint.json"
PAYLOAD_NAME = "checkpoint.bin"


def save_checkpoint(
    out_dir: str | Path,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    extra: dict | None = None,
) -> Path:
    """`extra` holds JSON metadata (config echo, training log tail, ...)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = []
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        fields.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "model_config": cfg.to_dict(),
        "fields": fields,
        "extra": extra or {},
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    (out / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    return out


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME if root.is_dir() else root
    if not manifest_path.exists():
        raise FormatError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed checkpoint manifest: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"expected checkpoint format {CHECKPOINT_FORMAT!r}")
    payload = (manifest_path.parent / PAYLOAD_NAME).read_bytes()
    params: dict[str, np.ndarray] = {}
    for field in manifest["fields"]:
        shape = tuple(field["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(field["offset"])
        if start + count * 4 > len(payload):
            raise FormatError(f"checkpoint payload truncated at field {field['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        params[field["name"]] = arr.reshape(shape).astype(np.float64)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    return params, cfg, manifest.get("extra", {})
