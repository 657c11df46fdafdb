"""Versioned binary checkpoint container.

A checkpoint is a single .npz file: a JSON metadata block (format version,
checkpoint kind, model config, training-state scalars) plus the named weight
tensors. The training-state block is optional on load, so inference never
needs it.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    config: dict
    weights: dict[str, np.ndarray]
    training_state: dict | None = None


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: dict,
    model: torch.nn.Module,
    training_state: dict | None = None,
) -> Path:
    weights = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "weight_names": list(weights),
        "training_state": training_state or {},
    }
    arrays = {f"w_{i}": w for i, w in enumerate(weights.values())}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:  # file object keeps savez from appending .npz
        np.savez(fh, **arrays)
    return out


def load_checkpoint(path: str | Path, with_training_state: bool = True) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"checkpoint not found: {p}")
    try:
        with np.load(p) as data:
            meta = json.loads(bytes(data["meta"].tobytes()).decode())
            if meta.get("format_version") != FORMAT_VERSION:
                raise FormatError(f"unsupported checkpoint version {meta.get('format_version')!r}")
            names = meta["weight_names"]
            weights = {name: data[f"w_{i}"] for i, name in enumerate(names)}
    except FormatError:
        raise
    except (KeyError, ValueError, OSError, zipfile.BadZipFile, json.JSONDecodeError, EOFError) as exc:
        raise FormatError(f"corrupt checkpoint {p}: {exc}") from exc
    state = meta.get("training_state") if with_training_state else None
    return Checkpoint(kind=meta["kind"], config=meta["config"], weights=weights, training_state=state)


def load_weights_into(model: torch.nn.Module, ckpt: Checkpoint) -> None:
    state = {name: torch.from_numpy(np.array(w)) for name, w in ckpt.weights.items()}
    model.load_state_dict(state)


def checkpoint_digest(path: str | Path) -> str:
    """Digest of the weight payload (metadata included, file container excluded)."""
    import hashlib

    ckpt = load_checkpoint(path)
    h = hashlib.sha256()
    h.update(json.dumps({"kind": ckpt.kind, "config": ckpt.config}, sort_keys=True).encode())
    for name in sorted(ckpt.weights):
        h.update(name.encode())
        h.update(np.ascontiguousarray(ckpt.weights[name]).tobytes())
    return h.hexdigest()
