"""On-disk clip and manifest storage.

Dataset layout::

    <root>/manifest.json
    <root>/clips/<id>/clip.json
    <root>/clips/<id>/frame_000.png ...
    <root>/clips/<id>/landmarks.json      # per frame: 68 [x, y] pairs
    <root>/clips/<id>/mask_000.png ...    # 8-bit grayscale, 0 or 255 (fakes)

Frames are stored as 8-bit PNG. Pixel intensities are k/255 floats, so the
save/load round trip is exact for any clip produced by this package.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import FormatError, InvariantViolation
from .types import DatasetManifest, FaceClip, FrameRecord, Label, ManifestEntry, N_LANDMARKS

FORMAT_VERSION = 1


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_clip(clip: FaceClip, path: str | Path) -> Path:
    """Write a clip directory; returns the directory path."""
    clip.validate()
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(clip.frames):
        Image.fromarray(_to_uint8(fr.image), mode="RGB").save(out / f"frame_{i:03d}.png")
    landmarks = [np.asarray(fr.landmarks, dtype=np.float64).tolist() for fr in clip.frames]
    (out / "landmarks.json").write_text(json.dumps(landmarks))
    if clip.gt_mask is not None:
        for i in range(clip.num_frames):
            m = (np.asarray(clip.gt_mask[i]) > 0).astype(np.uint8) * 255
            Image.fromarray(m, mode="L").save(out / f"mask_{i:03d}.png")
    meta = {
        "format_version": FORMAT_VERSION,
        "label": clip.label.value,
        "manipulation": clip.manipulation_type,
        "clip_id": clip.clip_id or out.name,
        "num_frames": clip.num_frames,
        "source_ids": [fr.source_id for fr in clip.frames],
        "frame_indices": [fr.frame_index for fr in clip.frames],
        "has_mask": clip.gt_mask is not None,
    }
    (out / "clip.json").write_text(json.dumps(meta, indent=1))
    return out


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc


def load_clip(path: str | Path) -> FaceClip:
    """Read a clip directory back into a validated FaceClip."""
    root = Path(path)
    meta_path = root / "clip.json"
    if not meta_path.is_file():
        raise FormatError(f"missing clip.json under {root}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt clip.json under {root}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported clip format_version {meta.get('format_version')!r}")

    try:
        n = int(meta["num_frames"])
        label = Label(meta["label"])
        manipulation = meta["manipulation"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"clip.json missing required fields under {root}: {exc}") from exc

    lm_path = root / "landmarks.json"
    if not lm_path.is_file():
        raise FormatError(f"missing landmarks.json under {root}")
    try:
        landmarks = json.loads(lm_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt landmarks.json under {root}: {exc}") from exc
    if len(landmarks) != n:
        raise FormatError(f"landmarks.json has {len(landmarks)} frames, expected {n}")

    source_ids = meta.get("source_ids") or [""] * n
    frame_indices = meta.get("frame_indices") or list(range(n))
    frames = []
    for i in range(n):
        frame_path = root / f"frame_{i:03d}.png"
        if not frame_path.is_file():
            raise FormatError(f"missing frame {frame_path.name} under {root}")
        img = _read_png(frame_path).astype(np.float64) / 255.0
        lm = np.asarray(landmarks[i], dtype=np.float64)
        if lm.shape != (N_LANDMARKS, 2):
            raise InvariantViolation(
                f"frame {i} has {lm.shape[0] if lm.ndim == 2 else '?'} landmarks, expected {N_LANDMARKS}"
            )
        frames.append(
            FrameRecord(image=img, landmarks=lm, source_id=source_ids[i], frame_index=frame_indices[i])
        )

    gt_mask = None
    if meta.get("has_mask"):
        masks = []
        for i in range(n):
            mask_path = root / f"mask_{i:03d}.png"
            if not mask_path.is_file():
                raise FormatError(f"missing mask {mask_path.name} under {root}")
            masks.append((_read_png(mask_path) > 127).astype(np.uint8))
        gt_mask = np.stack(masks, axis=0)

    clip = FaceClip(
        frames=frames,
        label=label,
        manipulation_type=manipulation,
        gt_mask=gt_mask,
        clip_id=meta.get("clip_id", root.name),
    )
    clip.validate()
    return clip


def save_manifest(manifest: DatasetManifest, root: str | Path) -> Path:
    manifest.validate()
    out = Path(root) / "manifest.json"
    payload = {
        "format_version": FORMAT_VERSION,
        "seed": manifest.seed,
        "entries": [
            {"path": e.path, "label": e.label.value, "manipulation": e.manipulation, "split": e.split}
            for e in manifest.entries
        ],
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=1))
    return out


def load_manifest(root: str | Path) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise FormatError(f"missing manifest.json under {root}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt manifest.json: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported manifest format_version {payload.get('format_version')!r}")
    try:
        entries = [
            ManifestEntry(
                path=e["path"],
                label=Label(e["label"]),
                manipulation=e["manipulation"],
                split=e["split"],
            )
            for e in payload["entries"]
        ]
        manifest = DatasetManifest(entries=entries, seed=int(payload["seed"]), root=str(root))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"manifest.json missing required fields: {exc}") from exc
    manifest.validate()
    return manifest


def load_manifest_clip(manifest: DatasetManifest, entry: ManifestEntry) -> FaceClip:
    return load_clip(Path(manifest.root) / entry.path)
