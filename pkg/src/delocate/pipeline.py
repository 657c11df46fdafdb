"""Fused two-stage scoring: evaluation over manifests and single-clip inference."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataio.store import load_clip, load_manifest_clip
from .dataio.types import DatasetManifest, FaceClip, Label
from .localization import LocalizationOutput, binarize_mask, localize_clip, write_mask_outputs
from .metatrain import TrainedPipeline
from .metrics import ClipResult, MetricsReport, build_report, fuse_scores, iou, pbca


def _sigmoid(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x)))


@dataclass
class ClipVerdict:
    clip_id: str
    p_stage1: float
    p_stage2: float
    fused: float
    localization: LocalizationOutput


def score_clip(pipeline: TrainedPipeline, clip: FaceClip) -> ClipVerdict:
    """Run both stages on one clip and fuse the probabilities."""
    p1 = pipeline.classifier.predict_proba(clip)
    loc = localize_clip(pipeline.stage2, clip)
    p2 = _sigmoid(loc.cls_logit)
    return ClipVerdict(clip.clip_id, p1, p2, fuse_scores(p1, p2), loc)


def clip_level_gt(clip: FaceClip) -> np.ndarray:
    """Clip-level ground truth: pixelwise frame mean, then the 0.5 threshold."""
    if clip.gt_mask is None:
        h, w = clip.shape
        return np.zeros((h, w), dtype=np.uint8)
    return binarize_mask(np.asarray(clip.gt_mask, dtype=np.float64).mean(axis=0))


def evaluate_manifest(
    pipeline: TrainedPipeline,
    manifest: DatasetManifest,
    split: str = "test",
    config: RunConfig | None = None,
    include_reals: bool = False,
) -> MetricsReport:
    """Fused scores plus localization metrics over one manifest split."""
    entries = manifest.select(split=split) if split != "all" else list(manifest.entries)
    results = []
    for entry in entries:
        clip = load_manifest_clip(manifest, entry)
        verdict = score_clip(pipeline, clip)
        gt = clip_level_gt(clip)
        pred = verdict.localization.pred_mask_bin
        results.append(
            ClipResult(
                clip_id=clip.clip_id,
                score=verdict.fused,
                label=clip.label,
                iou=iou(gt, pred),
                pbca=pbca(gt, pred),
            )
        )
    digest = config.digest() if config is not None else ""
    return build_report(results, config_digest=digest, include_reals=include_reals)


def scores_by_stage(pipeline: TrainedPipeline, clips: list[FaceClip]):
    """(p1, p2, fused, labels) arrays for a list of clips."""
    p1, p2, fused, labels = [], [], [], []
    for clip in clips:
        v = score_clip(pipeline, clip)
        p1.append(v.p_stage1)
        p2.append(v.p_stage2)
        fused.append(v.fused)
        labels.append(1 if clip.label is Label.FAKE else 0)
    return np.array(p1), np.array(p2), np.array(fused), np.array(labels)


def infer_clip(pipeline: TrainedPipeline, clip_dir: str | Path, out_dir: str | Path) -> dict:
    """Score one clip directory; write overlays, masks, and a JSON verdict."""
    clip = load_clip(clip_dir)
    verdict = score_clip(pipeline, clip)
    out = Path(out_dir)
    mask_paths = write_mask_outputs(clip, verdict.localization, out)
    payload = {
        "clip_id": clip.clip_id,
        "score": verdict.fused,
        "p_stage1": verdict.p_stage1,
        "p_stage2": verdict.p_stage2,
        "label_at_0.5": "fake" if verdict.fused >= 0.5 else "real",
        "mask_paths": mask_paths,
    }
    (out / "verdict.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return payload
