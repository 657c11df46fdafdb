"""Classification and localization metrics plus score fusion and reports."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataio.types import Label
from .errors import InvalidInput


@dataclass
class ScoreEntry:
    clip_id: str
    score: float
    label: Label


@dataclass
class ScoreSet:
    scores: list[ScoreEntry] = field(default_factory=list)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.array([e.score for e in self.scores], dtype=np.float64)
        y = np.array([1 if e.label is Label.FAKE else 0 for e in self.scores], dtype=np.int64)
        if not np.isfinite(s).all():
            raise InvalidInput("scores must be finite")
        return s, y


def _check_both_classes(y: np.ndarray) -> None:
    if y.min() == y.max():
        raise InvalidInput("metric needs both classes present")


def auc(score_set: ScoreSet | tuple[np.ndarray, np.ndarray]) -> float:
    """Probability a random positive outranks a random negative, ties at 0.5.

    Mann-Whitney formulation via midranks; exactly equal to the pairwise
    count (#pos>neg + 0.5 * #ties) / (n_pos * n_neg).
    """
    s, y = score_set.arrays() if isinstance(score_set, ScoreSet) else score_set
    _check_both_classes(y)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, FPR, FNR) sweeping `score >= t` over unique scores plus +inf."""
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    fpr = np.empty(len(thresholds))
    fnr = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        pred_pos = scores >= t
        fpr[i] = np.count_nonzero(pred_pos & ~pos) / n_neg
        fnr[i] = np.count_nonzero(~pred_pos & pos) / n_pos
    return thresholds, fpr, fnr


def eer(score_set: ScoreSet | tuple[np.ndarray, np.ndarray]) -> float:
    """Equal error rate from a threshold sweep.

    Returns (FPR + FNR) / 2 at the |FPR - FNR| minimizer; when adjacent
    thresholds bracket the crossing, both rates are linearly interpolated to
    the crossing point.
    """
    s, y = score_set.arrays() if isinstance(score_set, ScoreSet) else score_set
    _check_both_classes(y)
    _, fpr, fnr = roc_points(s, y)
    d = fnr - fpr  # monotone non-decreasing in the threshold
    exact = np.flatnonzero(d == 0.0)
    if exact.size:
        return float(fpr[exact[0]])
    # First index where the sign flips from negative to positive.
    i = int(np.flatnonzero(d > 0.0)[0])
    if i == 0:
        return float((fpr[0] + fnr[0]) / 2.0)
    lam = -d[i - 1] / (d[i] - d[i - 1])
    fpr_x = fpr[i - 1] + lam * (fpr[i] - fpr[i - 1])
    fnr_x = fnr[i - 1] + lam * (fnr[i] - fnr[i - 1])
    return float((fpr_x + fnr_x) / 2.0)


def _check_binary_pair(gt_mask: np.ndarray, pred_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(gt_mask)
    b = np.asarray(pred_mask)
    if a.shape != b.shape:
        raise InvalidInput(f"mask shapes differ: {a.shape} vs {b.shape}")
    for m in (a, b):
        if not np.isin(m, (0, 1, True, False)).all():
            raise InvalidInput("masks must be binary")
    return a.astype(bool), b.astype(bool)


def iou(gt_mask: np.ndarray, pred_mask: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    a, b = _check_binary_pair(gt_mask, pred_mask)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def pbca(gt_mask: np.ndarray, pred_mask: np.ndarray) -> float:
    """Pixel-wise binary classification accuracy."""
    a, b = _check_binary_pair(gt_mask, pred_mask)
    return float(np.count_nonzero(a == b) / a.size)


def fuse_scores(p_stage1: float, p_stage2: float) -> float:
    """Final detection score: arithmetic mean of the two stage probabilities."""
    for p in (p_stage1, p_stage2):
        if not 0.0 <= p <= 1.0:
            raise InvalidInput(f"stage probability {p} outside [0, 1]")
    return (p_stage1 + p_stage2) / 2.0


@dataclass
class ClipResult:
    clip_id: str
    score: float
    label: Label
    iou: float | None = None
    pbca: float | None = None


@dataclass
class MetricsReport:
    auc: float
    eer: float
    iou: float | None
    pbca: float | None
    n_real: int
    n_fake: int
    per_clip: list[ClipResult]
    config_digest: str = ""
    localization_over: str = "fake_clips"

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "eer": self.eer,
            "iou": self.iou,
            "pbca": self.pbca,
            "n_real": self.n_real,
            "n_fake": self.n_fake,
            "localization_over": self.localization_over,
            "per_clip": [
                {
                    "id": r.clip_id,
                    "score": r.score,
                    "label": r.label.value,
                    "iou": r.iou,
                    "pbca": r.pbca,
                }
                for r in self.per_clip
            ],
            "config_digest": self.config_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def write(self, out_dir: str | Path, stem: str = "report") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{stem}.json"
        path.write_text(self.to_json())
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "score", "label", "iou", "pbca"])
            for r in self.per_clip:
                writer.writerow([r.clip_id, r.score, r.label.value, r.iou, r.pbca])
        return path


def build_report(
    results: list[ClipResult], config_digest: str = "", include_reals: bool = False
) -> MetricsReport:
    """Aggregate per-clip results; localization over fake clips unless asked otherwise."""
    score_set = ScoreSet([ScoreEntry(r.clip_id, r.score, r.label) for r in results])
    loc = [
        r
        for r in results
        if r.iou is not None and (include_reals or r.label is Label.FAKE)
    ]
    return MetricsReport(
        auc=auc(score_set),
        eer=eer(score_set),
        iou=float(np.mean([r.iou for r in loc])) if loc else None,
        pbca=float(np.mean([r.pbca for r in loc])) if loc else None,
        n_real=sum(1 for r in results if r.label is Label.REAL),
        n_fake=sum(1 for r in results if r.label is Label.FAKE),
        per_clip=results,
        config_digest=config_digest,
        localization_over="all_clips" if include_reals else "fake_clips",
    )
