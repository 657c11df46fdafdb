"""Core data records flowing through both pipeline stages."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvariantViolation

N_LANDMARKS = 68


class Label(enum.Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass
class FrameRecord:
    """One aligned face crop with its 68-point landmark annotation.

    image: H x W x 3 float array, values in [0, 1].
    landmarks: (68, 2) array of (x, y) pixel coordinates inside the frame.
    """

    image: np.ndarray
    landmarks: np.ndarray
    source_id: str = ""
    frame_index: int = 0

    def validate(self) -> None:
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise InvariantViolation(f"frame image must be HxWx3, got {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise InvariantViolation("pixel values must lie in [0, 1]")
        lm = np.asarray(self.landmarks, dtype=np.float64)
        if lm.shape != (N_LANDMARKS, 2):
            raise InvariantViolation(
                f"expected {N_LANDMARKS} (x, y) landmarks, got shape {lm.shape}"
            )
        h, w = img.shape[:2]
        if (lm[:, 0] < 0).any() or (lm[:, 0] >= w).any():
            raise InvariantViolation("landmark x coordinates outside [0, W)")
        if (lm[:, 1] < 0).any() or (lm[:, 1] >= h).any():
            raise InvariantViolation("landmark y coordinates outside [0, H)")
        if self.frame_index < 0:
            raise InvariantViolation("frame_index must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class FaceClip:
    """A fixed-length sequence of face frames, the unit both stages consume.

    gt_mask is a T x H x W binary array marking tampered pixels; it is None
    for clips without localization ground truth.
    """

    frames: list[FrameRecord]
    label: Label
    manipulation_type: str = "none"
    gt_mask: np.ndarray | None = None
    clip_id: str = ""

    def validate(self) -> None:
        if len(self.frames) < 2:
            raise InvariantViolation("a clip needs at least 2 frames")
        shape = self.frames[0].shape
        for fr in self.frames:
            fr.validate()
            if fr.shape != shape:
                raise InvariantViolation("all frames in a clip must share H x W")
        if self.gt_mask is not None:
            gm = np.asarray(self.gt_mask)
            t, h, w = len(self.frames), *shape
            if gm.shape != (t, h, w):
                raise InvariantViolation(
                    f"gt_mask shape {gm.shape} does not match clip ({t}, {h}, {w})"
                )
            if not np.isin(gm, (0, 1)).all():
                raise InvariantViolation("gt_mask must be binary")
            if self.label is Label.REAL and gm.any():
                raise InvariantViolation("REAL clip carries a nonzero gt_mask")
        if self.label is Label.FAKE:
            if self.gt_mask is None:
                raise InvariantViolation("FAKE clip requires a gt_mask")
            if not np.asarray(self.gt_mask).any():
                raise InvariantViolation("FAKE gt_mask must contain a positive pixel")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def pixels(self) -> np.ndarray:
        """Stack frames into a (T, H, W, 3) float array."""
        return np.stack([fr.image for fr in self.frames], axis=0)


@dataclass
class ManifestEntry:
    path: str
    label: Label
    manipulation: str
    split: str


@dataclass
class DatasetManifest:
    """Index of a dataset directory: one entry per clip plus the generator seed."""

    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    root: str = ""

    def validate(self) -> None:
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise InvariantViolation("clip paths in a manifest must be unique")
        for e in self.entries:
            if e.split not in ("train", "val", "test"):
                raise InvariantViolation(f"unknown split tag {e.split!r}")

    def select(self, split: str | None = None, label: Label | None = None) -> list[ManifestEntry]:
        out = self.entries
        if split is not None:
            out = [e for e in out if e.split == split]
        if label is not None:
            out = [e for e in out if e.label is label]
        return list(out)

    def manipulation_types(self) -> list[str]:
        return sorted({e.manipulation for e in self.entries if e.label is Label.FAKE})
