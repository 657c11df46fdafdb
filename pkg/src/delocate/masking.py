"""Facial-part ROI boxes and patch-level mask plans.

Faces are split into three parts (eyes, cheek & nose, lips) whose boxes are
bounding boxes of landmark groups chosen after the classic action-unit
regions (brows, lower eyelids, nose root, cheeks, mouth corners, chin sides,
chin), dilated by 10% of the inter-ocular distance. Mask plans pick one part
at random and mask a fixed ratio of its patches as space-time tubes: a
spatial patch is masked in all frames or in none.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, InvalidInput


class FacePart(enum.Enum):
    EYES = "eyes"
    CHEEK_NOSE = "cheek_nose"
    LIPS = "lips"


# Landmark index groups (68-point convention). Each group becomes one box.
_PART_GROUPS: dict[FacePart, list[list[int]]] = {
    FacePart.EYES: [
        list(range(17, 22)) + list(range(36, 42)),  # left brow + left eye contour
        list(range(22, 27)) + list(range(42, 48)),  # right brow + right eye contour
    ],
    FacePart.CHEEK_NOSE: [
        list(range(27, 36)),        # nose root, bridge and base
        [1, 2, 3, 4, 5, 31],        # left cheek (jaw side to nostril)
        [11, 12, 13, 14, 15, 35],   # right cheek
    ],
    FacePart.LIPS: [
        list(range(48, 68)),        # mouth incl. corners
        [5, 6, 7, 8, 9, 10, 11],    # chin and chin sides
    ],
}

DEFAULT_MASK_RATIO = 0.75


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with inclusive bounds, pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass
class FacialPartition:
    part_boxes: dict[FacePart, list[Box]]

    def boxes(self, part: FacePart) -> list[Box]:
        return self.part_boxes[part]


@dataclass(frozen=True)
class PatchGrid:
    """Logical (T, H/patch, W/patch) addressing of space-time patches."""

    t: int
    h: int
    w: int
    patch_size: int = 16

    def __post_init__(self):
        if self.h % self.patch_size or self.w % self.patch_size:
            raise InvalidInput(
                f"frame size {self.h}x{self.w} not divisible by patch size {self.patch_size}"
            )
        if self.t < 2:
            raise InvalidInput("grid needs at least 2 frames")

    @property
    def rows(self) -> int:
        return self.h // self.patch_size

    @property
    def cols(self) -> int:
        return self.w // self.patch_size

    @property
    def spatial_patches(self) -> int:
        return self.rows * self.cols

    def patch_center(self, index: int) -> tuple[float, float]:
        r, c = divmod(index, self.cols)
        p = self.patch_size
        return (c + 0.5) * p, (r + 0.5) * p


@dataclass
class MaskPlan:
    """Boolean patch mask over the space-time grid, shared across frames."""

    masked: np.ndarray  # (T, rows, cols) bool
    chosen_part: FacePart | None
    ratio: float
    seed: int
    strategy: str = "proposed"
    grid: PatchGrid | None = field(default=None, repr=False)

    def spatial_indices(self) -> np.ndarray:
        """Sorted flat indices of masked spatial patches."""
        return np.flatnonzero(self.masked[0].reshape(-1))

    def num_masked(self) -> int:
        return int(self.masked[0].sum())

    def to_json(self) -> str:
        return json.dumps(
            {
                "chosen_part": self.chosen_part.value if self.chosen_part else None,
                "ratio": self.ratio,
                "seed": self.seed,
                "strategy": self.strategy,
                "grid": [self.masked.shape[0], self.masked.shape[1], self.masked.shape[2]],
                "masked_indices": self.spatial_indices().tolist(),
            }
        )

    @staticmethod
    def from_json(payload: str) -> "MaskPlan":
        d = json.loads(payload)
        t, rows, cols = d["grid"]
        masked = np.zeros((t, rows, cols), dtype=bool)
        flat = masked[0].reshape(-1)
        flat[np.asarray(d["masked_indices"], dtype=int)] = True
        masked[:] = flat.reshape(rows, cols)[None]
        part = FacePart(d["chosen_part"]) if d["chosen_part"] else None
        return MaskPlan(masked, part, d["ratio"], d["seed"], d.get("strategy", "proposed"))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def interocular_distance(landmarks: np.ndarray) -> float:
    lm = np.asarray(landmarks, dtype=np.float64)
    left = lm[36:42].mean(axis=0)
    right = lm[42:48].mean(axis=0)
    return float(np.linalg.norm(right - left))


def compute_partition(landmarks: np.ndarray, frame_shape: tuple[int, int]) -> FacialPartition:
    """Landmark-group bounding boxes per part, dilated then clipped to the frame."""
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (68, 2):
        raise InvalidInput(f"expected (68, 2) landmarks, got {lm.shape}")
    iod = interocular_distance(lm)
    if iod <= 1e-9:
        raise DegenerateGeometry("zero inter-ocular distance")
    pad = 0.1 * iod
    h, w = frame_shape
    part_boxes: dict[FacePart, list[Box]] = {}
    for part, groups in _PART_GROUPS.items():
        boxes = []
        for idxs in groups:
            g = lm[idxs]
            box = Box(
                x0=max(0.0, g[:, 0].min() - pad),
                y0=max(0.0, g[:, 1].min() - pad),
                x1=min(float(w - 1), g[:, 0].max() + pad),
                y1=min(float(h - 1), g[:, 1].max() + pad),
            )
            boxes.append(box)
        part_boxes[part] = boxes
    return FacialPartition(part_boxes)


def patches_of_part(partition: FacialPartition, part: FacePart, grid: PatchGrid) -> set[int]:
    """Spatial patch indices whose centers fall inside the part's boxes."""
    boxes = partition.boxes(part)
    out = set()
    for idx in range(grid.spatial_patches):
        cx, cy = grid.patch_center(idx)
        if any(b.contains(cx, cy) for b in boxes):
            out.add(idx)
    return out


def _plan_from_indices(
    indices: np.ndarray, grid: PatchGrid, part: FacePart | None, ratio: float, seed: int, strategy: str
) -> MaskPlan:
    masked = np.zeros((grid.t, grid.rows, grid.cols), dtype=bool)
    flat = np.zeros(grid.spatial_patches, dtype=bool)
    flat[indices] = True
    masked[:] = flat.reshape(grid.rows, grid.cols)[None]
    return MaskPlan(masked, part, ratio, seed, strategy, grid)


def _draw(rng: np.random.Generator, pool: np.ndarray, ratio: float) -> np.ndarray:
    k = round_half_up(ratio * len(pool))
    return rng.choice(pool, size=k, replace=False) if k else np.empty(0, dtype=int)


def draw_mask_plan(
    partition: FacialPartition, grid: PatchGrid, ratio: float = DEFAULT_MASK_RATIO, seed: int = 0
) -> MaskPlan:
    """One part chosen uniformly at random, ratio of its patches masked as tubes."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInput(f"mask ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    parts = list(FacePart)
    part = parts[int(rng.integers(0, len(parts)))]
    pool = np.array(sorted(patches_of_part(partition, part, grid)), dtype=int)
    if len(pool) == 0:
        raise DegenerateGeometry(f"part {part.value} covers no patches on this grid")
    return _plan_from_indices(_draw(rng, pool, ratio), grid, part, ratio, seed, "proposed")


def _single_part_plan(part: FacePart, strategy: str):
    def plan(partition, grid, ratio=DEFAULT_MASK_RATIO, seed=0):
        if not 0.0 < ratio < 1.0:
            raise InvalidInput(f"mask ratio must lie in (0, 1), got {ratio}")
        rng = np.random.default_rng(seed)
        pool = np.array(sorted(patches_of_part(partition, part, grid)), dtype=int)
        if len(pool) == 0:
            raise DegenerateGeometry(f"part {part.value} covers no patches on this grid")
        return _plan_from_indices(_draw(rng, pool, ratio), grid, part, ratio, seed, strategy)

    return plan


def _no_roi_plan(partition, grid, ratio=DEFAULT_MASK_RATIO, seed=0):
    """Same per-part patch budget as the proposed strategy, no ROI containment."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInput(f"mask ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    parts = list(FacePart)
    part = parts[int(rng.integers(0, len(parts)))]
    n_part = len(patches_of_part(partition, part, grid))
    if n_part == 0:
        raise DegenerateGeometry(f"part {part.value} covers no patches on this grid")
    k = round_half_up(ratio * n_part)
    pool = np.arange(grid.spatial_patches)
    idx = rng.choice(pool, size=min(k, len(pool)), replace=False) if k else np.empty(0, dtype=int)
    return _plan_from_indices(idx, grid, None, ratio, seed, "no_roi")


def _random_global_plan(partition, grid, ratio=DEFAULT_MASK_RATIO, seed=0):
    """Frame-global tube masking: ratio of all spatial patches."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInput(f"mask ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    pool = np.arange(grid.spatial_patches)
    return _plan_from_indices(_draw(rng, pool, ratio), grid, None, ratio, seed, "random_global")


STRATEGIES = {
    "proposed": draw_mask_plan,
    "eyes_only": _single_part_plan(FacePart.EYES, "eyes_only"),
    "cheek_nose_only": _single_part_plan(FacePart.CHEEK_NOSE, "cheek_nose_only"),
    "lips_only": _single_part_plan(FacePart.LIPS, "lips_only"),
    "no_roi": _no_roi_plan,
    "random_global": _random_global_plan,
}


def alternative_strategies(name: str):
    """Plan generator for one of the ablation masking strategies."""
    try:
        return STRATEGIES[name]
    except KeyError:
        raise InvalidInput(
            f"unknown masking strategy {name!r}; choose from {sorted(STRATEGIES)}"
        ) from None
