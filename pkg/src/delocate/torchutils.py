"""Small torch helpers shared by both training stages."""

from __future__ import annotations

import os
import random

import numpy as np
import torch

from .dataio.types import FaceClip

DETERMINISTIC_ENV = "DELOCATE_DETERMINISTIC"


def deterministic_mode_requested() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def seed_everything(seed: int, deterministic: bool | None = None) -> None:
    """Seed python/numpy/torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if deterministic is None:
        deterministic = deterministic_mode_requested()
    if deterministic:
        torch.use_deterministic_algorithms(True)


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed derived from a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, dtype=np.uint64)[0] >> 1)


def clip_tensor(clip: FaceClip, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(T, H, W, 3) tensor of one clip's pixels."""
    return torch.from_numpy(np.ascontiguousarray(clip.pixels())).to(dtype)


def clips_to_tensor(clips: list[FaceClip], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, T, H, W, 3) tensor of a batch of same-shaped clips."""
    return torch.stack([clip_tensor(c, dtype) for c in clips], dim=0)
