"""Forgery ground-truth mask extraction from aligned real/fake frame pairs.

The rule is deliberately simple and reproducible: threshold the channel-mean
absolute difference, then run one binary closing pass (3x3 structuring
element) to remove speckle. Closing uses border value 0 for the dilation and
1 for the erosion so regions touching the image border survive intact.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import InvalidInput

DEFAULT_THRESHOLD = 0.25
_STRUCTURE = np.ones((3, 3), dtype=bool)


def difference_exceeds(real_frame: np.ndarray, fake_frame: np.ndarray, threshold: float) -> np.ndarray:
    """Raw thresholded difference, before the closing pass.

    A pixel is positive iff the mean over channels of |fake - real| is
    strictly greater than ``threshold``.
    """
    a = np.asarray(real_frame, dtype=np.float64)
    b = np.asarray(fake_frame, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        diff = np.abs(b - a)
    elif a.ndim == 3:
        diff = np.abs(b - a).mean(axis=2)
    else:
        raise InvalidInput(f"expected HxW or HxWxC frames, got ndim={a.ndim}")
    return diff > threshold


def close_mask(mask: np.ndarray) -> np.ndarray:
    """One 3x3 binary closing pass (dilate with 0-border, erode with 1-border)."""
    m = np.asarray(mask, dtype=bool)
    dilated = ndimage.binary_dilation(m, structure=_STRUCTURE, border_value=0)
    return ndimage.binary_erosion(dilated, structure=_STRUCTURE, border_value=1)


def extract_ground_truth_mask(
    real_frame: np.ndarray, fake_frame: np.ndarray, threshold: float = DEFAULT_THRESHOLD
) -> np.ndarray:
    """Binary tampering mask for a fake frame given its aligned real source."""
    if not 0.0 < threshold < 1.0:
        raise InvalidInput(f"threshold must lie in (0, 1), got {threshold}")
    raw = difference_exceeds(real_frame, fake_frame, threshold)
    if not raw.any():
        return np.zeros_like(raw, dtype=np.uint8)
    return close_mask(raw).astype(np.uint8)
