"""Ground-truth mask extraction against a brute-force pixel-loop oracle."""

import numpy as np
import pytest

from delocate.dataio import difference_exceeds, extract_ground_truth_mask
from delocate.errors import InvalidInput


def oracle_threshold(real, fake, threshold):
    h, w = real.shape[:2]
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            s = 0.0
            for c in range(real.shape[2]):
                s += abs(float(fake[y, x, c]) - float(real[y, x, c]))
            out[y, x] = (s / real.shape[2]) > threshold
    return out


def oracle_dilate(mask):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            hit = False
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
                        hit = True
            out[y, x] = hit
    return out


def oracle_erode(mask):
    # Out-of-bounds neighbors count as set, so border regions survive.
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            keep = True
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx]:
                        keep = False
            out[y, x] = keep
    return out


def oracle_extract(real, fake, threshold):
    raw = oracle_threshold(real, fake, threshold)
    if not raw.any():
        return raw.astype(np.uint8)
    return oracle_erode(oracle_dilate(raw)).astype(np.uint8)


def test_identical_frames_give_zero_mask():
    rng = np.random.default_rng(0)
    frame = rng.uniform(size=(16, 16, 3))
    for threshold in (0.05, 0.5, 0.95):
        assert extract_ground_truth_mask(frame, frame, threshold).sum() == 0


def test_block_difference_recovered_exactly():
    real = np.zeros((16, 16, 3))
    fake = real.copy()
    fake[5:9, 6:10] = 1.0
    mask = extract_ground_truth_mask(real, fake, 0.5)
    expected = np.zeros((16, 16), dtype=np.uint8)
    expected[5:9, 6:10] = 1
    assert np.array_equal(mask, expected)


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_matches_pixel_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    real = rng.uniform(size=(16, 16, 3))
    fake = rng.uniform(size=(16, 16, 3))
    got = extract_ground_truth_mask(real, fake, 0.3)
    assert np.array_equal(got, oracle_extract(real, fake, 0.3))


def test_block_touching_border_survives_closing():
    real = np.zeros((16, 16, 3))
    fake = real.copy()
    fake[0:5, 0:5] = 1.0
    mask = extract_ground_truth_mask(real, fake, 0.5)
    assert np.array_equal(mask, oracle_extract(real, fake, 0.5))
    assert mask[0, 0] == 1


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(12, 12, 3))
    b = rng.uniform(size=(12, 12, 3))
    assert np.array_equal(
        extract_ground_truth_mask(a, b, 0.25), extract_ground_truth_mask(b, a, 0.25)
    )


def test_threshold_monotonicity_before_closing():
    rng = np.random.default_rng(8)
    a = rng.uniform(size=(20, 20, 3))
    b = rng.uniform(size=(20, 20, 3))
    previous = None
    for threshold in (0.1, 0.2, 0.3, 0.4, 0.6):
        mask = difference_exceeds(a, b, threshold)
        if previous is not None:
            assert not (mask & ~previous).any(), "raising threshold added positives"
        previous = mask


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidInput):
        extract_ground_truth_mask(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)), 0.3)


def test_threshold_out_of_range_rejected():
    frame = np.zeros((8, 8, 3))
    with pytest.raises(InvalidInput):
        extract_ground_truth_mask(frame, frame, 0.0)
    with pytest.raises(InvalidInput):
        extract_ground_truth_mask(frame, frame, 1.0)
