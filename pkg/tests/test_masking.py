"""Partition geometry, patch binding oracle, and mask-plan invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delocate.errors import DegenerateGeometry, InvalidInput
from delocate.masking import (
    Box,
    FacePart,
    FacialPartition,
    MaskPlan,
    PatchGrid,
    alternative_strategies,
    compute_partition,
    draw_mask_plan,
    patches_of_part,
    round_half_up,
)

from .conftest import identity_landmarks


GRID = PatchGrid(4, 64, 64, 8)


def test_eyes_boxes_contain_eye_contour_landmarks():
    lm = identity_landmarks(64, 64, seed=3)
    partition = compute_partition(lm, (64, 64))
    eye_boxes = partition.boxes(FacePart.EYES)
    for idx in range(36, 48):
        x, y = lm[idx]
        assert any(b.contains(x, y) for b in eye_boxes), f"landmark {idx} outside eye boxes"


def test_every_part_has_boxes():
    partition = compute_partition(identity_landmarks(64, 64, seed=1), (64, 64))
    for part in FacePart:
        assert len(partition.boxes(part)) >= 1


def test_translation_equivariance_before_clipping():
    lm = identity_landmarks(128, 128, seed=2) + 20.0  # away from borders
    big = (256, 256)
    base = compute_partition(lm, big)
    shifted = compute_partition(lm + 5.0, big)
    for part in FacePart:
        for a, b in zip(base.boxes(part), shifted.boxes(part)):
            assert np.allclose([b.x0 - a.x0, b.y0 - a.y0, b.x1 - a.x1, b.y1 - a.y1], 5.0)


def test_eyes_lips_overlap_small_over_corpus():
    ratios = []
    for seed in range(50):
        partition = compute_partition(identity_landmarks(64, 64, seed=100 + seed), (64, 64))
        eyes = patches_of_part(partition, FacePart.EYES, GRID)
        lips = patches_of_part(partition, FacePart.LIPS, GRID)
        union = eyes | lips
        ratios.append(len(eyes & lips) / len(union) if union else 0.0)
    assert max(ratios) < 0.3


def test_degenerate_landmarks_rejected():
    lm = np.full((68, 2), 10.0)
    with pytest.raises(DegenerateGeometry):
        compute_partition(lm, (64, 64))


def test_patch_binding_single_cell():
    partition = FacialPartition({FacePart.EYES: [Box(8.0, 8.0, 15.0, 15.0)],
                                 FacePart.CHEEK_NOSE: [Box(0, 0, 1, 1)],
                                 FacePart.LIPS: [Box(0, 0, 1, 1)]})
    assert patches_of_part(partition, FacePart.EYES, GRID) == {9}  # row 1, col 1 of 8x8


def test_patch_binding_full_frame():
    partition = FacialPartition({FacePart.EYES: [Box(0.0, 0.0, 63.0, 63.0)],
                                 FacePart.CHEEK_NOSE: [Box(0, 0, 1, 1)],
                                 FacePart.LIPS: [Box(0, 0, 1, 1)]})
    assert patches_of_part(partition, FacePart.EYES, GRID) == set(range(64))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_patch_binding_matches_center_oracle(seed):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(3):
        x0, y0 = rng.uniform(0, 100, size=2)
        boxes.append(Box(x0, y0, x0 + rng.uniform(5, 60), y0 + rng.uniform(5, 60)))
    partition = FacialPartition({FacePart.EYES: boxes,
                                 FacePart.CHEEK_NOSE: [Box(0, 0, 1, 1)],
                                 FacePart.LIPS: [Box(0, 0, 1, 1)]})
    grid = PatchGrid(2, 112, 112, 8)  # 14x14 spatial grid
    got = patches_of_part(partition, FacePart.EYES, grid)
    expected = set()
    for r in range(14):
        for c in range(14):
            cx, cy = (c + 0.5) * 8, (r + 0.5) * 8
            for b in boxes:
                if b.x0 <= cx <= b.x1 and b.y0 <= cy <= b.y1:
                    expected.add(r * 14 + c)
                    break
    assert got == expected


def test_mask_count_exact_75_of_40():
    partition = FacialPartition({FacePart.EYES: [Box(0.0, 0.0, 39.0, 63.0)],  # 5 cols x 8 rows = 40
                                 FacePart.CHEEK_NOSE: [Box(0, 0, 63, 63)],
                                 FacePart.LIPS: [Box(0, 0, 63, 63)]})
    assert len(patches_of_part(partition, FacePart.EYES, GRID)) == 40
    plan = alternative_strategies("eyes_only")(partition, GRID, 0.75, 5)
    assert plan.num_masked() == 30


def test_ratio_exactness_tube_and_containment():
    lm = identity_landmarks(64, 64, seed=9)
    partition = compute_partition(lm, (64, 64))
    for seed in range(200):
        plan = draw_mask_plan(partition, GRID, 0.75, seed)
        part_patches = patches_of_part(partition, plan.chosen_part, GRID)
        assert plan.num_masked() == round_half_up(0.75 * len(part_patches))
        assert set(plan.spatial_indices().tolist()) <= part_patches
        # tube property: all frames share the same spatial mask
        for t in range(1, GRID.t):
            assert np.array_equal(plan.masked[t], plan.masked[0])


def test_part_choice_uniform():
    partition = compute_partition(identity_landmarks(64, 64, seed=4), (64, 64))
    counts = {p: 0 for p in FacePart}
    n = 3000
    for seed in range(n):
        counts[draw_mask_plan(partition, GRID, 0.75, seed).chosen_part] += 1
    for part, count in counts.items():
        assert abs(count / n - 1 / 3) < 0.03, f"{part} frequency {count / n}"


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_seed_determinism(seed):
    partition = compute_partition(identity_landmarks(64, 64, seed=6), (64, 64))
    a = draw_mask_plan(partition, GRID, 0.6, seed)
    b = draw_mask_plan(partition, GRID, 0.6, seed)
    assert a.chosen_part == b.chosen_part
    assert np.array_equal(a.masked, b.masked)


def test_ratio_bounds_rejected():
    partition = compute_partition(identity_landmarks(64, 64, seed=6), (64, 64))
    for bad in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(InvalidInput):
            draw_mask_plan(partition, GRID, bad, 0)


def test_eyes_only_strategy_fixes_part():
    partition = compute_partition(identity_landmarks(64, 64, seed=7), (64, 64))
    gen = alternative_strategies("eyes_only")
    for seed in range(20):
        assert gen(partition, GRID, 0.75, seed).chosen_part is FacePart.EYES


def test_no_roi_draws_from_whole_grid():
    partition = compute_partition(identity_landmarks(64, 64, seed=8), (64, 64))
    gen = alternative_strategies("no_roi")
    all_parts = set()
    for part in FacePart:
        all_parts |= patches_of_part(partition, part, GRID)
    hit_outside = False
    for seed in range(50):
        plan = gen(partition, GRID, 0.75, seed)
        if set(plan.spatial_indices().tolist()) - all_parts:
            hit_outside = True
            break
    assert hit_outside, "no_roi never masked outside the ROI union"


def test_random_global_count():
    partition = compute_partition(identity_landmarks(64, 64, seed=8), (64, 64))
    gen = alternative_strategies("random_global")
    for ratio in (0.3, 0.75, 0.9):
        plan = gen(partition, GRID, ratio, 1)
        assert plan.num_masked() == round_half_up(ratio * GRID.spatial_patches)


def test_unknown_strategy_rejected():
    with pytest.raises(InvalidInput):
        alternative_strategies("fancy")


def test_grid_divisibility_enforced():
    with pytest.raises(InvalidInput):
        PatchGrid(4, 60, 64, 8)


def test_plan_json_round_trip():
    partition = compute_partition(identity_landmarks(64, 64, seed=9), (64, 64))
    plan = draw_mask_plan(partition, GRID, 0.75, 42)
    again = MaskPlan.from_json(plan.to_json())
    assert np.array_equal(plan.masked, again.masked)
    assert plan.chosen_part == again.chosen_part
    assert plan.ratio == again.ratio and plan.seed == again.seed
