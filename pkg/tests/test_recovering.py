"""Stage-1 contracts: masked MSE oracle, copy-through, guards, gradients."""

import math

import numpy as np
import pytest
import torch

from delocate.dataio.types import Label
from delocate.errors import InvalidInput
from delocate.masking import Box, FacePart, FacialPartition, PatchGrid, draw_mask_plan
from delocate.optimizers import OptimizerSpec
from delocate.recovering import (
    FinetunedClassifier,
    RecoveringConfig,
    RecoveringModel,
    binary_cross_entropy,
    finetune_classifier,
    masked_mse_torch,
    pixel_mask_from_plan,
    pretrain_recovering,
    reconstruction_loss,
    recover,
)
from delocate.torchutils import clip_tensor

from .conftest import identity_landmarks, random_clip


def full_partition(size: int) -> FacialPartition:
    box = [Box(0.0, 0.0, size - 1.0, size - 1.0)]
    return FacialPartition({p: list(box) for p in FacePart})


def plan_for(size=32, t=2, patch=8, ratio=0.5, seed=0):
    grid = PatchGrid(t, size, size, patch)
    return draw_mask_plan(full_partition(size), grid, ratio, seed)


def masked_mse_oracle(original, reconstructed, plan, patch):
    """Pixel-loop oracle: walk masked patches, collect squared diffs in order."""
    t, h, w, _ = original.shape
    rows = h // patch
    cols = w // patch
    vals = []
    for ti in range(t):
        for y in range(h):
            for x in range(w):
                if plan.masked[ti, y // patch, x // patch]:
                    for c in range(3):
                        vals.append((original[ti, y, x, c] - reconstructed[ti, y, x, c]) ** 2)
    assert rows * cols == plan.masked.shape[1] * plan.masked.shape[2]
    return float(np.mean(np.array(vals)))


def test_loss_zero_when_identical():
    clip = random_clip(t=2, h=32, w=32, seed=1)
    plan = plan_for()
    assert reconstruction_loss(clip.pixels(), clip.pixels(), plan) == 0.0


def test_loss_constant_offset_is_one():
    plan = plan_for()
    a = np.zeros((2, 32, 32, 3))
    b = np.ones((2, 32, 32, 3))
    assert reconstruction_loss(a, b, plan) == 1.0


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_loss_matches_pixel_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(2, 32, 32, 3))
    b = rng.uniform(size=(2, 32, 32, 3))
    plan = plan_for(seed=seed)
    assert reconstruction_loss(a, b, plan) == masked_mse_oracle(a, b, plan, 8)


def test_loss_ignores_unmasked_perturbations():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(2, 32, 32, 3))
    b = rng.uniform(size=(2, 32, 32, 3))
    plan = plan_for(seed=6)
    base = reconstruction_loss(a, b, plan)
    pix = pixel_mask_from_plan(plan, 8)
    perturbed = b.copy()
    perturbed[~pix] += rng.uniform(0.1, 0.5, size=perturbed[~pix].shape)
    assert reconstruction_loss(a, perturbed, plan) == base


def test_loss_rejects_empty_plan():
    plan = plan_for()
    plan.masked[:] = False
    with pytest.raises(InvalidInput):
        reconstruction_loss(np.zeros((2, 32, 32, 3)), np.zeros((2, 32, 32, 3)), plan)


def micro_model(seed=0) -> RecoveringModel:
    torch.manual_seed(seed)
    cfg = RecoveringConfig(frames=2, image_size=8, patch_size=4, embed_dim=8, depth=1, heads=2, decoder_depth=1)
    return RecoveringModel(cfg)


def micro_clip(seed=0, h=8, w=8, t=2):
    clip = random_clip(t=t, h=h, w=w, seed=seed)
    return clip


def test_untrained_copy_through():
    torch.manual_seed(0)
    model = RecoveringModel(RecoveringConfig(frames=2, image_size=32, patch_size=8))
    clip = random_clip(t=2, h=32, w=32, seed=7)
    plan = plan_for(seed=7)
    out = recover(model, clip, plan)
    pix = pixel_mask_from_plan(plan, 8)
    assert np.array_equal(out.reconstructed_clip[~pix], clip.pixels()[~pix])
    assert out.per_sample_mse >= 0.0
    assert 0.0 < out.recovery_quality <= 1.0
    assert math.isclose(out.recovery_quality, 1.0 / (1.0 + out.per_sample_mse))


def test_only_masked_regions_may_differ():
    torch.manual_seed(1)
    model = RecoveringModel(RecoveringConfig(frames=2, image_size=32, patch_size=8))
    clip = random_clip(t=2, h=32, w=32, seed=8)
    plan = plan_for(seed=8, ratio=0.75)
    out = recover(model, clip, plan)
    differs = np.abs(out.reconstructed_clip - clip.pixels()).max(axis=3) > 0
    pix = pixel_mask_from_plan(plan, 8)
    assert not (differs & ~pix).any()


def test_shape_mismatch_rejected():
    model = micro_model()
    clip = random_clip(t=2, h=32, w=32, seed=9)
    plan = plan_for(h // 1 if (h := 32) else 32)
    with pytest.raises(InvalidInput):
        recover(model, clip, plan)


def test_gradient_matches_finite_differences():
    """Eq-style masked MSE gradient vs central differences, float64 micro net."""
    model = micro_model(seed=3).double()
    clip = micro_clip(seed=3)
    grid = PatchGrid(2, 8, 8, 4)
    plan = draw_mask_plan(full_partition(8), grid, 0.5, seed=3)
    clips_t = clip_tensor(clip, dtype=torch.float64).unsqueeze(0)

    loss = masked_mse_torch(model, clips_t, plan)
    params = list(model.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    eps = 1e-5
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(masked_mse_torch(model, clips_t, plan))
                flat[i] = orig - eps
                down = float(masked_mse_torch(model, clips_t, plan))
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                # 1e-6 floor: components with exactly-zero analytic gradient
                # (e.g. key-projection biases under softmax shift invariance)
                # otherwise compare FD roundoff noise against zero.
                rel = abs(fd - float(gflat[i])) / max(1e-6, abs(fd) + abs(float(gflat[i])))
                worst = max(worst, rel)
    assert worst <= 1e-4, f"worst relative gradient error {worst}"


def test_pretrain_rejects_fakes():
    model = micro_model()
    clips = [micro_clip(seed=1), random_clip(t=2, h=8, w=8, seed=2, label=Label.FAKE)]
    with pytest.raises(InvalidInput):
        pretrain_recovering(model, clips, epochs=1)


def test_pretrain_lr_zero_keeps_weights():
    # random_global strategy: facial parts are sub-patch at 8x8 frames
    from delocate.masking import STRATEGIES

    model = micro_model(seed=5)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    pretrain_recovering(
        model,
        [micro_clip(seed=5)],
        OptimizerSpec("adamw", lr=0.0, weight_decay=0.05),
        epochs=1,
        batch_size=1,
        mask_ratio=0.5,
        strategy_fn=STRATEGIES["random_global"],
    )
    after = model.state_dict()
    for k in before:
        assert torch.equal(before[k], after[k]), f"{k} changed at lr 0"


def test_pretrain_loss_decreases_on_tiny_corpus():
    from delocate.masking import STRATEGIES

    model = micro_model(seed=6)
    clips = [micro_clip(seed=s) for s in range(4)]
    result = pretrain_recovering(
        model,
        clips,
        OptimizerSpec("adamw", lr=3e-3, weight_decay=0.0),
        epochs=15,
        batch_size=4,
        mask_ratio=0.5,
        strategy_fn=STRATEGIES["random_global"],
    )
    assert result.loss_history[-1] < result.loss_history[0]


def test_bce_analytic_values():
    y = np.array([1.0, 0.0, 1.0, 0.0])
    assert binary_cross_entropy(y, y) < 1e-10
    half = np.full(4, 0.5)
    assert math.isclose(binary_cross_entropy(half, y), math.log(2.0), rel_tol=1e-12)


def test_classifier_bce_gradient_matches_finite_differences():
    torch.manual_seed(21)
    clf = FinetunedClassifier(micro_model(seed=21)).double()
    with torch.no_grad():  # nonzero head so the encoder path carries gradient
        clf.head.weight.normal_(0.0, 0.5)
        clf.head.bias.fill_(0.1)
    clips = torch.from_numpy(
        np.random.default_rng(22).uniform(size=(2, 2, 8, 8, 3))
    ).to(torch.float64)
    y = torch.tensor([1.0, 0.0], dtype=torch.float64)

    def loss_fn():
        return torch.nn.functional.binary_cross_entropy_with_logits(clf(clips), y)

    params = list(clf.parameters())
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    eps = 1e-5  # transformer path is smooth (GELU/softmax); larger eps cuts roundoff
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                rel = abs(fd - float(gflat[i])) / max(1e-6, abs(fd) + abs(float(gflat[i])))
                worst = max(worst, rel)
    assert worst <= 1e-4, f"worst relative gradient error {worst}"


def test_finetune_requires_both_classes():
    model = micro_model()
    with pytest.raises(InvalidInput):
        finetune_classifier(model, [micro_clip(seed=1), micro_clip(seed=2)], epochs=1)


def test_finetune_fits_tiny_split():
    torch.manual_seed(11)
    model = micro_model(seed=11)
    clips = [micro_clip(seed=s) for s in range(3)] + [
        random_clip(t=2, h=8, w=8, seed=s + 50, label=Label.FAKE) for s in range(3)
    ]
    result = finetune_classifier(
        model, clips, OptimizerSpec("adamw", lr=5e-3), epochs=20, batch_size=6, seed=1
    )
    clf = result.model
    assert isinstance(clf, FinetunedClassifier)
    probs = [clf.predict_proba(c) for c in clips]
    assert all(0.0 < p < 1.0 for p in probs)
    assert result.loss_history[-1] < result.loss_history[0]


def test_classifier_weights_are_independent_copy():
    model = micro_model(seed=12)
    clf = FinetunedClassifier(model)
    with torch.no_grad():
        for p in clf.blocks.parameters():
            p.add_(1.0)
    # mutating the classifier must not touch the recovering encoder
    for a, b in zip(model.blocks.parameters(), clf.blocks.parameters()):
        assert not torch.equal(a, b)
