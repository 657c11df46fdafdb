"""Meta split invariants, episode balance, meta-step oracle, phase ordering."""

import numpy as np
import pytest
import torch
from torch import nn

from delocate.checkpoint import checkpoint_digest, load_checkpoint
from delocate.config import RunConfig, config_from_dict
from delocate.dataio.types import Label, ManifestEntry
from delocate.errors import InvalidInput, PhaseOrderError, SplitInfeasible
from delocate.metatrain import (
    EpisodeBatch,
    TrainState,
    _build_recovering,
    make_meta_split,
    meta_step,
    run_training,
    sample_episode,
)

from .conftest import random_clip


def entries(n_real, fake_types):
    out = [ManifestEntry(f"clips/r{i}", Label.REAL, "none", "train") for i in range(n_real)]
    for t, count in fake_types.items():
        for i in range(count):
            out.append(ManifestEntry(f"clips/{t}{i}", Label.FAKE, t, "train"))
    return out


def test_by_manipulation_disjoint_types():
    manifest = entries(8, {"a": 3, "b": 3, "c": 3, "d": 3})
    split = make_meta_split(manifest, "by_manipulation", seed=4)
    train_types = {e.manipulation for e in split.meta_train if e.label is Label.FAKE}
    test_types = {e.manipulation for e in split.meta_test if e.label is Label.FAKE}
    assert train_types and test_types
    assert not (train_types & test_types)
    # reals spread across both pools
    assert any(e.label is Label.REAL for e in split.meta_train)
    assert any(e.label is Label.REAL for e in split.meta_test)


def test_by_manipulation_single_type_infeasible():
    with pytest.raises(SplitInfeasible):
        make_meta_split(entries(4, {"a": 4}), "by_manipulation", seed=0)


def test_random_7_3_counts():
    split = make_meta_split(entries(5, {"a": 5}), "random_7_3", seed=1)
    assert len(split.meta_train) == 7
    assert len(split.meta_test) == 3


def test_split_deterministic():
    manifest = entries(6, {"a": 3, "b": 3})
    a = make_meta_split(manifest, "by_manipulation", seed=9)
    b = make_meta_split(manifest, "by_manipulation", seed=9)
    assert [e.path for e in a.meta_train] == [e.path for e in b.meta_train]
    assert [e.path for e in a.meta_test] == [e.path for e in b.meta_test]


def test_unknown_mode_rejected():
    with pytest.raises(InvalidInput):
        make_meta_split(entries(2, {"a": 2}), "fancy", seed=0)


def test_episode_balance():
    reals = [random_clip(seed=i, label=Label.REAL) for i in range(6)]
    fakes = [random_clip(seed=100 + i, label=Label.FAKE) for i in range(6)]
    rng = np.random.default_rng(0)
    for _ in range(20):
        ep = sample_episode(reals, fakes, 8, rng)
        ep.validate()
        assert len(ep.clips) == 8
        assert int(ep.labels.sum()) == 4


def test_unbalanced_episode_rejected():
    clips = [random_clip(seed=1), random_clip(seed=2)]
    ep = EpisodeBatch(clips, np.array([1.0, 1.0]))
    with pytest.raises(InvalidInput):
        ep.validate()


class ToyModel(nn.Module):
    def __init__(self, a0=1.5, b0=-0.7):
        super().__init__()
        self.a = nn.Parameter(torch.tensor(a0, dtype=torch.float64))
        self.b = nn.Parameter(torch.tensor(b0, dtype=torch.float64))


def balanced_marker_episode(seed):
    clips = [random_clip(seed=seed, label=Label.REAL), random_clip(seed=seed + 1, label=Label.FAKE)]
    return EpisodeBatch(clips, np.array([0.0, 1.0]))


def test_meta_step_matches_closed_form_first_order_update():
    model = ToyModel()
    lr, inner_lr = 0.05, 0.1
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.0, weight_decay=0.0)
    train_ep = balanced_marker_episode(1)
    test_ep = balanced_marker_episode(3)

    def loss_fn(m, episode):
        if episode is train_ep:  # L_train = (a-2)^2 + 0.5 (b+1)^2
            return (m.a - 2.0) ** 2 + 0.5 * (m.b + 1.0) ** 2
        return 2.0 * (m.a + 1.0) ** 2 + (m.b - 3.0) ** 2  # L_test

    state = TrainState(model, opt, loss_fn, inner_lr)
    a0, b0 = 1.5, -0.7
    g_train = (2.0 * (a0 - 2.0), 1.0 * (b0 + 1.0))
    a_fast = a0 - inner_lr * g_train[0]
    b_fast = b0 - inner_lr * g_train[1]
    g_test = (4.0 * (a_fast + 1.0), 2.0 * (b_fast - 3.0))
    expect_a = a0 - lr * (g_train[0] + g_test[0])
    expect_b = b0 - lr * (g_train[1] + g_test[1])

    meta_step(state, train_ep, test_ep)
    assert abs(model.a.item() - expect_a) <= 1e-12
    assert abs(model.b.item() - expect_b) <= 1e-12
    assert state.num_iter == 1


def test_meta_step_lr_zero_keeps_parameters():
    model = ToyModel()
    opt = torch.optim.SGD(model.parameters(), lr=0.0, momentum=0.9, weight_decay=5e-4)
    train_ep = balanced_marker_episode(5)
    test_ep = balanced_marker_episode(7)
    state = TrainState(model, opt, lambda m, ep: (m.a - 1.0) ** 2 + (m.b + 2.0) ** 2, 0.1)
    meta_step(state, train_ep, test_ep)
    assert model.a.item() == 1.5 and model.b.item() == -0.7


def test_meta_step_zero_losses_zero_update():
    model = ToyModel(a0=2.0, b0=-1.0)  # exactly at the quadratic minima
    opt = torch.optim.SGD(model.parameters(), lr=0.3, momentum=0.9, weight_decay=0.0)
    train_ep = balanced_marker_episode(9)
    test_ep = balanced_marker_episode(11)
    state = TrainState(model, opt, lambda m, ep: (m.a - 2.0) ** 2 + (m.b + 1.0) ** 2, 0.1)
    meta_step(state, train_ep, test_ep)
    assert model.a.item() == 2.0 and model.b.item() == -1.0


def zero_epoch_config():
    cfg = RunConfig().to_dict()
    cfg["pretrain"]["epochs"] = 0
    cfg["finetune"]["epochs"] = 0
    cfg["localize"]["epochs"] = 0
    cfg["val_fraction"] = 0.0
    return config_from_dict(cfg)


def test_run_training_zero_epochs_checkpoints_equal_init(small_corpus, tmp_path):
    config = zero_epoch_config()
    run_training(config, small_corpus, tmp_path / "run")
    for name in ("config.json", "phase1.ckpt", "phase2.ckpt", "phase3.ckpt", "log.jsonl"):
        assert (tmp_path / "run" / name).exists()
    ckpt = load_checkpoint(tmp_path / "run" / "phase1.ckpt")
    init = _build_recovering(config)
    for name, tensor in init.state_dict().items():
        assert np.array_equal(ckpt.weights[name], tensor.numpy()), f"{name} differs from init"


def test_run_training_zero_epochs_reproducible_digests(small_corpus, tmp_path):
    config = zero_epoch_config()
    run_training(config, small_corpus, tmp_path / "a")
    run_training(config, small_corpus, tmp_path / "b")
    for phase in ("phase1.ckpt", "phase2.ckpt", "phase3.ckpt"):
        assert checkpoint_digest(tmp_path / "a" / phase) == checkpoint_digest(tmp_path / "b" / phase)


def test_localize_without_recovery_checkpoint_fails(small_corpus, tmp_path):
    with pytest.raises(PhaseOrderError):
        run_training(zero_epoch_config(), small_corpus, tmp_path / "run", phases=("localize",))


def test_finetune_without_recovery_checkpoint_fails(small_corpus, tmp_path):
    with pytest.raises(PhaseOrderError):
        run_training(zero_epoch_config(), small_corpus, tmp_path / "run", phases=("finetune",))
