"""Training orchestration: data splits, balanced episodes, meta updates.

Three phases run in order: autoencoder pretraining on real clips, classifier
finetune on real+fake, then episodic localization training. The localization
phase simulates unseen-domain detection by splitting the training fakes into
meta-train and meta-test pools with disjoint manipulation types; each update
is a first-order meta step: the composite loss on a meta-train episode, a
virtual gradient step, the same loss on a meta-test episode at the stepped
parameters, and one real optimizer step on the summed gradients.

"Converged" is realized as patience-based early stopping on a validation
loss, capped by the phase's epoch budget.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, load_weights_into, save_checkpoint
from .config import RunConfig
from .dataio.store import load_manifest_clip
from .dataio.types import DatasetManifest, FaceClip, Label, ManifestEntry
from .errors import InvalidInput, PhaseOrderError, SplitInfeasible
from .localization import MAPPED_SIZE, Stage2Model
from .masking import STRATEGIES
from .recovering import (
    FinetunedClassifier,
    RecoveringConfig,
    RecoveringModel,
    finetune_classifier,
    pretrain_recovering,
)
from .torchutils import clips_to_tensor, derive_seed, seed_everything


@dataclass
class MetaSplit:
    meta_train: list[ManifestEntry]
    meta_test: list[ManifestEntry]
    mode: str


def make_meta_split(
    manifest_or_entries: DatasetManifest | list[ManifestEntry],
    mode: str = "by_manipulation",
    seed: int = 0,
) -> MetaSplit:
    """Split training clips into meta-train / meta-test pools.

    by_manipulation keeps fake manipulation types disjoint between the pools
    and spreads real clips proportionally; random_7_3 cuts a label-interleaved
    shuffle at 70%.
    """
    if isinstance(manifest_or_entries, DatasetManifest):
        entries = list(manifest_or_entries.entries)
    else:
        entries = list(manifest_or_entries)
    rng = np.random.default_rng(derive_seed(seed, 7))
    reals = [e for e in entries if e.label is Label.REAL]
    fakes = [e for e in entries if e.label is Label.FAKE]

    if mode == "by_manipulation":
        types = sorted({e.manipulation for e in fakes})
        if len(types) < 2:
            raise SplitInfeasible(
                "by_manipulation needs at least 2 fake manipulation types; use random_7_3"
            )
        order = [types[i] for i in rng.permutation(len(types))]
        k = math.ceil(len(order) / 2)
        train_types, test_types = set(order[:k]), set(order[k:])
        fake_train = [e for e in fakes if e.manipulation in train_types]
        fake_test = [e for e in fakes if e.manipulation in test_types]
        frac = len(fake_train) / max(1, len(fake_train) + len(fake_test))
        n_real_train = min(len(reals) - 1, max(1, round(frac * len(reals))))
        real_order = [reals[i] for i in rng.permutation(len(reals))]
        real_train, real_test = real_order[:n_real_train], real_order[n_real_train:]
        return MetaSplit(real_train + fake_train, real_test + fake_test, mode)

    if mode == "random_7_3":
        real_order = [reals[i] for i in rng.permutation(len(reals))]
        fake_order = [fakes[i] for i in rng.permutation(len(fakes))]
        interleaved: list[ManifestEntry] = []
        i = j = 0
        while i < len(real_order) or j < len(fake_order):
            if i < len(real_order):
                interleaved.append(real_order[i])
                i += 1
            if j < len(fake_order):
                interleaved.append(fake_order[j])
                j += 1
        cut = round(0.7 * len(interleaved))
        return MetaSplit(interleaved[:cut], interleaved[cut:], mode)

    raise InvalidInput(f"unknown split mode {mode!r}")


@dataclass
class EpisodeBatch:
    """A balanced real/fake batch; labels are 1.0 for FAKE."""

    clips: list[FaceClip]
    labels: np.ndarray

    def validate(self) -> None:
        n_fake = int(self.labels.sum())
        if n_fake * 2 != len(self.clips):
            raise InvalidInput("episode must contain equal numbers of real and fake clips")


def sample_episode(
    reals: list[FaceClip], fakes: list[FaceClip], batch_size: int, rng: np.random.Generator
) -> EpisodeBatch:
    if batch_size % 2:
        raise InvalidInput("episode batch size must be even")
    half = batch_size // 2
    if not reals or not fakes:
        raise InvalidInput("episode sampling needs both real and fake clips")
    ri = rng.choice(len(reals), size=half, replace=len(reals) < half)
    fi = rng.choice(len(fakes), size=half, replace=len(fakes) < half)
    clips = [reals[int(i)] for i in ri] + [fakes[int(i)] for i in fi]
    labels = np.array([0.0] * half + [1.0] * half)
    order = rng.permutation(batch_size)
    return EpisodeBatch([clips[int(i)] for i in order], labels[order])


@dataclass
class TrainState:
    """Mutable state of the meta-learning loop."""

    model: nn.Module
    optimizer: torch.optim.Optimizer
    loss_fn: Callable[[nn.Module, EpisodeBatch], torch.Tensor]
    inner_lr: float
    num_iter: int = 0


def meta_step(state: TrainState, train_episode: EpisodeBatch, test_episode: EpisodeBatch) -> nn.Module:
    """One first-order meta update of the stage-2 parameters.

    Gradient applied = grad of the train-episode loss at the current
    parameters plus grad of the test-episode loss at the virtually stepped
    parameters.
    """
    train_episode.validate()
    test_episode.validate()
    model = state.model
    params = [p for p in model.parameters() if p.requires_grad]

    loss_train = state.loss_fn(model, train_episode)
    g_train = torch.autograd.grad(loss_train, params, allow_unused=True)
    g_train = [torch.zeros_like(p) if g is None else g for p, g in zip(params, g_train)]

    originals = [p.detach().clone() for p in params]
    with torch.no_grad():
        for p, g in zip(params, g_train):
            p.sub_(state.inner_lr * g)
    try:
        loss_test = state.loss_fn(model, test_episode)
        g_test = torch.autograd.grad(loss_test, params, allow_unused=True)
        g_test = [torch.zeros_like(p) if g is None else g for p, g in zip(params, g_test)]
    finally:
        with torch.no_grad():
            for p, orig in zip(params, originals):
                p.copy_(orig)

    state.optimizer.zero_grad()
    for p, ga, gb in zip(params, g_train, g_test):
        p.grad = ga + gb
    state.optimizer.step()
    state.num_iter += 1
    return model


def recovered_targets(
    recovering: RecoveringModel, clip: FaceClip, mask_ratio: float, strategy: str, seed: int
) -> torch.Tensor:
    """Recovered faces of one clip resized to 56x56: (T, 3, 56, 56), no grad."""
    from .masking import compute_partition
    from .torchutils import clip_tensor

    plan_fn = STRATEGIES[strategy]
    partition = compute_partition(clip.frames[0].landmarks, clip.shape)
    plan = plan_fn(partition, recovering.config.grid(), mask_ratio, seed)
    recovering.eval()
    with torch.no_grad():
        recon = recovering.reconstruct(clip_tensor(clip).unsqueeze(0), plan)[0]
        frames = recon.permute(0, 3, 1, 2)
        return F.interpolate(frames, size=(MAPPED_SIZE, MAPPED_SIZE), mode="bilinear", align_corners=False)


def gt_mask_tensor(clip: FaceClip) -> torch.Tensor:
    """(T, H, W) float ground-truth mask; zeros for clips without one."""
    if clip.gt_mask is None:
        t, (h, w) = clip.num_frames, clip.shape
        return torch.zeros(t, h, w)
    return torch.from_numpy(np.asarray(clip.gt_mask, dtype=np.float32))


class Stage2LossFn:
    """Composite stage-2 loss: classification + mapping MSE + localization MSE.

    Recovered-face targets come from the frozen stage-1 model under one fixed
    seeded mask plan per clip, cached for the whole phase.
    """

    def __init__(self, recovering: RecoveringModel, mask_ratio: float, strategy: str, seed: int):
        self.recovering = recovering
        self.mask_ratio = mask_ratio
        self.strategy = strategy
        self.seed = seed
        self._target_cache: dict[str, torch.Tensor] = {}
        self._gt_cache: dict[str, torch.Tensor] = {}

    def targets_for(self, clip: FaceClip) -> torch.Tensor:
        key = clip.clip_id or str(id(clip))
        if key not in self._target_cache:
            stable = zlib.crc32(key.encode())  # process-independent, unlike hash()
            self._target_cache[key] = recovered_targets(
                self.recovering, clip, self.mask_ratio, self.strategy, derive_seed(self.seed, stable)
            )
        return self._target_cache[key]

    def gt_for(self, clip: FaceClip) -> torch.Tensor:
        key = clip.clip_id or str(id(clip))
        if key not in self._gt_cache:
            self._gt_cache[key] = gt_mask_tensor(clip)
        return self._gt_cache[key]

    def __call__(self, model: Stage2Model, episode: EpisodeBatch) -> torch.Tensor:
        clips_t = clips_to_tensor(episode.clips)
        out = model(clips_t)
        recovered = torch.stack([self.targets_for(c) for c in episode.clips])
        gt = torch.stack([self.gt_for(c) for c in episode.clips])
        y = torch.from_numpy(episode.labels).to(torch.float32)
        l_cls = F.binary_cross_entropy_with_logits(out["clip_logits"], y)
        l_map = torch.mean((out["mapped"] - recovered) ** 2)
        l_loc = torch.mean((out["prob_masks"] - gt) ** 2)
        return l_cls + l_map + l_loc


@dataclass
class TrainedPipeline:
    recovering: RecoveringModel | None = None
    classifier: FinetunedClassifier | None = None
    stage2: Stage2Model | None = None
    histories: dict = field(default_factory=dict)


class RunLogger:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.touch()

    def log(self, **payload) -> None:
        if self.path is None:
            return
        payload.setdefault("t", time.time())
        with open(self.path, "a") as fh:
            fh.write(json.dumps(payload) + "\n")


def _clips_of(manifest: DatasetManifest, entries: list[ManifestEntry], cache: dict) -> list[FaceClip]:
    out = []
    for e in entries:
        if e.path not in cache:
            cache[e.path] = load_manifest_clip(manifest, e)
        out.append(cache[e.path])
    return out


def _carve_validation(entries: list[ManifestEntry], fraction: float, seed: int):
    """Use manifest val entries when present, otherwise carve from train."""
    val = [e for e in entries if e.split == "val"]
    train = [e for e in entries if e.split == "train"]
    if val:
        return train, val
    if fraction <= 0.0 or len(train) < 4:
        return train, []
    rng = np.random.default_rng(derive_seed(seed, 11))
    by_label: dict[Label, list[ManifestEntry]] = {Label.REAL: [], Label.FAKE: []}
    for e in train:
        by_label[e.label].append(e)
    tr, va = [], []
    for label, pool in by_label.items():
        order = [pool[i] for i in rng.permutation(len(pool))]
        k = max(1, int(round(fraction * len(order)))) if order else 0
        va.extend(order[:k])
        tr.extend(order[k:])
    return tr, va


def _build_recovering(config: RunConfig) -> RecoveringModel:
    torch.manual_seed(derive_seed(config.seed, 21))
    cfg = RecoveringConfig(
        frames=config.data.frames,
        image_size=config.data.image_size,
        patch_size=config.data.patch_size,
        embed_dim=config.model.embed_dim,
        depth=config.model.depth,
        heads=config.model.heads,
        decoder_depth=config.model.decoder_depth,
    )
    return RecoveringModel(cfg)


def _build_stage2(config: RunConfig) -> Stage2Model:
    torch.manual_seed(derive_seed(config.seed, 23))
    return Stage2Model(tuple(config.model.map_widths), tuple(config.model.loc_widths))


PHASE_FILES = {"recover": "phase1.ckpt", "finetune": "phase2.ckpt", "localize": "phase3.ckpt"}


def _load_recovering(run_dir: Path, config: RunConfig) -> RecoveringModel:
    ckpt_path = run_dir / PHASE_FILES["recover"]
    if not ckpt_path.is_file():
        raise PhaseOrderError(
            f"missing recovery checkpoint {ckpt_path}; run the recover phase first"
        )
    ckpt = load_checkpoint(ckpt_path, with_training_state=False)
    model = _build_recovering(config)
    load_weights_into(model, ckpt)
    return model


def _load_classifier(run_dir: Path, config: RunConfig) -> FinetunedClassifier:
    ckpt_path = run_dir / PHASE_FILES["finetune"]
    if not ckpt_path.is_file():
        raise PhaseOrderError(
            f"missing finetune checkpoint {ckpt_path}; run the finetune phase first"
        )
    ckpt = load_checkpoint(ckpt_path, with_training_state=False)
    clf = FinetunedClassifier(_build_recovering(config))
    load_weights_into(clf, ckpt)
    return clf


def _load_stage2(run_dir: Path, config: RunConfig) -> Stage2Model:
    ckpt_path = run_dir / PHASE_FILES["localize"]
    if not ckpt_path.is_file():
        raise PhaseOrderError(f"missing localization checkpoint {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path, with_training_state=False)
    model = _build_stage2(config)
    load_weights_into(model, ckpt)
    return model


def _evaluate_stage2_loss(model: Stage2Model, loss_fn: Stage2LossFn, clips: list[FaceClip]) -> float:
    model.eval()
    with torch.no_grad():
        labels = np.array([1.0 if c.label is Label.FAKE else 0.0 for c in clips])
        total, count = 0.0, 0
        for start in range(0, len(clips), 8):
            batch = clips[start : start + 8]
            ep = EpisodeBatch(batch, labels[start : start + 8])
            clips_t = clips_to_tensor(batch)
            out = model(clips_t)
            recovered = torch.stack([loss_fn.targets_for(c) for c in batch])
            gt = torch.stack([loss_fn.gt_for(c) for c in batch])
            y = torch.from_numpy(ep.labels).to(torch.float32)
            l = (
                F.binary_cross_entropy_with_logits(out["clip_logits"], y)
                + torch.mean((out["mapped"] - recovered) ** 2)
                + torch.mean((out["prob_masks"] - gt) ** 2)
            )
            total += float(l) * len(batch)
            count += len(batch)
    model.train()
    return total / max(1, count)


def train_localization(
    config: RunConfig,
    manifest: DatasetManifest,
    recovering: RecoveringModel,
    train_entries: list[ManifestEntry],
    val_entries: list[ManifestEntry],
    clip_cache: dict,
    logger: RunLogger,
) -> tuple[Stage2Model, dict]:
    """Episodic meta-training of the stage-2 model."""
    try:
        split = make_meta_split(train_entries, config.split_mode, config.seed)
    except SplitInfeasible:
        if config.split_mode == "by_manipulation":
            split = make_meta_split(train_entries, "random_7_3", config.seed)
        else:
            raise
    mt_real = [c for c in _clips_of(manifest, split.meta_train, clip_cache) if c.label is Label.REAL]
    mt_fake = [c for c in _clips_of(manifest, split.meta_train, clip_cache) if c.label is Label.FAKE]
    me_real = [c for c in _clips_of(manifest, split.meta_test, clip_cache) if c.label is Label.REAL]
    me_fake = [c for c in _clips_of(manifest, split.meta_test, clip_cache) if c.label is Label.FAKE]
    if not (mt_real and mt_fake and me_real and me_fake):
        raise InvalidInput("meta split left a pool without both labels; corpus too small")

    model = _build_stage2(config)
    phase = config.localize
    opt = phase.optimizer.build(model.parameters())
    loss_fn = Stage2LossFn(recovering, config.masking.ratio, config.masking.strategy, config.seed)
    inner_lr = config.inner_lr if config.inner_lr is not None else phase.optimizer.lr
    state = TrainState(model, opt, loss_fn, inner_lr)
    val_clips = _clips_of(manifest, val_entries, clip_cache) if val_entries else []

    rng = np.random.default_rng(derive_seed(config.seed, 31))
    steps_per_epoch = max(1, min(len(mt_real), len(mt_fake)) // (phase.batch_size // 2))
    history, val_history = [], []
    best_val, stale = math.inf, 0
    for epoch in range(phase.epochs):
        model.train()
        losses = []
        for _ in range(steps_per_epoch):
            train_ep = sample_episode(mt_real, mt_fake, phase.batch_size, rng)
            test_ep = sample_episode(me_real, me_fake, phase.batch_size, rng)
            meta_step(state, train_ep, test_ep)
            with torch.no_grad():
                losses.append(float(loss_fn(model, train_ep)))
        history.append(float(np.mean(losses)))
        if val_clips:
            val = _evaluate_stage2_loss(model, loss_fn, val_clips)
            val_history.append(val)
            logger.log(phase="localize", epoch=epoch, loss=history[-1], val_loss=val)
            if val < best_val - 1e-6:
                best_val, stale = val, 0
            else:
                stale += 1
                if stale >= phase.patience:
                    break
        else:
            logger.log(phase="localize", epoch=epoch, loss=history[-1])
    return model, {"loss": history, "val_loss": val_history}


def run_training(
    config: RunConfig,
    manifest: DatasetManifest,
    run_dir: str | Path,
    phases: tuple[str, ...] = ("recover", "finetune", "localize"),
) -> TrainedPipeline:
    """Execute the requested phases in order, persisting a checkpoint after each."""
    for phase in phases:
        if phase not in PHASE_FILES:
            raise InvalidInput(f"unknown phase {phase!r}")
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    logger = RunLogger(out / "log.jsonl")
    seed_everything(config.seed, config.deterministic)

    clip_cache: dict[str, FaceClip] = {}
    train_entries, val_entries = _carve_validation(
        [e for e in manifest.entries if e.split in ("train", "val")], config.val_fraction, config.seed
    )
    pipeline = TrainedPipeline()
    strategy_fn = STRATEGIES.get(config.masking.strategy)
    if strategy_fn is None:
        raise InvalidInput(f"unknown masking strategy {config.masking.strategy!r}")

    if "recover" in phases:
        model = _build_recovering(config)
        real_train = _clips_of(manifest, [e for e in train_entries if e.label is Label.REAL], clip_cache)
        real_val = _clips_of(manifest, [e for e in val_entries if e.label is Label.REAL], clip_cache)
        result = pretrain_recovering(
            model,
            real_train,
            config.pretrain.optimizer,
            epochs=config.pretrain.epochs,
            batch_size=config.pretrain.batch_size,
            mask_ratio=config.masking.ratio,
            strategy_fn=strategy_fn,
            seed=config.seed,
            val_clips=real_val or None,
            patience=config.pretrain.patience,
            log_cb=lambda **kw: logger.log(phase="recover", **kw),
        )
        pipeline.recovering = result.model
        pipeline.histories["recover"] = result.loss_history
        save_checkpoint(
            out / PHASE_FILES["recover"],
            "recovering",
            config.to_dict(),
            result.model,
            {"loss_history": result.loss_history, "val_history": result.val_history},
        )

    if "finetune" in phases:
        recovering = pipeline.recovering or _load_recovering(out, config)
        train_clips = _clips_of(manifest, train_entries, clip_cache)
        val_clips = _clips_of(manifest, val_entries, clip_cache)
        result = finetune_classifier(
            recovering,
            train_clips,
            config.finetune.optimizer,
            epochs=config.finetune.epochs,
            batch_size=config.finetune.batch_size,
            seed=config.seed,
            val_clips=val_clips or None,
            patience=config.finetune.patience,
            log_cb=lambda **kw: logger.log(phase="finetune", **kw),
        )
        pipeline.classifier = result.model
        pipeline.histories["finetune"] = result.loss_history
        save_checkpoint(
            out / PHASE_FILES["finetune"],
            "classifier",
            config.to_dict(),
            result.model,
            {"loss_history": result.loss_history, "val_history": result.val_history},
        )

    if "localize" in phases:
        recovering = pipeline.recovering or _load_recovering(out, config)
        if config.localize.epochs > 0:
            stage2, hist = train_localization(
                config, manifest, recovering, train_entries, val_entries, clip_cache, logger
            )
        else:
            stage2, hist = _build_stage2(config), {"loss": [], "val_loss": []}
        pipeline.stage2 = stage2
        pipeline.histories["localize"] = hist["loss"]
        save_checkpoint(out / PHASE_FILES["localize"], "stage2", config.to_dict(), stage2, hist)

    return pipeline


def load_pipeline(run_dir: str | Path, config: RunConfig | None = None) -> TrainedPipeline:
    """Load all three phase checkpoints from a run directory."""
    out = Path(run_dir)
    if config is None:
        from .config import load_config

        config = load_config(out / "config.json")
    return TrainedPipeline(
        recovering=_load_recovering(out, config),
        classifier=_load_classifier(out, config),
        stage2=_load_stage2(out, config),
    )
