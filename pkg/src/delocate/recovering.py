"""Stage 1: masked-autoencoder recovery of real faces plus classifier finetune.

An asymmetric encoder-decoder transformer attends jointly over all space-time
patch tokens of a clip. Masked patch tokens are dropped before the encoder
(not zeroed); a shallow decoder fills them back in from learned mask tokens
and predicts their pixels. Pretraining accepts real clips only: recovery
quality is the real/fake separation signal the rest of the pipeline builds
on. The finetune step discards the decoder and trains a pooled linear head
on uncorrupted clips.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dataio.types import FaceClip, Label
from .errors import InvalidInput
from .masking import MaskPlan, PatchGrid, compute_partition, draw_mask_plan
from .optimizers import OptimizerSpec, finetune_default, pretrain_default
from .torchutils import clip_tensor, clips_to_tensor, derive_seed


@dataclass
class RecoveringConfig:
    frames: int = 8
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 96
    depth: int = 4
    heads: int = 4
    decoder_depth: int = 2

    @property
    def tokens_per_frame(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.frames * self.tokens_per_frame

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def grid(self) -> PatchGrid:
        return PatchGrid(self.frames, self.image_size, self.image_size, self.patch_size)


def patchify(clips: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, T, H, W, 3) -> (B, T*rows*cols, p*p*3), t-major then row-major."""
    b, t, h, w, c = clips.shape
    p = patch_size
    x = clips.reshape(b, t, h // p, p, w // p, p, c)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t * (h // p) * (w // p), p * p * c)


def unpatchify(tokens: torch.Tensor, patch_size: int, t: int, h: int, w: int) -> torch.Tensor:
    b = tokens.shape[0]
    p = patch_size
    x = tokens.reshape(b, t, h // p, w // p, p, p, 3)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, h, w, 3)


class Attention(nn.Module):
    """Joint space-time self-attention over the full token sequence."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise InvalidInput(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class RecoveringModel(nn.Module):
    """Asymmetric encoder-decoder over space-time patch tokens."""

    def __init__(self, config: RecoveringConfig | None = None):
        super().__init__()
        self.config = config or RecoveringConfig()
        cfg = self.config
        self.patch_embed = nn.Linear(cfg.patch_dim, cfg.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_tokens, cfg.embed_dim))
        self.blocks = nn.ModuleList(Block(cfg.embed_dim, cfg.heads) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.decoder_embed = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.decoder_pos = nn.Parameter(torch.zeros(1, cfg.num_tokens, cfg.embed_dim))
        self.decoder_blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.heads) for _ in range(cfg.decoder_depth)
        )
        self.decoder_norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.patch_dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.decoder_pos, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def _check_clips(self, clips: torch.Tensor) -> None:
        cfg = self.config
        if clips.ndim != 5 or clips.shape[1:] != (cfg.frames, cfg.image_size, cfg.image_size, 3):
            raise InvalidInput(
                f"clip tensor {tuple(clips.shape)} does not match model config "
                f"(T={cfg.frames}, {cfg.image_size}x{cfg.image_size})"
            )

    def encode_visible(self, clips: torch.Tensor, keep_flat: torch.Tensor) -> torch.Tensor:
        """Encoder over unmasked tokens only (masked tokens dropped)."""
        self._check_clips(clips)
        tokens = self.patch_embed(patchify(clips, self.config.patch_size)) + self.pos_embed
        x = tokens[:, keep_flat]
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def forward_masked(self, clips: torch.Tensor, mask_flat: torch.Tensor) -> torch.Tensor:
        """Predict patch pixels at every token position; only masked ones matter."""
        keep_flat = ~mask_flat
        encoded = self.encode_visible(clips, keep_flat)
        b = clips.shape[0]
        cfg = self.config
        full = self.mask_token.expand(b, cfg.num_tokens, cfg.embed_dim).clone()
        full[:, keep_flat] = self.decoder_embed(encoded)
        x = full + self.decoder_pos
        for blk in self.decoder_blocks:
            x = blk(x)
        return self.head(self.decoder_norm(x))

    def reconstruct(self, clips: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
        """Copy-through reconstruction: input pixels outside the plan, predictions inside."""
        mask_flat = torch.from_numpy(plan.masked.reshape(-1))
        pred = self.forward_masked(clips, mask_flat)
        tokens = patchify(clips, self.config.patch_size).clone()
        tokens[:, mask_flat] = pred[:, mask_flat].to(tokens.dtype)
        cfg = self.config
        return unpatchify(tokens, cfg.patch_size, cfg.frames, cfg.image_size, cfg.image_size)


@dataclass
class RecoveryOutput:
    reconstructed_clip: np.ndarray  # (T, H, W, 3)
    per_sample_mse: float
    recovery_quality: float


def pixel_mask_from_plan(plan: MaskPlan, patch_size: int) -> np.ndarray:
    """(T, H, W) boolean pixel mask implied by a patch-level plan."""
    return np.kron(plan.masked, np.ones((1, patch_size, patch_size), dtype=bool))


def reconstruction_loss(original: np.ndarray, reconstructed: np.ndarray, plan: MaskPlan) -> float:
    """Mean squared error over masked-patch pixel components only."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"clip shapes differ: {a.shape} vs {b.shape}")
    if plan.num_masked() == 0:
        raise InvalidInput("mask plan covers zero patches")
    t, h, w = a.shape[:3]
    patch = h // plan.masked.shape[1]
    pix = pixel_mask_from_plan(plan, patch)
    if pix.shape != (t, h, w):
        raise InvalidInput("mask plan grid does not match clip dimensions")
    diff = (a - b)[pix]
    return float(np.mean(diff**2))


def recovery_quality_from_mse(mse: float) -> float:
    return 1.0 / (1.0 + mse)


def recover(model: RecoveringModel, clip: FaceClip, plan: MaskPlan) -> RecoveryOutput:
    """Reconstruct one clip under a mask plan and score its recovery quality."""
    model.eval()
    with torch.no_grad():
        recon = model.reconstruct(clip_tensor(clip).unsqueeze(0), plan)[0].numpy()
    original = clip.pixels()
    # Copy-through guarantee: replace unmasked pixels with the exact input.
    pix = pixel_mask_from_plan(plan, model.config.patch_size)
    recon = np.where(pix[:, :, :, None], recon, original)
    mse = reconstruction_loss(original, recon, plan)
    return RecoveryOutput(recon, mse, recovery_quality_from_mse(mse))


def masked_mse_torch(model: RecoveringModel, clips: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
    """Differentiable per-batch masked reconstruction loss (training path)."""
    mask_flat = torch.from_numpy(plan.masked.reshape(-1))
    if not bool(mask_flat.any()):
        raise InvalidInput("mask plan covers zero patches")
    pred = model.forward_masked(clips, mask_flat)
    target = patchify(clips, model.config.patch_size)
    return torch.mean((pred[:, mask_flat] - target[:, mask_flat]) ** 2)


def binary_cross_entropy(probs: np.ndarray, labels: np.ndarray, eps: float = 1e-12) -> float:
    """Plain BCE over predicted probabilities; the detection loss for both stages."""
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise InvalidInput("probs and labels must have equal shapes")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class TrainResult:
    model: nn.Module
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


def _plan_for(clip: FaceClip, grid: PatchGrid, strategy_fn, ratio: float, seed: int) -> MaskPlan:
    partition = compute_partition(clip.frames[0].landmarks, clip.shape)
    return strategy_fn(partition, grid, ratio, seed)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain_recovering(
    model: RecoveringModel,
    real_clips: list[FaceClip],
    optimizer_config: OptimizerSpec | None = None,
    epochs: int = 30,
    batch_size: int = 8,
    mask_ratio: float = 0.75,
    strategy_fn=draw_mask_plan,
    seed: int = 0,
    val_clips: list[FaceClip] | None = None,
    patience: int | None = None,
    log_cb=None,
) -> TrainResult:
    """Train the autoencoder on real clips only (hard guard against fakes)."""
    for clip in real_clips:
        if clip.label is not Label.REAL:
            raise InvalidInput("pretraining accepts REAL clips only")
    if not real_clips:
        raise InvalidInput("no clips to pretrain on")
    spec = optimizer_config or pretrain_default()
    opt = spec.build(model.parameters())
    grid = model.config.grid()
    rng = np.random.default_rng(derive_seed(seed, 101))
    history: list[float] = []
    val_history: list[float] = []
    best_val = math.inf
    stale = 0

    for epoch in range(epochs):
        model.train()
        losses = []
        for batch_idx in _epoch_batches(len(real_clips), batch_size, rng):
            opt.zero_grad()
            batch_loss = 0.0
            for j in batch_idx:
                clip = real_clips[int(j)]
                plan = _plan_for(clip, grid, strategy_fn, mask_ratio, derive_seed(seed, epoch, int(j)))
                loss = masked_mse_torch(model, clip_tensor(clip).unsqueeze(0), plan)
                (loss / len(batch_idx)).backward()
                batch_loss += float(loss.detach()) / len(batch_idx)
            opt.step()
            losses.append(batch_loss)
        history.append(float(np.mean(losses)))
        if val_clips:
            val = evaluate_recovery_loss(model, val_clips, mask_ratio, strategy_fn, derive_seed(seed, 999))
            val_history.append(val)
            if log_cb:
                log_cb(epoch=epoch, loss=history[-1], val_loss=val)
            if patience is not None:
                if val < best_val - 1e-6:
                    best_val, stale = val, 0
                else:
                    stale += 1
                    if stale >= patience:
                        break
        elif log_cb:
            log_cb(epoch=epoch, loss=history[-1])
    return TrainResult(model, history, val_history)


def evaluate_recovery_loss(
    model: RecoveringModel,
    clips: list[FaceClip],
    mask_ratio: float = 0.75,
    strategy_fn=draw_mask_plan,
    seed: int = 0,
) -> float:
    """Mean masked reconstruction loss over clips, one seeded plan each."""
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i, clip in enumerate(clips):
            plan = _plan_for(clip, model.config.grid(), strategy_fn, mask_ratio, derive_seed(seed, i))
            total += float(masked_mse_torch(model, clip_tensor(clip).unsqueeze(0), plan))
    return total / len(clips)


def recovery_mse_all_parts(model: RecoveringModel, clip: FaceClip, mask_ratio: float = 0.75, seed: int = 0) -> float:
    """Masked-reconstruction MSE averaged over one plan per facial part.

    Deterministic per (clip, seed); covers every part so tampering anywhere
    on the face contributes to the score.
    """
    from .masking import STRATEGIES

    parts = ("eyes_only", "cheek_nose_only", "lips_only")
    vals = []
    for k, name in enumerate(parts):
        plan = _plan_for(clip, model.config.grid(), STRATEGIES[name], mask_ratio, derive_seed(seed, k))
        vals.append(recover(model, clip, plan).per_sample_mse)
    return float(np.mean(vals))


class FinetunedClassifier(nn.Module):
    """Stage-1 detector: the pretrained encoder, mean-pooled, plus a linear head.

    Operates on uncorrupted clips; no masking at finetune or inference time.
    """

    def __init__(self, recovering: RecoveringModel):
        super().__init__()
        self.config = recovering.config
        self.patch_embed = copy.deepcopy(recovering.patch_embed)
        self.pos_embed = nn.Parameter(recovering.pos_embed.detach().clone())
        self.blocks = copy.deepcopy(recovering.blocks)
        self.norm = copy.deepcopy(recovering.norm)
        self.head = nn.Linear(self.config.embed_dim, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if clips.ndim != 5 or clips.shape[1:] != (cfg.frames, cfg.image_size, cfg.image_size, 3):
            raise InvalidInput(
                f"clip tensor {tuple(clips.shape)} does not match model config"
            )
        x = self.patch_embed(patchify(clips, cfg.patch_size)) + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        pooled = self.norm(x).mean(dim=1)
        return self.head(pooled).squeeze(-1)

    def predict_proba(self, clip: FaceClip) -> float:
        self.eval()
        with torch.no_grad():
            logit = self.forward(clips_to_tensor([clip]))
        return float(torch.sigmoid(logit)[0])


def finetune_classifier(
    encoder: RecoveringModel,
    labeled_clips: list[FaceClip],
    optimizer_config: OptimizerSpec | None = None,
    epochs: int = 10,
    batch_size: int = 8,
    seed: int = 0,
    val_clips: list[FaceClip] | None = None,
    patience: int | None = None,
    log_cb=None,
) -> TrainResult:
    """Binary cross-entropy finetune of the encoder on real + fake clips."""
    labels = {c.label for c in labeled_clips}
    if labels != {Label.REAL, Label.FAKE}:
        raise InvalidInput("finetuning needs both REAL and FAKE clips")
    spec = optimizer_config or finetune_default()
    clf = FinetunedClassifier(encoder)
    opt = spec.build(clf.parameters())
    bce = nn.BCEWithLogitsLoss()
    rng = np.random.default_rng(derive_seed(seed, 202))
    y_all = torch.tensor([1.0 if c.label is Label.FAKE else 0.0 for c in labeled_clips])
    history: list[float] = []
    val_history: list[float] = []
    best_val = math.inf
    stale = 0

    for epoch in range(epochs):
        clf.train()
        losses = []
        for batch_idx in _epoch_batches(len(labeled_clips), batch_size, rng):
            opt.zero_grad()
            clips = clips_to_tensor([labeled_clips[int(j)] for j in batch_idx])
            loss = bce(clf(clips), y_all[batch_idx])
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
        if val_clips:
            val = evaluate_classifier_loss(clf, val_clips)
            val_history.append(val)
            if log_cb:
                log_cb(epoch=epoch, loss=history[-1], val_loss=val)
            if patience is not None:
                if val < best_val - 1e-6:
                    best_val, stale = val, 0
                else:
                    stale += 1
                    if stale >= patience:
                        break
        elif log_cb:
            log_cb(epoch=epoch, loss=history[-1])
    return TrainResult(clf, history, val_history)


def evaluate_classifier_loss(clf: FinetunedClassifier, clips: list[FaceClip]) -> float:
    clf.eval()
    y = torch.tensor([1.0 if c.label is Label.FAKE else 0.0 for c in clips])
    with torch.no_grad():
        logits = clf(clips_to_tensor(clips))
        return float(nn.functional.binary_cross_entropy_with_logits(logits, y))
