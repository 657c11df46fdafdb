"""Stage 2: face mapping plus per-pixel forgery localization.

The mapping module compresses each frame to a 56x56x3 mapped face through a
stem convolution, three residual stages whose outputs are concatenated, and
three projection convolutions. The localization net is a U-shaped
encoder-decoder: squeeze-excitation blocks recalibrate encoder channels and
the decoder applies combined spatial+channel attention gates on each skip
path. Both feed one linear classification head over pooled features.

Normalization is GroupNorm throughout so forward passes are deterministic
and batch-size independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataio.types import FaceClip
from .errors import InvalidInput
from .torchutils import clips_to_tensor

MAPPED_SIZE = 56


def _gn(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) array; used to bring recovered faces to 56x56."""
    t = torch.from_numpy(np.asarray(image, dtype=np.float64)).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm1 = _gn(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = _gn(c_out)
        self.skip = (
            nn.Identity()
            if stride == 1 and c_in == c_out
            else nn.Conv2d(c_in, c_out, 1, stride=stride)
        )

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.skip(x))


class MappingModule(nn.Module):
    """Compress a frame to a 56x56x3 mapped face; also exposes pooled features."""

    def __init__(self, widths: tuple[int, int, int] = (16, 32, 64), proj: tuple[int, int] = (32, 16)):
        super().__init__()
        self.widths = widths
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 7, stride=2, padding=3), _gn(widths[0]), nn.ReLU())
        self.stage1 = ResidualBlock(widths[0], widths[0])
        self.stage2 = ResidualBlock(widths[0], widths[1], stride=2)
        self.stage3 = ResidualBlock(widths[1], widths[2], stride=2)
        concat = sum(widths)
        self.feature_channels = concat
        self.proj = nn.Sequential(
            nn.Conv2d(concat, proj[0], 3, padding=1),
            _gn(proj[0]),
            nn.ReLU(),
            nn.Conv2d(proj[0], proj[1], 3, padding=1),
            _gn(proj[1]),
            nn.ReLU(),
            nn.Conv2d(proj[1], 3, 1),
        )

    def forward(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """frames: (B, 3, H, W) -> (mapped (B, 3, 56, 56), features (B, C, 56, 56))."""
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise InvalidInput(f"expected (B, 3, H, W) frames, got {tuple(frames.shape)}")
        if frames.shape[2] < 8 or frames.shape[3] < 8:
            raise InvalidInput("mapping input must be at least 8x8")
        x = self.stem(frames)
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        size = (MAPPED_SIZE, MAPPED_SIZE)
        feats = torch.cat(
            [F.interpolate(f, size=size, mode="bilinear", align_corners=False) for f in (f1, f2, f3)],
            dim=1,
        )
        mapped = torch.sigmoid(self.proj(feats))
        return mapped, feats


def map_face(mapping: MappingModule, face: np.ndarray) -> np.ndarray:
    """One frame (H, W, 3) in, one mapped face (56, 56, 3) out."""
    arr = np.asarray(face, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInput(f"expected (H, W, 3) face, got {arr.shape}")
    mapping.eval()
    with torch.no_grad():
        t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
        mapped, _ = mapping(t)
    return mapped[0].permute(1, 2, 0).numpy()


class SEBlock(nn.Module):
    """Channel recalibration (squeeze-excitation)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        w = x.mean(dim=(2, 3))
        w = torch.sigmoid(self.fc2(F.relu(self.fc1(w))))
        return x * w[:, :, None, None]


class SCSEBlock(nn.Module):
    """Concurrent spatial and channel attention gate for decoder features."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.channel_gate = SEBlock(channels, reduction)
        self.spatial_gate = nn.Conv2d(channels, 1, 1)

    def forward(self, x):
        return self.channel_gate(x) + x * torch.sigmoid(self.spatial_gate(x))


class _DoubleConv(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1), _gn(c_out), nn.ReLU(),
            nn.Conv2d(c_out, c_out, 3, padding=1), _gn(c_out), nn.ReLU(),
        )

    def forward(self, x):
        return self.net(x)


class LocalizationNet(nn.Module):
    """U-shaped encoder-decoder emitting a per-pixel forgery logit map."""

    def __init__(self, in_channels: int = 6, widths: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        c1, c2, c3 = widths
        self.bottleneck_channels = c3
        self.enc1 = nn.Sequential(_DoubleConv(in_channels, c1), SEBlock(c1))
        self.enc2 = nn.Sequential(_DoubleConv(c1, c2), SEBlock(c2))
        self.bottleneck = nn.Sequential(_DoubleConv(c2, c3), SEBlock(c3))
        self.pool = nn.MaxPool2d(2)
        self.up2 = nn.Conv2d(c3, c2, 1)
        self.dec2 = nn.Sequential(_DoubleConv(c2 + c2, c2), SCSEBlock(c2))
        self.up1 = nn.Conv2d(c2, c1, 1)
        self.dec1 = nn.Sequential(_DoubleConv(c1 + c1, c1), SCSEBlock(c1))
        self.head = nn.Conv2d(c1, 1, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """x: (B, C, H, W) -> (logit map (B, 1, H, W), bottleneck (B, c3, H/4, W/4))."""
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise InvalidInput("localization input size must be divisible by 4")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottleneck(self.pool(e2))
        d2 = F.interpolate(self.up2(b), scale_factor=2, mode="bilinear", align_corners=False)
        d2 = self.dec2(torch.cat([d2, e2], dim=1))
        d1 = F.interpolate(self.up1(d2), scale_factor=2, mode="bilinear", align_corners=False)
        d1 = self.dec1(torch.cat([d1, e1], dim=1))
        return self.head(d1), b


class Stage2Model(nn.Module):
    """Mapping module + localization net + shared classification head."""

    def __init__(
        self,
        map_widths: tuple[int, int, int] = (16, 32, 64),
        loc_widths: tuple[int, int, int] = (16, 32, 64),
        map_proj: tuple[int, int] = (32, 16),
    ):
        super().__init__()
        self.mapping = MappingModule(map_widths, map_proj)
        self.locnet = LocalizationNet(6, loc_widths)
        feat_dim = self.mapping.feature_channels + self.locnet.bottleneck_channels
        self.cls_head = nn.Linear(feat_dim, 1)
        nn.init.zeros_(self.cls_head.weight)
        nn.init.zeros_(self.cls_head.bias)

    def classify(self, map_features: torch.Tensor, loc_features: torch.Tensor) -> torch.Tensor:
        """Pooled mapping features + pooled bottleneck features -> logit."""
        pooled = torch.cat([map_features.mean(dim=(2, 3)), loc_features.mean(dim=(2, 3))], dim=1)
        return self.cls_head(pooled).squeeze(-1)

    def forward(self, clips: torch.Tensor):
        """clips: (B, T, H, W, 3) -> per-frame maps and clip-level logits."""
        b, t, h, w, _ = clips.shape
        frames = clips.reshape(b * t, h, w, 3).permute(0, 3, 1, 2)
        mapped, map_feats = self.mapping(frames)
        mapped_up = F.interpolate(mapped, size=(h, w), mode="bilinear", align_corners=False)
        logits_map, bottleneck = self.locnet(torch.cat([frames, mapped_up], dim=1))
        prob_masks = torch.sigmoid(logits_map).reshape(b, t, h, w)
        frame_logits = self.classify(map_feats, bottleneck).reshape(b, t)
        clip_logits = frame_logits.mean(dim=1)
        return {
            "mapped": mapped.reshape(b, t, 3, MAPPED_SIZE, MAPPED_SIZE),
            "prob_masks": prob_masks,
            "frame_logits": frame_logits,
            "clip_logits": clip_logits,
        }


@dataclass
class LocalizationOutput:
    mapped_face: np.ndarray     # (56, 56, 3), mean over frames
    pred_mask_prob: np.ndarray  # (H, W) in [0, 1], mean over frames
    pred_mask_bin: np.ndarray   # (H, W) in {0, 1}
    cls_logit: float
    frame_probs: np.ndarray     # (T, H, W) per-frame probability masks


def binarize_mask(prob_mask: np.ndarray) -> np.ndarray:
    """Bit-exact thresholding of a normalized mask: 1 iff value >= 0.5."""
    m = np.asarray(prob_mask, dtype=np.float64)
    if m.size and (m.min() < 0.0 or m.max() > 1.0):
        raise InvalidInput("probability mask values must lie in [0, 1]")
    return (m >= 0.5).astype(np.uint8)


def loss_mse_map(mapped_face: np.ndarray, recovered_face: np.ndarray) -> float:
    """Plain MSE between a mapped face and the (resized) recovered face."""
    a = np.asarray(mapped_face, dtype=np.float64)
    b = np.asarray(recovered_face, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"shapes differ after resize: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def loss_mse_loc(gt_mask: np.ndarray, pred_mask_prob: np.ndarray) -> float:
    """MSE between the probability mask and binary ground truth (pre-binarization)."""
    gt = np.asarray(gt_mask, dtype=np.float64)
    pred = np.asarray(pred_mask_prob, dtype=np.float64)
    if gt.shape != pred.shape:
        raise InvalidInput(f"mask shapes differ: {gt.shape} vs {pred.shape}")
    if not np.isin(gt, (0.0, 1.0)).all():
        raise InvalidInput("ground-truth mask must be binary")
    return float(np.mean((gt - pred) ** 2))


def mapping_quality(mapped_face: np.ndarray, recovered_face: np.ndarray) -> float:
    """Per-sample mapping fidelity diagnostic in (0, 1]."""
    return 1.0 / (1.0 + loss_mse_map(mapped_face, recovered_face))


def localize_clip(model: Stage2Model, clip: FaceClip) -> LocalizationOutput:
    """Run stage 2 on one clip; clip-level mask is the frame mean, then thresholded."""
    model.eval()
    with torch.no_grad():
        out = model(clips_to_tensor([clip]))
    frame_probs = out["prob_masks"][0].numpy()
    mean_prob = frame_probs.mean(axis=0)
    return LocalizationOutput(
        mapped_face=out["mapped"][0].mean(dim=0).permute(1, 2, 0).numpy(),
        pred_mask_prob=mean_prob,
        pred_mask_bin=binarize_mask(mean_prob),
        cls_logit=float(out["clip_logits"][0]),
        frame_probs=frame_probs,
    )


def write_mask_outputs(clip: FaceClip, output: LocalizationOutput, out_dir) -> list[str]:
    """Export per-frame masks (8-bit), probability maps (16-bit) and overlays."""
    from pathlib import Path

    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(clip.num_frames):
        prob = output.frame_probs[i]
        hard = binarize_mask(prob)
        Image.fromarray((hard * 255).astype(np.uint8), mode="L").save(out / f"pred_mask_{i:03d}.png")
        prob16 = np.round(prob * 65535.0).astype(np.uint16)
        Image.fromarray(prob16).save(out / f"pred_prob_{i:03d}.png")  # 16-bit grayscale
        frame = clip.frames[i].image
        red = np.zeros_like(frame)
        red[:, :, 0] = 1.0
        alpha = 0.4 * hard[:, :, None]
        overlay = np.clip(frame * (1.0 - alpha) + red * alpha, 0.0, 1.0)
        Image.fromarray(np.round(overlay * 255.0).astype(np.uint8), mode="RGB").save(
            out / f"overlay_{i:03d}.png"
        )
        paths.append(str(out / f"pred_mask_{i:03d}.png"))
    return paths
