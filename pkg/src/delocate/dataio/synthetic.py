"""Self-contained synthetic face corpus.

Real clips are procedurally rendered face-like images: a smooth elliptical
skin region over a flat background, textured with low-frequency blobs, plus
analytically placed eye / brow / nose / mouth features. The 68-point landmark
annotation is derived from the same geometry, so landmarks are exact by
construction. Frames get a small temporally coherent jitter (smooth drift of
the whole face plus a slow brightness wobble).

Fake clips splice a region (ellipse, rectangle or convex polygon) taken from
a different identity into a real clip, feathered at the boundary; the spliced
region becomes the ground-truth localization mask. The splice is centered
near one of the base face's features so tampering lands on facial parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidInput
from .store import save_clip, save_manifest
from .types import DatasetManifest, FaceClip, FrameRecord, Label, ManifestEntry

FORGERY_SHAPES = ("ellipse", "rectangle", "polygon")
FEATHER_SIGMA = 1.0
MAX_JITTER = 1.5


@dataclass(frozen=True)
class FaceIdentity:
    """Parameters fully determining one rendered identity (fractions of W/H)."""

    background: np.ndarray
    skin: np.ndarray
    iris: np.ndarray
    lip: np.ndarray
    brow: np.ndarray
    center: tuple[float, float]
    axes: tuple[float, float]
    eye_dx: float
    eye_dy: float
    eye_r: float
    brow_dy: float
    nose_len: float
    nose_w: float
    mouth_dy: float
    mouth_w: float
    mouth_h: float
    blobs: np.ndarray  # (k, 6): x, y, sigma, r-amp, g-amp, b-amp


def sample_identity(rng: np.random.Generator) -> FaceIdentity:
    skin = np.array(
        [rng.uniform(0.62, 0.9), rng.uniform(0.45, 0.72), rng.uniform(0.34, 0.6)]
    )
    background = np.array(
        [rng.uniform(0.05, 0.35), rng.uniform(0.1, 0.45), rng.uniform(0.25, 0.6)]
    )
    iris = rng.uniform(0.05, 0.45, size=3)
    lip = np.array([rng.uniform(0.55, 0.85), rng.uniform(0.15, 0.35), rng.uniform(0.2, 0.4)])
    brow = rng.uniform(0.05, 0.3, size=3)
    blobs = np.column_stack(
        [
            rng.uniform(0.2, 0.8, size=6),
            rng.uniform(0.2, 0.85, size=6),
            rng.uniform(0.08, 0.2, size=6),
            rng.uniform(-0.07, 0.07, size=(6, 3)),
        ]
    )
    return FaceIdentity(
        background=background,
        skin=skin,
        iris=iris,
        lip=lip,
        brow=brow,
        center=(0.5 + rng.uniform(-0.02, 0.02), 0.52 + rng.uniform(-0.02, 0.02)),
        axes=(rng.uniform(0.3, 0.36), rng.uniform(0.38, 0.43)),
        eye_dx=rng.uniform(0.13, 0.17),
        eye_dy=rng.uniform(0.1, 0.14),
        eye_r=rng.uniform(0.045, 0.06),
        brow_dy=rng.uniform(0.06, 0.085),
        nose_len=rng.uniform(0.16, 0.2),
        nose_w=rng.uniform(0.06, 0.09),
        mouth_dy=rng.uniform(0.2, 0.25),
        mouth_w=rng.uniform(0.12, 0.16),
        mouth_h=rng.uniform(0.035, 0.055),
        blobs=blobs,
    )


def _feature_points(identity: FaceIdentity, h: int, w: int, offset: tuple[float, float]):
    """Pixel-space centers of the face, eyes, nose tip and mouth."""
    dx, dy = offset
    cx, cy = identity.center[0] * w + dx, identity.center[1] * h + dy
    eye_y = cy - identity.eye_dy * h
    eye_l = (cx - identity.eye_dx * w, eye_y)
    eye_r = (cx + identity.eye_dx * w, eye_y)
    nose = (cx, eye_y + identity.nose_len * h)
    mouth = (cx, cy + identity.mouth_dy * h)
    return (cx, cy), eye_l, eye_r, nose, mouth


def render_face(
    identity: FaceIdentity,
    h: int,
    w: int,
    offset: tuple[float, float] = (0.0, 0.0),
    gain: float = 1.0,
) -> np.ndarray:
    """Render one H x W x 3 frame in [0, 1]."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    (cx, cy), eye_l, eye_r, nose, mouth = _feature_points(identity, h, w, offset)
    ax, ay = identity.axes[0] * w, identity.axes[1] * h

    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = identity.background

    # Skin ellipse with a soft edge.
    d_face = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2
    face_alpha = np.clip((1.15 - d_face) / 0.3, 0.0, 1.0)
    skin = np.empty_like(img)
    skin[:] = identity.skin
    for bx, by, bs, ar, ag, ab in identity.blobs:
        g = np.exp(-(((xs - bx * w) ** 2 + (ys - by * h) ** 2) / (2.0 * (bs * w) ** 2)))
        skin += g[:, :, None] * np.array([ar, ag, ab])
    img = img * (1 - face_alpha[:, :, None]) + skin * face_alpha[:, :, None]

    def blob(center, rx, ry, color, hardness=6.0):
        nonlocal img
        d = ((xs - center[0]) / rx) ** 2 + ((ys - center[1]) / ry) ** 2
        a = np.clip((1.0 - d) * hardness, 0.0, 1.0)
        img = img * (1 - a[:, :, None]) + np.asarray(color) * a[:, :, None]

    er = identity.eye_r * w
    for ex, ey in (eye_l, eye_r):
        blob((ex, ey), er, 0.62 * er, np.array([0.93, 0.93, 0.9]))  # sclera
        blob((ex, ey), 0.45 * er, 0.45 * er, identity.iris)
        blob((ex, ey - identity.brow_dy * h), 1.4 * er, 0.3 * er, identity.brow)  # brow

    # Nose: darker ridge ending in a shadow blob.
    blob(((eye_l[0] + eye_r[0]) / 2, (eye_l[1] + nose[1]) / 2), 0.35 * identity.nose_w * w,
         identity.nose_len * h * 0.55, identity.skin * 0.88)
    blob(nose, identity.nose_w * w, 0.4 * identity.nose_w * w, identity.skin * 0.75)

    blob(mouth, identity.mouth_w * w, identity.mouth_h * h, identity.lip)

    return np.clip(img * gain, 0.0, 1.0)


def _ellipse_arc(center, rx, ry, angles) -> np.ndarray:
    cx, cy = center
    return np.column_stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)])


def landmarks_for(
    identity: FaceIdentity, h: int, w: int, offset: tuple[float, float] = (0.0, 0.0)
) -> np.ndarray:
    """Synthesize the 68-point annotation from the render geometry.

    Group layout follows the common 68-point convention: 0-16 jaw, 17-26
    brows, 27-35 nose, 36-47 eyes, 48-67 mouth.
    """
    (cx, cy), eye_l, eye_r, nose, mouth = _feature_points(identity, h, w, offset)
    ax, ay = identity.axes[0] * w, identity.axes[1] * h
    pts = np.zeros((68, 2), dtype=np.float64)

    # 0-16: jaw, an arc over the lower face ellipse (y grows downward).
    pts[0:17] = _ellipse_arc((cx, cy), ax * 0.96, ay * 0.96, np.pi * (1.0 - np.arange(17) / 16.0))

    # 17-21 / 22-26: brows.
    brow_y = eye_l[1] - identity.brow_dy * h
    bw = 1.4 * identity.eye_r * w
    arch = np.array([0.0, -0.22, -0.3, -0.22, 0.0]) * identity.eye_r * h
    pts[17:22] = np.column_stack([eye_l[0] + np.linspace(-bw, bw, 5), brow_y + arch])
    pts[22:27] = np.column_stack([eye_r[0] + np.linspace(-bw, bw, 5), brow_y + arch])

    # 27-30: nose bridge; 31-35: nostril base arc.
    pts[27:31] = np.column_stack([np.full(4, cx), np.linspace(eye_l[1], nose[1] - 2.0, 4)])
    nw = identity.nose_w * w
    pts[31:36] = np.column_stack(
        [np.linspace(nose[0] - nw, nose[0] + nw, 5),
         nose[1] + np.array([0.0, 0.35, 0.5, 0.35, 0.0]) * identity.eye_r * h]
    )

    # 36-41 / 42-47: eye contours (outer corner first on the left eye).
    def eye_hex(center):
        ex, ey = center
        rx, ry = identity.eye_r * w, 0.55 * identity.eye_r * h
        return np.array(
            [
                [ex - rx, ey],
                [ex - 0.4 * rx, ey - ry],
                [ex + 0.4 * rx, ey - ry],
                [ex + rx, ey],
                [ex + 0.4 * rx, ey + ry],
                [ex - 0.4 * rx, ey + ry],
            ]
        )

    pts[36:42] = eye_hex(eye_l)
    pts[42:48] = eye_hex(eye_r)

    # 48-59: outer lip; 60-67: inner lip.
    mw, mh = identity.mouth_w * w, identity.mouth_h * h
    pts[48:60] = _ellipse_arc(mouth, mw, mh, np.pi + np.arange(12) / 12.0 * 2.0 * np.pi)
    pts[60:68] = _ellipse_arc(mouth, 0.6 * mw, 0.5 * mh, np.pi + np.arange(8) / 8.0 * 2.0 * np.pi)

    pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1.0)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1.0)
    return pts


def _jitter_path(rng: np.random.Generator, t: int) -> np.ndarray:
    """Smooth per-frame (dx, dy) drift bounded by MAX_JITTER pixels."""
    steps = rng.normal(0.0, 0.5, size=(t, 2))
    path = np.cumsum(steps, axis=0)
    path -= path.mean(axis=0)
    return np.clip(path, -MAX_JITTER, MAX_JITTER)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(img * 255.0) / 255.0


def render_real_clip(
    identity: FaceIdentity, t: int, h: int, w: int, rng: np.random.Generator, clip_id: str
) -> FaceClip:
    path = _jitter_path(rng, t)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    frames = []
    for i in range(t):
        gain = 1.0 + 0.02 * np.sin(2.0 * np.pi * i / t + phase)
        offset = (path[i, 0], path[i, 1])
        img = _quantize(render_face(identity, h, w, offset, gain))
        frames.append(
            FrameRecord(
                image=img,
                landmarks=landmarks_for(identity, h, w, offset),
                source_id=clip_id,
                frame_index=i,
            )
        )
    return FaceClip(frames=frames, label=Label.REAL, manipulation_type="none", clip_id=clip_id)


def _region_mask(shape: str, h: int, w: int, center, rx: float, ry: float, rng) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = center
    if shape == "rectangle":
        return ((np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)).astype(np.uint8)
    if shape == "ellipse":
        return ((((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2) <= 1.0).astype(np.uint8)
    if shape == "polygon":
        k = int(rng.integers(5, 8))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=k))
        radii = rng.uniform(0.65, 1.0, size=k)
        vx = cx + radii * rx * np.cos(angles)
        vy = cy + radii * ry * np.sin(angles)
        inside = np.ones((h, w), dtype=bool)
        for i in range(k):  # convex polygon: intersection of half planes (ccw in image coords)
            x0, y0 = vx[i], vy[i]
            x1, y1 = vx[(i + 1) % k], vy[(i + 1) % k]
            inside &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0.0
        return inside.astype(np.uint8)
    raise InvalidInput(f"unknown forgery shape {shape!r}")


def _feather(mask: np.ndarray) -> np.ndarray:
    from scipy import ndimage

    return np.clip(ndimage.gaussian_filter(mask.astype(np.float64), FEATHER_SIGMA), 0.0, 1.0)


def splice_fake_clip(
    base: FaceClip,
    donor: FaceClip,
    shape: str,
    rng: np.random.Generator,
    clip_id: str,
) -> FaceClip:
    """Splice ``donor`` pixels into ``base`` over one shaped region."""
    t = base.num_frames
    h, w = base.shape
    lm = base.frames[0].landmarks
    # Target one facial feature of the base identity so tampering hits a part.
    features = [lm[36:48].mean(axis=0), lm[27:36].mean(axis=0), lm[48:68].mean(axis=0)]
    target = features[int(rng.integers(0, len(features)))]
    cx = float(np.clip(target[0] + rng.uniform(-3, 3), 0.2 * w, 0.8 * w))
    cy = float(np.clip(target[1] + rng.uniform(-3, 3), 0.2 * h, 0.8 * h))
    rx = rng.uniform(0.11, 0.18) * w
    ry = rng.uniform(0.1, 0.16) * h
    mask = _region_mask(shape, h, w, (cx, cy), rx, ry, rng)
    if not mask.any():
        raise InvalidInput("degenerate splice region")
    alpha = _feather(mask)[:, :, None]

    frames = []
    for i in range(t):
        mixed = base.frames[i].image * (1.0 - alpha) + donor.frames[i].image * alpha
        frames.append(
            FrameRecord(
                image=_quantize(mixed),
                landmarks=base.frames[i].landmarks.copy(),
                source_id=clip_id,
                frame_index=i,
            )
        )
    gt = np.repeat(mask[None, :, :], t, axis=0)
    return FaceClip(
        frames=frames,
        label=Label.FAKE,
        manipulation_type=f"splice_{shape}",
        gt_mask=gt,
        clip_id=clip_id,
    )


def _assign_splits(n: int, val_fraction: float, test_fraction: float, rng) -> list[str]:
    tags = ["train"] * n
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    for idx in order[:n_test]:
        tags[idx] = "test"
    for idx in order[n_test : n_test + n_val]:
        tags[idx] = "val"
    return tags


def generate_synthetic_corpus(
    out_dir: str | Path,
    n_real: int,
    n_fake: int,
    forgery_shapes: set[str] | tuple[str, ...] = ("ellipse",),
    size: tuple[int, int, int] = (8, 64, 64),
    seed: int = 0,
    val_fraction: float = 0.0,
    test_fraction: float = 0.0,
) -> DatasetManifest:
    """Generate a corpus under ``out_dir`` and return its manifest.

    Fakes are stratified over ``forgery_shapes`` round-robin (sorted order).
    Deterministic: the same arguments produce byte-identical output.
    """
    if n_real < 1 or n_fake < 0:
        raise InvalidInput("need n_real >= 1 and n_fake >= 0")
    shapes = sorted(forgery_shapes)
    if n_fake > 0 and not shapes:
        raise InvalidInput("n_fake > 0 requires at least one forgery shape")
    for s in shapes:
        if s not in FORGERY_SHAPES:
            raise InvalidInput(f"unknown forgery shape {s!r}")
    t, h, w = size
    if h < 32 or w < 32:
        raise InvalidInput("frames must be at least 32x32")
    if t < 2:
        raise InvalidInput("clips need at least 2 frames")

    root = Path(out_dir)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    seq = np.random.SeedSequence(seed)
    id_rng = np.random.Generator(np.random.PCG64(seq.spawn(1)[0]))
    identities = [sample_identity(id_rng) for _ in range(n_real)]

    entries: list[ManifestEntry] = []
    reals: list[FaceClip] = []
    for i in range(n_real):
        clip_id = f"clip_{i:03d}_real"
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, i])))
        clip = render_real_clip(identities[i], t, h, w, rng, clip_id)
        save_clip(clip, root / "clips" / clip_id)
        reals.append(clip)
        entries.append(ManifestEntry(f"clips/{clip_id}", Label.REAL, "none", "train"))

    for j in range(n_fake):
        shape = shapes[j % len(shapes)]
        clip_id = f"clip_{n_real + j:03d}_fake_{shape}"
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2, j])))
        base_idx = j % n_real
        donor_idx = (base_idx + 1 + int(rng.integers(0, max(1, n_real - 1)))) % n_real
        if donor_idx == base_idx:
            donor_idx = (base_idx + 1) % n_real
        fake = splice_fake_clip(reals[base_idx], reals[donor_idx], shape, rng, clip_id)
        out = save_clip(fake, root / "clips" / clip_id)
        # Record the source real clip so label-consistency checks can find it.
        import json

        meta = json.loads((out / "clip.json").read_text())
        meta["source_clip"] = reals[base_idx].clip_id
        (out / "clip.json").write_text(json.dumps(meta, indent=1))
        entries.append(ManifestEntry(f"clips/{clip_id}", Label.FAKE, f"splice_{shape}", "train"))

    if val_fraction > 0.0 or test_fraction > 0.0:
        split_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
        for label in (Label.REAL, Label.FAKE):
            idxs = [k for k, e in enumerate(entries) if e.label is label]
            tags = _assign_splits(len(idxs), val_fraction, test_fraction, split_rng)
            for k, tag in zip(idxs, tags):
                entries[k].split = tag

    manifest = DatasetManifest(entries=entries, seed=seed, root=str(root))
    save_manifest(manifest, root)
    return manifest
