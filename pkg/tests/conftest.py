"""Shared fixtures: clip builders and a small cached synthetic corpus."""

from __future__ import annotations

import numpy as np
import pytest

from delocate.dataio import generate_synthetic_corpus, landmarks_for, sample_identity
from delocate.dataio.types import FaceClip, FrameRecord, Label


def identity_landmarks(h: int, w: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return landmarks_for(sample_identity(rng), h, w)


def random_frame(h: int, w: int, seed: int = 0, landmark_seed: int = 0) -> FrameRecord:
    rng = np.random.default_rng(seed)
    img = np.round(rng.uniform(0.0, 1.0, size=(h, w, 3)) * 255.0) / 255.0
    return FrameRecord(image=img, landmarks=identity_landmarks(h, w, landmark_seed), frame_index=0)


def random_clip(
    t: int = 2, h: int = 32, w: int = 32, seed: int = 0, label: Label = Label.REAL
) -> FaceClip:
    frames = []
    for i in range(t):
        fr = random_frame(h, w, seed=seed * 1000 + i)
        fr.frame_index = i
        fr.source_id = f"clip{seed}"
        frames.append(fr)
    gt = None
    manipulation = "none"
    if label is Label.FAKE:
        gt = np.zeros((t, h, w), dtype=np.uint8)
        gt[:, h // 4 : h // 2, w // 4 : w // 2] = 1
        manipulation = "splice_test"
    return FaceClip(frames=frames, label=label, manipulation_type=manipulation, gt_mask=gt, clip_id=f"clip{seed}")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """8 real + 8 fake clips at 8x64x64, shared read-only across tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(
        root, n_real=8, n_fake=8, forgery_shapes={"ellipse", "rectangle"}, size=(8, 64, 64), seed=11
    )
    return manifest
