"""Dataset ingestion: clip records, ground-truth masks, synthetic corpus, storage."""

from .gt import DEFAULT_THRESHOLD, close_mask, difference_exceeds, extract_ground_truth_mask
from .store import load_clip, load_manifest, load_manifest_clip, save_clip, save_manifest
from .synthetic import (
    FORGERY_SHAPES,
    FaceIdentity,
    generate_synthetic_corpus,
    landmarks_for,
    render_face,
    render_real_clip,
    sample_identity,
    splice_fake_clip,
)
from .types import DatasetManifest, FaceClip, FrameRecord, Label, ManifestEntry, N_LANDMARKS

__all__ = [
    "DEFAULT_THRESHOLD",
    "DatasetManifest",
    "FORGERY_SHAPES",
    "FaceClip",
    "FaceIdentity",
    "FrameRecord",
    "Label",
    "ManifestEntry",
    "N_LANDMARKS",
    "close_mask",
    "difference_exceeds",
    "extract_ground_truth_mask",
    "generate_synthetic_corpus",
    "landmarks_for",
    "load_clip",
    "load_manifest",
    "load_manifest_clip",
    "render_face",
    "render_real_clip",
    "sample_identity",
    "save_clip",
    "save_manifest",
    "splice_fake_clip",
]
