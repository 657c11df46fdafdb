"""Two-stage deepfake detection and forgery localization pipeline.

Stage 1 recovers masked facial parts of real faces with a space-time masked
autoencoder and finetunes its encoder into a clip classifier. Stage 2 maps
faces to a compact 56x56 representation and meta-trains an attention-gated
encoder-decoder that localizes tampered pixels; the two stage probabilities
are averaged into the final detection score.
"""

from .config import RunConfig, apply_overrides, config_from_dict, load_config
from .dataio import (
    DatasetManifest,
    FaceClip,
    FrameRecord,
    Label,
    extract_ground_truth_mask,
    generate_synthetic_corpus,
    load_clip,
    load_manifest,
    save_clip,
)
from .errors import (
    DegenerateGeometry,
    DelocateError,
    FormatError,
    InvalidInput,
    InvariantViolation,
    PhaseOrderError,
    SplitInfeasible,
)
from .localization import (
    LocalizationNet,
    LocalizationOutput,
    MappingModule,
    Stage2Model,
    binarize_mask,
    localize_clip,
    loss_mse_loc,
    loss_mse_map,
    map_face,
    mapping_quality,
)
from .masking import (
    FacePart,
    FacialPartition,
    MaskPlan,
    PatchGrid,
    alternative_strategies,
    compute_partition,
    draw_mask_plan,
    patches_of_part,
)
from .metatrain import (
    EpisodeBatch,
    MetaSplit,
    TrainState,
    load_pipeline,
    make_meta_split,
    meta_step,
    run_training,
)
from .metrics import (
    MetricsReport,
    ScoreEntry,
    ScoreSet,
    auc,
    build_report,
    eer,
    fuse_scores,
    iou,
    pbca,
)
from .pipeline import evaluate_manifest, infer_clip, score_clip
from .recovering import (
    FinetunedClassifier,
    RecoveringConfig,
    RecoveringModel,
    RecoveryOutput,
    binary_cross_entropy,
    finetune_classifier,
    pretrain_recovering,
    reconstruction_loss,
    recover,
)

__version__ = "0.1.0"
