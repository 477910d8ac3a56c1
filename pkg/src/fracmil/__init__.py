"""Weakly supervised two-stage fracture classification.

Stage 1 is a fully convolutional classifier trained on image-level
labels through log-sum-exp pooling of its probability map. Its confident
cells are mined into ROI crops that train a second, localized classifier;
the chained product of both scores filters stage-1 false positives.
"""

from .core_types import (
    ConfigurationError,
    DomainError,
    GenerationError,
    GrayscaleImage,
    ImageLabel,
    MapGeometry,
    MiningLabel,
    ProbabilityMap,
    RoiBox,
    RoiSample,
    Subtype,
    cell_to_box,
    crop_roi,
    load_dataset,
    save_dataset,
)
from .experiment import ExperimentConfig, FoldSplit, make_folds, run_pipeline
from .inference import ChainedResult, decide_three_class, infer, infer_batch
from .metrics import (
    EvalReport,
    OperatingPoint,
    ScoredSet,
    auc,
    prec_at_recall,
    recall_at_spec,
    spec_at_recall,
    three_class_report,
    youden_threshold,
)
from .mining import (
    CalibrationResult,
    MiningConfig,
    MiningManifest,
    calibrate_threshold,
    candidate_set,
    mine_rois,
    mining_label_accuracy,
)
from .nets import ArchConfig
from .pooling import PoolingConfig, PoolKind, gap_pool, lse_pool, max_pool
from .stage1 import Stage1Config, Stage1Model, TrainConfig, forward_map, image_loss, train_stage1
from .stage2 import Stage2Config, Stage2Model, classify_roi, train_stage2
from .synthetic import GenConfig, GeneratedImage, generate, generate_detailed

__all__ = [
    "ArchConfig",
    "ChainedResult",
    "CalibrationResult",
    "ConfigurationError",
    "DomainError",
    "EvalReport",
    "ExperimentConfig",
    "FoldSplit",
    "GenConfig",
    "GeneratedImage",
    "GenerationError",
    "GrayscaleImage",
    "ImageLabel",
    "MapGeometry",
    "MiningConfig",
    "MiningLabel",
    "MiningManifest",
    "OperatingPoint",
    "PoolKind",
    "PoolingConfig",
    "ProbabilityMap",
    "RoiBox",
    "RoiSample",
    "ScoredSet",
    "Stage1Config",
    "Stage1Model",
    "Stage2Config",
    "Stage2Model",
    "Subtype",
    "TrainConfig",
    "auc",
    "calibrate_threshold",
    "candidate_set",
    "cell_to_box",
    "classify_roi",
    "crop_roi",
    "decide_three_class",
    "forward_map",
    "gap_pool",
    "generate",
    "generate_detailed",
    "image_loss",
    "infer",
    "infer_batch",
    "load_dataset",
    "lse_pool",
    "make_folds",
    "max_pool",
    "mine_rois",
    "mining_label_accuracy",
    "prec_at_recall",
    "recall_at_spec",
    "run_pipeline",
    "save_dataset",
    "spec_at_recall",
    "three_class_report",
    "train_stage1",
    "train_stage2",
    "youden_threshold",
]
