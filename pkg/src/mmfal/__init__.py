"""Multi-modal fusion network with active learning.

Multi-stream SE-attention fusion classifier for five-stage grading, a
pool-based active-learning loop with entropy query strategies, patient-level
evaluation, a synthetic benchmark generator, and an annotation service for
live human-in-the-loop labeling.
"""

from .types import (
    DatasetIndex,
    FibrosisStage,
    ImageSample,
    ModalityKind,
    MultiModalSample,
    PatientRecord,
    RoiBox,
    MODALITY_ORDER,
    NUM_STAGES,
)
from .manifest import load_manifest, write_manifest
from .preprocess import (
    IDENTITY_NORM,
    IMAGENET_NORM,
    Normalization,
    preprocess,
    preprocess_array,
)
from .splits import build_tuples, stratified_patient_split
from .synthetic import SyntheticSpec, generate_synthetic, modality_view
from .network import (
    FusionNet,
    ModelConfig,
    SqueezeExcite,
    build_model,
    fuse_embeddings,
    global_average_pool,
    load_checkpoint,
    save_checkpoint,
)
from .training import TensorCache, TrainConfig, fit, predict_tuples, predict_tuples_mc
from .active_learning import (
    ALHistory,
    CandidatePool,
    LoopSchedule,
    QueryConfig,
    apply_labels,
    entropy,
    init_pool,
    run_al_loop,
    select_entropy,
    select_entropy_dropout,
    select_random,
    simulated_oracle,
)
from .metrics import (
    EvalReport,
    PatientPrediction,
    accuracy,
    aggregate_patient,
    evaluate,
    format_percent,
    macro_auc,
    ovr_auc,
)

__version__ = "0.1.0"

__all__ = [
    "ALHistory",
    "CandidatePool",
    "DatasetIndex",
    "EvalReport",
    "FibrosisStage",
    "FusionNet",
    "IDENTITY_NORM",
    "IMAGENET_NORM",
    "ImageSample",
    "LoopSchedule",
    "MODALITY_ORDER",
    "ModalityKind",
    "ModelConfig",
    "MultiModalSample",
    "NUM_STAGES",
    "Normalization",
    "PatientPrediction",
    "PatientRecord",
    "QueryConfig",
    "RoiBox",
    "SqueezeExcite",
    "SyntheticSpec",
    "TensorCache",
    "TrainConfig",
    "accuracy",
    "aggregate_patient",
    "apply_labels",
    "build_model",
    "build_tuples",
    "entropy",
    "evaluate",
    "fit",
    "format_percent",
    "fuse_embeddings",
    "generate_synthetic",
    "global_average_pool",
    "init_pool",
    "load_checkpoint",
    "load_manifest",
    "macro_auc",
    "modality_view",
    "ovr_auc",
    "predict_tuples",
    "predict_tuples_mc",
    "preprocess",
    "preprocess_array",
    "run_al_loop",
    "save_checkpoint",
    "select_entropy",
    "select_entropy_dropout",
    "select_random",
    "simulated_oracle",
    "stratified_patient_split",
    "write_manifest",
]
