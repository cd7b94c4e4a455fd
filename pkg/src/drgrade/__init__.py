"""drgrade: desk-scale diabetic retinopathy grading toolkit.

Fundus preprocessing (background masking, green channel, median filter,
CLAHE, resize, channel replication), an ordinal-regression CNN trained with
MSE on continuous severity scores, clamp-and-round decoding to ICDRSS grades
0-4, and quadratic-weighted-kappa evaluation.
"""

__version__ = "0.1.0"

from .imgproc import (  # noqa: E402
    PipelineConfig,
    preprocess,
    preprocess_stages,
    mask_background,
    green_channel,
    median_filter,
    clahe,
    clahe_mappings,
    resize_bilinear,
    replicate_channels,
    read_fundus_tensor,
    write_fundus_tensor,
)
from .grading import (  # noqa: E402
    decode_score,
    confusion,
    qwk,
    quadratic_weights,
    evaluate,
    evaluate_joined,
    QwkBreakdown,
    EvaluationReport,
    DegenerateAgreementError,
    GRADE_COUNT,
)
from .nnet import (  # noqa: E402
    Network,
    TrainConfig,
    build_reference_model,
    mse_loss,
    train,
    predict,
    save_checkpoint,
    load_checkpoint,
    DivergenceError,
    CheckpointError,
)
from .data import (  # noqa: E402
    Manifest,
    SplitSpec,
    ClassDistribution,
    ManifestError,
    load_manifest,
    save_manifest,
    class_distribution,
    stratified_split,
    synth_dataset,
    synth_image,
    materialize_synth,
    load_png,
    save_png,
)
from .rng import Xoshiro256StarStar  # noqa: E402

__all__ = [
    "__version__",
    "PipelineConfig", "preprocess", "preprocess_stages", "mask_background",
    "green_channel", "median_filter", "clahe", "clahe_mappings",
    "resize_bilinear", "replicate_channels", "read_fundus_tensor",
    "write_fundus_tensor",
    "decode_score", "confusion", "qwk", "quadratic_weights", "evaluate",
    "evaluate_joined", "QwkBreakdown", "EvaluationReport",
    "DegenerateAgreementError", "GRADE_COUNT",
    "Network", "TrainConfig", "build_reference_model", "mse_loss", "train",
    "predict", "save_checkpoint", "load_checkpoint", "DivergenceError",
    "CheckpointError",
    "Manifest", "SplitSpec", "ClassDistribution", "ManifestError",
    "load_manifest", "save_manifest", "class_distribution", "stratified_split",
    "synth_dataset", "synth_image", "materialize_synth", "load_png", "save_png",
    "Xoshiro256StarStar",
]
