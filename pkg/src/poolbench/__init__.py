"""poolbench: statistical temporal pooling operators, end to end.

A library plus CLI that computes max/mean/std/skew/kurt pooling over
frame sequences (forward and analytic backward), trains desk-scale
embedding networks around any concatenation of those statistics with an
additive-angular-margin softmax, evaluates them with EER / minDCF and
equal-weight score fusion, and probes what meta-information each pooling
choice leaks into the embeddings.
"""

from .moments import (
    DEFAULT_EPS,
    FrameSequence,
    MomentAccumulator,
    PooledStats,
    accumulate,
    finalize,
    kurt_pool,
    max_pool,
    mean_pool,
    merge,
    pooled_stats,
    skew_pool,
    std_pool,
)
from .pooling import PoolingConfig, Statistic, backward, forward, output_width
from .encoder import (
    EncoderConfig,
    ModelState,
    TrainBatch,
    TrainingError,
    arcface_loss,
    extract_all,
    forward_embed,
    load_model,
    save_model,
    train,
)
from .scoring import (
    DcfParams,
    ScoreSet,
    Trial,
    cosine_score,
    eer,
    fuse,
    min_dcf,
)
from .synthdata import (
    LabeledUtterance,
    SpeakerProfile,
    SynthSpec,
    build_trials,
    generate,
    load_corpus,
    save_corpus,
    speaker_profiles,
    split,
)
from .probe import (
    ProbeConfig,
    ProbeReport,
    run_matrix,
    train_probe,
    word_presence_probe,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_EPS",
    "FrameSequence",
    "MomentAccumulator",
    "PooledStats",
    "accumulate",
    "finalize",
    "max_pool",
    "mean_pool",
    "std_pool",
    "skew_pool",
    "kurt_pool",
    "pooled_stats",
    "merge",
    "PoolingConfig",
    "Statistic",
    "forward",
    "backward",
    "output_width",
    "EncoderConfig",
    "ModelState",
    "TrainBatch",
    "TrainingError",
    "arcface_loss",
    "forward_embed",
    "extract_all",
    "train",
    "save_model",
    "load_model",
    "DcfParams",
    "ScoreSet",
    "Trial",
    "cosine_score",
    "eer",
    "min_dcf",
    "fuse",
    "SynthSpec",
    "SpeakerProfile",
    "LabeledUtterance",
    "generate",
    "speaker_profiles",
    "split",
    "build_trials",
    "save_corpus",
    "load_corpus",
    "ProbeConfig",
    "ProbeReport",
    "train_probe",
    "word_presence_probe",
    "run_matrix",
    "__version__",
]
