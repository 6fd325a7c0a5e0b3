"""Cross-subject motor-imagery EEG decoding toolkit.

Pathology-aware dual-timescale state-space temporal modeling with
physiology-guided pseudo-label calibration, a leave-one-subject-out
training/evaluation harness, and a synthetic stroke-like cohort generator
for desk-scale verification.
"""

from .bundles import load_trial_bundle, save_trial_bundle
from .calibration import (
    PseudoLabelState,
    RoiFeature,
    RoiTemplateSet,
    build_templates,
    calibrate,
    refresh,
    roi_features,
)
from .encoder import EncoderConfig, TokenEncoder, encode_tokens
from .errors import (
    BundleFormatError,
    ConfigurationError,
    DataError,
    LeakageError,
    MontageError,
    NumericError,
    PatcnetError,
    ShapeError,
)
from .evaluation import (
    FoldResult,
    NoiseSpec,
    compute_metrics,
    inject_noise,
    loso_split,
    run_ablation,
    run_loso,
    wilcoxon_signed_rank,
)
from .prsm import (
    ClassifierHead,
    MotorImageryDecoder,
    PrsmConfig,
    RhythmicStateBlock,
    SsmScan,
    classify,
    moving_average_decompose,
)
from .signals import (
    Domain,
    EpochedTrial,
    RawRecording,
    TrialSet,
    bandpass_filter,
    car_and_baseline,
    epoch,
    preprocess_recording,
    preprocess_trials,
    resample,
)
from .synthgen import CohortSpec, generate_cohort
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    source_loss,
    target_loss,
    train_fold,
)

__version__ = "0.1.0"
