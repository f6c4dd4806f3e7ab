"""Stabilized test-time ensembling with non-significant logit suppression."""

from .augment import (
    AugPassRecord,
    AugPolicyConfig,
    ReferenceImage,
    baseline_augment,
    cutmix_star,
    cutmix_window,
    generate_passes,
    input_variance,
    mixup_star,
    select_reference,
)
from .conflict import (
    AnalyticConflict,
    BinaryGaussianSpec,
    ConflictEstimate,
    DegenerateCorrelationError,
    bvn_cdf,
    conflict_prob_analytic,
    indicator_moments,
    simulate_conflict,
    sweep_fig10,
)
from .ensemble import (
    AggregationOutcome,
    argmax_class,
    detect_conflict,
    hard_vote,
    logit_average,
    nss,
    nss_matrix,
    soft_vote,
    softmax,
    stable_tta_aggregate,
    topk_accuracy,
)
from .evaluate import (
    AdapterSource,
    EvalConfig,
    EvalReport,
    ReplaySource,
    SyntheticSource,
    conflict_scan,
    evaluate,
    record_replay,
    sweep,
)
from .imaging import (
    DatasetManifest,
    ImageFormatError,
    ImageTensor,
    ManifestError,
    PreprocessConfig,
    decode_image,
    load_manifest,
    preprocess,
    standardize,
    unstandardize,
)
from .providers import (
    AdapterClient,
    AdapterExitError,
    AdapterTimeoutError,
    BadMagicError,
    DimensionMismatchError,
    ReplayFormatError,
    ReplayProvider,
    SyntheticProvider,
    SyntheticTaskSpec,
    TruncatedReplayError,
    replay_read,
    replay_write,
    synthetic_logits,
)
from .rng import derive_seed, substream
from .stats import (
    DegenerateRegressorError,
    DegenerateSamplesError,
    GroupJbReport,
    HolderFit,
    JbResult,
    VarianceReport,
    central_moments,
    holder_fit,
    jb_over_groups,
    jb_p_value,
    jb_test,
    jensen_bound_check,
    logit_variance,
)
from .wire import ProtocolError, ProviderError

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
