"""Simultaneous post-hoc inference via closed testing with
generalized-mean p-value combination."""

from .errors import (
    Divergent,
    EmptyInput,
    InvalidGamma,
    InvalidLevel,
    InvalidScore,
    InvalidSize,
    MeanClosureError,
    OracleTooLarge,
    OutOfRange,
    Unsupported,
    UnsupportedInverse,
)
from .calibration import (
    CalibrationTable,
    LocalTestSpec,
    ThresholdFn,
    asymptotic_threshold_ratio,
    empirical_calibration,
    g_array,
    gauss_asymptotic_threshold,
    harmonic_root,
    threshold_fn,
    vovk_alpha_factor,
)
from .closure import (
    BruteForceClosure,
    ClosureResult,
    SelectionResult,
    adjusted_p_closed,
    adjusted_p_local,
    brute_force_closure,
    coma,
    evaluate,
    fdp_bound,
    holm_rejections,
    largest_fdp_set,
    largest_fwer_set,
    local_test,
    post_hoc_reject,
)
from .gaussmodel import (
    GaussianModelConfig,
    PowerEstimate,
    asymptotic_power,
    asymptotic_type1,
    detection_boundary,
    empirical_power,
    empirical_type1,
    g_rho_log,
    g_rho_log_inverse,
    g_rho_r,
    g_rho_r_inverse,
    sample_model,
    sample_x_block,
)
from .scores import (
    EPS_MIN,
    ScoreSet,
    SubsetQuery,
    TransformedScores,
    build_score_set,
    generalized_mean,
    make_subset,
    presorted_score_set,
    transform,
    transform_values,
)

__version__ = "0.1.0"
