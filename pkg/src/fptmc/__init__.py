"""Monte-Carlo first-passage-time engines for correlated jump-diffusion credit models."""

from .bridge import (
    EPS_REJECT,
    BridgeSegment,
    candidate_weight,
    conditional_crossing_density,
    crossing_candidate,
    crossing_density,
    crossing_probability,
    survival_probability,
)
from .calibration import (
    CalibrationProblem,
    CalibrationResult,
    FirmParams,
    HistoricalTable,
    calibrate,
    load_historical_csv,
    objective,
)
from .estimation import (
    DensityEstimate,
    GammaFit,
    cumulative_default_rate,
    default_correlation,
    default_correlation_percycle,
    firm_samples,
    fit_gamma_moments,
    kde_density,
    optimal_bandwidth,
)
from .model import (
    FirmSpec,
    JumpLaw,
    MarketModel,
    ModelError,
    Threshold,
    effective_sigma,
    sigma_rows_from_corr,
    threshold_at,
)
from .samplers import (
    FptSample,
    RunOutcome,
    SampleKind,
    SegmentCase,
    classify_segment,
    simulate_conventional,
    simulate_munif,
)
from .stochastic import (
    JumpSchedule,
    PhiloxStreams,
    RngStream,
    SumOfUniformsTable,
    correlated_normals,
    default_sou_table,
    merge_shock_schedules,
    sample_jump_sizes,
    sample_poisson_schedule,
    sou_correlated_uniforms,
)

__version__ = "0.1.0"
