__version__ = "0.1.0"

from mcusum.config import ExperimentConfig, load_config, resolve_experiment
from mcusum.detectors import (
    DetectorSpec,
    DetectorState,
    WeightVector,
    check_stop,
    mcusum_update,
    mixture_llr,
    ncusum_update,
    ocusum_update,
)
from mcusum.evaluation import (
    calibrate_threshold,
    estimate_mtfa,
    estimate_wadd,
    exact_run_length,
    tradeoff_curve,
    write_curve_csv,
)
from mcusum.exceptions import (
    CalibrationError,
    ConfigError,
    ConfigValidationError,
    DomainError,
    GridPointError,
    InvalidParameterError,
    InvalidUseError,
    McusumError,
    MissingValueError,
    UnexpectedDataError,
    UnionMatchError,
    WrongTypeError,
)
from mcusum.model import (
    Bernoulli,
    Gaussian,
    NetworkModel,
    PlacementSet,
    SensorModel,
    entropy,
    enumerate_placements,
    kl_divergence,
    placement_llr,
    sample_observation,
)
from mcusum.trajectory import (
    CyclicPolicy,
    FixedPolicy,
    IidRandomPolicy,
    WorstDriftPolicy,
    cyclic,
    fixed,
    next_placement,
    worst_drift_placement,
)
from mcusum.weights import (
    DriftReport,
    OptimizerConfig,
    estimate_drift,
    estimate_gradient,
    estimate_kl_number,
    optimize_weights,
    verify_lemma3,
)

__all__ = [
    "__version__",
    "Bernoulli",
    "CalibrationError",
    "ConfigError",
    "ConfigValidationError",
    "CyclicPolicy",
    "DetectorSpec",
    "DetectorState",
    "DomainError",
    "DriftReport",
    "ExperimentConfig",
    "FixedPolicy",
    "Gaussian",
    "GridPointError",
    "IidRandomPolicy",
    "InvalidParameterError",
    "InvalidUseError",
    "McusumError",
    "MissingValueError",
    "NetworkModel",
    "OptimizerConfig",
    "PlacementSet",
    "SensorModel",
    "UnexpectedDataError",
    "UnionMatchError",
    "WeightVector",
    "WorstDriftPolicy",
    "WrongTypeError",
    "calibrate_threshold",
    "check_stop",
    "cyclic",
    "entropy",
    "enumerate_placements",
    "estimate_drift",
    "estimate_gradient",
    "estimate_kl_number",
    "estimate_mtfa",
    "estimate_wadd",
    "exact_run_length",
    "fixed",
    "kl_divergence",
    "load_config",
    "mcusum_update",
    "mixture_llr",
    "ncusum_update",
    "next_placement",
    "ocusum_update",
    "optimize_weights",
    "placement_llr",
    "resolve_experiment",
    "sample_observation",
    "tradeoff_curve",
    "verify_lemma3",
    "worst_drift_placement",
    "write_curve_csv",
]
