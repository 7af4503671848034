"""Monte-Carlo estimation of MTFA and WADD, threshold calibration and trade-off curves.

Every trial draws from its own stream, derived from (master seed, purpose, trial index), so estimates
never depend on how trials are spread over workers. Delay trials start the anomaly at the first
sample and the detector from its initial state.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from mcusum.config import Experiment, ExperimentConfig, resolve_experiment
from mcusum.detectors import DetectorSpec, cusum_trajectory
from mcusum.exceptions import (
    CalibrationError,
    ConfigValidationError,
    GridPointError,
    InvalidParameterError,
    InvalidUseError,
    McusumError,
)
from mcusum.model import Bernoulli, NetworkModel
from mcusum.trajectory import TrajectoryPolicy

logger = logging.getLogger(__name__)

FALSE_ALARM = 0
DELAY = 1

FIRST_BLOCK = 32
MAX_BLOCK = 8192
MAX_HORIZON = 10**7
HORIZON_FACTOR = 50
MAX_ENUMERATED_CELLS = 20
CI_LEVEL = 0.95
CSV_HEADER = ("detector", "policy", "b", "mtfa", "mtfa_ci", "wadd", "wadd_ci", "n_trials", "censored")


@dataclass(frozen=True)
class TrialRecord:
    detector: str
    stop_time: int
    censored: bool
    seed_path: Tuple[int, int]

    @property
    def trial(self) -> int:
        return self.seed_path[1]


@dataclass(frozen=True)
class RunLengthEstimate:
    """Mean stopping time over trials; censored trials count at the horizon."""

    mean: float
    stderr: float
    n_trials: int
    censored: int
    records: Tuple[TrialRecord, ...] = field(default=(), repr=False, compare=False)

    @property
    def ci_halfwidth(self) -> float:
        return float(stats.norm.ppf(0.5 + CI_LEVEL / 2)) * self.stderr

    @property
    def ci(self) -> Tuple[float, float]:
        return self.mean - self.ci_halfwidth, self.mean + self.ci_halfwidth

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord]) -> "RunLengthEstimate":
        times = np.array([r.stop_time for r in records], dtype=np.float64)
        stderr = float(times.std(ddof=1) / math.sqrt(times.size)) if times.size > 1 else 0.0
        return cls(
            mean=float(times.mean()),
            stderr=stderr,
            n_trials=int(times.size),
            censored=sum(r.censored for r in records),
            records=tuple(records),
        )


def trial_rng(seed: int, purpose: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, trial)))


def run_trial(
    detector: DetectorSpec,
    model: NetworkModel,
    policy: Optional[TrajectoryPolicy],
    threshold_b: float,
    horizon: int,
    rng: np.random.Generator,
    changed: bool,
) -> Tuple[int, bool]:
    """Run one detector until it stops or reaches `horizon`; returns (stop time, censored)."""
    placements = model.placements
    masks = placements.incidence.T.astype(bool)
    needs_path = changed or detector.kind == "ocusum"
    if needs_path and policy is None:
        raise InvalidUseError(f"{detector.name} needs an anomaly path policy")
    statistic, steps, block = 0.0, 0, FIRST_BLOCK
    while steps < horizon:
        size = min(block, horizon - steps)
        noise = rng.standard_normal((size, model.n_sensors))
        if needs_path:
            assert policy is not None
            path = masks[policy.indices(placements, steps + 1, size, rng)]
        else:
            path = np.zeros((size, model.n_sensors), dtype=bool)
        x = model.observations_from_noise(noise, path if changed else np.zeros_like(path))
        z = detector.increments(model, model.sensor_llr(x), path)
        trajectory = cusum_trajectory(z, statistic, detector.floor_inclusive)
        crossed = np.nonzero(trajectory >= threshold_b)[0]
        if crossed.size:
            return steps + int(crossed[0]) + 1, False
        statistic = float(trajectory[-1])
        steps += size
        block = min(2 * block, MAX_BLOCK)
    return horizon, True


def _run_chunk(
    args: Tuple[DetectorSpec, NetworkModel, Optional[TrajectoryPolicy], float, int, bool, int, int, Sequence[int]]
) -> List[TrialRecord]:
    detector, model, policy, threshold_b, horizon, changed, seed, purpose, trials = args
    records = []
    for trial in trials:
        rng = trial_rng(seed, purpose, trial)
        stop, censored = run_trial(detector, model, policy, threshold_b, horizon, rng, changed)
        records.append(TrialRecord(detector.name, stop_time=stop, censored=censored, seed_path=(purpose, trial)))
    return records


def simulate_trials(
    detector: DetectorSpec,
    model: NetworkModel,
    policy: Optional[TrajectoryPolicy],
    threshold_b: float,
    n_trials: int,
    horizon: int,
    seed: int,
    changed: bool,
    workers: int = 1,
) -> Tuple[TrialRecord, ...]:
    if n_trials < 1:
        raise InvalidParameterError(f"need at least one trial, got {n_trials}")
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be at least 1, got {horizon}")
    detector.validate(model)
    if policy is not None:
        policy.check(model.placements)
    purpose = DELAY if changed else FALSE_ALARM
    chunks = [list(c) for c in np.array_split(np.arange(n_trials), max(1, workers) * 4) if c.size]
    tasks = [(detector, model, policy, threshold_b, horizon, changed, seed, purpose, c) for c in chunks]
    if workers <= 1:
        results = [_run_chunk(task) for task in tasks]
    else:
        with Pool(processes=workers) as pool:
            results = pool.map(_run_chunk, tasks)
    return tuple(record for chunk in results for record in chunk)


def default_horizon(gamma: float) -> int:
    return int(min(MAX_HORIZON, math.ceil(HORIZON_FACTOR * gamma)))


def horizon_for_threshold(threshold_b: float) -> int:
    return default_horizon(math.exp(min(threshold_b, math.log(MAX_HORIZON))))


def estimate_mtfa(
    detector: DetectorSpec,
    model: NetworkModel,
    threshold_b: float,
    n_trials: int,
    horizon: int,
    seed: int,
    policy: Optional[TrajectoryPolicy] = None,
    workers: int = 1,
) -> RunLengthEstimate:
    """Mean time to false alarm on anomaly-free data.

    Trials still running at `horizon` count as `horizon`, so with censoring the estimate is a lower
    bound on the MTFA. O-CUSUM needs `policy` for the sensors it would watch.
    """
    records = simulate_trials(detector, model, policy, threshold_b, n_trials, horizon, seed, False, workers)
    estimate = RunLengthEstimate.from_records(records)
    if estimate.censored:
        logger.warning(
            "%s at b=%g: %d of %d false-alarm trials censored at %d; MTFA %.1f is a lower bound",
            detector.name, threshold_b, estimate.censored, n_trials, horizon, estimate.mean,
        )
    return estimate


def estimate_wadd(
    detector: DetectorSpec,
    model: NetworkModel,
    policy: TrajectoryPolicy,
    threshold_b: float,
    n_trials: int,
    seed: int,
    horizon: Optional[int] = None,
    workers: int = 1,
) -> RunLengthEstimate:
    """Mean delay with the anomaly active from the first sample and following `policy`."""
    horizon = MAX_HORIZON if horizon is None else horizon
    records = simulate_trials(detector, model, policy, threshold_b, n_trials, horizon, seed, True, workers)
    estimate = RunLengthEstimate.from_records(records)
    if estimate.censored:
        logger.warning(
            "%s at b=%g: %d delay trials censored at %d", detector.name, threshold_b, estimate.censored, horizon
        )
    return estimate


@dataclass(frozen=True)
class Calibration:
    threshold_b: float
    mtfa: RunLengthEstimate
    target_gamma: float
    converged: bool
    evaluations: int


def calibrate_threshold(
    detector: DetectorSpec,
    model: NetworkModel,
    target_gamma: float,
    rel_tol: float,
    seed: int,
    n_trials: int = 2000,
    horizon: Optional[int] = None,
    policy: Optional[TrajectoryPolicy] = None,
    workers: int = 1,
    max_evaluations: int = 40,
) -> Calibration:
    """Bisection on b until the MTFA estimate is within `rel_tol` of `target_gamma`.

    Every evaluation reuses the same trial streams, so the estimate is monotone in b. Without
    convergence the smallest b seen whose estimate reaches the target is returned.
    """
    if not target_gamma > 1:
        raise InvalidParameterError(f"target MTFA must exceed 1, got {target_gamma}")
    if not 0 < rel_tol < 0.5:
        raise InvalidParameterError(f"rel_tol must lie in (0, 0.5), got {rel_tol}")
    horizon = default_horizon(target_gamma) if horizon is None else horizon
    evaluations = 0

    def mtfa(b: float) -> RunLengthEstimate:
        nonlocal evaluations
        evaluations += 1
        estimate = estimate_mtfa(detector, model, b, n_trials, horizon, seed, policy, workers)
        logger.debug("%s calibration: b=%.6f MTFA=%.2f", detector.name, b, estimate.mean)
        return estimate

    def close(estimate: RunLengthEstimate) -> bool:
        return abs(estimate.mean - target_gamma) / target_gamma <= rel_tol

    log_gamma = math.log(target_gamma)
    low, high = log_gamma / 2, 2 * log_gamma + 5
    at_high = mtfa(high)
    if at_high.mean < target_gamma:
        high *= 2
        at_high = mtfa(high)
        if at_high.mean < target_gamma:
            raise CalibrationError(target_gamma=target_gamma, threshold_b=high, mtfa=at_high.mean)
    if close(at_high):
        return Calibration(high, at_high, target_gamma, True, evaluations)
    while evaluations < max_evaluations and high - low > 1e-9:
        middle = (low + high) / 2
        estimate = mtfa(middle)
        if close(estimate):
            logger.info("%s calibrated to b=%.6f for MTFA %g", detector.name, middle, target_gamma)
            return Calibration(middle, estimate, target_gamma, True, evaluations)
        if estimate.mean < target_gamma:
            low = middle
        else:
            high, at_high = middle, estimate
    logger.warning(
        "%s calibration for MTFA %g stopped at b=%.6f with estimate %.2f",
        detector.name, target_gamma, high, at_high.mean,
    )
    return Calibration(high, at_high, target_gamma, False, evaluations)


@dataclass(frozen=True)
class ExactRunLength:
    """E[min(tau, horizon)] and the mass P(tau > horizon) left out by truncation."""

    truncated_mean: float
    tail_probability: float
    horizon: int


def exact_run_length(
    detector: DetectorSpec,
    model: NetworkModel,
    threshold_b: float,
    horizon: int,
    policy: Optional[TrajectoryPolicy] = None,
    changed: bool = False,
) -> ExactRunLength:
    """Exhaustive enumeration of every outcome path of a Bernoulli network up to `horizon`."""
    if not all(isinstance(s.pre, Bernoulli) for s in model.sensors):
        raise InvalidUseError("exact enumeration needs Bernoulli sensors")
    cells = model.n_sensors * horizon
    if horizon < 1 or cells > MAX_ENUMERATED_CELLS:
        raise InvalidParameterError(f"enumeration needs 1 <= L * horizon <= {MAX_ENUMERATED_CELLS}, got {cells}")
    needs_path = changed or detector.kind == "ocusum"
    if needs_path and (policy is None or not policy.is_deterministic):
        raise InvalidUseError("exact enumeration needs a deterministic anomaly path")
    detector.validate(model)
    if needs_path:
        assert policy is not None
        path = model.placements.incidence.T.astype(bool)[policy.indices(model.placements, 1, horizon, None)]
    else:
        path = np.zeros((horizon, model.n_sensors), dtype=bool)
    anomalous = path if changed else np.zeros_like(path)
    p_pre = np.array([s.pre.p for s in model.sensors])  # type: ignore[union-attr]
    p_post = np.array([s.post.p for s in model.sensors])  # type: ignore[union-attr]
    p_one = np.where(anomalous, p_post, p_pre)

    codes = np.arange(2**cells)[:, None]
    outcomes = ((codes >> np.arange(cells)) & 1).astype(np.float64).reshape(-1, horizon, model.n_sensors)
    probability = np.where(outcomes == 1, p_one, 1 - p_one).prod(axis=(1, 2))
    z = detector.increments(model, model.sensor_llr(outcomes), np.broadcast_to(path, outcomes.shape))
    crossed = cusum_trajectory(z, 0.0, detector.floor_inclusive) >= threshold_b
    stopped = crossed.any(axis=1)
    stop_time = np.where(stopped, crossed.argmax(axis=1) + 1, horizon)
    return ExactRunLength(
        truncated_mean=float(probability @ stop_time),
        tail_probability=float(probability @ ~stopped),
        horizon=horizon,
    )


@dataclass(frozen=True)
class CurvePoint:
    detector: str
    threshold_b: float
    mtfa: RunLengthEstimate
    delays: Tuple[Tuple[str, RunLengthEstimate], ...]
    target_gamma: Optional[float] = None

    @property
    def worst(self) -> Tuple[str, RunLengthEstimate]:
        """Policy with the largest mean delay; earlier policies win ties."""
        return max(self.delays, key=lambda item: item[1].mean)

    @property
    def policy_label(self) -> str:
        return self.worst[0]

    @property
    def wadd(self) -> RunLengthEstimate:
        return self.worst[1]

    @property
    def n_trials(self) -> int:
        return self.wadd.n_trials

    def row(self) -> Tuple[Union[str, float, int], ...]:
        return (
            self.detector,
            self.policy_label,
            self.threshold_b,
            self.mtfa.mean,
            self.mtfa.ci_halfwidth,
            self.wadd.mean,
            self.wadd.ci_halfwidth,
            self.n_trials,
            self.mtfa.censored,
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "detector": self.detector,
            "b": self.threshold_b,
            "target_gamma": self.target_gamma,
            "mtfa": {"mean": self.mtfa.mean, "ci": list(self.mtfa.ci), "censored": self.mtfa.censored},
            "policy_delays": {
                label: {"mean": delay.mean, "ci": list(delay.ci), "censored": delay.censored}
                for label, delay in self.delays
            },
        }


def _curve_point(experiment: Experiment, detector: DetectorSpec, value: float, workers: int) -> CurvePoint:
    config = experiment.config
    policies = experiment.policies_for(detector)
    path_policy = policies[0]
    target_gamma: Optional[float] = None
    if config.gammas is not None:
        target_gamma = value
        calibration = calibrate_threshold(
            detector,
            experiment.model,
            value,
            config.rel_tol,
            config.seed,
            n_trials=config.n_trials_mtfa,
            horizon=config.horizon,
            policy=path_policy,
            workers=workers,
        )
        threshold_b, mtfa = calibration.threshold_b, calibration.mtfa
    else:
        threshold_b = value
        horizon = config.horizon if config.horizon is not None else horizon_for_threshold(value)
        mtfa = estimate_mtfa(
            detector, experiment.model, value, config.n_trials_mtfa, horizon, config.seed, path_policy, workers
        )
    delays = tuple(
        (
            policy.label,
            estimate_wadd(detector, experiment.model, policy, threshold_b, config.n_trials, config.seed, None, workers),
        )
        for policy in policies
    )
    return CurvePoint(detector.name, threshold_b, mtfa, delays, target_gamma)


def tradeoff_curve(
    config: Union[ExperimentConfig, Experiment], workers: Optional[int] = None
) -> List[CurvePoint]:
    """One point per (detector, grid value), detectors in configured order."""
    experiment = config if isinstance(config, Experiment) else resolve_experiment(config)
    config = experiment.config
    if config.n_trials < 1 or config.n_trials_mtfa < 1:
        raise ConfigValidationError("trial counts must be at least 1", field_path="n_trials")
    grid = config.gammas if config.gammas is not None else config.thresholds
    if not grid:
        raise ConfigValidationError("a curve needs a non-empty thresholds or gammas grid", field_path="thresholds")
    workers = workers or config.workers or 1
    points = []
    for detector in experiment.detectors:
        for value in grid:
            try:
                point = _curve_point(experiment, detector, value, workers)
            except McusumError as error:
                raise GridPointError(detector.name, experiment.policies[0].label, value, error) from error
            logger.info(
                "%s b=%.4f: MTFA %.1f, WADD %.2f (%s)",
                point.detector, point.threshold_b, point.mtfa.mean, point.wadd.mean, point.policy_label,
            )
            points.append(point)
    return points


def write_curve_csv(points: Sequence[CurvePoint], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for point in points:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in point.row()])


def write_trials_csv(points: Sequence[CurvePoint], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("detector", "policy", "phase", "b", "trial", "stop_time", "censored"))
        for point in points:
            phases = [("false_alarm", "-", point.mtfa)] + [("delay", label, d) for label, d in point.delays]
            for phase, label, estimate in phases:
                for record in estimate.records:
                    b = repr(point.threshold_b)
                    writer.writerow(
                        (point.detector, label, phase, b, record.trial, record.stop_time, int(record.censored))
                    )
