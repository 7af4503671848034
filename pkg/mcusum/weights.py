"""KL number, per-placement drifts and the mixture-weight optimizer.

For weights alpha the KL number is I = sum_E alpha_E d_E, where the drift d_E is the mean one-step
mixture llr when the anomaly sits at E. In the reduced coordinates beta (all but the last placement)
the gradient of I is d_E - d_last, so gradient components are drift differences. Every drift in one
evaluation is computed from the same noise draws.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from mcusum.data import DictData, FloatArray
from mcusum.detectors import WeightVector, mixture_increments
from mcusum.exceptions import InvalidParameterError
from mcusum.model import NetworkModel, Placement

logger = logging.getLogger(__name__)

CHUNK_CELLS = 1 << 22


@dataclass
class _Moments:
    """Column-wise count/mean/M2, merged chunk by chunk."""

    count: int = 0
    mean: FloatArray = field(default_factory=lambda: np.zeros(0))
    m2: FloatArray = field(default_factory=lambda: np.zeros(0))

    def add(self, samples: FloatArray) -> None:
        n = samples.shape[0]
        mean = samples.mean(axis=0)
        m2 = ((samples - mean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = n, mean, m2
            return
        total = self.count + n
        delta = mean - self.mean
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + m2 + delta**2 * self.count * n / total
        self.count = total

    @property
    def stderr(self) -> FloatArray:
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def _chunks(n_samples: int, width: int) -> Iterator[int]:
    size = max(1, CHUNK_CELLS // max(1, width))
    done = 0
    while done < n_samples:
        step = min(size, n_samples - done)
        yield step
        done += step


def _check_samples(n_samples: int) -> None:
    if n_samples < 2:
        raise InvalidParameterError(f"need at least 2 samples, got {n_samples}")


def estimate_drift(
    model: NetworkModel, weights: WeightVector, placement: Sequence[int], n_samples: int, rng: np.random.Generator
) -> Tuple[float, float]:
    """Mean mixture llr with the anomaly fixed at `placement`, and its standard error."""
    _check_samples(n_samples)
    weights.check_for(model.placements)
    mask = model.anomaly_mask(placement)
    moments = _Moments()
    for size in _chunks(n_samples, 4 * (model.n_sensors + len(weights))):
        x = model.observations_from_noise(rng.standard_normal((size, model.n_sensors)), mask)
        moments.add(mixture_increments(model.placements, weights, model.sensor_llr(x))[:, None])
    return float(moments.mean[0]), float(moments.stderr[0])


def _drift_samples(model: NetworkModel, weights: WeightVector, noise: FloatArray) -> FloatArray:
    """(n, |E|) mixture llr samples; column j places the anomaly at placement j, all sharing `noise`."""
    incidence = model.placements.incidence
    pre_llr, post_llr = model.paired_sensor_llr(noise)
    base = pre_llr @ incidence
    shift = post_llr - pre_llr
    columns = []
    for placement in model.placements:
        rows = [i - 1 for i in placement]
        placement_llrs = base + shift[:, rows] @ incidence[rows, :]
        columns.append(logsumexp(placement_llrs, b=weights.array, axis=1))
    return np.stack(columns, axis=1)


@dataclass(frozen=True)
class DriftEstimate:
    drifts: FloatArray
    stderr: FloatArray
    differences: FloatArray
    difference_stderr: FloatArray


def estimate_drifts(
    model: NetworkModel, weights: WeightVector, n_samples: int, rng: np.random.Generator
) -> DriftEstimate:
    """Drifts of every placement plus their differences to the last placement, from common noise."""
    _check_samples(n_samples)
    weights.check_for(model.placements)
    count = len(model.placements)
    drift_moments, difference_moments = _Moments(), _Moments()
    for size in _chunks(n_samples, 4 * (model.n_sensors + count)):
        samples = _drift_samples(model, weights, rng.standard_normal((size, model.n_sensors)))
        drift_moments.add(samples)
        difference_moments.add(samples[:, :-1] - samples[:, -1:])
    return DriftEstimate(
        drifts=drift_moments.mean,
        stderr=drift_moments.stderr,
        differences=difference_moments.mean if count > 1 else np.zeros(0),
        difference_stderr=difference_moments.stderr if count > 1 else np.zeros(0),
    )


def estimate_kl_number(
    model: NetworkModel, weights: WeightVector, n_samples: int, rng: np.random.Generator
) -> Tuple[float, float]:
    """I_alpha: placement drawn from the weights, then one observation under that placement."""
    _check_samples(n_samples)
    weights.check_for(model.placements)
    masks = model.placements.incidence.T.astype(bool)
    moments = _Moments()
    for size in _chunks(n_samples, 4 * (model.n_sensors + len(weights))):
        chosen = rng.choice(len(weights), size=size, p=weights.array)
        x = model.observations_from_noise(rng.standard_normal((size, model.n_sensors)), masks[chosen])
        moments.add(mixture_increments(model.placements, weights, model.sensor_llr(x))[:, None])
    return float(moments.mean[0]), float(moments.stderr[0])


def estimate_gradient(
    model: NetworkModel, weights: WeightVector, n_samples: int, rng: np.random.Generator
) -> Tuple[FloatArray, FloatArray]:
    """Gradient of I in the reduced coordinates and its standard errors; empty when |E| = 1."""
    if len(model.placements) == 1:
        return np.zeros(0), np.zeros(0)
    estimate = estimate_drifts(model, weights, n_samples, rng)
    return estimate.differences, estimate.difference_stderr


def project_simplex(point: FloatArray) -> FloatArray:
    """Euclidean projection onto {x >= 0, sum x = 1}."""
    ordered = np.sort(point)[::-1]
    levels = (np.cumsum(ordered) - 1) / np.arange(1, point.shape[0] + 1)
    rank = np.nonzero(levels < ordered)[0][-1]
    return np.maximum(point - levels[rank], 0.0)


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.5
    max_iters: int = 500
    samples_per_gradient: int = 100_000
    convergence_tol: float = 5e-3
    support_epsilon: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("step_size", "max_iters", "samples_per_gradient", "convergence_tol", "support_epsilon"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"optimizer {name} must be positive, got {getattr(self, name)}")
        if self.samples_per_gradient < 2:
            raise InvalidParameterError("optimizer samples_per_gradient must be at least 2")
        if self.seed < 0:
            raise InvalidParameterError(f"optimizer seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class DriftReport:
    placements: Tuple[Placement, ...]
    weights: WeightVector
    drifts: Tuple[float, ...]
    stderr: Tuple[float, ...]
    kl_number: float
    kl_stderr: float
    support_epsilon: float = 1e-4
    converged: bool = True
    iterations: int = 0
    warning: Optional[str] = None

    @property
    def support(self) -> Tuple[bool, ...]:
        return self.weights.support(self.support_epsilon)

    def tolerance(self, slack: float = 0.0) -> float:
        """Three combined standard errors of a drift difference, plus `slack`."""
        return 3 * math.sqrt(2) * max(self.stderr) + slack

    def to_dict(self) -> DictData:
        return {
            "placements": [
                {"placement": list(p), "weight": w, "drift": d, "stderr": s, "support": flag}
                for p, w, d, s, flag in zip(
                    self.placements, self.weights.values, self.drifts, self.stderr, self.support
                )
            ],
            "kl_number": self.kl_number,
            "kl_stderr": self.kl_stderr,
            "support_epsilon": self.support_epsilon,
            "converged": self.converged,
            "iterations": self.iterations,
            "warning": self.warning,
        }


def drift_report(
    model: NetworkModel,
    weights: WeightVector,
    n_samples: int,
    rng: np.random.Generator,
    support_epsilon: float = 1e-4,
    converged: bool = True,
    iterations: int = 0,
    warning: Optional[str] = None,
) -> DriftReport:
    estimate = estimate_drifts(model, weights, n_samples, rng)
    alpha = weights.array
    return DriftReport(
        placements=tuple(model.placements),
        weights=weights,
        drifts=tuple(float(d) for d in estimate.drifts),
        stderr=tuple(float(s) for s in estimate.stderr),
        kl_number=float(alpha @ estimate.drifts),
        kl_stderr=float(math.sqrt(float((alpha**2) @ (estimate.stderr**2)))),
        support_epsilon=support_epsilon,
        converged=converged,
        iterations=iterations,
        warning=warning,
    )


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration,)))


def optimize_weights(model: NetworkModel, config: OptimizerConfig) -> Tuple[WeightVector, DriftReport]:
    """Projected gradient descent on the simplex, started from uniform weights."""
    count = len(model.placements)
    alpha = np.full(count, 1.0 / count)
    step = config.step_size
    converged = count == 1
    iterations = 0
    previous: Optional[float] = None
    best: Tuple[float, FloatArray] = (math.inf, alpha)
    while not converged and iterations < config.max_iters:
        weights = WeightVector.from_array(alpha)
        estimate = estimate_drifts(model, weights, config.samples_per_gradient, _iteration_rng(config.seed, iterations))
        kl_number = float(weights.array @ estimate.drifts)
        noise = 2 * float(np.sqrt((weights.array**2) @ (estimate.stderr**2)))
        if kl_number < best[0]:
            best = (kl_number, weights.array)
        if previous is not None and kl_number > previous + noise:
            step /= 2
            logger.debug("iteration %d: I rose to %.6f, halving step to %g", iterations, kl_number, step)
        previous = kl_number
        gradient = np.append(estimate.differences, 0.0)
        candidate = project_simplex(weights.array - step * gradient)
        projected_norm = float(np.linalg.norm(weights.array - candidate)) / step
        logger.debug("iteration %d: I=%.6f projected gradient norm %.3g", iterations, kl_number, projected_norm)
        iterations += 1
        if projected_norm < config.convergence_tol:
            converged = True
            break
        alpha = candidate
    warning = None
    if not converged:
        alpha = best[1]
        warning = (
            f"projected gradient did not fall below {config.convergence_tol:g} "
            f"within {config.max_iters} iterations"
        )
        logger.warning("weight optimization: %s; returning the best iterate", warning)
    else:
        logger.info("weight optimization converged after %d iterations", iterations)
    weights = WeightVector.from_array(alpha)
    report = drift_report(
        model,
        weights,
        config.samples_per_gradient,
        _iteration_rng(config.seed, config.max_iters),
        support_epsilon=config.support_epsilon,
        converged=converged,
        iterations=iterations,
        warning=warning,
    )
    return weights, report


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class Lemma3Verification:
    """Optimality structure of a candidate minimizer: which conditions hold."""

    checks: Tuple[ConditionCheck, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> DictData:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "conditions": {c.name: {"passed": c.passed, "detail": c.detail} for c in self.checks},
        }


def verify_lemma3(model: NetworkModel, weights: WeightVector, report: DriftReport, tol: float) -> Lemma3Verification:
    support = np.array(weights.support(report.support_epsilon))
    drifts = np.array(report.drifts)
    checks: List[ConditionCheck] = []

    size = int(support.sum())
    if model.anomaly_size == 1:
        ok = bool(support.all())
        detail = f"{size} of {len(support)} placements carry weight; m = 1 needs all of them"
    else:
        ok = size >= 2
        detail = f"{size} placements carry weight; m >= 2 needs at least 2"
    checks.append(ConditionCheck("support", ok, detail))

    on = drifts[support]
    spread = float(on.max() - on.min()) if on.size else math.inf
    checks.append(ConditionCheck("equal_support_drifts", spread <= tol, f"drift spread on support {spread:.6g}"))

    common = float(weights.array[support] @ on / weights.array[support].sum()) if on.size else math.nan
    off = drifts[~support]
    lowest_off = float(off.min()) if off.size else math.inf
    checks.append(
        ConditionCheck(
            "off_support_drifts",
            lowest_off > common - tol,
            f"smallest off-support drift {lowest_off:.6g} against common drift {common:.6g}",
        )
    )

    gap = abs(common - report.kl_number)
    checks.append(
        ConditionCheck("drift_equals_kl", gap <= tol, f"common drift {common:.6g}, I = {report.kl_number:.6g}")
    )
    return Lemma3Verification(checks=tuple(checks), tolerance=tol)
