"""M-CUSUM, N-CUSUM and O-CUSUM statistics.

All statistics are kept in the log domain. The M-CUSUM state is log W[k] with the recursion
log W[k] = max(log W[k-1], 0) + z[k]; starting from 0 reproduces W[0] = 0 from k = 1 onwards.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from mcusum.data import BoolArray, FloatArray
from mcusum.exceptions import DomainError, InvalidParameterError, InvalidUseError
from mcusum.model import NetworkModel, PlacementSet, placement_llr

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9

DetectorKind = Literal["mcusum", "ncusum", "ocusum"]
DETECTOR_KINDS: Tuple[DetectorKind, ...] = ("mcusum", "ncusum", "ocusum")


@dataclass(frozen=True)
class WeightVector:
    """Probability vector over the canonical placement order."""

    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not values:
            raise InvalidParameterError("weight vector must not be empty")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise InvalidParameterError(f"weights must be finite and non-negative, got {list(values)}")
        if abs(math.fsum(values) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidParameterError(f"weights must sum to 1, got {math.fsum(values)!r}")

    @classmethod
    def uniform(cls, size: int) -> "WeightVector":
        return cls(values=(1.0 / size,) * size)

    @classmethod
    def point_mass(cls, size: int, index: int) -> "WeightVector":
        return cls(values=tuple(1.0 if i == index else 0.0 for i in range(size)))

    @classmethod
    def from_array(cls, array: FloatArray) -> "WeightVector":
        """Renormalize an (almost) simplex point, clearing round-off."""
        clipped = np.clip(np.asarray(array, dtype=np.float64), 0.0, None)
        return cls(values=tuple(clipped / clipped.sum()))

    def __len__(self) -> int:
        return len(self.values)

    @cached_property
    def array(self) -> FloatArray:
        return np.array(self.values)

    def check_for(self, placements: PlacementSet) -> None:
        if len(self.values) != len(placements):
            raise InvalidParameterError(
                f"weight vector has {len(self.values)} entries, the placement set has {len(placements)}"
            )

    def support(self, epsilon: float) -> Tuple[bool, ...]:
        return tuple(v > epsilon for v in self.values)


@dataclass(frozen=True)
class DetectorState:
    log_stat: float = 0.0
    steps: int = 0


@dataclass(frozen=True)
class StoppingDecision:
    stopped: bool
    stop_time: Optional[int] = None


def mixture_increments(placements: PlacementSet, weights: WeightVector, sensor_llr: FloatArray) -> FloatArray:
    """log sum_E alpha_E exp(llr_E) for per-sensor llr rows of shape (..., L)."""
    weights.check_for(placements)
    placement_llrs = sensor_llr @ placements.incidence
    values = logsumexp(placement_llrs, b=weights.array, axis=-1)
    if np.any(np.isneginf(values)) or np.any(np.isnan(values)):
        raise DomainError("mixture likelihood ratio vanishes; effective weights are numerically zero")
    return values


def mixture_llr(model: NetworkModel, weights: WeightVector, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_sensors,):
        raise InvalidParameterError(f"observation must have length {model.n_sensors}, got shape {x.shape}")
    return float(mixture_increments(model.placements, weights, model.sensor_llr(x)))


def mcusum_update(state: DetectorState, z: float) -> DetectorState:
    return DetectorState(log_stat=max(state.log_stat, 0.0) + z, steps=state.steps + 1)


def ncusum_correction(model: NetworkModel) -> float:
    """(L - m) D(f || g); only meaningful when every sensor shares g and f."""
    if not model.is_homogeneous:
        raise InvalidUseError("N-CUSUM requires homogeneous model")
    return (model.n_sensors - model.anomaly_size) * model.sensors[0].divergence


def ncusum_update(state: DetectorState, sum_all_llr: float, correction: float) -> DetectorState:
    return DetectorState(log_stat=max(state.log_stat + sum_all_llr + correction, 0.0), steps=state.steps + 1)


def ocusum_update(
    state: DetectorState, model: NetworkModel, true_placement: Sequence[int], x: Sequence[float]
) -> DetectorState:
    z = placement_llr(model, true_placement, np.asarray(x, dtype=np.float64))
    return DetectorState(log_stat=max(state.log_stat + z, 0.0), steps=state.steps + 1)


def check_stop(state: DetectorState, threshold_b: float) -> StoppingDecision:
    if state.steps >= 1 and state.log_stat >= threshold_b:
        return StoppingDecision(stopped=True, stop_time=state.steps)
    return StoppingDecision(stopped=False)


def cusum_trajectory(z: FloatArray, start: float, floor_inclusive: bool) -> FloatArray:
    """Statistic after each increment along the last axis of `z`, continuing from the statistic `start`.

    floor_inclusive=False is the M-CUSUM form max(s, 0) + z; True is the rectified form (s + z)^+.
    """
    partial = np.cumsum(z, axis=-1)
    if floor_inclusive:
        # (s + z)^+ = P_k + max(s, max_{i<=k} -P_i)
        return partial + np.maximum(start, np.maximum.accumulate(-partial, axis=-1))
    # max(s, 0) + z = P_k + max(max(s, 0), max_{i<k} -P_i)
    floor = max(start, 0.0)
    head = np.full(partial.shape[:-1] + (1,), floor)
    reach = np.concatenate((head, np.maximum(floor, -partial[..., :-1])), axis=-1)
    return partial + np.maximum.accumulate(reach, axis=-1)


@dataclass(frozen=True)
class DetectorSpec:
    kind: DetectorKind
    weights: Optional[WeightVector] = None
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in DETECTOR_KINDS:
            raise InvalidParameterError(f"unknown detector {self.kind!r}, expected one of {DETECTOR_KINDS}")
        if self.kind == "mcusum" and self.weights is None:
            raise InvalidParameterError("M-CUSUM needs mixture weights")

    @property
    def name(self) -> str:
        return self.label or self.kind

    @property
    def floor_inclusive(self) -> bool:
        return self.kind != "mcusum"

    def validate(self, model: NetworkModel) -> None:
        if self.kind == "mcusum":
            assert self.weights is not None
            self.weights.check_for(model.placements)
        elif self.kind == "ncusum":
            ncusum_correction(model)

    def increments(self, model: NetworkModel, sensor_llr: FloatArray, path_mask: BoolArray) -> FloatArray:
        """One-step increments for rows of per-sensor llr; `path_mask` marks the anomaly path S[k]."""
        if self.kind == "mcusum":
            assert self.weights is not None
            return mixture_increments(model.placements, self.weights, sensor_llr)
        if self.kind == "ncusum":
            return sensor_llr.sum(axis=-1) + ncusum_correction(model)
        return np.where(path_mask, sensor_llr, 0.0).sum(axis=-1)
