"""Anomaly paths S = {S[k]}.

Policies are immutable; whatever a path needs at run time (the step index, the random stream) is
passed in by the trial that drives it. Placements are reported in canonical index form for the
simulator and as sensor tuples through `next_placement`.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from mcusum.data import IntArray
from mcusum.detectors import WeightVector
from mcusum.exceptions import InvalidParameterError, InvalidUseError
from mcusum.model import NetworkModel, Placement, PlacementSet
from mcusum.weights import estimate_drifts

logger = logging.getLogger(__name__)

WORST_DRIFT_LABEL = "worst-drift approximation"


@dataclass(frozen=True)
class FixedPolicy:
    placement: Placement

    @property
    def label(self) -> str:
        return "fixed" + str(list(self.placement))

    @property
    def is_deterministic(self) -> bool:
        return True

    def check(self, placements: PlacementSet) -> None:
        placements.validate(self.placement)

    def indices(
        self, placements: PlacementSet, start: int, n: int, rng: Optional[np.random.Generator]
    ) -> IntArray:
        return np.full(n, placements.index(self.placement), dtype=np.int64)


@dataclass(frozen=True)
class CyclicPolicy:
    order: Tuple[Placement, ...]

    def __post_init__(self) -> None:
        if not self.order:
            raise InvalidParameterError("cyclic policy needs at least one placement")

    @property
    def label(self) -> str:
        return f"cyclic[{len(self.order)}]"

    @property
    def is_deterministic(self) -> bool:
        return True

    def check(self, placements: PlacementSet) -> None:
        for placement in self.order:
            placements.validate(placement)

    def indices(
        self, placements: PlacementSet, start: int, n: int, rng: Optional[np.random.Generator]
    ) -> IntArray:
        cycle = np.array([placements.index(p) for p in self.order], dtype=np.int64)
        return cycle[(np.arange(start, start + n) - 1) % len(cycle)]


@dataclass(frozen=True)
class IidRandomPolicy:
    """Placement drawn afresh from `weights` at every step."""

    placements: Tuple[Placement, ...]
    weights: WeightVector
    name: str = "iid"

    def __post_init__(self) -> None:
        if len(self.placements) != len(self.weights):
            raise InvalidParameterError(
                f"iid policy has {len(self.weights)} weights for {len(self.placements)} placements"
            )

    @classmethod
    def over(cls, placements: PlacementSet, weights: WeightVector, name: str = "iid") -> "IidRandomPolicy":
        weights.check_for(placements)
        return cls(placements=tuple(placements), weights=weights, name=name)

    @property
    def label(self) -> str:
        return self.name

    @property
    def is_deterministic(self) -> bool:
        return False

    def check(self, placements: PlacementSet) -> None:
        if tuple(placements) != self.placements:
            raise InvalidParameterError("iid policy was built for a different placement set")

    def indices(
        self, placements: PlacementSet, start: int, n: int, rng: Optional[np.random.Generator]
    ) -> IntArray:
        if rng is None:
            raise InvalidUseError("iid policy needs a random stream")
        return rng.choice(len(self.weights), size=n, p=self.weights.array).astype(np.int64)


@dataclass(frozen=True)
class WorstDriftPolicy:
    """Static placement of smallest estimated drift under the detector's weights."""

    detector_weights: WeightVector
    placement: Placement
    drift: float

    @classmethod
    def resolve(
        cls, model: NetworkModel, detector_weights: WeightVector, n_samples: int, rng: np.random.Generator
    ) -> "WorstDriftPolicy":
        placement, drift = worst_drift_placement(model, detector_weights, n_samples, rng)
        return cls(detector_weights=detector_weights, placement=placement, drift=drift)

    @property
    def label(self) -> str:
        return WORST_DRIFT_LABEL

    @property
    def is_deterministic(self) -> bool:
        return True

    def check(self, placements: PlacementSet) -> None:
        placements.validate(self.placement)
        self.detector_weights.check_for(placements)

    def indices(
        self, placements: PlacementSet, start: int, n: int, rng: Optional[np.random.Generator]
    ) -> IntArray:
        return np.full(n, placements.index(self.placement), dtype=np.int64)


TrajectoryPolicy = Union[FixedPolicy, CyclicPolicy, IidRandomPolicy, WorstDriftPolicy]


def next_placement(policy: TrajectoryPolicy, step: int, rng: np.random.Generator) -> Placement:
    if step < 1:
        raise InvalidParameterError(f"steps are numbered from 1, got {step}")
    if isinstance(policy, (FixedPolicy, WorstDriftPolicy)):
        return policy.placement
    if isinstance(policy, CyclicPolicy):
        return policy.order[(step - 1) % len(policy.order)]
    return policy.placements[int(rng.choice(len(policy.weights), p=policy.weights.array))]


def worst_drift_placement(
    model: NetworkModel, detector_weights: WeightVector, n_samples: int, rng: np.random.Generator
) -> Tuple[Placement, float]:
    """Placement of smallest drift; drifts within three combined standard errors of the minimum tie,
    and ties go to the earliest placement in canonical order."""
    estimate = estimate_drifts(model, detector_weights, n_samples, rng)
    lowest = int(np.argmin(estimate.drifts))
    margins = 3 * np.hypot(estimate.stderr, estimate.stderr[lowest])
    index = int(np.nonzero(estimate.drifts <= estimate.drifts[lowest] + margins)[0][0])
    logger.debug("worst drift %.6f at placement %s", estimate.drifts[index], list(model.placements[index]))
    return model.placements[index], float(estimate.drifts[index])


def fixed(placement: Sequence[int]) -> FixedPolicy:
    return FixedPolicy(placement=tuple(int(i) for i in placement))


def cyclic(order: Sequence[Sequence[int]]) -> CyclicPolicy:
    return CyclicPolicy(order=tuple(tuple(int(i) for i in p) for p in order))
