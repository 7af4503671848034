"""Statistical model of the sensor network.

Sensors are independent. Before the change every sensor follows its non-anomalous law; afterwards the
sensors of the current placement switch to their anomalous law. Sensor indices are 1-based at every
public boundary.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from mcusum.data import BoolArray, FloatArray
from mcusum.exceptions import DomainError, InvalidParameterError

logger = logging.getLogger(__name__)

MAX_PLACEMENTS = 10**6

Placement = Tuple[int, ...]


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise InvalidParameterError(f"gaussian variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def from_normal(self, noise: FloatArray) -> FloatArray:
        return self.mean + self.std * noise

    def sample(self, rng: np.random.Generator, size: Union[int, Tuple[int, ...], None] = None) -> FloatArray:
        return self.from_normal(rng.standard_normal(size))

    def log_density(self, x: FloatArray) -> FloatArray:
        return stats.norm.logpdf(x, loc=self.mean, scale=self.std)

    def entropy(self) -> float:
        return 0.5 * math.log(2 * math.pi * math.e * self.variance)

    def kl_divergence(self, other: "Gaussian") -> float:
        ratio = self.variance / other.variance
        return 0.5 * (ratio - 1 - math.log(ratio) + (self.mean - other.mean) ** 2 / other.variance)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self) -> None:
        if not 0 < self.p < 1:
            raise InvalidParameterError(f"bernoulli p must lie strictly inside (0, 1), got {self.p}")

    def from_normal(self, noise: FloatArray) -> FloatArray:
        # P(Z < Phi^-1(p)) = p
        return (noise < stats.norm.ppf(self.p)).astype(np.float64)

    def sample(self, rng: np.random.Generator, size: Union[int, Tuple[int, ...], None] = None) -> FloatArray:
        return self.from_normal(rng.standard_normal(size))

    def log_density(self, x: FloatArray) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        inside = (x == 0) | (x == 1)
        with np.errstate(divide="ignore"):
            values = x * math.log(self.p) + (1 - x) * math.log1p(-self.p)
        return np.where(inside, values, -np.inf)

    def entropy(self) -> float:
        return -(self.p * math.log(self.p) + (1 - self.p) * math.log1p(-self.p))

    def kl_divergence(self, other: "Bernoulli") -> float:
        return self.p * math.log(self.p / other.p) + (1 - self.p) * math.log((1 - self.p) / (1 - other.p))


SensorDistribution = Union[Gaussian, Bernoulli]


def kl_divergence(f: SensorDistribution, g: SensorDistribution) -> float:
    if type(f) is not type(g):
        raise InvalidParameterError(f"can not compare {type(f).__name__} with {type(g).__name__}")
    return f.kl_divergence(g)  # type: ignore[arg-type]


def entropy(distribution: SensorDistribution) -> float:
    """Differential entropy for Gaussian laws, Shannon entropy (nats) for Bernoulli."""
    return distribution.entropy()


@dataclass(frozen=True)
class SensorModel:
    pre: SensorDistribution
    post: SensorDistribution

    def __post_init__(self) -> None:
        if type(self.pre) is not type(self.post):
            raise InvalidParameterError(
                f"pre and post distributions must share a kind, got {type(self.pre).__name__} "
                f"and {type(self.post).__name__}"
            )
        if self.pre == self.post:
            raise InvalidParameterError(f"pre and post distributions must differ, both are {self.pre}")

    def llr(self, x: FloatArray) -> FloatArray:
        """log f(x) - log g(x), elementwise."""
        log_g = self.pre.log_density(x)
        if np.any(np.isneginf(log_g)):
            raise DomainError(f"non-anomalous density vanishes at an observed point of {self.pre}")
        return self.post.log_density(x) - log_g

    @cached_property
    def divergence(self) -> float:
        """D(f || g)."""
        return kl_divergence(self.post, self.pre)


@dataclass(frozen=True)
class PlacementSet:
    """All m-subsets of the L sensors, in lexicographic order."""

    n_sensors: int
    anomaly_size: int
    placements: Tuple[Placement, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        check_anomaly_size(self.n_sensors, self.anomaly_size)
        placements = tuple(combinations(range(1, self.n_sensors + 1), self.anomaly_size))
        object.__setattr__(self, "placements", placements)

    def __len__(self) -> int:
        return len(self.placements)

    def __iter__(self) -> Iterator[Placement]:
        return iter(self.placements)

    def __getitem__(self, index: int) -> Placement:
        return self.placements[index]

    @cached_property
    def _positions(self) -> dict:
        return {placement: index for index, placement in enumerate(self.placements)}

    def index(self, placement: Sequence[int]) -> int:
        key = self.validate(placement)
        return self._positions[key]

    def validate(self, placement: Sequence[int]) -> Placement:
        key = tuple(int(i) for i in placement)
        if len(key) != self.anomaly_size:
            raise InvalidParameterError(f"placement {list(key)} must hold exactly m={self.anomaly_size} sensors")
        if any(not 1 <= i <= self.n_sensors for i in key):
            raise InvalidParameterError(f"placement {list(key)} has indices outside [1, {self.n_sensors}]")
        if any(a >= b for a, b in zip(key, key[1:])):
            raise InvalidParameterError(f"placement {list(key)} must be strictly increasing")
        return key

    @cached_property
    def incidence(self) -> FloatArray:
        """(L, |E|) 0/1 matrix; column j marks the sensors of placement j."""
        matrix = np.zeros((self.n_sensors, len(self.placements)))
        for column, placement in enumerate(self.placements):
            matrix[[i - 1 for i in placement], column] = 1.0
        return matrix


def check_anomaly_size(n_sensors: int, anomaly_size: int) -> None:
    if n_sensors < 1:
        raise InvalidParameterError(f"network needs at least one sensor, got L={n_sensors}")
    if not 1 <= anomaly_size <= n_sensors:
        raise InvalidParameterError(f"anomaly size must satisfy 1 <= m <= L, got m={anomaly_size}, L={n_sensors}")
    count = math.comb(n_sensors, anomaly_size)
    if count > MAX_PLACEMENTS:
        raise InvalidParameterError(
            f"binomial(L={n_sensors}, m={anomaly_size}) = {count} placements exceeds the cap of {MAX_PLACEMENTS}"
        )


def enumerate_placements(n_sensors: int, anomaly_size: int) -> PlacementSet:
    return PlacementSet(n_sensors=n_sensors, anomaly_size=anomaly_size)


@dataclass(frozen=True)
class NetworkModel:
    sensors: Tuple[SensorModel, ...]
    anomaly_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensors", tuple(self.sensors))
        check_anomaly_size(len(self.sensors), self.anomaly_size)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @cached_property
    def placements(self) -> PlacementSet:
        return enumerate_placements(self.n_sensors, self.anomaly_size)

    @cached_property
    def is_homogeneous(self) -> bool:
        return all(sensor == self.sensors[0] for sensor in self.sensors)

    @cached_property
    def divergences(self) -> FloatArray:
        return np.array([sensor.divergence for sensor in self.sensors])

    def anomaly_mask(self, placement: Optional[Sequence[int]]) -> BoolArray:
        mask = np.zeros(self.n_sensors, dtype=bool)
        if placement is not None:
            mask[[i - 1 for i in self.placements.validate(placement)]] = True
        return mask

    def observations_from_noise(self, noise: FloatArray, mask: BoolArray) -> FloatArray:
        """Map standard-normal noise of shape (..., L) to observations; `mask` marks anomalous entries."""
        columns = []
        for index, sensor in enumerate(self.sensors):
            z = noise[..., index]
            columns.append(np.where(mask[..., index], sensor.post.from_normal(z), sensor.pre.from_normal(z)))
        return np.stack(columns, axis=-1)

    def sensor_llr(self, x: FloatArray) -> FloatArray:
        """Per-sensor log-likelihood ratios for observations of shape (..., L)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_sensors:
            raise InvalidParameterError(f"observation has {x.shape[-1]} components, the network has {self.n_sensors}")
        return np.stack([sensor.llr(x[..., index]) for index, sensor in enumerate(self.sensors)], axis=-1)

    def paired_sensor_llr(self, noise: FloatArray) -> Tuple[FloatArray, FloatArray]:
        """Per-sensor llr of pre-change and of post-change draws built from the same noise."""
        pre = np.stack([s.llr(s.pre.from_normal(noise[..., i])) for i, s in enumerate(self.sensors)], axis=-1)
        post = np.stack([s.llr(s.post.from_normal(noise[..., i])) for i, s in enumerate(self.sensors)], axis=-1)
        return pre, post


def sample_observation(
    model: NetworkModel, placement: Optional[Sequence[int]], rng: np.random.Generator
) -> FloatArray:
    """One observation vector X[k]; sensors in `placement` draw from their anomalous law."""
    mask = model.anomaly_mask(placement)
    return model.observations_from_noise(rng.standard_normal(model.n_sensors), mask)


def placement_llr(model: NetworkModel, placement: Sequence[int], x: FloatArray) -> float:
    """Sum over the sensors of `placement` of log f(x) - log g(x)."""
    mask = model.anomaly_mask(placement)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_sensors,):
        raise InvalidParameterError(f"observation must have length {model.n_sensors}, got shape {x.shape}")
    return float(model.sensor_llr(x)[mask].sum())
