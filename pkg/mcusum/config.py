import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np

from mcusum.data import Data, DictData
from mcusum.detectors import DetectorSpec, WeightVector
from mcusum.exceptions import ConfigValidationError, McusumError
from mcusum.model import Bernoulli, Gaussian, NetworkModel, SensorDistribution, SensorModel
from mcusum.schema import from_dict, to_dict
from mcusum.trajectory import (
    IidRandomPolicy,
    TrajectoryPolicy,
    WorstDriftPolicy,
    cyclic,
    fixed,
)
from mcusum.weights import DriftReport, OptimizerConfig, optimize_weights

logger = logging.getLogger(__name__)

DetectorName = Literal["mcusum", "ncusum", "ocusum"]
WeightSource = Union[Literal["uniform", "optimize"], List[float]]

POLICY_STREAM = 2


@dataclass
class GaussianSpec:
    mean: float
    var: float


@dataclass
class BernoulliSpec:
    p: float


@dataclass
class DistributionSpec:
    gaussian: Optional[GaussianSpec] = None
    bernoulli: Optional[BernoulliSpec] = None

    def build(self) -> SensorDistribution:
        if (self.gaussian is None) == (self.bernoulli is None):
            raise ConfigValidationError('exactly one of "gaussian" or "bernoulli" must be given')
        if self.gaussian is not None:
            return Gaussian(mean=self.gaussian.mean, variance=self.gaussian.var)
        assert self.bernoulli is not None
        return Bernoulli(p=self.bernoulli.p)

    @classmethod
    def from_distribution(cls, distribution: SensorDistribution) -> "DistributionSpec":
        if isinstance(distribution, Gaussian):
            return cls(gaussian=GaussianSpec(mean=distribution.mean, var=distribution.variance))
        return cls(bernoulli=BernoulliSpec(p=distribution.p))


@dataclass
class SensorSpec:
    pre: DistributionSpec
    post: DistributionSpec


@dataclass
class ModelSpec:
    sensors: List[SensorSpec]
    anomaly_size: int = 1

    def build(self) -> NetworkModel:
        sensors = []
        for index, sensor in enumerate(self.sensors):
            try:
                sensors.append(SensorModel(pre=_build(sensor.pre, "pre"), post=_build(sensor.post, "post")))
            except McusumError as error:
                raise _located(error, f"sensors.{index}") from error
        try:
            return NetworkModel(sensors=tuple(sensors), anomaly_size=self.anomaly_size)
        except McusumError as error:
            raise _located(error, "anomaly_size") from error

    @classmethod
    def from_model(cls, model: NetworkModel) -> "ModelSpec":
        return cls(
            sensors=[
                SensorSpec(
                    pre=DistributionSpec.from_distribution(s.pre), post=DistributionSpec.from_distribution(s.post)
                )
                for s in model.sensors
            ],
            anomaly_size=model.anomaly_size,
        )


@dataclass
class DetectorEntry:
    kind: DetectorName
    weights: Optional[WeightSource] = None
    label: Optional[str] = None


@dataclass
class PolicySpec:
    fixed: Optional[List[int]] = None
    cyclic: Optional[List[List[int]]] = None
    iid: Optional[Union[Literal["detector", "uniform"], List[float]]] = None
    worst_drift: Optional[bool] = None


@dataclass
class OptimizerSpec:
    step_size: float = 0.5
    max_iters: int = 500
    samples_per_gradient: int = 100_000
    convergence_tol: float = 5e-3
    support_epsilon: float = 1e-4
    seed: Optional[int] = None

    def build(self, default_seed: int) -> OptimizerConfig:
        return OptimizerConfig(
            step_size=self.step_size,
            max_iters=self.max_iters,
            samples_per_gradient=self.samples_per_gradient,
            convergence_tol=self.convergence_tol,
            support_epsilon=self.support_epsilon,
            seed=default_seed if self.seed is None else self.seed,
        )


@dataclass
class ExperimentConfig:
    model: ModelSpec
    detectors: List[Union[DetectorName, DetectorEntry]] = field(default_factory=lambda: ["mcusum"])
    weights: WeightSource = "uniform"
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    policies: List[PolicySpec] = field(default_factory=list)
    thresholds: Optional[List[float]] = None
    gammas: Optional[List[float]] = None
    n_trials: int = 10_000
    n_trials_mtfa: int = 2_000
    horizon: Optional[int] = None
    drift_samples: int = 100_000
    rel_tol: float = 0.05
    seed: int = 0
    workers: Optional[int] = None
    out_dir: str = "out"
    list_placements: bool = False


def _build(spec: DistributionSpec, name: str) -> SensorDistribution:
    try:
        return spec.build()
    except McusumError as error:
        raise _located(error, name) from error


def _located(error: McusumError, path: str) -> ConfigValidationError:
    if isinstance(error, ConfigValidationError):
        field_path = f"{path}.{error.field_path}" if error.field_path else path
        return ConfigValidationError(error.message, field_path=field_path)
    return ConfigValidationError(str(error), field_path=path)


def parse_config(data: Data) -> ExperimentConfig:
    return from_dict(ExperimentConfig, data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        return parse_config(json.load(handle))


def dump_json(data: DictData, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(data, handle, indent=2, sort_keys=True, ensure_ascii=False)
        handle.write("\n")


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    dump_json(to_dict(config), path)


def load_model(path: Union[str, Path]) -> NetworkModel:
    with open(path, encoding="utf-8") as handle:
        return from_dict(ModelSpec, json.load(handle)).build()


def dump_model(model: NetworkModel, path: Union[str, Path]) -> None:
    dump_json(to_dict(ModelSpec.from_model(model)), path)


@dataclass(frozen=True)
class Experiment:
    config: ExperimentConfig
    model: NetworkModel
    weights: WeightVector
    detectors: Tuple[DetectorSpec, ...]
    policies: Tuple[TrajectoryPolicy, ...]
    weight_report: Optional[DriftReport] = None
    detector_policies: Tuple[Tuple[TrajectoryPolicy, ...], ...] = ()

    def policies_for(self, detector: DetectorSpec) -> Tuple[TrajectoryPolicy, ...]:
        """Anomaly paths to evaluate `detector` on, falling back to the shared ones."""
        if not self.detector_policies or detector not in self.detectors:
            return self.policies
        return self.detector_policies[self.detectors.index(detector)]


def _explicit_weights(values: List[float], model: NetworkModel, path: str) -> WeightVector:
    try:
        weights = WeightVector(values=tuple(values))
        weights.check_for(model.placements)
    except McusumError as error:
        raise _located(error, path) from error
    return weights


def validate_config(config: ExperimentConfig) -> NetworkModel:
    """Check everything that can be checked without simulating; returns the built model."""
    model = _located_model(config)
    for name in ("n_trials", "n_trials_mtfa", "drift_samples"):
        if getattr(config, name) < 1:
            raise ConfigValidationError("must be at least 1", field_path=name)
    if config.horizon is not None and config.horizon < 1:
        raise ConfigValidationError("must be at least 1", field_path="horizon")
    if not 0 < config.rel_tol < 0.5:
        raise ConfigValidationError("must lie in (0, 0.5)", field_path="rel_tol")
    if config.seed < 0:
        raise ConfigValidationError("must be non-negative", field_path="seed")
    if config.workers is not None and config.workers < 1:
        raise ConfigValidationError("must be at least 1", field_path="workers")
    if config.thresholds is not None and config.gammas is not None:
        raise ConfigValidationError('give either "thresholds" or "gammas", not both', field_path="thresholds")
    for index, gamma in enumerate(config.gammas or []):
        if not gamma > 1:
            raise ConfigValidationError("target MTFA must exceed 1", field_path=f"gammas.{index}")
    if isinstance(config.weights, list):
        _explicit_weights(config.weights, model, "weights")
    try:
        config.optimizer.build(config.seed)
    except McusumError as error:
        raise _located(error, "optimizer") from error
    if not config.detectors:
        raise ConfigValidationError("at least one detector is required", field_path="detectors")
    labels = set()
    for index, entry in enumerate(config.detectors):
        kind, label = (entry, entry) if isinstance(entry, str) else (entry.kind, entry.label or entry.kind)
        if label in labels:
            raise ConfigValidationError(f'duplicate detector label "{label}"', field_path=f"detectors.{index}")
        labels.add(label)
        if kind == "ncusum" and not model.is_homogeneous:
            raise ConfigValidationError("N-CUSUM requires homogeneous model", field_path=f"detectors.{index}")
        if not isinstance(entry, str) and isinstance(entry.weights, list):
            _explicit_weights(entry.weights, model, f"detectors.{index}.weights")
    for index, policy in enumerate(config.policies):
        _check_policy(policy, model, f"policies.{index}")
    return model


def _located_model(config: ExperimentConfig) -> NetworkModel:
    try:
        return config.model.build()
    except ConfigValidationError as error:
        error.update_path("model")
        raise


def _check_policy(spec: PolicySpec, model: NetworkModel, path: str) -> None:
    given = [name for name in ("fixed", "cyclic", "iid", "worst_drift") if getattr(spec, name) is not None]
    if len(given) != 1:
        raise ConfigValidationError('exactly one of "fixed", "cyclic", "iid", "worst_drift" must be given', path)
    try:
        if spec.fixed is not None:
            fixed(spec.fixed).check(model.placements)
        elif spec.cyclic is not None:
            cyclic(spec.cyclic).check(model.placements)
    except McusumError as error:
        raise _located(error, f"{path}.{given[0]}") from error
    if isinstance(spec.iid, list):
        _explicit_weights(spec.iid, model, f"{path}.iid")


def resolve_weights(config: ExperimentConfig, model: NetworkModel) -> Tuple[WeightVector, Optional[DriftReport]]:
    if isinstance(config.weights, list):
        return WeightVector(values=tuple(config.weights)), None
    if config.weights == "optimize":
        return optimize_weights(model, config.optimizer.build(config.seed))
    return WeightVector.uniform(len(model.placements)), None


def resolve_detectors(
    config: ExperimentConfig,
    model: NetworkModel,
    weights: WeightVector,
    report: Optional[DriftReport] = None,
) -> Tuple[DetectorSpec, ...]:
    """Detector entries with their weights; "optimize" entries share one optimizer run."""
    optimized = (weights, report) if config.weights == "optimize" else None
    detectors = []
    for entry in config.detectors:
        if isinstance(entry, str):
            detectors.append(DetectorSpec(kind=entry, weights=weights if entry == "mcusum" else None))
            continue
        own = weights
        if isinstance(entry.weights, list):
            own = WeightVector(values=tuple(entry.weights))
        elif entry.weights == "uniform":
            own = WeightVector.uniform(len(model.placements))
        elif entry.weights == "optimize" and entry.kind == "mcusum":
            if optimized is None:
                optimized = optimize_weights(model, config.optimizer.build(config.seed))
                logger.info("optimized weights for %s: I = %.6f", entry.label or entry.kind, optimized[1].kl_number)
            own = optimized[0]
        own_weights = own if entry.kind == "mcusum" else None
        detectors.append(DetectorSpec(kind=entry.kind, weights=own_weights, label=entry.label))
    return tuple(detectors)


def _worst_drift(config: ExperimentConfig, model: NetworkModel, weights: WeightVector) -> WorstDriftPolicy:
    # every resolution reads the same stream, so placements are compared on common noise
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(POLICY_STREAM,)))
    policy = WorstDriftPolicy.resolve(model, weights, config.drift_samples, rng)
    logger.info("worst-drift placement %s with drift %.6f", list(policy.placement), policy.drift)
    return policy


def resolve_policies(
    config: ExperimentConfig, model: NetworkModel, weights: WeightVector
) -> Tuple[TrajectoryPolicy, ...]:
    specs = config.policies
    if not specs:
        default = PolicySpec(fixed=list(model.placements[0])) if model.is_homogeneous else PolicySpec(worst_drift=True)
        specs = [default]
    policies: List[TrajectoryPolicy] = []
    for spec in specs:
        if spec.fixed is not None:
            policies.append(fixed(spec.fixed))
        elif spec.cyclic is not None:
            policies.append(cyclic(spec.cyclic))
        elif spec.iid is not None:
            if spec.iid == "detector":
                policies.append(IidRandomPolicy.over(model.placements, weights, name="iid[detector]"))
            elif spec.iid == "uniform":
                uniform = WeightVector.uniform(len(model.placements))
                policies.append(IidRandomPolicy.over(model.placements, uniform, name="iid[uniform]"))
            else:
                explicit = WeightVector(values=tuple(spec.iid))
                policies.append(IidRandomPolicy.over(model.placements, explicit, name="iid[explicit]"))
        else:
            policies.append(_worst_drift(config, model, weights))
    return tuple(policies)


def resolve_detector_policies(
    config: ExperimentConfig,
    model: NetworkModel,
    detector: DetectorSpec,
    policies: Tuple[TrajectoryPolicy, ...],
    worst_drift_cache: Optional[Dict[WeightVector, WorstDriftPolicy]] = None,
) -> Tuple[TrajectoryPolicy, ...]:
    """The shared paths as seen by one detector.

    Worst-drift and iid[detector] paths follow the detector's own mixture weights. N-CUSUM and O-CUSUM
    have no mixture and keep the paths built from the shared weights.
    """
    if detector.weights is None:
        return policies
    cache = {} if worst_drift_cache is None else worst_drift_cache
    own = detector.weights
    adapted: List[TrajectoryPolicy] = []
    for policy in policies:
        if isinstance(policy, WorstDriftPolicy) and policy.detector_weights != own:
            if own not in cache:
                cache[own] = _worst_drift(config, model, own)
            adapted.append(cache[own])
        elif isinstance(policy, IidRandomPolicy) and policy.name == "iid[detector]" and policy.weights != own:
            adapted.append(IidRandomPolicy.over(model.placements, own, name=policy.name))
        else:
            adapted.append(policy)
    return tuple(adapted)


def resolve_experiment(config: ExperimentConfig) -> Experiment:
    """Validate, then settle weights (optimizing if asked), detectors and anomaly paths."""
    model = validate_config(config)
    weights, report = resolve_weights(config, model)
    detectors = resolve_detectors(config, model, weights, report)
    policies = resolve_policies(config, model, weights)
    cache: Dict[WeightVector, WorstDriftPolicy] = {
        p.detector_weights: p for p in policies if isinstance(p, WorstDriftPolicy)
    }
    return Experiment(
        config=config,
        model=model,
        weights=weights,
        detectors=detectors,
        policies=policies,
        weight_report=report,
        detector_policies=tuple(resolve_detector_policies(config, model, d, policies, cache) for d in detectors),
    )
