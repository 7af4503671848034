from typing import Any, Dict, List, Sequence

import pytest

from mcusum.model import Bernoulli, Gaussian, NetworkModel, SensorModel

slow = pytest.mark.slow

HETEROGENEOUS_L10_MEANS = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9]
HETEROGENEOUS_L20_MEANS = [0.8] * 5 + [1.0] * 10 + [1.2] * 5


def gaussian_network(means: Sequence[float], anomaly_size: int = 1) -> NetworkModel:
    """g = N(0, 1) everywhere, f_l = N(means[l], 1)."""
    sensors = tuple(SensorModel(pre=Gaussian(0.0, 1.0), post=Gaussian(float(mean), 1.0)) for mean in means)
    return NetworkModel(sensors=sensors, anomaly_size=anomaly_size)


def homogeneous_network(n_sensors: int, anomaly_size: int = 1, mean: float = 1.0) -> NetworkModel:
    return gaussian_network([mean] * n_sensors, anomaly_size)


def bernoulli_network(n_sensors: int, p_pre: float = 0.5, p_post: float = 0.9, anomaly_size: int = 1) -> NetworkModel:
    sensor = SensorModel(pre=Bernoulli(p_pre), post=Bernoulli(p_post))
    return NetworkModel(sensors=(sensor,) * n_sensors, anomaly_size=anomaly_size)


def gaussian_sensors_data(means: Sequence[float]) -> List[Dict[str, Any]]:
    return [
        {"pre": {"gaussian": {"mean": 0.0, "var": 1.0}}, "post": {"gaussian": {"mean": mean, "var": 1.0}}}
        for mean in means
    ]


def experiment_data(means: Sequence[float], anomaly_size: int = 1, **overrides: Any) -> Dict[str, Any]:
    data: Dict[str, Any] = {"model": {"sensors": gaussian_sensors_data(means), "anomaly_size": anomaly_size}}
    data.update(overrides)
    return data
