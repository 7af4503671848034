import csv
import math

import numpy as np
import pytest

from mcusum import evaluation
from mcusum.config import parse_config, resolve_experiment
from mcusum.detectors import DetectorSpec, DetectorState, WeightVector, check_stop, mcusum_update, mixture_llr
from mcusum.exceptions import (
    ConfigValidationError,
    DomainError,
    GridPointError,
    InvalidParameterError,
    InvalidUseError,
)
from mcusum.evaluation import (
    CSV_HEADER,
    RunLengthEstimate,
    TrialRecord,
    calibrate_threshold,
    default_horizon,
    estimate_mtfa,
    estimate_wadd,
    exact_run_length,
    horizon_for_threshold,
    run_trial,
    simulate_trials,
    tradeoff_curve,
    trial_rng,
    write_curve_csv,
    write_trials_csv,
)
from mcusum.trajectory import IidRandomPolicy, cyclic, fixed
from mcusum.weights import estimate_kl_number
from tests.common import bernoulli_network, experiment_data, gaussian_network, homogeneous_network, slow


def _mcusum(n_placements):
    return DetectorSpec(kind="mcusum", weights=WeightVector.uniform(n_placements))


def _overlap(first, second):
    return abs(first.mean - second.mean) <= first.ci_halfwidth + second.ci_halfwidth


def test_run_length_estimate_from_records():
    records = [TrialRecord("d", stop_time=t, censored=t == 10, seed_path=(0, i)) for i, t in enumerate([2, 4, 10])]

    estimate = RunLengthEstimate.from_records(records)

    assert estimate.mean == pytest.approx(16 / 3)
    assert estimate.stderr == pytest.approx(np.std([2, 4, 10], ddof=1) / math.sqrt(3))
    assert estimate.censored == 1
    assert estimate.ci[0] < estimate.mean < estimate.ci[1]
    assert records[2].trial == 2


def test_horizons():
    assert default_horizon(100) == 5000
    assert default_horizon(1e9) == 10**7
    assert horizon_for_threshold(math.log(100)) in (5000, 5001)
    assert horizon_for_threshold(50.0) == 10**7


def test_exact_run_length_matches_simulation_without_anomaly():
    model = bernoulli_network(1)
    detector = _mcusum(1)

    exact = exact_run_length(detector, model, 1.5, 14)
    estimate = estimate_mtfa(detector, model, 1.5, 4000, 14, seed=0)

    assert abs(estimate.mean - exact.truncated_mean) <= 3 * estimate.stderr
    assert estimate.censored / 4000 == pytest.approx(exact.tail_probability, abs=0.03)


def test_exact_run_length_matches_simulation_with_anomaly():
    model = bernoulli_network(1)
    detector = _mcusum(1)
    policy = fixed([1])

    exact = exact_run_length(detector, model, 1.5, 14, policy=policy, changed=True)
    estimate = estimate_wadd(detector, model, policy, 1.5, 4000, seed=0, horizon=14)

    assert abs(estimate.mean - exact.truncated_mean) <= 3 * estimate.stderr
    assert exact.truncated_mean < 14


def test_exact_run_length_of_two_sensor_oracle_detector():
    model = bernoulli_network(2, p_pre=0.3, p_post=0.8)
    detector = DetectorSpec(kind="ocusum")
    policy = cyclic([[1], [2]])

    exact = exact_run_length(detector, model, 1.0, 8, policy=policy, changed=True)
    estimate = estimate_wadd(detector, model, policy, 1.0, 4000, seed=1, horizon=8)

    assert abs(estimate.mean - exact.truncated_mean) <= 3 * estimate.stderr


def test_exact_run_length_guards():
    with pytest.raises(InvalidUseError):
        exact_run_length(_mcusum(2), homogeneous_network(2), 1.0, 5)
    with pytest.raises(InvalidParameterError):
        exact_run_length(_mcusum(3), bernoulli_network(3), 1.0, 7)
    model = bernoulli_network(2)
    iid = IidRandomPolicy.over(model.placements, WeightVector.uniform(2))
    with pytest.raises(InvalidUseError):
        exact_run_length(_mcusum(2), model, 1.0, 5, policy=iid, changed=True)


def test_censored_trials_count_at_horizon(caplog):
    model = homogeneous_network(2)

    estimate = estimate_mtfa(_mcusum(2), model, 50.0, 20, 100, seed=0)

    assert estimate.mean == 100
    assert estimate.censored == 20
    assert "lower bound" in caplog.text


def test_simulation_is_deterministic_for_a_seed():
    model = homogeneous_network(3)
    args = (_mcusum(3), model, fixed([1]), 3.0, 50, 10_000)

    first = simulate_trials(*args, seed=7, changed=True)
    second = simulate_trials(*args, seed=7, changed=True)
    other = simulate_trials(*args, seed=8, changed=True)

    assert first == second
    assert [r.stop_time for r in first] != [r.stop_time for r in other]


def test_simulation_does_not_depend_on_worker_count():
    model = gaussian_network([1.0, 1.5, 2.0])
    args = (_mcusum(3), model, cyclic([[1], [3]]), 3.0, 40, 10_000)

    inline = simulate_trials(*args, seed=3, changed=True, workers=1)
    pooled = simulate_trials(*args, seed=3, changed=True, workers=2)

    assert inline == pooled


def test_simulation_argument_checks():
    model = homogeneous_network(2)
    with pytest.raises(InvalidParameterError):
        simulate_trials(_mcusum(2), model, None, 1.0, 0, 10, seed=0, changed=False)
    with pytest.raises(InvalidUseError):
        simulate_trials(_mcusum(2), model, None, 1.0, 5, 10, seed=0, changed=True)
    with pytest.raises(InvalidUseError):
        simulate_trials(DetectorSpec(kind="ocusum"), model, None, 1.0, 5, 10, seed=0, changed=False)


def test_ncusum_on_heterogeneous_model():
    with pytest.raises(InvalidUseError) as exception_info:
        estimate_mtfa(DetectorSpec(kind="ncusum"), gaussian_network([1.0, 2.0]), 2.0, 10, 100, seed=0)

    assert str(exception_info.value) == "N-CUSUM requires homogeneous model"


def test_false_alarm_guarantee_of_log_gamma_threshold():
    model = homogeneous_network(5)
    gamma = 100

    estimate = estimate_mtfa(_mcusum(5), model, math.log(gamma), 2000, default_horizon(gamma), seed=0)

    assert estimate.ci[0] >= 0.9 * gamma


@slow
def test_false_alarm_guarantee_of_log_gamma_threshold_for_larger_gamma():
    model = homogeneous_network(5)
    gamma = 1000

    estimate = estimate_mtfa(_mcusum(5), model, math.log(gamma), 2000, default_horizon(gamma), seed=0, workers=4)

    assert estimate.ci[0] >= 0.9 * gamma


def test_calibration_reaches_target():
    model = homogeneous_network(2)

    calibration = calibrate_threshold(_mcusum(2), model, 100, 0.1, seed=0, n_trials=1000, horizon=2000)

    assert calibration.converged
    assert calibration.mtfa.mean == pytest.approx(100, rel=0.1)
    assert calibration.threshold_b < math.log(100) + 0.5
    assert calibration.evaluations >= 1


def test_calibration_argument_checks():
    with pytest.raises(InvalidParameterError):
        calibrate_threshold(_mcusum(2), homogeneous_network(2), 1.0, 0.1, seed=0)
    with pytest.raises(InvalidParameterError):
        calibrate_threshold(_mcusum(2), homogeneous_network(2), 100, 0.7, seed=0)


def test_delay_does_not_depend_on_path_for_homogeneous_model():
    model = homogeneous_network(5)
    detector = _mcusum(5)
    b = math.log(1000)
    policies = [
        fixed([1]),
        cyclic([[i] for i in range(1, 6)]),
        IidRandomPolicy.over(model.placements, WeightVector.uniform(5)),
    ]

    delays = [estimate_wadd(detector, model, policy, b, 2000, seed=11) for policy in policies]

    assert _overlap(delays[0], delays[1])
    assert _overlap(delays[0], delays[2])
    assert _overlap(delays[1], delays[2])


def test_oracle_detector_is_faster_than_mixture_at_equal_threshold():
    model = homogeneous_network(4)
    policy = fixed([2])

    oracle = estimate_wadd(DetectorSpec(kind="ocusum"), model, policy, 5.0, 1000, seed=0)
    mixture = estimate_wadd(_mcusum(4), model, policy, 5.0, 1000, seed=0)

    assert oracle.mean < mixture.mean


@slow
def test_detector_ordering_at_matched_false_alarm_rate():
    model = homogeneous_network(10)
    policy = fixed([1])
    detectors = [DetectorSpec(kind="ocusum"), _mcusum(10), DetectorSpec(kind="ncusum")]
    for gamma in (100, 300, 1000, 3000, 10_000):
        delays = []
        for detector in detectors:
            calibration = calibrate_threshold(detector, model, gamma, 0.05, seed=0, policy=policy, workers=4)
            delays.append(estimate_wadd(detector, model, policy, calibration.threshold_b, 5000, seed=0, workers=4))
        oracle, mixture, naive = delays

        assert oracle.mean <= mixture.mean + oracle.ci_halfwidth + mixture.ci_halfwidth
        assert mixture.mean <= naive.mean + mixture.ci_halfwidth + naive.ci_halfwidth


@slow
def test_mixture_delay_grows_with_network_size():
    b = math.log(1000)
    delays = [
        estimate_wadd(_mcusum(n), homogeneous_network(n), fixed([1]), b, 5000, seed=0, workers=4) for n in (5, 10, 20)
    ]

    assert delays[0].mean < delays[1].mean < delays[2].mean


@slow
def test_delay_grows_at_rate_of_kl_number():
    model = homogeneous_network(5)
    detector = _mcusum(5)
    kl_number, _ = estimate_kl_number(model, detector.weights, 1_000_000, np.random.default_rng(0))
    for b in (8.0, 10.0, 12.0):
        delay = estimate_wadd(detector, model, fixed([1]), b, 5000, seed=0, workers=4)

        assert 0.9 <= delay.mean * kl_number / b <= 1.15


def _curve_config(**overrides):
    data = experiment_data(
        [1.0, 1.0, 1.0],
        detectors=["mcusum", "ncusum", "ocusum"],
        thresholds=[2.0, 3.0],
        n_trials=200,
        n_trials_mtfa=100,
        horizon=2000,
        workers=1,
    )
    data.update(overrides)
    return parse_config(data)


def test_tradeoff_curve_rows():
    points = tradeoff_curve(_curve_config())

    assert [(p.detector, p.threshold_b) for p in points] == [
        ("mcusum", 2.0),
        ("mcusum", 3.0),
        ("ncusum", 2.0),
        ("ncusum", 3.0),
        ("ocusum", 2.0),
        ("ocusum", 3.0),
    ]
    assert all(p.policy_label == "fixed[1]" for p in points)
    assert all(p.n_trials == 200 for p in points)


def test_tradeoff_curve_reports_slowest_path():
    config = _curve_config(
        model={"sensors": experiment_data([1.0, 2.0])["model"]["sensors"]},
        detectors=["mcusum"],
        policies=[{"fixed": [2]}, {"fixed": [1]}],
        thresholds=[3.0],
    )

    (point,) = tradeoff_curve(config)

    assert point.policy_label == "fixed[1]"
    assert dict(point.delays)["fixed[1]"].mean > dict(point.delays)["fixed[2]"].mean
    assert set(point.to_dict()["policy_delays"]) == {"fixed[1]", "fixed[2]"}


def test_tradeoff_curve_measures_worst_drift_path_of_each_detector():
    config = parse_config(
        experiment_data(
            [1.0, 1.2],
            detectors=["mcusum", {"kind": "mcusum", "weights": [0.98, 0.02], "label": "skewed"}],
            policies=[{"worst_drift": True}],
            thresholds=[4.0],
            n_trials=40,
            n_trials_mtfa=20,
            horizon=2000,
            drift_samples=20_000,
            workers=1,
        )
    )
    experiment = resolve_experiment(config)
    skewed = experiment.detectors[1]

    _, point = tradeoff_curve(experiment)

    expected = estimate_wadd(skewed, experiment.model, fixed([2]), 4.0, 40, seed=0)
    assert point.detector == "skewed"
    assert point.wadd.mean == expected.mean


def test_tradeoff_curve_with_gammas_calibrates():
    config = _curve_config(detectors=["mcusum"], thresholds=None, gammas=[50.0], rel_tol=0.2)

    (point,) = tradeoff_curve(config)

    assert point.target_gamma == 50.0
    assert point.mtfa.mean == pytest.approx(50.0, rel=0.2)


def test_tradeoff_curve_needs_a_grid():
    with pytest.raises(ConfigValidationError):
        tradeoff_curve(_curve_config(thresholds=None))


def test_tradeoff_curve_wraps_grid_point_failures(monkeypatch):
    def failing_wadd(*args, **kwargs):
        raise DomainError("mixture likelihood ratio vanishes")

    monkeypatch.setattr(evaluation, "estimate_wadd", failing_wadd)

    with pytest.raises(GridPointError) as exception_info:
        tradeoff_curve(_curve_config())

    assert str(exception_info.value) == (
        'grid point (detector="mcusum", policy="fixed[1]", value=2): mixture likelihood ratio vanishes'
    )
    assert isinstance(exception_info.value.cause, DomainError)


def test_curve_csv_is_reproducible(tmp_path):
    experiment = resolve_experiment(_curve_config())
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"

    write_curve_csv(tradeoff_curve(experiment), first)
    write_curve_csv(tradeoff_curve(experiment, workers=2), second)

    assert first.read_bytes() == second.read_bytes()
    with open(first, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 6
    assert b"\r" not in first.read_bytes()


def test_trials_csv_lists_every_trial(tmp_path):
    points = tradeoff_curve(_curve_config(detectors=["mcusum"], thresholds=[2.0]))
    path = tmp_path / "trials.csv"

    write_trials_csv(points, path)

    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 100 + 200
    assert {row["phase"] for row in rows} == {"false_alarm", "delay"}
    assert rows[0]["trial"] == "0"


def test_run_lengths_do_not_decrease_with_threshold():
    model = homogeneous_network(3)
    detector = _mcusum(3)
    grid = [1.0, 2.0, 3.0, 4.0]

    mtfa = [estimate_mtfa(detector, model, b, 200, 2000, seed=3).mean for b in grid]
    wadd = [estimate_wadd(detector, model, fixed([1]), b, 200, seed=3).mean for b in grid]

    assert mtfa == sorted(mtfa)
    assert wadd == sorted(wadd)


def _plain_cusum_stop(model, weights, policy, threshold_b, horizon, rng):
    noise = rng.standard_normal((horizon, model.n_sensors))
    indices = rng.choice(len(weights), size=horizon, p=weights.array)
    state = DetectorState()
    for k in range(horizon):
        x = model.observations_from_noise(noise[k], model.anomaly_mask(policy.placements[indices[k]]))
        state = mcusum_update(state, mixture_llr(model, weights, x))
        if check_stop(state, threshold_b).stopped:
            return state.steps, False
    return horizon, True


def test_simulator_matches_plain_cusum_loop_on_random_path():
    model = gaussian_network([1.0, 1.3, 1.6])
    weights = WeightVector(values=(0.5, 0.3, 0.2))
    detector = DetectorSpec(kind="mcusum", weights=weights)
    policy = IidRandomPolicy.over(model.placements, weights)

    for trial in range(100):
        simulated = run_trial(detector, model, policy, 2.0, 32, trial_rng(0, 1, trial), changed=True)
        looped = _plain_cusum_stop(model, weights, policy, 2.0, 32, trial_rng(0, 1, trial))

        assert simulated == looped
