import csv
import json

import pytest

from mcusum import cli
from mcusum.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from mcusum.exceptions import DomainError
from tests.common import experiment_data


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


def _small_curve_data(**overrides):
    data = experiment_data(
        [1.0] * 3,
        detectors=["mcusum", "ncusum", "ocusum"],
        n_trials=200,
        n_trials_mtfa=100,
    )
    data.update(overrides)
    return data


def test_placements_counts(write_config, capsys):
    config = write_config(experiment_data([1.0] * 10))

    assert main(["placements", "--config", str(config)]) == EXIT_OK

    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "10 placements"
    assert lines[1] == "first: [1]"
    assert lines[2] == "last: [10]"


def test_placements_for_larger_anomaly(write_config, capsys):
    config = write_config(experiment_data([1.0] * 10, anomaly_size=3))

    assert main(["placements", "--config", str(config), "--list"]) == EXIT_OK

    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "120 placements"
    assert lines[2] == "last: [8, 9, 10]"
    assert lines[3] == "0\t1 2 3"
    assert len(lines) == 3 + 120


def test_placements_with_zero_anomaly_size(write_config, caplog):
    config = write_config(experiment_data([1.0] * 10, anomaly_size=0))

    assert main(["placements", "--config", str(config)]) == EXIT_CONFIG
    assert "1 <= m <= L" in caplog.text


def test_ncusum_on_heterogeneous_model_is_a_config_error(write_config, caplog, tmp_path):
    config = write_config(experiment_data([1.0, 2.0], detectors=["mcusum", "ncusum"], thresholds=[2.0]))

    assert main(["curve", "--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "N-CUSUM requires homogeneous model" in caplog.text
    assert not (tmp_path / "out" / "curve.csv").exists()


def test_unknown_key_is_a_config_error(write_config, caplog):
    config = write_config(experiment_data([1.0], trails=10))

    assert main(["placements", "--config", str(config)]) == EXIT_CONFIG
    assert 'unknown key(s) "trails"' in caplog.text


def test_missing_config_file(tmp_path, caplog):
    assert main(["placements", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert "cannot read" in caplog.text


def test_config_flag_is_required():
    with pytest.raises(SystemExit):
        main(["placements"])


def test_curve_writes_reproducible_outputs(write_config, tmp_path):
    config = write_config(_small_curve_data())
    first, second = tmp_path / "first", tmp_path / "second"
    flags = ["--threshold", "1.5", "--threshold", "2.5", "--workers", "1"]

    assert main(["curve", "--config", str(config), "--out", str(first)] + flags) == EXIT_OK
    assert main(["curve", "--config", str(config), "--out", str(second)] + flags) == EXIT_OK

    rows = _read_rows(first / "curve.csv")
    assert len(rows) == 1 + 6
    assert [row[0] for row in rows[1:]] == ["mcusum"] * 2 + ["ncusum"] * 2 + ["ocusum"] * 2
    assert {row[1] for row in rows[1:]} == {"fixed[1]"}
    assert (first / "curve.csv").read_bytes() == (second / "curve.csv").read_bytes()
    assert (first / "curve_delays.json").exists()

    provenance = json.loads((first / "curve.provenance.json").read_text(encoding="utf-8"))
    assert provenance["command"] == "curve"
    assert provenance["output"] == "curve.csv"
    assert provenance["config"]["thresholds"] == [1.5, 2.5]
    assert provenance["workers"] == 1


def test_curve_reruns_from_provenance(write_config, tmp_path):
    config = write_config(_small_curve_data(thresholds=[2.0], workers=1, out_dir=str(tmp_path / "first")))
    assert main(["curve", "--config", str(config)]) == EXIT_OK
    provenance = tmp_path / "first" / "curve.provenance.json"

    assert main(["curve", "--config", str(provenance), "--out", str(tmp_path / "again")]) == EXIT_OK

    assert (tmp_path / "first" / "curve.csv").read_bytes() == (tmp_path / "again" / "curve.csv").read_bytes()


def test_simulate_writes_trials(write_config, tmp_path):
    config = write_config(_small_curve_data(detectors=["mcusum"], thresholds=[1.5], workers=1))

    assert main(["simulate", "--config", str(config), "--out", str(tmp_path), "--trials", "50"]) == EXIT_OK

    rows = _read_rows(tmp_path / "trials.csv")
    assert rows[0] == ["detector", "policy", "phase", "b", "trial", "stop_time", "censored"]
    assert len(rows) == 1 + 100 + 50
    assert (tmp_path / "simulate.csv").exists()
    assert (tmp_path / "simulate.provenance.json").exists()


def test_optimize_writes_weights(write_config, tmp_path):
    config = write_config(experiment_data([1.0] * 3, optimizer={"samples_per_gradient": 20_000, "max_iters": 20}))

    assert main(["optimize", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK

    result = json.loads((tmp_path / "optimize.json").read_text(encoding="utf-8"))
    assert result["weights"] == pytest.approx([1 / 3] * 3, abs=0.05)
    assert "optimality_conditions" in result
    assert result["optimizer"]["seed"] == 0


def test_drift_writes_report(write_config, tmp_path):
    config = write_config(experiment_data([1.0, 2.0], drift_samples=5000))

    assert main(["drift", "--config", str(config), "--out", str(tmp_path)]) == EXIT_OK

    result = json.loads((tmp_path / "drift.json").read_text(encoding="utf-8"))
    assert result["min_drift_placement"] == [1]
    assert len(result["report"]["placements"]) == 2


def test_calibrate_needs_gammas(write_config, tmp_path, caplog):
    config = write_config(experiment_data([1.0, 1.0]))

    assert main(["calibrate", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "gammas" in caplog.text


def test_calibrate_with_gamma_flag(write_config, tmp_path):
    config = write_config(experiment_data([1.0, 1.0], n_trials_mtfa=100, horizon=2000, rel_tol=0.2))

    assert main(["calibrate", "--config", str(config), "--out", str(tmp_path), "--gamma", "20", "--workers", "1"]) == 0

    rows = _read_rows(tmp_path / "calibration.csv")
    assert rows[0][:3] == ["detector", "gamma", "b"]
    assert len(rows) == 2
    assert rows[1][0] == "mcusum"
    assert rows[1][1] == "20.0"


def test_seed_override_is_recorded(write_config, tmp_path):
    config = write_config(experiment_data([1.0, 2.0], drift_samples=1000))

    assert main(["drift", "--config", str(config), "--out", str(tmp_path), "--seed", "7"]) == EXIT_OK

    provenance = json.loads((tmp_path / "drift.provenance.json").read_text(encoding="utf-8"))
    assert provenance["seed"] == 7
    assert provenance["config"]["seed"] == 7


def test_runtime_failure_exit_code(write_config, tmp_path, monkeypatch, caplog):
    def failing_curve(*args, **kwargs):
        raise DomainError("mixture likelihood ratio vanishes")

    monkeypatch.setattr(cli, "tradeoff_curve", failing_curve)
    config = write_config(_small_curve_data(thresholds=[2.0]))

    assert main(["curve", "--config", str(config), "--out", str(tmp_path)]) == EXIT_RUNTIME
    assert "mixture likelihood ratio vanishes" in caplog.text
