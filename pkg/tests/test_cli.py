import csv
import json
import math
from pathlib import Path

import pytest

from qdcluster import analysis, cli, protocol
from qdcluster.cli import ScenarioConfig
from qdcluster.errors import ConfigError, FitError

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"

HEADERS = {
    "truth_tables.csv": "mode,basis2,basis3,outcome2,outcome3,probability",
    "fidelity_curve.csv": "label,total_qubits,fidelity,params_hash",
    "capture.csv": "n_photons,capture_per_pulse,sequence_probability",
    "band.csv": "epsilon,total_qubits,fidelity",
}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def shipped(name):
    return json.loads(cli.shipped_config(name).read_text())


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def fast(name, **changes):
    cfg = shipped(name)
    cfg.update(overhauser_nodes=8, emission_quadrature_steps=16)
    cfg.update(changes)
    return cfg


class TestConfig:
    @pytest.mark.parametrize("name", ["baseline", "ideal", "improved"])
    def test_shipped_configs_round_trip(self, name):
        cfg = ScenarioConfig.load(cli.shipped_config(name))
        again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg
        assert again.content_hash() == cfg.content_hash()

    def test_units(self):
        cfg = ScenarioConfig.from_dict(fast("baseline", device={**shipped("baseline")["device"], "b_field_mT": 40}))
        assert cfg.device.b_field == pytest.approx(0.04)

    def test_derived_field(self):
        cfg = ScenarioConfig.load(cli.shipped_config("baseline"))
        assert cfg.device.hole_period == pytest.approx(4 * 2.08)

    def test_null_t2_is_infinite(self):
        assert math.isinf(ScenarioConfig.load(cli.shipped_config("ideal")).device.t2_ground)

    def test_linear_angle(self):
        dev = {**shipped("baseline")["device"], "pulse_polarization": {"linear_angle_deg": 9}}
        cfg = ScenarioConfig.from_dict(fast("baseline", device=dev))
        assert cfg.device.pulse_polarization[0].imag > 0

    @pytest.mark.parametrize("change, field", [
        ({"k_max": 9}, "k_max"),
        ({"k_max": 2.5}, "k_max"),
        ({"seed": -1}, "seed"),
        ({"emission_quadrature_steps": 15}, "emission_quadrature_steps"),
        ({"sweep": {"epsilons": []}}, "sweep.epsilons"),
        ({"sweep": {"epsilons": [0.1, 1.2]}}, "sweep.epsilons[1]"),
        ({"schedule": {"t12_ns": 0.1}}, "schedule.t12_ns"),
        ({"colour": "blue"}, "colour"),
        ({"label": ""}, "label"),
    ])
    def test_field_diagnostics(self, change, field):
        with pytest.raises(ConfigError) as info:
            ScenarioConfig.from_dict(fast("baseline", **change))
        assert info.value.field == field

    @pytest.mark.parametrize("key, value", [("t_rad_ns", 0), ("t_rad_ns", "fast"), ("p0", 1.5),
                                            ("pulse_polarization", "X"), ("ground_dephasing", "pink"),
                                            ("window_ns", None), ("unknown", 1)])
    def test_device_diagnostics(self, key, value):
        dev = {**shipped("baseline")["device"], key: value}
        with pytest.raises(ConfigError) as info:
            ScenarioConfig.from_dict(fast("baseline", device=dev))
        assert info.value.field.startswith(f"device.{key}")

    def test_missing_required(self):
        dev = dict(shipped("baseline")["device"])
        del dev["t2_ground_ns"]
        with pytest.raises(ConfigError, match="device.t2_ground_ns"):
            ScenarioConfig.from_dict(fast("baseline", device=dev))


class TestSimulate:
    def test_baseline_curve(self, tmp_path):
        assert cli.main(["simulate", "--config", "baseline", "--out", str(tmp_path)]) == 0
        got = [float(r["fidelity"]) for r in rows(tmp_path / "fidelity_curve.csv")]
        for f, ref in zip(got, (0.776, 0.612, 0.482)):
            assert abs(f - ref) <= 0.05
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["derived"]["hole_larmor_period_ns"] == pytest.approx(8.32)
        assert meta["epsilon_mapping"] == protocol.EPSILON_MAPPING
        assert meta["non_increasing_in_k"] is True
        assert len(meta["config_hash"]) == 40

    def test_ideal_truth_tables(self, tmp_path):
        assert cli.main(["simulate", "--config", "ideal", "--out", str(tmp_path)]) == 0
        probs = {(r["mode"], r["outcome2"], r["outcome3"]): float(r["probability"])
                 for r in rows(tmp_path / "truth_tables.csv")}
        ones = {("t23_equals_t12", "V", "R"), ("t23_equals_t12", "H", "L"),
                ("t23_equals_2t12", "L", "R"), ("t23_equals_2t12", "R", "L")}
        for key, value in probs.items():
            assert value == pytest.approx(1.0 if key in ones else 0.0, abs=1e-9)

    def test_schema(self, tmp_path):
        cli.main(["simulate", "--config", write_config(tmp_path, fast("baseline")), "--out", str(tmp_path)])
        for name in ("truth_tables.csv", "fidelity_curve.csv", "capture.csv"):
            assert (tmp_path / name).read_text().splitlines()[0] == HEADERS[name]

    def test_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, fast("baseline", seed=11))
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
        assert cli.main(["simulate", "--config", cfg, "--out", str(b)]) == 0
        assert cli.main(["simulate", "--config", cfg, "--out", str(c), "--jobs", "2"]) == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes() == (c / f).read_bytes()

    def test_seed_flag_changes_hash_only(self, tmp_path):
        cfg = write_config(tmp_path, fast("baseline"))
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
        ma = json.loads((tmp_path / "a" / "metadata.json").read_text())
        mb = json.loads((tmp_path / "b" / "metadata.json").read_text())
        assert ma["config_hash"] != mb["config_hash"] and mb["config"]["seed"] == 5
        assert (tmp_path / "a" / "fidelity_curve.csv").read_bytes() == (tmp_path / "b" / "fidelity_curve.csv").read_bytes()


class TestSweep:
    def test_band(self, tmp_path):
        cfg = write_config(tmp_path, fast("baseline", sweep={"epsilons": [0.4, 0.1, 0.3, 0.2]}))
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path), "--jobs", "2"]) == 0
        band = rows(tmp_path / "band.csv")
        assert (tmp_path / "band.csv").read_text().splitlines()[0] == HEADERS["band.csv"]
        assert sorted({r["epsilon"] for r in band}) == ["0.1", "0.2", "0.3", "0.4"]
        assert len(list(tmp_path.glob("curve_eps_*.csv"))) == 4
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["pointwise_ordered"] is True

    def test_zero_epsilon_is_baseline(self, tmp_path):
        cfg = write_config(tmp_path, fast("baseline", sweep={"epsilons": [0.0]}))
        cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")])
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
        swept = [r["fidelity"] for r in rows(tmp_path / "s" / "band.csv")]
        base = [r["fidelity"] for r in rows(tmp_path / "b" / "fidelity_curve.csv")]
        assert swept == base

    def test_improved_crossing(self, tmp_path):
        assert cli.main(["sweep", "--config", "improved", "--out", str(tmp_path)]) == 0
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["crossings"]["0"] in (5, 6, 7)

    def test_requires_epsilons(self, tmp_path, capsys):
        assert cli.main(["sweep", "--config", "ideal", "--out", str(tmp_path)]) == 2
        assert capsys.readouterr().err.startswith("sweep.epsilons:")


class TestErrors:
    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"label": "x", "device": {"g_ground": "a"}})
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert capsys.readouterr().err.strip() == 'device.g_ground: expected a number, got "a"'

    def test_bad_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{")
        assert cli.main(["simulate", "--config", str(path)]) == 2
        assert capsys.readouterr().err.startswith("config:")

    def test_missing_file(self, tmp_path):
        assert cli.main(["simulate", "--config", str(tmp_path / "none.json")]) == 2

    def test_numerical_failure(self, tmp_path, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise FloatingPointError("overflow in expm")
        monkeypatch.setattr(protocol, "truth_table", boom)
        cfg = write_config(tmp_path, fast("baseline"))
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3
        assert "overflow" in capsys.readouterr().err

    def test_flat_trace_is_a_data_error(self, tmp_path, capsys):
        path = tmp_path / "flat.csv"
        path.write_text("time_ns,dcp\n" + "".join(f"{i},0\n" for i in range(12)))
        assert cli.main(["fit-dcp", str(path), "--out", str(tmp_path)]) == 2
        assert capsys.readouterr().err.startswith("data:")

    def test_fit_failure_is_numerical(self, tmp_path, monkeypatch, capsys):
        def diverge(*args, **kwargs):
            raise FitError("did not converge", (0.9, 4.8, 1.6), 0.3)
        monkeypatch.setattr(analysis, "fit_dcp", diverge)
        assert cli.main(["fit-dcp", str(DATA / "dcp.csv"), "--out", str(tmp_path)]) == 3
        assert capsys.readouterr().err.startswith("numerical:")

    def test_bad_jobs(self, tmp_path):
        assert cli.main(["simulate", "--config", "ideal", "--jobs", "0", "--out", str(tmp_path)]) == 2


class TestAnalysisCommands:
    def test_fidelity_golden(self, tmp_path):
        assert cli.main(["fidelity", str(DATA / "counts.csv"), "--out", str(tmp_path)]) == 0
        for name in ("fidelity.csv", "conditional_probs.csv"):
            assert (tmp_path / name).read_text() == (GOLDEN / name).read_text()

    def test_fidelity_monte_carlo_seeded(self, tmp_path):
        args = ["fidelity", str(DATA / "counts.csv"), "--monte-carlo", "--seed", "4"]
        cli.main(args + ["--out", str(tmp_path / "a")])
        cli.main(args + ["--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "fidelity.csv").read_bytes() == (tmp_path / "b" / "fidelity.csv").read_bytes()

    def test_fit_dcp(self, tmp_path, capsys):
        assert cli.main(["fit-dcp", str(DATA / "dcp.csv"), "--out", str(tmp_path)]) == 0
        fit = {r["parameter"]: float(r["value"]) for r in rows(tmp_path / "dcp_fit.csv")}
        assert fit["f_L_GHz"] == pytest.approx(1.6, rel=1e-6)
        assert "t2_star_ns=4.8" in capsys.readouterr().out

    def test_gfactor(self, tmp_path):
        assert cli.main(["gfactor", str(DATA / "gfactor.csv"), "--out", str(tmp_path)]) == 0
        assert float(rows(tmp_path / "gfactor.csv")[0]["g"]) == pytest.approx(0.229, abs=1e-10)

    def test_missing_input(self, tmp_path, capsys):
        assert cli.main(["gfactor", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
        assert capsys.readouterr().err.startswith("data:")
