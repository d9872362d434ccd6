import csv
import json
import math

import jsonschema
import pytest

from esohedge import cli
from esohedge import lattice as lt
from esohedge.config import ConfigError, long_horizon_config, parse_config, standard_grant_config
from esohedge.reports import SCHEMAS


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def _run(tmp_path, command, cfg, *extra, out="out"):
    out_dir = tmp_path / out
    code = cli.main([command, "--config", _write(tmp_path, cfg), "--out", str(out_dir), *extra])
    return code, out_dir


def _check_schema(command, path):
    payload = json.loads(path.read_text())
    jsonschema.validate(payload, SCHEMAS[command].model_json_schema())
    SCHEMAS[command].model_validate(payload)
    return payload


class TestConfig:
    def test_unknown_key_reports_line(self):
        cfg = standard_grant_config()
        cfg["market"]["drift"] = 0.1
        text = json.dumps(cfg, indent=2)
        with pytest.raises(ConfigError) as exc:
            parse_config(text, "grant.json")
        line = next(i for i, l in enumerate(text.splitlines(), 1) if '"drift"' in l)
        assert f"grant.json:{line}:" in str(exc.value)
        assert "market.drift" in str(exc.value)

    def test_invalid_json_reports_position(self):
        with pytest.raises(ConfigError) as exc:
            parse_config('{\n  "market": {\n    "mu": 0.1,\n  }\n}', "x.json")
        assert str(exc.value).startswith("x.json:4:")

    def test_out_of_range_values(self):
        cfg = standard_grant_config()
        cfg["market"]["sigma"] = 0.0
        with pytest.raises(ConfigError):
            parse_config(json.dumps(cfg))
        cfg = standard_grant_config()
        cfg["contract"]["Tv"] = 10.0
        with pytest.raises(ConfigError):
            parse_config(json.dumps(cfg))

    def test_lambda_alias(self):
        cfg = parse_config(json.dumps(long_horizon_config()))
        assert cfg.contract_spec().intensity.constant_value == 0.2

    def test_explicit_endowment_needs_value(self):
        cfg = standard_grant_config()
        cfg["simulate"] = {"endowment": "explicit"}
        with pytest.raises(ConfigError):
            parse_config(json.dumps(cfg))


class TestValue:
    def test_grant(self, tmp_path, capsys):
        code, out = _run(tmp_path, "value", standard_grant_config())
        assert code == 0
        rep = _check_schema("value", out / "report.json")
        assert rep["x_star"] == pytest.approx(25.1, abs=0.3)
        assert rep["x_rn"] == pytest.approx(33.0, abs=0.2)
        assert rep["x_sr"] == pytest.approx(52.6, abs=0.2)
        assert rep["rmshe_star"] == math.sqrt(rep["h0"])
        assert rep["n_steps"] == 1000 and rep["dt"] == pytest.approx(0.01)
        assert (out / "config.json").exists()
        assert json.loads(capsys.readouterr().out) == rep

    def test_zero_payoff(self, tmp_path):
        cfg = standard_grant_config()
        cfg["contract"]["payoff"] = "zero"
        code, out = _run(tmp_path, "value", cfg, "--steps", "200")
        rep = json.loads((out / "report.json").read_text())
        assert code == 0 and rep["x_star"] == rep["x_rn"] == rep["x_sr"] == 0.0

    def test_drift_does_not_move_rn_or_sr(self, tmp_path):
        reps = []
        for mu in (0.15, 0.25):
            _, out = _run(tmp_path, "value", standard_grant_config(mu), "--steps", "300", out=f"o{mu}")
            reps.append(json.loads((out / "report.json").read_text()))
        assert reps[0]["x_rn"] == reps[1]["x_rn"] and reps[0]["x_sr"] == reps[1]["x_sr"]
        assert reps[0]["x_star"] != reps[1]["x_star"]

    def test_default_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        path = _write(tmp_path, standard_grant_config(), "grant.json")
        assert cli.main(["value", "--config", path, "--steps", "50"]) == 0
        runs = list((tmp_path / "out" / "value").iterdir())
        assert len(runs) == 1
        assert (runs[0] / "config.json").read_text() == (tmp_path / "grant.json").read_text()
        assert (runs[0] / "report.json").exists()


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        cfg = standard_grant_config()
        cfg["bogus"] = 1
        code, _ = _run(tmp_path, "value", cfg)
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["value", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_bad_override(self, tmp_path):
        code, _ = _run(tmp_path, "value", standard_grant_config(), "--steps", "1")
        assert code == 2

    def test_coarse_lattice(self, tmp_path):
        cfg = standard_grant_config()
        cfg["market"] = {"mu": 2.0, "sigma": 0.05, "r": 0.0}
        code, _ = _run(tmp_path, "value", cfg, "--steps", "2")
        assert code == 3

    def test_broken_recursion(self, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise lt.NumericalError("nonpositive f")
        monkeypatch.setattr(lt, "solve_mv", broken)
        code, _ = _run(tmp_path, "value", standard_grant_config())
        assert code == 3


class TestSimulate:
    def _cfg(self, **sim):
        cfg = standard_grant_config()
        cfg["lattice"] = {"n_steps": 100}
        cfg["simulate"] = {"n_paths": 5000, **sim}
        return cfg

    def test_outputs(self, tmp_path, capsys):
        code, out = _run(tmp_path, "simulate", self._cfg())
        assert code == 0
        rep = _check_schema("simulate", out / "report.json")
        assert rep["seed"] == 20240101 and rep["n_paths"] == 5000
        rows = list(csv.DictReader((out / "stats.csv").open()))
        assert [r["strategy"] for r in rows] == ["mv", "bs", "sr"]
        assert list(rows[0]) == ["strategy", "x0", "MHE", "RMSHE", "p1", "p5", "p10", "p50", "p90", "p95", "p99"]
        for name in ("mv", "bs", "sr"):
            hist = list(csv.reader((out / f"histogram_{name}.csv").open()))
            assert hist[0] == ["bin_left", "bin_right", "count"]
            assert len(hist) == 401
        table = capsys.readouterr().out
        assert "RMSHE" in table and "x_sr" in table

    def test_flags_override(self, tmp_path):
        code, out = _run(tmp_path, "simulate", self._cfg(strategies=["bs"]), "--paths", "7", "--seed", "5")
        rep = json.loads((out / "report.json").read_text())
        assert code == 0 and rep["n_paths"] == 7 and rep["seed"] == 5

    def test_single_path(self, tmp_path):
        code, out = _run(tmp_path, "simulate", self._cfg(n_paths=1))
        assert code == 0
        assert len(list(csv.DictReader((out / "stats.csv").open()))) == 3

    def test_mismatched_endowment(self, tmp_path):
        code, out = _run(tmp_path, "simulate", self._cfg(strategies=["sr"], endowment="star"))
        value_code, value_out = _run(tmp_path, "value", self._cfg(), "--steps", "100", out="v")
        row = next(csv.DictReader((out / "stats.csv").open()))
        x_star = json.loads((value_out / "report.json").read_text())["x_star"]
        assert code == 0 and float(row["x0"]) == pytest.approx(x_star, rel=1e-9)

    def test_explicit_endowment(self, tmp_path):
        code, out = _run(tmp_path, "simulate", self._cfg(strategies=["mv"], endowment="explicit",
                                                         endowment_value=12.0))
        row = next(csv.DictReader((out / "stats.csv").open()))
        assert code == 0 and float(row["x0"]) == 12.0

    def test_csv_bytes_independent_of_workers(self, tmp_path):
        outs = []
        for w in (1, 3):
            _, out = _run(tmp_path, "simulate", self._cfg(n_paths=70_000), "--workers", str(w), out=f"w{w}")
            outs.append(out)
        for name in ("stats.csv", "histogram_mv.csv", "histogram_bs.csv", "histogram_sr.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestOtherCommands:
    def test_frontier(self, tmp_path):
        cfg = standard_grant_config()
        cfg["simulate"] = {"n_paths": 2000}
        cfg["frontier"] = {"x_min": 0, "x_max": 60, "n_samples": 61}
        code, out = _run(tmp_path, "frontier", cfg, "--steps", "100")
        assert code == 0
        rep = _check_schema("frontier", out / "report.json")
        rows = list(csv.reader((out / "frontier.csv").open()))
        assert len(rows) == 1 + 61 + 1 + 1 + 3
        assert rep["rmshe_star"] <= rep["rmshe_rn"] and rep["seed"] == 20240101

    def test_frontier_without_simulation(self, tmp_path):
        cfg = standard_grant_config()
        cfg["frontier"] = {"simulate_points": False}
        code, out = _run(tmp_path, "frontier", cfg, "--steps", "100")
        rep = _check_schema("frontier", out / "report.json")
        assert code == 0 and rep["x_rn"] is None

    def test_limit(self, tmp_path):
        code, out = _run(tmp_path, "limit", long_horizon_config())
        rep = _check_schema("limit", out / "report.json")
        assert code == 0
        assert rep["f_inf"] == pytest.approx(0.2 / (0.2 + 1 / 36), rel=1e-14)
        assert rep["rmshe_inf"] == math.sqrt(rep["h_inf"])
        assert rep["m_g"] < 0 < rep["n_g"]

    def test_limit_refuses_vesting(self, tmp_path):
        cfg = long_horizon_config()
        cfg["contract"]["Tv"] = 1.0
        code, _ = _run(tmp_path, "limit", cfg)
        assert code == 2

    def test_converge(self, tmp_path):
        code, out = _run(tmp_path, "converge", long_horizon_config())
        assert code == 0
        rep = _check_schema("converge", out / "report.json")
        rows = rep["rows"]
        assert [r["T"] for r in rows] == [5.0, 10.0, 20.0]
        assert abs(rows[-1]["f0"] - rows[-1]["f_closed"]) <= 1e-3
        gaps = [abs(r["g0"] - r["g_inf"]) for r in rows]
        assert gaps[0] > gaps[1] > gaps[2]
        table = list(csv.DictReader((out / "converge.csv").open()))
        assert len(table) == 3 and float(table[2]["g0"]) == pytest.approx(rows[2]["g0"], rel=1e-9)

    def test_converge_refuses_boundary_intensity(self, tmp_path, capsys):
        cfg = long_horizon_config()
        cfg["contract"]["intensity"]["lambda"] = 0.19
        code, _ = _run(tmp_path, "converge", cfg)
        assert code == 2
        assert "0.19" in capsys.readouterr().err
