import pytest

from quenchpin.cli import main
from quenchpin.errors import ConfigError
from quenchpin.experiments import (
    Config,
    format_config,
    parse_config,
    run_critical_force,
    run_hysteresis,
    run_percolation_stats,
    run_simulate,
)
from quenchpin.obstacles import ObstacleField


class TestConfig:
    def test_parse_round_trip(self):
        text = "seed = 7\nmodel = mcf\n# comment\nperc.p = 0.97\n"
        d = parse_config(text)
        assert d == {"seed": "7", "model": "mcf", "perc.p": "0.97"}
        again = parse_config(format_config(d))
        assert again == d

    def test_bad_line(self):
        with pytest.raises(ConfigError):
            parse_config("this has no equals sign\n")

    def test_bad_schema(self):
        with pytest.raises(ConfigError):
            parse_config("schema_version = 99\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            Config({"no.such.key": "1"})

    def test_typed_access(self):
        cfg = Config({"seed": "12", "field.lambda": "2.5"})
        assert cfg.i("seed") == 12
        assert cfg.f("field.lambda") == 2.5
        assert cfg.is_auto("sim.F")


class TestCli:
    def test_sample_field_and_reload(self, tmp_path):
        rc = main(["sample-field", "--out-dir", str(tmp_path), "--seed", "42"])
        assert rc == 0
        report = (tmp_path / "report.txt").read_text()
        assert "experiment = sample-field" in report
        field = ObstacleField.from_text((tmp_path / "field.txt").read_text())
        assert field.count > 0

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        rc = main(["sample-field", "--out-dir", str(tmp_path),
                   "--set", "bogus.key=1"])
        assert rc == 2

    def test_config_file(self, tmp_path):
        cfgf = tmp_path / "cfg.txt"
        cfgf.write_text("seed = 9\nsample.x_hi = 4.0\nsample.y_hi = 2.0\n")
        rc = main(["sample-field", "--config", str(cfgf), "--out-dir", str(tmp_path)])
        assert rc == 0
        report = (tmp_path / "report.txt").read_text()
        assert "seed = 9" in report

    def test_percolation_exit_codes(self, tmp_path):
        rc = main(["percolation-stats", "--out-dir", str(tmp_path),
                   "--set", "perc.trials=5000", "--set", "perc.cap=8",
                   "--set", "perc.side=32"])
        assert rc == 0

    def test_degenerate_config_infeasible(self, tmp_path):
        # vanishing intensity: the parameter recipe cannot close its
        # inequalities, surfaced as exit 2
        rc = main(["verify-certificate", "--out-dir", str(tmp_path),
                   "--set", "field.lambda=1e-9"])
        assert rc == 2

    def test_verify_certificate_negative_control(self, tmp_path):
        rc = main(["verify-certificate", "--out-dir", str(tmp_path / "a"),
                   "--seed", "101", "--set", "cert.grid_spacing=0.05"])
        assert rc == 0
        rc = main(["verify-certificate", "--out-dir", str(tmp_path / "b"),
                   "--seed", "101", "--set", "cert.F_factor=10",
                   "--set", "cert.grid_spacing=0.05"])
        assert rc == 1


class TestReproducibility:
    def test_report_rerun_identical(self, tmp_path):
        args = {"perc.trials": "8000", "perc.cap": "8", "perc.side": "32"}
        r1 = run_percolation_stats(Config(args))
        r2 = run_percolation_stats(Config(args))
        assert r1.to_text() == r2.to_text()
        assert r1.tables == r2.tables

    def test_threads_do_not_change_bytes(self):
        base = {"perc.trials": "8000", "perc.cap": "8", "perc.side": "32"}
        r1 = run_percolation_stats(Config({**base, "threads": "1"}))
        r8 = run_percolation_stats(Config({**base, "threads": "8"}))
        assert r1.to_text() == r8.to_text()
        assert r1.tables["survival.csv"] == r8.tables["survival.csv"]

    def test_rerun_from_echoed_config(self, tmp_path):
        cfg = Config({"perc.trials": "4000", "perc.cap": "6", "perc.side": "24"})
        rep = run_percolation_stats(cfg)
        rep.write(tmp_path)
        # reconstruct the run from the echoed config block
        text = (tmp_path / "report.txt").read_text()
        block = text.split("[config]\n", 1)[1].split("[results]\n", 1)[0]
        echoed = parse_config(block)
        rep2 = run_percolation_stats(Config(echoed))
        assert rep2.to_text() == rep.to_text()


class TestSimulate:
    def test_free_drift_mean_height(self):
        # f = 0, F = 1, T = 1: mean height 1 within 1e-8
        cfg = Config({"field.kind": "none", "grid.points": "256",
                      "grid.side": "10.0", "sim.F": "1.0", "sim.T_max": "1.0",
                      "stop.v_tol_rel": "1e-12", "sim.H_esc": "100.0",
                      "stop.tau": "1e9"})
        rep = run_simulate(cfg)
        assert rep.results["outcome"] == "timeout"
        assert rep.results["mean_u_final"] == pytest.approx(1.0, abs=1e-8)

    def test_escape_flagged(self):
        cfg = Config({"field.kind": "none", "grid.points": "128",
                      "grid.side": "10.0", "sim.F": "1.0", "sim.T_max": "50.0",
                      "sim.H_esc": "2.0"})
        rep = run_simulate(cfg)
        assert rep.results["outcome"] == "escaped"

    def test_fixture_pinned_below_barrier(self):
        # reduced-scale pinning run: outcome, barrier comparison, monotonicity
        cfg = Config({"seed": "101", "grid.points": "512", "recipe.cells": "2",
                      "stop.v_tol_rel": "1e-3", "stop.tau": "3.0"})
        rep = run_simulate(cfg)
        r = rep.results
        assert r["outcome"] == "pinned"
        assert r["final_below_barrier"] is True
        assert r["monotone"] is True
        assert r["F"] == pytest.approx(0.5 * r["F_star"])


class TestCriticalForce:
    def test_free_field_contains_zero(self):
        cfg = Config({"field.kind": "none", "grid.points": "64",
                      "grid.side": "4.0", "sim.H_esc": "0.5",
                      "bisect.resolution": "0.05", "bisect.T_max": "30.0",
                      "stop.tau": "0.5", "stop.v_tol_rel": "1e-6"})
        rep = run_critical_force(cfg)
        r = rep.results
        assert r["F_pinned_max"] == 0.0
        assert r["F_escaped_min"] <= 0.05 + 1e-12
        assert not r["inconclusive"]

    def test_fixture_lower_end_certified(self):
        cfg = Config({"seed": "101", "grid.points": "512", "recipe.cells": "2",
                      "bisect.T_max": "60.0", "stop.v_tol_rel": "1e-3",
                      "stop.tau": "2.0", "bisect.resolution": "2.0"})
        rep = run_critical_force(cfg)
        r = rep.results
        assert not r["inconclusive"]
        assert r["lower_end_ge_F_star"]
        assert r["F_pinned_max"] >= r["F_star"]
        assert r["F_escaped_min"] - r["F_pinned_max"] <= 2.0 + 1e-12

    def test_monotone_in_strength(self):
        # doubling obstacle strengths cannot lower the pinned range
        results = {}
        for s in ("10.0", "20.0"):
            cfg = Config({"seed": "101", "grid.points": "512",
                          "recipe.cells": "2", "strength.a": s,
                          "bisect.T_max": "60.0", "stop.v_tol_rel": "1e-3",
                          "stop.tau": "2.0", "bisect.resolution": "3.0"})
            results[s] = run_critical_force(cfg).results
        assert results["20.0"]["F_pinned_max"] >= results["10.0"]["F_pinned_max"]


class TestHysteresis:
    def test_control_area_shrinks(self):
        cfg = Config({"field.kind": "none", "grid.points": "128",
                      "grid.side": "10.0", "hyst.F_max": "0.06",
                      "hyst.plateaus": "6", "hyst.T_plateau": "20.0",
                      "hyst.H_window": "1.0"})
        rep = run_hysteresis(cfg)
        r = rep.results
        assert r["area_2T"] < r["area_T"]
        assert r["h_end_T"] == pytest.approx(0.0, abs=1e-9)
        # viscous-only loop is small against the full-transformation scale
        assert r["area_T"] <= 0.5 * 2 * r["F_max"] * r["H_window"]

    def test_degenerate_zero_force(self):
        cfg = Config({"field.kind": "none", "grid.points": "64",
                      "grid.side": "4.0", "hyst.F_max": "0.0",
                      "hyst.plateaus": "2", "hyst.T_plateau": "0.5",
                      "hyst.H_window": "1.0", "hyst.compare_double": "0"})
        rep = run_hysteresis(cfg)
        assert rep.results["area_T"] == 0.0


def test_sample_field_lattice(tmp_path):
    rc = main(["sample-field", "--out-dir", str(tmp_path),
               "--set", "field.kind=lattice", "--set", "field.spacing=1.0",
               "--set", "sample.x_hi=3.5", "--set", "sample.y_hi=2.6"])
    assert rc == 0
    field = ObstacleField.from_text((tmp_path / "field.txt").read_text())
    assert field.kind == "lattice"
    assert field.count == 12  # lateral sites {0,1,2,3} x heights {0.5,1.5,2.5}
