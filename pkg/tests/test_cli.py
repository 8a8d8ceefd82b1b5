"""CLI tests: config validation, CSV round-trips, subcommand exit codes,
SVG determinism, and the selfcheck negative control."""

import json

import numpy as np
import pytest

from psmcrb import chi2
from psmcrb.cli import (
    BOUNDS_COLUMNS,
    SWEEP_COLUMNS,
    bound_report_to_record,
    emit_csv,
    load_config,
    main,
    parse_csv,
    parse_gamma_grid_flag,
    sweep_row_to_record,
)
from psmcrb.linmodel import ConfigError
from psmcrb.montecarlo import sweep
from psmcrb.selfcheck import run_selfcheck

from conftest import make_config


def _write_config(tmp_path, **overrides):
    raw = {
        "H": {"generate": {"seed": 2, "N": 4, "M": 2}},
        "sigma2": 1.0,
        "hypothesis": "H2",
        "theta1": {"generate": {"seed": 2}},
        "theta2": {"generate": {"seed": 2}},
        "gamma_grid": [0.5, 2.0],
        "trials": 120,
        "seed": 99,
    }
    raw.update(overrides)
    raw = {k: v for k, v in raw.items() if v is not None}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestConfigLoading:
    def test_generate_form(self, tmp_path, setup):
        cfg = load_config(_write_config(tmp_path))
        h, _, theta2 = setup
        assert np.array_equal(cfg.h, h)
        assert np.array_equal(cfg.theta2_true, theta2)

    def test_explicit_matrix_and_vectors(self, tmp_path, setup):
        h, theta1, theta2 = setup
        path = _write_config(tmp_path, H=h.tolist(), theta1=theta1.tolist(),
                             theta2=theta2.tolist())
        cfg = load_config(path)
        assert np.allclose(cfg.h, h)

    def test_log_range_grid(self, tmp_path):
        path = _write_config(tmp_path, gamma_grid={"log_range": {"min": 0.1, "max": 10.0, "count": 5}})
        cfg = load_config(path)
        assert cfg.gamma_grid.shape == (5,)
        assert cfg.gamma_grid[0] == pytest.approx(0.1)
        assert cfg.gamma_grid[-1] == pytest.approx(10.0)

    def test_overrides(self, tmp_path):
        cfg = load_config(_write_config(tmp_path), trials=7, seed=123,
                          gamma_grid=np.array([1.0]))
        assert cfg.trials == 7 and cfg.master_seed == 123 and cfg.gamma_grid.tolist() == [1.0]

    def test_malformed_json_names_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"H": [[1, 2],')
        with pytest.raises(ConfigError, match="malformed JSON"):
            load_config(path)

    def test_missing_key_named(self, tmp_path):
        path = _write_config(tmp_path, sigma2=None)
        with pytest.raises(ConfigError, match="sigma2"):
            load_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = _write_config(tmp_path, typo_key=3)
        with pytest.raises(ConfigError, match="typo_key"):
            load_config(path)

    def test_wrong_theta_length_named(self, tmp_path):
        path = _write_config(tmp_path, theta2=[1.0, 2.0])
        with pytest.raises(ConfigError, match="theta2"):
            load_config(path)

    def test_descending_grid_rejected(self, tmp_path):
        path = _write_config(tmp_path, gamma_grid=[2.0, 1.0])
        with pytest.raises(ConfigError, match="ascending"):
            load_config(path)

    def test_gamma_grid_flag(self):
        grid = parse_gamma_grid_flag("log:0.1:10:3")
        assert grid.shape == (3,)
        assert parse_gamma_grid_flag("0.5,1,2").tolist() == [0.5, 1.0, 2.0]
        with pytest.raises(ConfigError):
            parse_gamma_grid_flag("log:1:10")


@pytest.fixture(scope="module")
def rows_and_reports(setup):
    cfg = make_config(setup, "H2", [0.0, 2.0], 400, 31)
    return sweep(cfg)


class TestCsv:
    def test_sweep_roundtrip_exact(self, rows_and_reports):
        rows, _ = rows_and_reports
        records = [sweep_row_to_record(r) for r in rows]
        text = emit_csv(records, SWEEP_COLUMNS)
        parsed = parse_csv(text, SWEEP_COLUMNS)
        assert parsed == records

    def test_bounds_roundtrip_exact(self, rows_and_reports):
        _, reports = rows_and_reports
        records = [bound_report_to_record(r) for r in reports]
        text = emit_csv(records, BOUNDS_COLUMNS)
        assert parse_csv(text, BOUNDS_COLUMNS) == records

    def test_absent_branch_is_empty_cell(self, rows_and_reports):
        rows, _ = rows_and_reports
        rec = sweep_row_to_record(rows[0])  # gamma = 0: branch 1 empty
        assert rec["msl_cond_mse_k1"] is None
        line = emit_csv([rec], SWEEP_COLUMNS).splitlines()[1]
        assert ",," in line

    def test_header_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="header"):
            parse_csv("a,b\n1,2\n", ["x", "y"])


class TestSubcommands:
    def test_sweep_plot_end_to_end(self, tmp_path):
        cfg_path = _write_config(tmp_path, gamma_grid=[2.0], trials=100)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
        sweep_text = (out / "sweep.csv").read_text()
        assert len(sweep_text.splitlines()) == 2  # header + one row
        assert (out / "bounds.csv").exists()
        assert main(["plot", "--out", str(out), "--quiet"]) == 0
        svg = (out / "mse_vs_gamma.svg").read_text()
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert (out / "bias_vs_gamma.svg").exists()

    def test_plot_series_count(self, tmp_path):
        cfg_path = _write_config(tmp_path, gamma_grid=[0.5, 2.0, 8.0], trials=150)
        out = tmp_path / "out"
        main(["sweep", "--config", str(cfg_path), "--out", str(out), "--quiet"])
        main(["plot", "--out", str(out), "--quiet"])
        svg = (out / "mse_vs_gamma.svg").read_text()
        assert svg.count("<polyline") == 9  # 4 estimators + 3 PS-MCRBs + oracle + conventional
        bias_svg = (out / "bias_vs_gamma.svg").read_text()
        assert bias_svg.count("<polyline") == 4

    def test_plot_deterministic(self, tmp_path):
        cfg_path = _write_config(tmp_path, gamma_grid=[1.0, 4.0], trials=80)
        out = tmp_path / "out"
        main(["sweep", "--config", str(cfg_path), "--out", str(out), "--quiet"])
        main(["plot", "--out", str(out), "--quiet"])
        first = (out / "mse_vs_gamma.svg").read_bytes()
        main(["plot", "--out", str(out), "--quiet"])
        assert (out / "mse_vs_gamma.svg").read_bytes() == first

    def test_sweep_determinism_across_workers(self, tmp_path):
        cfg_path = _write_config(tmp_path, gamma_grid=[0.5, 2.0, 8.0], trials=500)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["sweep", "--config", str(cfg_path), "--out", str(out1), "--quiet"])
        main(["sweep", "--config", str(cfg_path), "--out", str(out2), "--quiet", "--workers", "4"])
        assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
        assert (out1 / "bounds.csv").read_bytes() == (out2 / "bounds.csv").read_bytes()

    def test_bounds_subcommand(self, tmp_path):
        cfg_path = _write_config(tmp_path, gamma_grid=[0.5, 2.0])
        out = tmp_path / "out"
        assert main(["bounds", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
        records = parse_csv((out / "bounds.csv").read_text(), BOUNDS_COLUMNS)
        assert len(records) == 2
        # free-mean oracle bound under H2: sigma^2 N = 4 at every threshold
        assert all(rec["oracle_crb_trace"] == 4.0 for rec in records)

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["sweep", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)])
        assert code == 2
        assert capsys.readouterr().err.startswith("error: config:")

    def test_malformed_config_exits_2_names_key(self, tmp_path, capsys):
        path = _write_config(tmp_path, gamma_grid=[2.0, 1.0])
        code = main(["sweep", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2
        assert "ascending" in capsys.readouterr().err

    def test_plot_missing_input_exits_2(self, tmp_path, capsys):
        code = main(["plot", "--out", str(tmp_path / "empty")])
        assert code == 2
        assert "missing input" in capsys.readouterr().err

    def test_plot_empty_csv_errors_without_writing(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / "sweep.csv").write_text(",".join(SWEEP_COLUMNS) + "\n")
        assert main(["plot", "--out", str(out), "--quiet"]) == 2
        assert not (out / "mse_vs_gamma.svg").exists()

    def test_numerical_failure_exits_3(self, tmp_path, monkeypatch, capsys):
        from psmcrb import cli as cli_mod
        from psmcrb.estimators import SolverError

        def boom(config, workers=1):
            raise SolverError("no sign change of g(s) found in (0, 1]")

        monkeypatch.setattr(cli_mod, "sweep", boom)
        cfg_path = _write_config(tmp_path)
        code = main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path), "--quiet"])
        assert code == 3
        assert capsys.readouterr().err.startswith("error: numerical:")

    def test_bounds_csv_matches_library_calls(self, tmp_path, setup):
        from psmcrb.bounds import build_bound_report
        from psmcrb.estimators import INTERPRETATIONS
        from psmcrb.linmodel import build_geometry

        cfg_path = _write_config(tmp_path, gamma_grid=[0.5, 2.0, 8.0])
        out = tmp_path / "out"
        main(["bounds", "--config", str(cfg_path), "--out", str(out), "--quiet"])
        records = parse_csv((out / "bounds.csv").read_text(), BOUNDS_COLUMNS)
        h, _, theta2 = setup
        geo = build_geometry(h)
        for rec in records:
            rep = build_bound_report(theta2, geo, 1.0, rec["gamma"], "H2")
            assert rec["p1"] == rep.p1
            for itp in INTERPRETATIONS:
                assert rec[f"{itp.value}_psmcrb_trace"] == rep.bounds[itp].trace


class TestSelfcheck:
    def test_all_pass(self):
        results = run_selfcheck(trials=25_000)
        assert all(r.passed for r in results)

    def test_cli_exit_zero(self, capsys):
        assert main(["selfcheck", "--trials", "25000"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_negative_control_wrong_derivative_sign(self, monkeypatch, capsys):
        # Injecting a sign error into the noncentrality derivative must trip
        # the derivative invariant and flip the exit code to 4.
        original = chi2.chi2_cdf_dlambda
        monkeypatch.setattr(chi2, "chi2_cdf_dlambda", lambda r, g, lam: -original(r, g, lam))
        assert main(["selfcheck", "--trials", "25000"]) == 4
        assert "FAIL" in capsys.readouterr().out

    def test_reduced_trials_widen_bands(self):
        # Statistical checks scale their bands with the trial count, so a
        # small run still passes.
        results = run_selfcheck(trials=20_000)
        assert all(r.passed for r in results)
