"""Command-line front end: config loading, CSV emission, charts, selfcheck.

Config schema (JSON object):

    H           N x M channel as a row-major nested list, or
                {"generate": {"seed": int, "N": int, "M": int}} to draw H
                (and the matching theta pair) once from standard Gaussians.
    sigma2      positive noise variance
    hypothesis  "H1" | "H2"
    theta1      length-M list or {"generate": {"seed": int}}  (used iff H1)
    theta2      length-N list or {"generate": {"seed": int}}  (used iff H2)
    gamma_grid  ascending list of thresholds, or
                {"log_range": {"min": float, "max": float, "count": int}}
    trials      positive trial count per threshold
    seed        unsigned 64-bit master seed

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 invariant failure (selfcheck).

CSV columns are frozen (see SWEEP_COLUMNS / BOUNDS_COLUMNS); floats are
written as shortest round-trip decimals, absent branch statistics as empty
fields, so parse(emit(rows)) == rows exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import chi2
from .bounds import BoundReport, SingularInformationError, build_bound_report
from .estimators import (
    INTERPRETATIONS,
    SolverError,
    VanishingDenominatorError,
)
from .linmodel import (
    ConfigError,
    ExperimentConfig,
    RankDeficiencyError,
    build_geometry,
    generate_standard_gaussian_setup,
)
from .moments import DegenerateSelectionError, ZeroAcceptanceError
from .montecarlo import ESTIMATOR_TAGS, SweepRow, sweep
from .pseudotrue import InsufficientAcceptanceError, PseudoTrueError
from .selfcheck import format_results, run_selfcheck
from .svg import ChartDataError, Series, line_chart

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

NUMERICAL_ERRORS = (
    chi2.ConvergenceError,
    SolverError,
    VanishingDenominatorError,
    DegenerateSelectionError,
    ZeroAcceptanceError,
    InsufficientAcceptanceError,
    PseudoTrueError,
    SingularInformationError,
    np.linalg.LinAlgError,
    ZeroDivisionError,
)

_PER_ESTIMATOR = ("mse_trace", "mse_se", "bias_l1", "bias_max_z",
                  "cond_mse_k1", "cond_mse_k1_se", "cond_mse_k2", "cond_mse_k2_se",
                  "solver_failures")
_PER_INTERPRETATION = ("psmcrb_trace", "mcrb_k1_trace", "mcrb_k2_trace")
_BENCH = ("oracle_crb_trace", "conventional_mcrb1_trace", "conventional_mcrb2_trace")

SWEEP_COLUMNS = (
    ["gamma", "trials", "p1_true", "p1_hat", "n_k1", "n_k2"]
    + [f"{tag}_{fieldname}" for tag in ESTIMATOR_TAGS for fieldname in _PER_ESTIMATOR]
    + [f"{itp.value}_{fieldname}" for itp in INTERPRETATIONS for fieldname in _PER_INTERPRETATION]
    + list(_BENCH)
)

BOUNDS_COLUMNS = (
    ["gamma", "p1", "p2"]
    + [f"{itp.value}_{fieldname}" for itp in INTERPRETATIONS for fieldname in _PER_INTERPRETATION]
    + list(_BENCH)
)

_INT_COLUMNS = {"trials", "n_k1", "n_k2"} | {f"{tag}_solver_failures" for tag in ESTIMATOR_TAGS}


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def _require(raw: dict, key: str):
    if key not in raw:
        raise ConfigError(f"missing required key '{key}'")
    return raw[key]


def _parse_channel(raw: dict) -> tuple[np.ndarray, int | None]:
    value = _require(raw, "H")
    if isinstance(value, dict):
        if set(value) != {"generate"} or not isinstance(value["generate"], dict):
            raise ConfigError("key 'H' must be a nested list or {\"generate\": {...}}")
        gen = value["generate"]
        for need in ("seed", "N", "M"):
            if need not in gen:
                raise ConfigError(f"key 'H.generate' is missing '{need}'")
        h, _, _ = generate_standard_gaussian_setup(int(gen["seed"]), int(gen["N"]), int(gen["M"]))
        return h, int(gen["seed"])
    try:
        h = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key 'H' is not a numeric matrix: {exc}") from None
    if h.ndim != 2:
        raise ConfigError(f"key 'H' must be a 2-D nested list, got ndim={h.ndim}")
    return h, None


def _parse_theta(raw: dict, key: str, n: int, m: int, index: int) -> np.ndarray | None:
    if key not in raw or raw[key] is None:
        return None
    value = raw[key]
    if isinstance(value, dict):
        if set(value) != {"generate"} or "seed" not in value["generate"]:
            raise ConfigError(f"key '{key}' must be a list or {{\"generate\": {{\"seed\": int}}}}")
        triple = generate_standard_gaussian_setup(int(value["generate"]["seed"]), n, m)
        return triple[index]
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key '{key}' is not a numeric vector: {exc}") from None


def _parse_gamma_grid(value) -> np.ndarray:
    if isinstance(value, dict):
        if set(value) != {"log_range"}:
            raise ConfigError("key 'gamma_grid' must be a list or {\"log_range\": {...}}")
        spec = value["log_range"]
        for need in ("min", "max", "count"):
            if need not in spec:
                raise ConfigError(f"key 'gamma_grid.log_range' is missing '{need}'")
        lo, hi, count = float(spec["min"]), float(spec["max"]), int(spec["count"])
        if not (0.0 < lo < hi) or count < 2:
            raise ConfigError("key 'gamma_grid.log_range' needs 0 < min < max and count >= 2")
        return np.geomspace(lo, hi, count)
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key 'gamma_grid' is not numeric: {exc}") from None


def parse_gamma_grid_flag(spec: str) -> np.ndarray:
    """--gamma-grid accepts 'log:MIN:MAX:COUNT' or a comma-separated list."""
    if spec.startswith("log:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError("--gamma-grid log form is log:MIN:MAX:COUNT")
        return _parse_gamma_grid({"log_range": {"min": parts[1], "max": parts[2], "count": parts[3]}})
    try:
        return np.array([float(tok) for tok in spec.split(",") if tok.strip()])
    except ValueError as exc:
        raise ConfigError(f"--gamma-grid list is not numeric: {exc}") from None


def load_config(path: str | Path, trials: int | None = None, seed: int | None = None,
                gamma_grid: np.ndarray | None = None) -> ExperimentConfig:
    """Load and validate a JSON experiment config, applying CLI overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    known = {"H", "sigma2", "hypothesis", "theta1", "theta2", "gamma_grid",
             "trials", "seed", "label"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    h, _ = _parse_channel(raw)
    n, m = h.shape
    hypothesis = _require(raw, "hypothesis")
    theta1 = _parse_theta(raw, "theta1", n, m, 1)
    theta2 = _parse_theta(raw, "theta2", n, m, 2)
    grid = gamma_grid if gamma_grid is not None else _parse_gamma_grid(_require(raw, "gamma_grid"))
    try:
        return ExperimentConfig(
            h=h,
            sigma2=float(_require(raw, "sigma2")),
            true_hypothesis=hypothesis,
            theta1_true=theta1,
            theta2_true=theta2,
            gamma_grid=grid,
            trials=int(trials if trials is not None else _require(raw, "trials")),
            master_seed=int(seed if seed is not None else _require(raw, "seed")),
            label=str(raw.get("label", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# CSV emission / parsing
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def sweep_row_to_record(row: SweepRow) -> dict:
    rec = {
        "gamma": row.gamma_thr, "trials": row.trials,
        "p1_true": row.p1_true, "p1_hat": row.p1_hat,
        "n_k1": row.n_k1, "n_k2": row.n_k2,
    }
    for tag in ESTIMATOR_TAGS:
        st = row.estimators[tag]
        rec.update({
            f"{tag}_mse_trace": st.mse_trace, f"{tag}_mse_se": st.mse_se,
            f"{tag}_bias_l1": st.bias_l1, f"{tag}_bias_max_z": st.bias_max_z,
            f"{tag}_cond_mse_k1": st.cond_mse_k1, f"{tag}_cond_mse_k1_se": st.cond_mse_k1_se,
            f"{tag}_cond_mse_k2": st.cond_mse_k2, f"{tag}_cond_mse_k2_se": st.cond_mse_k2_se,
            f"{tag}_solver_failures": st.solver_failures,
        })
    for itp in INTERPRETATIONS:
        rec[f"{itp.value}_psmcrb_trace"] = row.psmcrb_trace[itp]
        rec[f"{itp.value}_mcrb_k1_trace"] = row.mcrb_k1_trace[itp]
        rec[f"{itp.value}_mcrb_k2_trace"] = row.mcrb_k2_trace[itp]
    rec["oracle_crb_trace"] = row.oracle_crb_trace
    rec["conventional_mcrb1_trace"] = row.conventional_mcrb1_trace
    rec["conventional_mcrb2_trace"] = row.conventional_mcrb2_trace
    return rec


def bound_report_to_record(report: BoundReport) -> dict:
    rec = {"gamma": report.gamma_thr, "p1": report.p1, "p2": report.p2}
    for itp in INTERPRETATIONS:
        ib = report.bounds[itp]
        rec[f"{itp.value}_psmcrb_trace"] = ib.trace
        rec[f"{itp.value}_mcrb_k1_trace"] = (
            None if ib.mcrb_k1 is None else float(np.trace(ib.mcrb_k1)))
        rec[f"{itp.value}_mcrb_k2_trace"] = (
            None if ib.mcrb_k2 is None else float(np.trace(ib.mcrb_k2)))
    rec["oracle_crb_trace"] = report.oracle_crb_trace
    rec["conventional_mcrb1_trace"] = report.conventional_mcrb1_trace
    rec["conventional_mcrb2_trace"] = report.conventional_mcrb2_trace
    return rec


def emit_csv(records: list[dict], columns: list[str]) -> str:
    lines = [",".join(columns)]
    for rec in records:
        lines.append(",".join(_cell(rec[c]) for c in columns))
    return "\n".join(lines) + "\n"


def parse_csv(text: str, columns: list[str]) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise ConfigError("CSV input is empty")
    header = lines[0].split(",")
    if header != columns:
        raise ConfigError(f"CSV header mismatch: expected {columns[:3]}..., got {header[:3]}...")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(columns):
            raise ConfigError(f"CSV row has {len(cells)} cells, expected {len(columns)}")
        rec = {}
        for col, cell in zip(columns, cells):
            if cell == "":
                rec[col] = None
            elif col in _INT_COLUMNS:
                rec[col] = int(cell)
            else:
                rec[col] = float(cell)
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def cmd_sweep(args) -> int:
    grid = parse_gamma_grid_flag(args.gamma_grid) if args.gamma_grid else None
    config = load_config(args.config, trials=args.trials, seed=args.seed, gamma_grid=grid)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, reports = sweep(config, workers=args.workers)
    sweep_path = out_dir / "sweep.csv"
    bounds_path = out_dir / "bounds.csv"
    sweep_path.write_text(emit_csv([sweep_row_to_record(r) for r in rows], SWEEP_COLUMNS))
    bounds_path.write_text(emit_csv([bound_report_to_record(r) for r in reports], BOUNDS_COLUMNS))
    _say(args, f"wrote {sweep_path} and {bounds_path} "
               f"({len(rows)} thresholds x {config.trials} trials)")
    return EXIT_OK


def cmd_bounds(args) -> int:
    grid = parse_gamma_grid_flag(args.gamma_grid) if args.gamma_grid else None
    config = load_config(args.config, trials=args.trials, seed=args.seed, gamma_grid=grid)
    geo = build_geometry(config.h)
    reports = [
        build_bound_report(config.phi, geo, config.sigma2, float(g), config.true_hypothesis)
        for g in config.gamma_grid
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bounds_path = out_dir / "bounds.csv"
    bounds_path.write_text(emit_csv([bound_report_to_record(r) for r in reports], BOUNDS_COLUMNS))
    _say(args, f"wrote {bounds_path} ({len(reports)} thresholds)")
    return EXIT_OK


def _pick_conventional(records: list[dict]) -> str:
    # The interesting conventional curve is the anti-oracle one: the branch
    # whose trace differs from the oracle CRB (the other coincides with it).
    gap1 = abs(records[0]["conventional_mcrb1_trace"] - records[0]["oracle_crb_trace"])
    gap2 = abs(records[0]["conventional_mcrb2_trace"] - records[0]["oracle_crb_trace"])
    return "conventional_mcrb1_trace" if gap1 > gap2 else "conventional_mcrb2_trace"


def cmd_plot(args) -> int:
    sweep_path = Path(args.out) / "sweep.csv"
    if not sweep_path.exists():
        raise ConfigError(f"missing input: {sweep_path} (run the sweep subcommand first)")
    records = parse_csv(sweep_path.read_text(), SWEEP_COLUMNS)
    if not records:
        raise ConfigError(f"{sweep_path} holds no data rows")
    gammas = tuple(rec["gamma"] for rec in records)
    log_x = min(gammas) > 0.0 and max(gammas) / min(gammas) > 100.0

    conv_col = _pick_conventional(records)
    conv_label = "conventional MCRB (assume 1)" if conv_col.endswith("1_trace") \
        else "conventional MCRB (assume 2)"

    def col(name: str) -> tuple[float, ...]:
        return tuple(rec[name] for rec in records)

    mse_series = [
        Series("MSL", gammas, col("msl_mse_trace"), dashed=True),
        Series("MSNL", gammas, col("msnl_mse_trace"), dashed=True),
        Series("PSML", gammas, col("psml_mse_trace"), dashed=True),
        Series("oracle ML", gammas, col("oracle_mse_trace"), dashed=True),
        Series("PS-MCRB (naive)", gammas, col("naive_psmcrb_trace")),
        Series("PS-MCRB (normalized)", gammas, col("normalized_psmcrb_trace")),
        Series("PS-MCRB (selective)", gammas, col("selective_psmcrb_trace")),
        Series("oracle CRB", gammas, col("oracle_crb_trace")),
        Series(conv_label, gammas, col(conv_col)),
    ]
    bias_series = [
        Series("MSL", gammas, col("msl_bias_l1"), dashed=True),
        Series("MSNL", gammas, col("msnl_bias_l1"), dashed=True),
        Series("PSML", gammas, col("psml_bias_l1"), dashed=True),
        Series("oracle ML", gammas, col("oracle_bias_l1"), dashed=True),
    ]
    out_dir = Path(args.out)
    mse_svg = line_chart(mse_series, "MSE trace vs selection threshold", "threshold",
                         "trace MSE", log_x=log_x, log_y=not args.linear_y)
    bias_svg = line_chart(bias_series, "l1 bias vs selection threshold", "threshold",
                          "l1 bias", log_x=log_x, log_y=False)
    (out_dir / "mse_vs_gamma.svg").write_text(mse_svg)
    (out_dir / "bias_vs_gamma.svg").write_text(bias_svg)
    _say(args, f"wrote {out_dir / 'mse_vs_gamma.svg'} and {out_dir / 'bias_vs_gamma.svg'}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(trials=args.trials if args.trials else 200_000)
    if not args.quiet:
        print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psmcrb",
        description="Post-selection estimators and misspecified Cramer-Rao bounds "
                    "for a Gaussian linear model with GLRT detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON experiment config")
            p.add_argument("--gamma-grid", default=None,
                           help="override grid: 'log:MIN:MAX:COUNT' or comma list")
            p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--trials", type=int, default=None, help="override trial count")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo sweep: writes sweep.csv and bounds.csv")
    common(p_sweep)
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="threads over thresholds (output is identical for any value)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_bounds = sub.add_parser("bounds", help="bound curves only (no sampling): writes bounds.csv")
    common(p_bounds)
    p_bounds.set_defaults(func=cmd_bounds)

    p_plot = sub.add_parser("plot", help="render SVG charts from sweep.csv")
    common(p_plot, needs_config=False)
    p_plot.add_argument("--linear-y", action="store_true",
                        help="linear (not log) MSE ordinate")
    p_plot.set_defaults(func=cmd_plot)

    p_check = sub.add_parser("selfcheck", help="run the module invariant suites")
    common(p_check, needs_config=False)
    p_check.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RankDeficiencyError, ChartDataError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
