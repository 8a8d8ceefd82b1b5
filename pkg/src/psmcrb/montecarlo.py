"""Seeded Monte-Carlo trial engine for MSE/bias curves versus the threshold.

Reproducibility contract (frozen):

* Trial t of threshold index g lives in block b = t // 4096, row t % 4096.
* Block noise comes from a counter-based Philox stream keyed by
  (master_seed, g << 32 | b); the full 4096 x N block is always drawn and
  sliced, so an observation depends only on (master_seed, g, t) - never on
  the total trial count or on how work is partitioned.
* Aggregation reduces per-trial arrays in trial-index order, so results
  are bit-identical for any worker count.

Per-estimator conditional kth-MSE is measured about the pseudo-true vector
of the estimator's own interpretation (MSL-naive, MSNL-normalized,
PSML-selective); the oracle ML has no interpretation and its conditional
MSE is measured about phi in phi-space.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundReport, build_bound_report
from .estimators import Interpretation, solve_shrinkage_batch
from .linmodel import (
    ExperimentConfig,
    ModelGeometry,
    glrt_statistic,
    noncentrality,
    true_selection_probs,
)
from .moments import DEGENERATE_PROB
from .pseudotrue import pseudo_true

BLOCK = 4096

ESTIMATOR_TAGS = ("msl", "msnl", "psml", "oracle")

# Which interpretation's pseudo-true vector each estimator is measured
# against in the conditional kth-MSE columns.
ESTIMATOR_INTERPRETATION = {
    "msl": Interpretation.NAIVE,
    "msnl": Interpretation.NORMALIZED,
    "psml": Interpretation.SELECTIVE,
}


@dataclass(frozen=True)
class TrialRecord:
    """One Monte-Carlo trial: selection and all estimates of phi."""

    trial_index: int
    selected_k: int
    phi_hat: dict[str, np.ndarray]
    theta_hat: dict[str, np.ndarray]
    solver_failed: dict[str, bool]


@dataclass(frozen=True)
class EstimatorStats:
    """Aggregated statistics for one estimator at one threshold."""

    mse_trace: float
    mse_se: float
    bias: np.ndarray
    bias_se: np.ndarray
    bias_l1: float
    bias_max_z: float
    cond_mse_k1: float | None
    cond_mse_k1_se: float | None
    cond_mse_k2: float | None
    cond_mse_k2_se: float | None
    solver_failures: int


@dataclass(frozen=True)
class SweepRow:
    """Aggregated per-threshold statistics plus bound traces."""

    gamma_thr: float
    trials: int
    p1_true: float
    p1_hat: float
    n_k1: int
    n_k2: int
    estimators: dict[str, EstimatorStats]
    psmcrb_trace: dict[Interpretation, float]
    mcrb_k1_trace: dict[Interpretation, float | None]
    mcrb_k2_trace: dict[Interpretation, float | None]
    oracle_crb_trace: float
    conventional_mcrb1_trace: float
    conventional_mcrb2_trace: float


# ---------------------------------------------------------------------------
# Observation blocks
# ---------------------------------------------------------------------------

def _block_key(master_seed: int, gamma_index: int, block_index: int) -> np.ndarray:
    if not 0 <= gamma_index < 2**32 or not 0 <= block_index < 2**32:
        raise ValueError("gamma/block index out of the 32-bit keying range")
    return np.array([master_seed, (gamma_index << 32) | block_index], dtype=np.uint64)


def observation_block(config: ExperimentConfig, gamma_index: int, block_index: int) -> np.ndarray:
    """The full BLOCK x N observation block for one (threshold, block) pair."""
    key = _block_key(int(config.master_seed), gamma_index, block_index)
    gen = np.random.Generator(np.random.Philox(key=key))
    noise = gen.standard_normal((BLOCK, config.h.shape[0]))
    return config.phi + np.sqrt(config.sigma2) * noise


def _observations(config: ExperimentConfig, gamma_index: int) -> np.ndarray:
    trials = config.trials
    n_blocks = (trials + BLOCK - 1) // BLOCK
    parts = [observation_block(config, gamma_index, b) for b in range(n_blocks)]
    return np.concatenate(parts, axis=0)[:trials]


# ---------------------------------------------------------------------------
# Vectorized per-threshold evaluation
# ---------------------------------------------------------------------------

@dataclass
class _TrialArrays:
    """Per-trial quantities for one threshold, rows in trial order."""

    stat: np.ndarray
    selected: np.ndarray                      # int, 1 or 2
    phi_hat: dict[str, np.ndarray]            # (trials, N)
    theta1_hat: np.ndarray                    # (trials, M); valid on k=1 rows
    theta2_hat: dict[str, np.ndarray]         # (trials, N); valid on k=2 rows
    solver_failed: dict[str, np.ndarray] = field(default_factory=dict)


def _evaluate_batch(x: np.ndarray, config: ExperimentConfig, geo: ModelGeometry,
                    gamma_thr: float) -> _TrialArrays:
    """Selection and all four estimators over an observation batch."""
    sigma2 = config.sigma2
    stat = glrt_statistic(x, geo, sigma2)
    k2 = stat > gamma_thr
    selected = np.where(k2, 2, 1)

    x_col = x @ geo.p_col
    x_perp = x @ geo.p_perp
    theta1_hat = x @ geo.h_pinv.T

    phi_hat = {"msl": np.where(k2[:, None], x, x_col)}
    theta2_hat = {"msl": x}
    failed = {}
    for tag, denom in (("msnl", Interpretation.NORMALIZED),
                       ("psml", Interpretation.SELECTIVE)):
        s = np.ones(x.shape[0])
        fail = np.zeros(x.shape[0], dtype=bool)
        if np.any(k2):
            s_k2, fail_k2 = solve_shrinkage_batch(stat[k2], geo.r, gamma_thr, denom)
            s[k2] = s_k2
            fail[k2] = fail_k2
        theta2 = x_col + s[:, None] * x_perp
        theta2_hat[tag] = theta2
        phi_hat[tag] = np.where(k2[:, None], theta2, x_col)
        failed[tag] = fail

    oracle = x_col if config.true_hypothesis == "H1" else x
    phi_hat["oracle"] = oracle
    theta2_hat["oracle"] = oracle
    failed["msl"] = np.zeros(x.shape[0], dtype=bool)
    failed["oracle"] = np.zeros(x.shape[0], dtype=bool)
    return _TrialArrays(stat=stat, selected=selected, phi_hat=phi_hat,
                        theta1_hat=theta1_hat, theta2_hat=theta2_hat,
                        solver_failed=failed)


def _evaluate_trials(config: ExperimentConfig, geo: ModelGeometry, gamma_index: int,
                     gamma_thr: float) -> _TrialArrays:
    return _evaluate_batch(_observations(config, gamma_index), config, geo, gamma_thr)


def run_trial(config: ExperimentConfig, geo: ModelGeometry, gamma_index: int,
              trial_index: int) -> TrialRecord:
    """One trial, reconstructed from its block; deterministic in
    (master_seed, gamma_index, trial_index)."""
    if not 0 <= trial_index < config.trials:
        raise ValueError(f"trial index {trial_index} out of range")
    gamma_thr = float(config.gamma_grid[gamma_index])
    block = observation_block(config, gamma_index, trial_index // BLOCK)
    x = block[trial_index % BLOCK]
    arrays = _evaluate_batch(x[None, :], config, geo, gamma_thr)
    k = int(arrays.selected[0])
    phi_hat = {tag: arrays.phi_hat[tag][0] for tag in ESTIMATOR_TAGS}
    theta_hat = {}
    for tag in ESTIMATOR_TAGS:
        if tag == "oracle":
            theta_hat[tag] = arrays.theta2_hat[tag][0]
        else:
            theta_hat[tag] = arrays.theta1_hat[0] if k == 1 else arrays.theta2_hat[tag][0]
    solver_failed = {tag: bool(arrays.solver_failed[tag][0]) for tag in ESTIMATOR_TAGS}
    return TrialRecord(trial_index=trial_index, selected_k=k, phi_hat=phi_hat,
                       theta_hat=theta_hat, solver_failed=solver_failed)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _branch_stats(sq_err: np.ndarray, mask: np.ndarray) -> tuple[float | None, float | None]:
    n = int(np.count_nonzero(mask))
    if n == 0:
        return None, None
    vals = sq_err[mask]
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return mean, se


def _aggregate_arrays(arrays: _TrialArrays, config: ExperimentConfig, geo: ModelGeometry,
                      gamma_thr: float) -> SweepRow:
    phi = config.phi
    sigma2 = config.sigma2
    lam = noncentrality(phi, geo, sigma2)
    p1, _ = true_selection_probs(lam, gamma_thr, geo.r)
    k1_mask = arrays.selected == 1
    k2_mask = ~k1_mask
    n_k1 = int(np.count_nonzero(k1_mask))
    n_k2 = int(np.count_nonzero(k2_mask))
    trials = arrays.selected.shape[0]

    # Pseudo-true vectors per interpretation; absent on degenerate branches.
    vartheta: dict[Interpretation, dict[int, np.ndarray | None]] = {}
    for itp in ESTIMATOR_INTERPRETATION.values():
        per_k: dict[int, np.ndarray | None] = {}
        for k in (1, 2):
            p_k = p1 if k == 1 else 1.0 - p1
            if p_k <= DEGENERATE_PROB:
                per_k[k] = None
            else:
                per_k[k] = pseudo_true(itp, k, phi, geo, sigma2, gamma_thr)
        vartheta[itp] = per_k

    stats: dict[str, EstimatorStats] = {}
    for tag in ESTIMATOR_TAGS:
        err = arrays.phi_hat[tag] - phi
        sq = np.einsum("ti,ti->t", err, err)
        mse = float(sq.mean())
        mse_se = float(sq.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("inf")
        bias = err.mean(axis=0)
        bias_se = err.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.full(geo.n, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(bias_se > 0, np.abs(bias) / bias_se, np.inf)
        if tag == "oracle":
            cond_sq = np.einsum("ti,ti->t", arrays.phi_hat[tag] - phi, arrays.phi_hat[tag] - phi)
            c1, c1se = _branch_stats(cond_sq, k1_mask)
            c2, c2se = _branch_stats(cond_sq, k2_mask)
        else:
            itp = ESTIMATOR_INTERPRETATION[tag]
            vt1, vt2 = vartheta[itp][1], vartheta[itp][2]
            if vt1 is None:
                c1, c1se = None, None
            else:
                d1 = arrays.theta1_hat - vt1
                c1, c1se = _branch_stats(np.einsum("ti,ti->t", d1, d1), k1_mask)
            if vt2 is None:
                c2, c2se = None, None
            else:
                d2 = arrays.theta2_hat[tag] - vt2
                c2, c2se = _branch_stats(np.einsum("ti,ti->t", d2, d2), k2_mask)
        stats[tag] = EstimatorStats(
            mse_trace=mse, mse_se=mse_se, bias=bias, bias_se=bias_se,
            bias_l1=float(np.abs(bias).sum()), bias_max_z=float(z.max()),
            cond_mse_k1=c1, cond_mse_k1_se=c1se,
            cond_mse_k2=c2, cond_mse_k2_se=c2se,
            solver_failures=int(arrays.solver_failed[tag].sum()),
        )

    report = build_bound_report(phi, geo, sigma2, gamma_thr, config.true_hypothesis)
    psmcrb = {itp: report.bounds[itp].trace for itp in report.bounds}
    mk1 = {itp: (None if report.bounds[itp].mcrb_k1 is None
                 else float(np.trace(report.bounds[itp].mcrb_k1))) for itp in report.bounds}
    mk2 = {itp: (None if report.bounds[itp].mcrb_k2 is None
                 else float(np.trace(report.bounds[itp].mcrb_k2))) for itp in report.bounds}
    return SweepRow(
        gamma_thr=gamma_thr, trials=trials, p1_true=p1,
        p1_hat=n_k1 / trials, n_k1=n_k1, n_k2=n_k2,
        estimators=stats, psmcrb_trace=psmcrb,
        mcrb_k1_trace=mk1, mcrb_k2_trace=mk2,
        oracle_crb_trace=report.oracle_crb_trace,
        conventional_mcrb1_trace=report.conventional_mcrb1_trace,
        conventional_mcrb2_trace=report.conventional_mcrb2_trace,
    )


def _records_to_arrays(records: list[TrialRecord], geo: ModelGeometry) -> _TrialArrays:
    records = sorted(records, key=lambda rec: rec.trial_index)
    trials = len(records)
    selected = np.array([rec.selected_k for rec in records])
    stat = np.zeros(trials)
    phi_hat = {tag: np.stack([rec.phi_hat[tag] for rec in records]) for tag in ESTIMATOR_TAGS}
    theta1 = np.zeros((trials, geo.m))
    theta2 = {tag: np.zeros((trials, geo.n)) for tag in ESTIMATOR_TAGS}
    failed = {tag: np.array([rec.solver_failed[tag] for rec in records]) for tag in ESTIMATOR_TAGS}
    for i, rec in enumerate(records):
        for tag in ESTIMATOR_TAGS:
            if tag == "oracle":
                theta2[tag][i] = rec.theta_hat[tag]
            elif rec.selected_k == 1:
                theta1[i] = rec.theta_hat[tag]
            else:
                theta2[tag][i] = rec.theta_hat[tag]
    return _TrialArrays(stat=stat, selected=selected, phi_hat=phi_hat,
                        theta1_hat=theta1, theta2_hat=theta2, solver_failed=failed)


def aggregate(records: list[TrialRecord], config: ExperimentConfig,
              gamma_thr: float) -> SweepRow:
    """Aggregate a list of trial records into one SweepRow."""
    if not records:
        raise ValueError("aggregate needs at least one trial record")
    geo = config.geometry()
    return _aggregate_arrays(_records_to_arrays(records, geo), config, geo, gamma_thr)


def empirical_psms_bias(records: list[TrialRecord], estimator_tag: str, k: int,
                        pseudotrue_vec: np.ndarray) -> np.ndarray:
    """Conditional mean of theta_hat_k minus the supplied pseudo-true vector."""
    sel = [rec.theta_hat[estimator_tag] for rec in records if rec.selected_k == k]
    if not sel:
        raise ValueError(f"no trial selected model {k}")
    return np.stack(sel).mean(axis=0) - np.asarray(pseudotrue_vec, dtype=float)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def sweep(config: ExperimentConfig, workers: int = 1) -> tuple[list[SweepRow], list[BoundReport]]:
    """One SweepRow and BoundReport per threshold in the grid.

    Output is bit-identical for any `workers` value: every trial's stream
    is keyed by its own indices and aggregation is an ordered reduction.
    """
    geo = config.geometry()

    def one(gamma_index: int) -> tuple[SweepRow, BoundReport]:
        gamma_thr = float(config.gamma_grid[gamma_index])
        arrays = _evaluate_trials(config, geo, gamma_index, gamma_thr)
        row = _aggregate_arrays(arrays, config, geo, gamma_thr)
        report = build_bound_report(config.phi, geo, config.sigma2, gamma_thr,
                                    config.true_hypothesis)
        return row, report

    indices = range(len(config.gamma_grid))
    if workers <= 1:
        results = [one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, indices))
    rows = [row for row, _ in results]
    reports = [rep for _, rep in results]
    return rows, reports
