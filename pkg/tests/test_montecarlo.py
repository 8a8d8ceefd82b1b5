"""Trial engine tests: determinism, replay, aggregation identities,
selection frequencies, and conditional-bias diagnostics."""

import math

import numpy as np
import pytest

from psmcrb.estimators import Interpretation
from psmcrb.linmodel import noncentrality, true_selection_probs
from psmcrb.montecarlo import (
    ESTIMATOR_TAGS,
    aggregate,
    empirical_psms_bias,
    observation_block,
    run_trial,
    sweep,
)
from psmcrb.pseudotrue import pseudo_true

from conftest import SIGMA2, make_config


@pytest.fixture(scope="module")
def small_h2(setup):
    return make_config(setup, "H2", [0.2, 2.0, 8.0], 1500, 777)


@pytest.fixture(scope="module")
def small_h2_records(small_h2):
    geo = small_h2.geometry()
    return [run_trial(small_h2, geo, 1, t) for t in range(small_h2.trials)]


class TestRunTrial:
    def test_tiny_noise_under_h1_recovers_phi(self, setup):
        # The statistic is scale-free (central chi^2_r under H1 at any
        # sigma), so near-certain selection of model 1 needs gamma well
        # above typical chi^2_r draws; every estimate collapses to phi.
        h, theta1, theta2 = setup
        from psmcrb.linmodel import ExperimentConfig
        cfg = ExperimentConfig(h=h, sigma2=1e-18, true_hypothesis="H1",
                               theta1_true=theta1, theta2_true=theta2,
                               gamma_grid=np.array([40.0]), trials=4, master_seed=5)
        geo = cfg.geometry()
        for t in range(4):
            rec = run_trial(cfg, geo, 0, t)
            assert rec.selected_k == 1
            for tag in ESTIMATOR_TAGS:
                assert np.abs(rec.phi_hat[tag] - cfg.phi).max() <= 1e-6

    def test_gamma_zero_everything_is_observation(self, setup):
        cfg = make_config(setup, "H2", [0.0], 8, 9)
        geo = cfg.geometry()
        for t in range(8):
            rec = run_trial(cfg, geo, 0, t)
            assert rec.selected_k == 2
            x = rec.phi_hat["msl"]
            for tag in ("msnl", "psml", "oracle"):
                assert np.abs(rec.phi_hat[tag] - x).max() <= 1e-10

    def test_replay_identical(self, small_h2):
        geo = small_h2.geometry()
        a = run_trial(small_h2, geo, 1, 1234)
        b = run_trial(small_h2, geo, 1, 1234)
        assert a.selected_k == b.selected_k
        for tag in ESTIMATOR_TAGS:
            assert np.array_equal(a.phi_hat[tag], b.phi_hat[tag])
            assert np.array_equal(a.theta_hat[tag], b.theta_hat[tag])

    def test_observation_depends_only_on_indices(self, setup):
        # Changing the trial count must not move earlier observations.
        cfg_a = make_config(setup, "H2", [1.0], 100, 3)
        cfg_b = make_config(setup, "H2", [1.0], 5000, 3)
        assert np.array_equal(observation_block(cfg_a, 0, 0), observation_block(cfg_b, 0, 0))

    def test_out_of_range(self, small_h2):
        with pytest.raises(ValueError):
            run_trial(small_h2, small_h2.geometry(), 0, small_h2.trials)


class TestAggregate:
    def test_oracle_mse_near_crb(self, small_h2, small_h2_records):
        row = aggregate(small_h2_records, small_h2, float(small_h2.gamma_grid[1]))
        st = row.estimators["oracle"]
        assert abs(st.mse_trace - 4.0 * SIGMA2) <= 4.0 * st.mse_se

    def test_empirical_selection_probability(self, small_h2, small_h2_records):
        row = aggregate(small_h2_records, small_h2, float(small_h2.gamma_grid[1]))
        p1 = row.p1_true
        band = 4.0 * math.sqrt(p1 * (1.0 - p1) / row.trials)
        assert abs(row.p1_hat - p1) <= band

    def test_branch_decomposition_identity(self, small_h2, small_h2_records):
        # Law of total expectation on the empirical measure, about phi.
        phi = small_h2.phi
        row = aggregate(small_h2_records, small_h2, float(small_h2.gamma_grid[1]))
        for tag in ESTIMATOR_TAGS:
            sq = {1: [], 2: []}
            for rec in small_h2_records:
                err = rec.phi_hat[tag] - phi
                sq[rec.selected_k].append(float(err @ err))
            total = (sum(sq[1]) + sum(sq[2])) / row.trials
            assert abs(total - row.estimators[tag].mse_trace) <= 1e-10

    def test_empty_branch_absent(self, setup):
        cfg = make_config(setup, "H2", [0.0], 50, 11)
        geo = cfg.geometry()
        records = [run_trial(cfg, geo, 0, t) for t in range(50)]
        row = aggregate(records, cfg, 0.0)
        assert row.n_k1 == 0
        assert row.estimators["msl"].cond_mse_k1 is None
        assert row.estimators["msl"].cond_mse_k2 is not None

    def test_requires_records(self, small_h2):
        with pytest.raises(ValueError):
            aggregate([], small_h2, 1.0)


class TestSweep:
    def test_single_threshold_single_row(self, setup):
        cfg = make_config(setup, "H2", [2.0], 500, 13)
        rows, reports = sweep(cfg)
        assert len(rows) == 1 and len(reports) == 1
        assert rows[0].gamma_thr == 2.0

    def test_deterministic_and_worker_independent(self, setup):
        cfg = make_config(setup, "H2", [0.5, 2.0, 8.0], 3000, 15)
        rows_a, _ = sweep(cfg)
        rows_b, _ = sweep(cfg)
        rows_c, _ = sweep(cfg, workers=3)
        for a, b, c in zip(rows_a, rows_b, rows_c):
            assert a.p1_hat == b.p1_hat == c.p1_hat
            for tag in ESTIMATOR_TAGS:
                assert a.estimators[tag].mse_trace == b.estimators[tag].mse_trace
                assert a.estimators[tag].mse_trace == c.estimators[tag].mse_trace
                assert np.array_equal(a.estimators[tag].bias, c.estimators[tag].bias)

    def test_matches_per_trial_records(self, small_h2, small_h2_records):
        rows, _ = sweep(small_h2)
        row_records = aggregate(small_h2_records, small_h2, float(small_h2.gamma_grid[1]))
        assert rows[1].estimators["psml"].mse_trace == pytest.approx(
            row_records.estimators["psml"].mse_trace, abs=1e-12)
        assert rows[1].n_k1 == row_records.n_k1

    def test_selection_probability_across_grid(self, setup, geo, phi_h2):
        cfg = make_config(setup, "H2", np.geomspace(0.3, 20.0, 6), 30_000, 17)
        rows, _ = sweep(cfg)
        lam = noncentrality(phi_h2, geo, SIGMA2)
        for row in rows:
            p1, _ = true_selection_probs(lam, row.gamma_thr, geo.r)
            band = 4.0 * math.sqrt(max(p1 * (1.0 - p1), 1e-12) / row.trials)
            assert abs(row.p1_hat - p1) <= band


class TestPsmsBias:
    def test_msl_conditional_mean_is_branch_average(self, small_h2, small_h2_records):
        # theta_hat = x on the k=2 branch, so the empirical conditional mean
        # about any reference equals the branch sample average exactly.
        xs = [rec.theta_hat["msl"] for rec in small_h2_records if rec.selected_k == 2]
        ref = np.zeros(4)
        bias = empirical_psms_bias(small_h2_records, "msl", 2, ref)
        assert np.array_equal(bias, np.stack(xs).mean(axis=0))

    @pytest.mark.parametrize("tag,itp,k", [
        ("msl", Interpretation.NAIVE, 2),
        ("psml", Interpretation.SELECTIVE, 1),
        ("msnl", Interpretation.NORMALIZED, 1),
    ])
    def test_matched_interpretation_unbiased(self, small_h2, small_h2_records,
                                             geo, phi_h2, tag, itp, k):
        gamma_thr = float(small_h2.gamma_grid[1])
        vt = pseudo_true(itp, k, phi_h2, geo, SIGMA2, gamma_thr)
        bias = empirical_psms_bias(small_h2_records, tag, k, vt)
        n_k = sum(rec.selected_k == k for rec in small_h2_records)
        band = 4.0 * math.sqrt(2.0 * SIGMA2 / n_k)  # conservative per-component SE
        assert np.abs(bias).max() <= band

    def test_mismatched_interpretation_biased(self, small_h2, small_h2_records, geo, phi_h2):
        # MSL measured against the selective pseudo-true (phi) is visibly
        # biased at an interior threshold: E[x | k=2] = mu_2 != phi.
        gamma_thr = float(small_h2.gamma_grid[1])
        vt = pseudo_true(Interpretation.SELECTIVE, 2, phi_h2, geo, SIGMA2, gamma_thr)
        bias = empirical_psms_bias(small_h2_records, "msl", 2, vt)
        n_k2 = sum(rec.selected_k == 2 for rec in small_h2_records)
        se = math.sqrt(2.0 * SIGMA2 / n_k2)
        assert np.abs(bias).max() > 4.0 * se

    def test_empty_branch_raises(self, setup):
        cfg = make_config(setup, "H2", [0.0], 20, 19)
        geo = cfg.geometry()
        records = [run_trial(cfg, geo, 0, t) for t in range(20)]
        with pytest.raises(ValueError):
            empirical_psms_bias(records, "msl", 1, np.zeros(2))
