"""Geometry, GLRT, selection probabilities, sampling, and config validation."""

import math

import numpy as np
import pytest

from psmcrb import chi2
from psmcrb.linmodel import (
    ConfigError,
    ExperimentConfig,
    RankDeficiencyError,
    assumed_selection_prob,
    build_geometry,
    generate_standard_gaussian_setup,
    glrt_select,
    glrt_statistic,
    noncentrality,
    sample_observation,
    sample_observations,
    true_selection_probs,
)

from conftest import SIGMA2, make_config


class TestGeometry:
    def test_axis_aligned_column(self):
        geo = build_geometry(np.array([[1.0], [0.0]]))
        assert np.allclose(geo.p_perp, [[0.0, 0.0], [0.0, 1.0]], atol=1e-14)
        assert geo.r == 1

    def test_hand_least_squares(self):
        geo = build_geometry(np.array([[1.0], [1.0]]))
        assert np.allclose(geo.p_perp, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-14)

    def test_annihilates_columns(self):
        rng = np.random.default_rng(5)
        h = rng.standard_normal((4, 2))
        geo = build_geometry(h)
        assert np.abs(geo.p_perp @ h).max() <= 1e-12

    @pytest.mark.parametrize("n,m", [(4, 2), (6, 3), (3, 1)])
    def test_projection_invariants(self, n, m):
        rng = np.random.default_rng(n * 10 + m)
        geo = build_geometry(rng.standard_normal((n, m)))
        pp = geo.p_perp
        assert np.abs(pp - pp.T).max() <= 1e-10
        assert np.abs(pp @ pp - pp).max() <= 1e-10
        assert np.abs(pp @ geo.h).max() <= 1e-10
        assert np.trace(pp) == pytest.approx(n - m, abs=1e-8)

    def test_rank_deficiency(self):
        h = np.ones((4, 2))  # identical columns
        with pytest.raises(RankDeficiencyError):
            build_geometry(h)

    def test_bad_shape(self):
        with pytest.raises(ConfigError):
            build_geometry(np.ones((2, 2)))


class TestGlrt:
    def test_zero_on_column_space(self, geo):
        theta = np.array([0.7, -1.3])
        x = geo.h @ theta
        stat = glrt_statistic(x, geo, SIGMA2)
        assert stat <= 1e-12  # exactly zero in exact arithmetic
        for gamma_thr in (1e-12, 1.0, 50.0):
            assert glrt_select(x, geo, SIGMA2, gamma_thr) == 1
        assert glrt_select(x, geo, SIGMA2, stat) == 1  # ties select model 1

    def test_identity_on_complement(self, geo):
        rng = np.random.default_rng(8)
        v = geo.p_perp @ rng.standard_normal(geo.n)
        v *= math.sqrt(SIGMA2) / np.linalg.norm(v)
        assert glrt_statistic(v, geo, SIGMA2) == pytest.approx(1.0, abs=1e-12)

    def test_matches_matrix_oracle(self, geo):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(geo.n)
        direct = float(x @ geo.p_perp @ x) / SIGMA2
        assert glrt_statistic(x, geo, SIGMA2) == pytest.approx(direct, rel=1e-12)

    def test_batch_shape(self, geo):
        rng = np.random.default_rng(10)
        xs = rng.standard_normal((7, geo.n))
        stats = glrt_statistic(xs, geo, SIGMA2)
        assert stats.shape == (7,)
        assert stats[3] == pytest.approx(glrt_statistic(xs[3], geo, SIGMA2))

    def test_gamma_zero_selects_two(self, geo):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(geo.n)
        assert glrt_statistic(x, geo, SIGMA2) > 0.0
        assert glrt_select(x, geo, SIGMA2, 0.0) == 2

    def test_tie_goes_to_model_one(self, geo):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(geo.n)
        stat = glrt_statistic(x, geo, SIGMA2)
        assert glrt_select(x, geo, SIGMA2, stat) == 1

    def test_dimension_mismatch(self, geo):
        with pytest.raises(ValueError):
            glrt_statistic(np.ones(geo.n + 1), geo, SIGMA2)

    def test_negative_threshold(self, geo):
        with pytest.raises(ValueError):
            glrt_select(np.ones(geo.n), geo, SIGMA2, -1.0)


class TestNoncentrality:
    def test_vanishes_on_column_space(self, geo):
        assert noncentrality(geo.h @ np.array([2.0, -1.0]), geo, SIGMA2) <= 1e-12

    def test_complement_scaling(self, geo):
        rng = np.random.default_rng(13)
        v = geo.p_perp @ rng.standard_normal(geo.n)
        v *= math.sqrt(2.0 * SIGMA2) / np.linalg.norm(v)
        assert noncentrality(v, geo, SIGMA2) == pytest.approx(2.0, abs=1e-12)


class TestSelectionProbs:
    def test_gamma_zero(self, geo):
        p1, p2 = true_selection_probs(1.5, 0.0, geo.r)
        assert (p1, p2) == (0.0, 1.0)

    def test_central_closed_form(self):
        p1, p2 = true_selection_probs(0.0, 2.0, 2)
        assert p1 == pytest.approx(1.0 - math.exp(-1.0), abs=1e-14)
        assert p2 == pytest.approx(math.exp(-1.0), abs=1e-14)

    def test_sum_to_one(self, geo):
        for g in (0.1, 2.0, 40.0, 90.0):
            for lam in (0.0, 1.0, 7.0):
                p1, p2 = true_selection_probs(lam, g, geo.r)
                assert abs(p1 + p2 - 1.0) <= 1e-11

    def test_empirical_frequency(self, geo, phi_h2):
        # >= 1e6 simulated observations; empirical selection rate within 4 SE.
        lam = noncentrality(phi_h2, geo, SIGMA2)
        gamma_thr = 2.0
        p1, _ = true_selection_probs(lam, gamma_thr, geo.r)
        rng = np.random.default_rng(14)
        x = sample_observations(rng, phi_h2, SIGMA2, 1_000_000)
        stat = np.einsum("ti,ij,tj->t", x, geo.p_perp, x) / SIGMA2
        p_hat = float(np.mean(stat <= gamma_thr))
        se = math.sqrt(p1 * (1.0 - p1) / 1_000_000)
        assert abs(p_hat - p1) <= 4.0 * se


class TestAssumedSelectionProb:
    def test_model1_ignores_theta(self, geo):
        g = 2.0
        vals = {assumed_selection_prob(1, np.array([a, b]), geo, SIGMA2, g)
                for a, b in [(0.0, 0.0), (3.0, -2.0), (100.0, 5.0)]}
        assert len(vals) == 1
        assert vals.pop() == pytest.approx(chi2.chi2_cdf_central(geo.r, g))

    def test_model2_on_column_space(self, geo):
        g = 2.0
        theta2 = geo.h @ np.array([1.0, 2.0])
        assert assumed_selection_prob(2, theta2, geo, SIGMA2, g) == pytest.approx(
            chi2.chi2_survival_noncentral(geo.r, g, 0.0), abs=1e-12)

    def test_model2_rejection_frequency(self, geo, phi_h2):
        # Frequency of selecting model 2 when x truly follows model 2's pdf.
        g = 2.5
        pi2 = assumed_selection_prob(2, phi_h2, geo, SIGMA2, g)
        rng = np.random.default_rng(15)
        x = sample_observations(rng, phi_h2, SIGMA2, 1_000_000)
        stat = np.einsum("ti,ij,tj->t", x, geo.p_perp, x) / SIGMA2
        p_hat = float(np.mean(stat > g))
        se = math.sqrt(pi2 * (1.0 - pi2) / 1_000_000)
        assert abs(p_hat - pi2) <= 4.0 * se

    def test_bad_index(self, geo):
        with pytest.raises(ValueError):
            assumed_selection_prob(3, np.zeros(geo.n), geo, SIGMA2, 1.0)


class TestSampling:
    def test_deterministic_for_fixed_stream(self, phi_h2):
        key = np.array([99, 7], dtype=np.uint64)
        a = sample_observation(np.random.Generator(np.random.Philox(key=key)), phi_h2, SIGMA2)
        b = sample_observation(np.random.Generator(np.random.Philox(key=key)), phi_h2, SIGMA2)
        assert np.array_equal(a, b)

    def test_zero_variance_limit(self, phi_h2):
        rng = np.random.default_rng(16)
        x = sample_observation(rng, phi_h2, 1e-30)
        assert np.allclose(x, phi_h2, atol=1e-12)

    def test_law_of_large_numbers(self, phi_h2):
        rng = np.random.default_rng(17)
        n = 100_000
        x = sample_observations(rng, phi_h2, SIGMA2, n)
        band = 4.0 * math.sqrt(SIGMA2 / n)
        assert np.abs(x.mean(axis=0) - phi_h2).max() <= band


class TestExperimentConfig:
    def test_valid(self, setup):
        cfg = make_config(setup, "H2", [0.5, 2.0], 10, 1)
        assert cfg.phi.shape == (4,)
        assert cfg.geometry().r == 2

    def test_phi_under_h1(self, setup):
        h, theta1, _ = setup
        cfg = make_config(setup, "H1", [1.0], 5, 1)
        assert np.allclose(cfg.phi, h @ theta1)

    @pytest.mark.parametrize("mutation,message", [
        (dict(true_hypothesis="H3"), "true_hypothesis"),
        (dict(sigma2=0.0), "sigma2"),
        (dict(trials=0), "trials"),
        (dict(gamma_grid=np.array([2.0, 1.0])), "ascending"),
        (dict(gamma_grid=np.array([-1.0, 1.0])), "nonnegative"),
        (dict(theta2_true=np.zeros(3)), "theta2"),
    ])
    def test_invalid(self, setup, mutation, message):
        h, theta1, theta2 = setup
        kwargs = dict(h=h, sigma2=SIGMA2, true_hypothesis="H2", theta1_true=theta1,
                      theta2_true=theta2, gamma_grid=np.array([1.0, 2.0]),
                      trials=10, master_seed=1)
        kwargs.update(mutation)
        with pytest.raises(ConfigError, match=message):
            ExperimentConfig(**kwargs)


class TestGeneration:
    def test_deterministic(self):
        a = generate_standard_gaussian_setup(7, 4, 2)
        b = generate_standard_gaussian_setup(7, 4, 2)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_shapes(self):
        h, t1, t2 = generate_standard_gaussian_setup(7, 5, 3)
        assert h.shape == (5, 3) and t1.shape == (3,) and t2.shape == (5,)

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            generate_standard_gaussian_setup(7, 3, 3)
