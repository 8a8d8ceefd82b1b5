"""Pseudo-true parameter vectors for the three interpretations.

The kth pseudo-true vector maximizes the conditional expected assumed
log-likelihood E[log f(x; theta) | selected k].  For model 1 all three
interpretations share the least-squares image of the conditional mean.
For model 2 the naive target is the conditional mean itself, the
normalized one solves the same shrinkage equation as the MSNL estimator
with the conditional mean in place of the observation, and the selective
one is exactly the true phi (its score vanishes there because the assumed
selection probability at phi equals the true one).

A rejection-sampling objective evaluator backs the argmax
characterization: the returned vector must beat perturbed points up to
Monte-Carlo noise.
"""

from __future__ import annotations

import numpy as np

from . import chi2
from .estimators import Interpretation, ShrinkageProblem, score_residual, solve_shrinkage
from .linmodel import (
    ModelGeometry,
    assumed_selection_prob,
    glrt_statistic,
    noncentrality,
    sample_observations,
)
from .moments import cond_mean

PT_NORMALIZED_RESIDUAL_TOL = 1e-10
PT_SELECTIVE_RESIDUAL_TOL = 1e-9
MIN_ACCEPTED = 1000

# Argmax verification: perturbation radius scale and statistical slack.
PERTURB_RADIUS = 0.05
ARGMAX_SLACK_SE = 3.0


class InsufficientAcceptanceError(RuntimeError):
    """Too few Monte-Carlo samples landed in the requested selection branch."""


class PseudoTrueError(RuntimeError):
    """A pseudo-true solve violated its residual contract."""


def pt_naive(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
             gamma_thr: float) -> np.ndarray:
    """Naive pseudo-true vector: least-squares image of mu_1, or mu_2."""
    mu = cond_mean(k, phi, geo, sigma2, gamma_thr)
    if k == 1:
        return geo.h_pinv @ mu
    return mu


def pt_normalized(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
                  gamma_thr: float) -> np.ndarray:
    """Normalized-interpretation pseudo-true vector.

    k=1 coincides with the naive one.  k=2 solves
    mu_2 - theta - [(F_r - F_{r+2}) / alpha] Pperp theta = 0
    by the same projection-split scalar reduction the MSNL estimator uses.
    """
    if k == 1:
        return pt_naive(1, phi, geo, sigma2, gamma_thr)
    mu2 = cond_mean(2, phi, geo, sigma2, gamma_thr)
    q = noncentrality(mu2, geo, sigma2)
    s = solve_shrinkage(ShrinkageProblem(q=q, r=geo.r, gamma_thr=gamma_thr,
                                         denom=Interpretation.NORMALIZED))
    vartheta = geo.p_col @ mu2 + s * (geo.p_perp @ mu2)
    resid = score_residual(mu2, vartheta, geo, sigma2, gamma_thr, Interpretation.NORMALIZED)
    if np.linalg.norm(resid) > PT_NORMALIZED_RESIDUAL_TOL:
        raise PseudoTrueError(
            f"normalized pseudo-true residual {np.linalg.norm(resid)} above tolerance"
        )
    return vartheta


def pt_selective(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
                 gamma_thr: float, verify: bool = False) -> np.ndarray:
    """Selective-inference pseudo-true vector.

    k=1 coincides with the naive one; k=2 is phi exactly (no solve).  With
    verify=True the k=2 score residual at phi is checked numerically.
    """
    if k == 1:
        return pt_naive(1, phi, geo, sigma2, gamma_thr)
    phi = np.asarray(phi, dtype=float)
    cond_mean(2, phi, geo, sigma2, gamma_thr)  # degenerate-selection guard
    if verify:
        mu2 = cond_mean(2, phi, geo, sigma2, gamma_thr)
        resid = score_residual(mu2, phi, geo, sigma2, gamma_thr, Interpretation.SELECTIVE)
        if np.linalg.norm(resid) > PT_SELECTIVE_RESIDUAL_TOL:
            raise PseudoTrueError(
                f"selective pseudo-true residual {np.linalg.norm(resid)} above tolerance"
            )
    return np.array(phi, copy=True)


def pseudo_true(interpretation: Interpretation, k: int, phi: np.ndarray,
                geo: ModelGeometry, sigma2: float, gamma_thr: float) -> np.ndarray:
    """Dispatch to the interpretation-specific pseudo-true solver."""
    if interpretation is Interpretation.NAIVE:
        return pt_naive(k, phi, geo, sigma2, gamma_thr)
    if interpretation is Interpretation.NORMALIZED:
        return pt_normalized(k, phi, geo, sigma2, gamma_thr)
    if interpretation is Interpretation.SELECTIVE:
        return pt_selective(k, phi, geo, sigma2, gamma_thr)
    raise ValueError(f"unknown interpretation {interpretation!r}")


# ---------------------------------------------------------------------------
# Assumed-probability minima and penalties
# ---------------------------------------------------------------------------

def min_assumed_selection_prob(k: int, geo: ModelGeometry, gamma_thr: float) -> float:
    """underline-pi_k: the minimum of pi_k over its parameter space.

    pi_1 is constant, so it is its own minimum.  pi_2 depends on theta2
    only through the noncentrality, so the minimization runs over lam >= 0
    (coarse geometric scan refined by golden section) rather than being
    hard-coded at lam = 0.
    """
    if k == 1:
        return chi2.chi2_cdf_central(geo.r, gamma_thr)
    if k != 2:
        raise ValueError(f"model index must be 1 or 2, got {k!r}")

    def pi2(lam: float) -> float:
        return chi2.chi2_survival_noncentral(geo.r, gamma_thr, lam)

    lam_hi = max(4.0 * gamma_thr + 8.0 * geo.r + 16.0, 16.0)
    grid = np.concatenate([[0.0], np.geomspace(1e-6, lam_hi, 40)])
    vals = [pi2(v) for v in grid]
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = pi2(c), pi2(d)
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = pi2(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = pi2(d)
        if b - a < 1e-12 * (1.0 + b):
            break
    return pi2(0.5 * (a + b))


def normalization_mass(k: int, theta_k: np.ndarray, geo: ModelGeometry, sigma2: float,
                       gamma_thr: float) -> float:
    """alpha_k(theta_k) = pi_k(theta_k) + sum of the other models' minima."""
    own = assumed_selection_prob(k, theta_k, geo, sigma2, gamma_thr)
    other = min_assumed_selection_prob(3 - k, geo, gamma_thr)
    return own + other


def _penalty(interpretation: Interpretation, k: int, theta_k: np.ndarray,
             geo: ModelGeometry, sigma2: float, gamma_thr: float) -> float:
    if interpretation is Interpretation.NAIVE:
        return 0.0
    if interpretation is Interpretation.NORMALIZED:
        return float(np.log(normalization_mass(k, theta_k, geo, sigma2, gamma_thr)))
    if interpretation is Interpretation.SELECTIVE:
        return float(np.log(assumed_selection_prob(k, theta_k, geo, sigma2, gamma_thr)))
    raise ValueError(f"unknown interpretation {interpretation!r}")


# ---------------------------------------------------------------------------
# Monte-Carlo objective (argmax oracle)
# ---------------------------------------------------------------------------

def _accepted_samples(rng: np.random.Generator, trials: int, k: int, phi: np.ndarray,
                      geo: ModelGeometry, sigma2: float, gamma_thr: float) -> np.ndarray:
    x = sample_observations(rng, np.asarray(phi, dtype=float), sigma2, trials)
    stat = glrt_statistic(x, geo, sigma2)
    mask = stat <= gamma_thr if k == 1 else stat > gamma_thr
    xa = x[mask]
    if len(xa) < MIN_ACCEPTED:
        raise InsufficientAcceptanceError(
            f"only {len(xa)} of {trials} samples selected model {k}; need {MIN_ACCEPTED}"
        )
    return xa


def _mean_loglik(xa: np.ndarray, k: int, theta_k: np.ndarray, geo: ModelGeometry,
                 sigma2: float) -> tuple[float, float]:
    mean = geo.h @ theta_k if k == 1 else np.asarray(theta_k, dtype=float)
    n = geo.n
    ll = (-0.5 * n * np.log(2.0 * np.pi * sigma2)
          - 0.5 * np.sum((xa - mean) ** 2, axis=1) / sigma2)
    return float(ll.mean()), float(ll.std(ddof=1) / np.sqrt(len(ll)))


def mc_objective(rng: np.random.Generator, trials: int, k: int, theta_k: np.ndarray,
                 interpretation: Interpretation, phi: np.ndarray, geo: ModelGeometry,
                 sigma2: float, gamma_thr: float) -> float:
    """Rejection-sampled E[log f(x; theta) | selected k] with the
    interpretation's penalty subtracted."""
    xa = _accepted_samples(rng, trials, k, phi, geo, sigma2, gamma_thr)
    mean_ll, _ = _mean_loglik(xa, k, np.asarray(theta_k, dtype=float), geo, sigma2)
    return mean_ll - _penalty(interpretation, k, theta_k, geo, sigma2, gamma_thr)


def verify_argmax(rng: np.random.Generator, trials: int, k: int,
                  interpretation: Interpretation, vartheta: np.ndarray, phi: np.ndarray,
                  geo: ModelGeometry, sigma2: float, gamma_thr: float,
                  n_perturbations: int = 20) -> list[tuple[float, float]]:
    """Paired objective differences objective(vartheta) - objective(perturbed).

    All comparisons reuse one set of accepted samples (common random
    numbers), so each entry is (mean difference, its standard error).  The
    argmax property holds when every difference >= -3 SE.
    """
    vartheta = np.asarray(vartheta, dtype=float)
    xa = _accepted_samples(rng, trials, k, phi, geo, sigma2, gamma_thr)
    radius = PERTURB_RADIUS * (1.0 + float(np.linalg.norm(vartheta)))
    mean_at = geo.h @ vartheta if k == 1 else vartheta
    ll_at = -0.5 * np.sum((xa - mean_at) ** 2, axis=1) / sigma2
    pen_at = _penalty(interpretation, k, vartheta, geo, sigma2, gamma_thr)
    out = []
    for _ in range(n_perturbations):
        direction = rng.standard_normal(vartheta.shape[0])
        direction /= np.linalg.norm(direction)
        other = vartheta + radius * direction
        mean_other = geo.h @ other if k == 1 else other
        ll_other = -0.5 * np.sum((xa - mean_other) ** 2, axis=1) / sigma2
        pen_other = _penalty(interpretation, k, other, geo, sigma2, gamma_thr)
        delta = ll_at - ll_other
        mean_delta = float(delta.mean()) - (pen_at - pen_other)
        se_delta = float(delta.std(ddof=1) / np.sqrt(len(delta)))
        out.append((mean_delta, se_delta))
    return out
