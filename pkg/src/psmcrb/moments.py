"""Conditional mean and covariance of x given the GLRT selection event.

Closed forms follow from the conditional moment-generating function of a
Gaussian restricted to a selection region whose probability is a noncentral
chi-square tail.  With lam the true noncentrality, p_k the true selection
probability, D1 = F_r - F_{r+2} and D2 = F_r - 2 F_{r+2} + F_{r+4} all at
(gamma; lam), and d_k = (-1)^k D1 / p_k:

    mu_k    = phi + d_k Pperp phi
    Sigma_k = sigma^2 I + d_k sigma^2 Pperp
              + ((-1)^{k-1} D2 / p_k - d_k^2) Pperp phi phi' Pperp

A rejection-sampling estimator of the same moments is provided as the
validation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import chi2
from .linmodel import (
    ModelGeometry,
    glrt_statistic,
    noncentrality,
    sample_observations,
    true_selection_probs,
)

# Selection probabilities at or below this are treated as a null event.
DEGENERATE_PROB = 1e-12


class DegenerateSelectionError(ValueError):
    """Conditional moments requested on a selection event of ~zero probability."""


class ZeroAcceptanceError(RuntimeError):
    """Rejection sampling produced no sample in the requested branch."""


@dataclass(frozen=True)
class ConditionalMoments:
    """Conditional mean and covariance of x given selection of model k."""

    k: int
    mu: np.ndarray
    sigma: np.ndarray


def _branch_prob(k: int, lam: float, gamma_thr: float, r: int) -> float:
    p1, p2 = true_selection_probs(lam, gamma_thr, r)
    p_k = p1 if k == 1 else p2
    if p_k <= DEGENERATE_PROB:
        raise DegenerateSelectionError(
            f"selection of model {k} has probability {p_k} <= {DEGENERATE_PROB}"
        )
    return p_k


def cond_mean(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
              gamma_thr: float) -> np.ndarray:
    """mu_k = E[x | selected k] in closed form."""
    if k not in (1, 2):
        raise ValueError(f"model index must be 1 or 2, got {k!r}")
    phi = np.asarray(phi, dtype=float)
    lam = noncentrality(phi, geo, sigma2)
    p_k = _branch_prob(k, lam, gamma_thr, geo.r)
    d1 = chi2.chi2_cdf_diff(geo.r, gamma_thr, lam)
    sign = -1.0 if k == 1 else 1.0
    return phi + sign * (d1 / p_k) * (geo.p_perp @ phi)


def cond_cov(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
             gamma_thr: float) -> np.ndarray:
    """Sigma_k = Cov[x | selected k] in closed form; symmetric PSD."""
    if k not in (1, 2):
        raise ValueError(f"model index must be 1 or 2, got {k!r}")
    phi = np.asarray(phi, dtype=float)
    lam = noncentrality(phi, geo, sigma2)
    p_k = _branch_prob(k, lam, gamma_thr, geo.r)
    d1 = chi2.chi2_cdf_diff(geo.r, gamma_thr, lam)
    d2 = chi2.chi2_cdf_diff2(geo.r, gamma_thr, lam)
    sign = -1.0 if k == 1 else 1.0
    d = sign * d1 / p_k
    pp_phi = geo.p_perp @ phi
    outer = np.outer(pp_phi, pp_phi)
    cov = (sigma2 * np.eye(geo.n)
           + d * sigma2 * geo.p_perp
           + (-sign * d2 / p_k - d * d) * outer)
    return 0.5 * (cov + cov.T)


def conditional_moments(k: int, phi: np.ndarray, geo: ModelGeometry, sigma2: float,
                        gamma_thr: float) -> ConditionalMoments:
    """Both closed-form conditional moments; the three CDF differences share
    one truncation by construction of chi2_cdf_diff/diff2."""
    return ConditionalMoments(
        k=k,
        mu=cond_mean(k, phi, geo, sigma2, gamma_thr),
        sigma=cond_cov(k, phi, geo, sigma2, gamma_thr),
    )


def mc_cond_moments(rng: np.random.Generator, trials: int, k: int, phi: np.ndarray,
                    geo: ModelGeometry, sigma2: float,
                    gamma_thr: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Rejection-sampling oracle for (mu_k, Sigma_k).

    Draws `trials` observations, keeps those the GLRT routes to model k,
    and returns the sample mean, sample covariance (ddof=1), and acceptance
    count.  Deterministic for a fixed stream.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if k not in (1, 2):
        raise ValueError(f"model index must be 1 or 2, got {k!r}")
    phi = np.asarray(phi, dtype=float)
    x = sample_observations(rng, phi, sigma2, trials)
    stat = glrt_statistic(x, geo, sigma2)
    mask = stat <= gamma_thr if k == 1 else stat > gamma_thr
    accepted = int(np.count_nonzero(mask))
    if accepted == 0:
        raise ZeroAcceptanceError(f"no sample selected model {k} in {trials} trials")
    xa = x[mask]
    mu_hat = xa.mean(axis=0)
    if accepted == 1:
        sigma_hat = np.zeros((geo.n, geo.n))
    else:
        sigma_hat = np.cov(xa.T, ddof=1)
    return mu_hat, np.atleast_2d(sigma_hat), accepted
