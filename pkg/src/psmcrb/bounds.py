"""Post-selection misspecified Cramer-Rao bounds.

Per selected model k and interpretation, the Hessian-form matrix A and the
outer-product-form matrix B are conditional information matrices of the
assumed log-likelihood under the true conditional distribution.  The kth
bound is the sandwich A^{-1} B A^{-1}; the total bound over phi weighs the
per-branch sandwiches (mapped through each model's parameter-to-phi
Jacobian) and the pseudo-true mapping biases by the true selection
probabilities.

The Jacobian convention is fixed once: phi_dot_k is the gradient of the
mapping's transpose at the pseudo-true vector, so for phi_1(theta) =
H theta the mapped sandwich reads H MCRB_1 H'.

A and B are computed along a generic path (Gaussian terms plus
selection-log-probability derivatives); literal transcriptions of the
closed-form model-2 Hessian matrices exist separately so the two routes
can be compared in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import chi2
from .estimators import Interpretation, INTERPRETATIONS
from .linmodel import ModelGeometry, noncentrality, true_selection_probs
from .moments import DEGENERATE_PROB, cond_cov, cond_mean
from .pseudotrue import pseudo_true

# A matrices with a worse condition number than this are refused.
CONDITION_LIMIT = 1e12

DENOM_FLOOR = 1e-300


class SingularInformationError(np.linalg.LinAlgError):
    """Hessian-form information matrix is numerically singular."""


@dataclass(frozen=True)
class InfoMatrices:
    """A (Hessian form) and B (outer-product form) for one branch."""

    interpretation: Interpretation
    k: int
    a: np.ndarray
    b: np.ndarray
    evaluated_at: np.ndarray


@dataclass(frozen=True)
class InterpretationBound:
    """Per-interpretation pieces of the total bound at one threshold."""

    interpretation: Interpretation
    mcrb_k1: np.ndarray | None
    mcrb_k2: np.ndarray | None
    total: np.ndarray
    degenerate_k1: bool
    degenerate_k2: bool

    @property
    def trace(self) -> float:
        return float(np.trace(self.total))


@dataclass(frozen=True)
class BoundReport:
    """All bound traces and matrices at one threshold."""

    gamma_thr: float
    p1: float
    p2: float
    bounds: dict[Interpretation, InterpretationBound]
    oracle_crb_trace: float
    conventional_mcrb1_trace: float
    conventional_mcrb2_trace: float


# ---------------------------------------------------------------------------
# Selection-probability log-derivatives (model 2)
# ---------------------------------------------------------------------------

def selection_logprob_derivs(kind: Interpretation, theta2: np.ndarray, geo: ModelGeometry,
                             sigma2: float, gamma_thr: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of log alpha (NORMALIZED) or log pi_2 (SELECTIVE)
    with respect to theta2.

    With D1 = F_r - F_{r+2} and D2 = F_r - 2 F_{r+2} + F_{r+4} at the
    noncentrality of theta2,

        grad pi_2  = (D1 / sigma^2) Pperp theta2
        hess pi_2  = (D1 / sigma^2) Pperp - (D2 / sigma^4) Pperp t t' Pperp
        hess log d = hess pi_2 / d - grad log d grad log d',

    where d is alpha or pi_2 (they share grad pi_2 because pi_1 is flat).
    """
    theta2 = np.asarray(theta2, dtype=float)
    lam = noncentrality(theta2, geo, sigma2)
    d1 = chi2.chi2_cdf_diff(geo.r, gamma_thr, lam)
    d2 = chi2.chi2_cdf_diff2(geo.r, gamma_thr, lam)
    pi2 = chi2.chi2_survival_noncentral(geo.r, gamma_thr, lam)
    if kind is Interpretation.NORMALIZED:
        denom = chi2.chi2_cdf_central(geo.r, gamma_thr) + pi2
    elif kind is Interpretation.SELECTIVE:
        denom = pi2
    else:
        raise ValueError(f"no selection-probability denominator for {kind!r}")
    if denom <= DENOM_FLOOR:
        raise ZeroDivisionError(f"selection-probability denominator underflowed at gamma={gamma_thr}")
    pp_theta = geo.p_perp @ theta2
    grad = (d1 / (sigma2 * denom)) * pp_theta
    hess_pi2 = (d1 / sigma2) * geo.p_perp - (d2 / sigma2 ** 2) * np.outer(pp_theta, pp_theta)
    hess = hess_pi2 / denom - np.outer(grad, grad)
    return grad, 0.5 * (hess + hess.T)


# ---------------------------------------------------------------------------
# Information matrices
# ---------------------------------------------------------------------------

def hessian_fim(interpretation: Interpretation, k: int, vartheta: np.ndarray,
                geo: ModelGeometry, sigma2: float, gamma_thr: float) -> np.ndarray:
    """Hessian-form information matrix A_k at the pseudo-true vector."""
    if k == 1:
        return -(geo.h.T @ geo.h) / sigma2
    if k != 2:
        raise ValueError(f"model index must be 1 or 2, got {k!r}")
    a = -np.eye(geo.n) / sigma2
    if interpretation is Interpretation.NAIVE:
        return a
    _, hess = selection_logprob_derivs(interpretation, vartheta, geo, sigma2, gamma_thr)
    return a - hess


def hessian_fim_closed_form(interpretation: Interpretation, vartheta2: np.ndarray,
                            geo: ModelGeometry, sigma2: float, gamma_thr: float) -> np.ndarray:
    """Literal transcription of the model-2 closed-form Hessian matrices.

    Kept deliberately as plain CDF arithmetic (no shared code with the
    generic path) so agreement between the two is a real check.
    """
    vartheta2 = np.asarray(vartheta2, dtype=float)
    lam = noncentrality(vartheta2, geo, sigma2)
    f0 = chi2.chi2_cdf_central(geo.r, gamma_thr)
    fr = chi2.chi2_cdf_noncentral(geo.r, gamma_thr, lam)
    fr2 = chi2.chi2_cdf_noncentral(geo.r + 2, gamma_thr, lam)
    fr4 = chi2.chi2_cdf_noncentral(geo.r + 4, gamma_thr, lam)
    if interpretation is Interpretation.NORMALIZED:
        denom = f0 + 1.0 - fr
    elif interpretation is Interpretation.SELECTIVE:
        denom = 1.0 - fr
    else:
        raise ValueError(f"no closed form for {interpretation!r}")
    c = (fr - fr2) / denom
    u = (fr - 2.0 * fr2 + fr4) / denom
    pp_t = geo.p_perp @ vartheta2
    return (-(np.eye(geo.n) + c * geo.p_perp) / sigma2
            + (u + c * c) / sigma2 ** 2 * np.outer(pp_t, pp_t))


def outer_fim(interpretation: Interpretation, k: int, vartheta: np.ndarray,
              phi: np.ndarray, geo: ModelGeometry, sigma2: float,
              gamma_thr: float) -> np.ndarray:
    """Outer-product-form information matrix B_k at vartheta.

    Computed from the general pre-stationarity expression (conditional
    Gaussian score moments plus penalty-gradient cross terms).  At each
    interpretation's own pseudo-true vector every B_k collapses to the same
    matrix: H' Sigma_1 H / sigma^4 for k=1 and Sigma_2 / sigma^4 for k=2.
    """
    vartheta = np.asarray(vartheta, dtype=float)
    mu = cond_mean(k, phi, geo, sigma2, gamma_thr)
    sig = cond_cov(k, phi, geo, sigma2, gamma_thr)
    if k == 1:
        resid = mu - geo.h @ vartheta
        base = geo.h.T @ (sig + np.outer(resid, resid)) @ geo.h / sigma2 ** 2
        # pi_1 and alpha_1 are flat in theta1, so no penalty cross terms.
        return 0.5 * (base + base.T)
    if k != 2:
        raise ValueError(f"model index must be 1 or 2, got {k!r}")
    resid = mu - vartheta
    base = (sig + np.outer(resid, resid)) / sigma2 ** 2
    if interpretation is not Interpretation.NAIVE:
        mean_score = resid / sigma2
        grad_pen, _ = selection_logprob_derivs(interpretation, vartheta, geo, sigma2, gamma_thr)
        base = (base - np.outer(mean_score, grad_pen) - np.outer(grad_pen, mean_score)
                + np.outer(grad_pen, grad_pen))
    return 0.5 * (base + base.T)


def info_matrices(interpretation: Interpretation, k: int, phi: np.ndarray,
                  geo: ModelGeometry, sigma2: float, gamma_thr: float) -> InfoMatrices:
    """A and B for one branch, evaluated at the interpretation's pseudo-true."""
    vartheta = pseudo_true(interpretation, k, phi, geo, sigma2, gamma_thr)
    return InfoMatrices(
        interpretation=interpretation,
        k=k,
        a=hessian_fim(interpretation, k, vartheta, geo, sigma2, gamma_thr),
        b=outer_fim(interpretation, k, vartheta, phi, geo, sigma2, gamma_thr),
        evaluated_at=vartheta,
    )


# ---------------------------------------------------------------------------
# Sandwiches
# ---------------------------------------------------------------------------

def _inverse_guarded(a: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(a)
    cond = np.inf if s[-1] <= 0.0 else s[0] / s[-1]
    if cond > CONDITION_LIMIT:
        raise SingularInformationError(
            f"information matrix condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    return (vt.T / s) @ u.T


def mcrb_k(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sandwich A^{-1} B A^{-1}; symmetric PSD for PSD B and invertible A."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a_inv = _inverse_guarded(a)
    out = a_inv @ b @ a_inv
    return 0.5 * (out + out.T)


def interpretation_bound(interpretation: Interpretation, phi: np.ndarray,
                         geo: ModelGeometry, sigma2: float,
                         gamma_thr: float) -> InterpretationBound:
    """kth sandwiches and the total phi-space bound for one interpretation.

    A branch whose true selection probability is below the degeneracy
    threshold contributes zero and is flagged.
    """
    phi = np.asarray(phi, dtype=float)
    lam = noncentrality(phi, geo, sigma2)
    p1, p2 = true_selection_probs(lam, gamma_thr, geo.r)
    total = np.zeros((geo.n, geo.n))
    mats: dict[int, np.ndarray | None] = {1: None, 2: None}
    degenerate = {1: p1 <= DEGENERATE_PROB, 2: p2 <= DEGENERATE_PROB}
    for k, p_k in ((1, p1), (2, p2)):
        if degenerate[k]:
            continue
        info = info_matrices(interpretation, k, phi, geo, sigma2, gamma_thr)
        sandwich = mcrb_k(info.a, info.b)
        mats[k] = sandwich
        if k == 1:
            mapped = geo.h @ sandwich @ geo.h.T
            bias = geo.h @ info.evaluated_at - phi
        else:
            mapped = sandwich
            bias = info.evaluated_at - phi
        total += p_k * (mapped + np.outer(bias, bias))
    total = 0.5 * (total + total.T)
    return InterpretationBound(
        interpretation=interpretation,
        mcrb_k1=mats[1],
        mcrb_k2=mats[2],
        total=total,
        degenerate_k1=degenerate[1],
        degenerate_k2=degenerate[2],
    )


def ps_mcrb_total(interpretation: Interpretation, phi: np.ndarray, geo: ModelGeometry,
                  sigma2: float, gamma_thr: float) -> np.ndarray:
    """Total post-selection bound matrix on the MSE of any estimator of phi
    that is conditionally unbiased about this interpretation's pseudo-true
    vectors."""
    return interpretation_bound(interpretation, phi, geo, sigma2, gamma_thr).total


# ---------------------------------------------------------------------------
# Benchmarks: oracle CRB and conventional (unconditioned) bounds
# ---------------------------------------------------------------------------

def oracle_crb(sigma2: float, n: int) -> np.ndarray:
    """CRB for the unstructured Gaussian location model: sigma^2 I."""
    return sigma2 * np.eye(n)


def oracle_crb_phi(true_hypothesis: str, geo: ModelGeometry, sigma2: float) -> np.ndarray:
    """Oracle CRB on phi given knowledge of the true model.

    Under H1 the mean is constrained to col(H), so the bound is the mapped
    reduced-model CRB sigma^2 P_H (trace sigma^2 M); under H2 it is the
    free-mean bound sigma^2 I (trace sigma^2 N).
    """
    if true_hypothesis == "H1":
        return sigma2 * geo.p_col
    if true_hypothesis == "H2":
        return oracle_crb(sigma2, geo.n)
    raise ValueError(f"true_hypothesis must be 'H1' or 'H2', got {true_hypothesis!r}")


@dataclass(frozen=True)
class ConventionalMcrb:
    """Unconditioned (single assumed model) misspecified bound."""

    assumed_k: int
    pseudo_true: np.ndarray
    theta_sandwich: np.ndarray
    phi_space: np.ndarray

    @property
    def phi_trace(self) -> float:
        return float(np.trace(self.phi_space))


def conventional_mcrb(assumed_k: int, phi: np.ndarray, geo: ModelGeometry,
                      sigma2: float) -> ConventionalMcrb:
    """Bound when one model is always assumed, with no selection stage.

    For assumed_k=1 the theta-space sandwich is reported in phi-space as
    H sandwich H' plus the squared mapping bias (Pperp phi)(Pperp phi)',
    so curves are comparable with the post-selection bounds on phi.
    """
    phi = np.asarray(phi, dtype=float)
    if assumed_k == 1:
        theta_star = geo.h_pinv @ phi
        resid = phi - geo.h @ theta_star
        a = -(geo.h.T @ geo.h) / sigma2
        b = geo.h.T @ (sigma2 * np.eye(geo.n) + np.outer(resid, resid)) @ geo.h / sigma2 ** 2
        sandwich = mcrb_k(a, b)
        bias = geo.p_perp @ phi
        phi_space = geo.h @ sandwich @ geo.h.T + np.outer(bias, bias)
        return ConventionalMcrb(assumed_k=1, pseudo_true=theta_star,
                                theta_sandwich=sandwich,
                                phi_space=0.5 * (phi_space + phi_space.T))
    if assumed_k == 2:
        a = -np.eye(geo.n) / sigma2
        b = np.eye(geo.n) / sigma2
        sandwich = mcrb_k(a, b)
        return ConventionalMcrb(assumed_k=2, pseudo_true=np.array(phi),
                                theta_sandwich=sandwich, phi_space=sandwich)
    raise ValueError(f"assumed model index must be 1 or 2, got {assumed_k!r}")


def build_bound_report(phi: np.ndarray, geo: ModelGeometry, sigma2: float,
                       gamma_thr: float, true_hypothesis: str) -> BoundReport:
    """All three interpretation bounds plus benchmark traces at one threshold."""
    phi = np.asarray(phi, dtype=float)
    lam = noncentrality(phi, geo, sigma2)
    p1, p2 = true_selection_probs(lam, gamma_thr, geo.r)
    bounds = {
        itp: interpretation_bound(itp, phi, geo, sigma2, gamma_thr)
        for itp in INTERPRETATIONS
    }
    return BoundReport(
        gamma_thr=gamma_thr,
        p1=p1,
        p2=p2,
        bounds=bounds,
        oracle_crb_trace=float(np.trace(oracle_crb_phi(true_hypothesis, geo, sigma2))),
        conventional_mcrb1_trace=conventional_mcrb(1, phi, geo, sigma2).phi_trace,
        conventional_mcrb2_trace=conventional_mcrb(2, phi, geo, sigma2).phi_trace,
    )
