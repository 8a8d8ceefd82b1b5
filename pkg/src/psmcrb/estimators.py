"""Post-selection estimators: MSL, MSNL, PSML, and the oracle ML benchmark.

Under model 1 all three estimators are the least-squares fit.  Under
model 2 the MSNL and PSML score equations both have the form

    x - theta - c(lam(theta)) Pperp theta = 0,
    c(lam) = (F_r(g; lam) - F_{r+2}(g; lam)) / denom(lam),

with denom = F_r(g; 0) + Q_r(g; lam) for the normalized interpretation and
denom = Q_r(g; lam) for the selective-inference one.  Splitting along
col(H) and its complement pins the column-space part at P_H x and reduces
the complement to one scalar root: theta = P_H x + s Pperp x where

    s (1 + c(s^2 q)) = 1,     q = ||Pperp x||^2 / sigma^2.

g(s) = s (1 + c(s^2 q)) - 1 is continuous with g(0+) = -1 and g(1) >= 0,
so a root exists in (0, 1]; a coarse left-to-right scan brackets the
leftmost sign change and bisection refines it.  Monotonicity of g is not
assumed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import chi2
from .linmodel import ModelGeometry, assumed_selection_prob, glrt_select, glrt_statistic

# Bisection bracket floor, interval tolerance, and iteration cap.
BRACKET_FLOOR = 1e-9
BISECT_XTOL = 1e-14
BISECT_MAX_ITER = 200
SCAN_POINTS = 17

# |s (1 + c(s^2 q)) - 1| must end up below this.
SCALAR_RESIDUAL_TOL = 1e-11

# Selection-probability denominators below this are treated as vanishing.
DENOM_FLOOR = 1e-300


class SolverError(RuntimeError):
    """The scalar shrinkage solve failed its bracket or residual contract."""


class VanishingDenominatorError(ZeroDivisionError):
    """A selection-probability denominator underflowed to zero."""


class Interpretation(enum.Enum):
    """Which assumed pdf drives an estimator, pseudo-true solve, or bound.

    NAIVE uses the selected model's pdf as-is (not a valid density),
    NORMALIZED divides by the total selection mass alpha(theta), and
    SELECTIVE conditions each model on its own selection event.
    """

    NAIVE = "naive"
    NORMALIZED = "normalized"
    SELECTIVE = "selective"


INTERPRETATIONS = (Interpretation.NAIVE, Interpretation.NORMALIZED, Interpretation.SELECTIVE)


@dataclass(frozen=True)
class ShrinkageProblem:
    """One scalar shrinkage solve: q = ||Pperp x||^2 / sigma^2 plus the
    (r, gamma) pair and which denominator the penalty uses."""

    q: float
    r: int
    gamma_thr: float
    denom: Interpretation

    def __post_init__(self):
        if not self.q >= 0.0:
            raise ValueError(f"q must be nonnegative, got {self.q!r}")


@dataclass(frozen=True)
class Estimate:
    """A model-k estimate and its image in phi-space (phi = H theta1 or theta2)."""

    k: int
    theta_k: np.ndarray
    phi_hat: np.ndarray


def _denominator(denom: Interpretation, r: int, gamma_thr: float, lam) -> float | np.ndarray:
    if denom is Interpretation.SELECTIVE:
        if np.isscalar(lam):
            return chi2.chi2_survival_noncentral(r, gamma_thr, lam)
        return chi2.chi2_survival_noncentral_vec(r, gamma_thr, lam)
    if denom is Interpretation.NORMALIZED:
        base = chi2.chi2_cdf_central(r, gamma_thr)
        if np.isscalar(lam):
            return base + chi2.chi2_survival_noncentral(r, gamma_thr, lam)
        return base + chi2.chi2_survival_noncentral_vec(r, gamma_thr, lam)
    raise ValueError(f"no shrinkage denominator for {denom!r}")


def shrinkage_coefficient(lam: float, prob: ShrinkageProblem) -> float:
    """c(lam) = (F_r - F_{r+2}) / denom at the problem's (r, gamma); >= 0."""
    num = chi2.chi2_cdf_diff(prob.r, prob.gamma_thr, lam)
    den = _denominator(prob.denom, prob.r, prob.gamma_thr, lam)
    if den <= DENOM_FLOOR:
        raise VanishingDenominatorError(
            f"selection-probability denominator underflowed at lam={lam}, "
            f"gamma={prob.gamma_thr} ({prob.denom.value})"
        )
    return num / den


def _solve_shrinkage_impl(prob: ShrinkageProblem) -> tuple[float, float]:
    """Core solve; returns (s, residual) without enforcing the residual."""
    if prob.q == 0.0 or prob.gamma_thr == 0.0:
        return 1.0, 0.0

    def g(s: float) -> float:
        return s * (1.0 + shrinkage_coefficient(s * s * prob.q, prob)) - 1.0

    g_one = g(1.0)
    if g_one <= 0.0:
        # c >= 0 forces g(1) >= 0, so this is c(q) == 0 exactly.
        return 1.0, g_one

    # Leftmost sign change on a coarse scan, then bisection.
    grid = np.linspace(BRACKET_FLOOR, 1.0, SCAN_POINTS)
    lo, hi = None, None
    prev_s, prev_g = grid[0], g(grid[0])
    if prev_g >= 0.0:
        raise SolverError(f"no bracket: g({BRACKET_FLOOR}) = {prev_g} >= 0")
    for s in grid[1:]:
        cur = g(s) if s < 1.0 else g_one
        if cur >= 0.0:
            lo, hi = prev_s, s
            break
        prev_s, prev_g = s, cur
    if lo is None:
        raise SolverError("no sign change of g(s) found in (0, 1]")

    for _ in range(BISECT_MAX_ITER):
        s_mid = 0.5 * (lo + hi)
        g_mid = g(s_mid)
        if g_mid >= 0.0:
            hi = s_mid
        else:
            lo = s_mid
        if hi - lo < BISECT_XTOL and abs(g_mid) < SCALAR_RESIDUAL_TOL:
            break
    s = 0.5 * (lo + hi)
    return s, g(s)


def solve_shrinkage(prob: ShrinkageProblem) -> float:
    """Solve s (1 + c(s^2 q)) = 1 for s in (0, 1]; q = 0 returns s = 1."""
    s, resid = _solve_shrinkage_impl(prob)
    if abs(resid) > SCALAR_RESIDUAL_TOL:
        raise SolverError(f"shrinkage residual {resid} above {SCALAR_RESIDUAL_TOL}")
    return s


def solve_shrinkage_batch(q: np.ndarray, r: int, gamma_thr: float,
                          denom: Interpretation) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized solve of s (1 + c(s^2 q)) = 1 over an array of q values.

    Returns (s, failed) where failed flags entries whose residual violated
    the scalar tolerance.  Matches solve_shrinkage to ~1e-12.
    """
    q = np.asarray(q, dtype=float)
    s_out = np.ones_like(q)
    failed = np.zeros(q.shape, dtype=bool)
    if q.size == 0 or gamma_thr == 0.0:
        return s_out, failed

    active = q > 0.0
    if not np.any(active):
        return s_out, failed
    qa = q[active]

    if qa.size <= 32:
        # Tiny batches: per-element numpy overhead dwarfs the math, so run
        # the scalar solver (agrees with the vectorized path to ~1e-12).
        s_small = np.empty(qa.shape)
        fail_small = np.zeros(qa.shape, dtype=bool)
        for i, q_i in enumerate(qa):
            s_i, resid = _solve_shrinkage_impl(
                ShrinkageProblem(q=float(q_i), r=r, gamma_thr=gamma_thr, denom=denom))
            s_small[i] = s_i
            fail_small[i] = abs(resid) > SCALAR_RESIDUAL_TOL
        s_out[active] = s_small
        failed[active] = fail_small
        return s_out, failed

    # Bucketing by q keeps the shared series cap matched to each bucket's
    # own noncentrality range instead of the batch-wide worst case.
    if qa.size > 256:
        edges = [8.0, 32.0, 128.0, 512.0]
        bucket = np.digitize(qa, edges)
        if bucket.max() != bucket.min():
            s_a = np.empty(qa.shape)
            f_a = np.empty(qa.shape, dtype=bool)
            for b in range(bucket.min(), bucket.max() + 1):
                mask = bucket == b
                if np.any(mask):
                    s_b, f_b = solve_shrinkage_batch(qa[mask], r, gamma_thr, denom)
                    s_a[mask] = s_b
                    f_a[mask] = f_b
            s_out[active] = s_a
            failed[active] = f_a
            return s_out, failed

    base = chi2.chi2_cdf_central(r, gamma_thr) if denom is Interpretation.NORMALIZED else 0.0

    def g(s: np.ndarray) -> np.ndarray:
        lam = s * s * qa
        num, surv = chi2.chi2_diff_and_survival_vec(r, gamma_thr, lam)
        den = base + surv
        if np.any(den <= DENOM_FLOOR):
            raise VanishingDenominatorError(
                f"selection-probability denominator underflowed (gamma={gamma_thr})"
            )
        return s * (1.0 + num / den) - 1.0

    # Coarse scan for the leftmost bracket per element.
    grid = np.linspace(BRACKET_FLOOR, 1.0, SCAN_POINTS)
    lo = np.full(qa.shape, BRACKET_FLOOR)
    hi = np.ones_like(qa)
    found = np.zeros(qa.shape, dtype=bool)
    prev = np.full(qa.shape, grid[0])
    for s_val in grid[1:]:
        gv = g(np.full(qa.shape, s_val))
        newly = (~found) & (gv >= 0.0)
        lo[newly] = prev[newly]
        hi[newly] = s_val
        found |= newly
        prev[:] = s_val
    # g(1) >= 0 always (c >= 0), so unfound entries have g(1) == 0: s = 1.
    lo[~found] = 1.0
    hi[~found] = 1.0

    for _ in range(BISECT_MAX_ITER):
        if np.all(hi - lo < BISECT_XTOL):
            break
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        right = gm >= 0.0
        hi = np.where(right, mid, hi)
        lo = np.where(right, lo, mid)

    s = 0.5 * (lo + hi)
    resid = g(s)
    failed_a = np.abs(resid) > SCALAR_RESIDUAL_TOL
    s_out[active] = s
    failed[active] = failed_a
    return s_out, failed


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _least_squares(x: np.ndarray, geo: ModelGeometry) -> Estimate:
    theta1 = geo.h_pinv @ x
    return Estimate(k=1, theta_k=theta1, phi_hat=geo.h @ theta1)


def msl(x: np.ndarray, k: int, geo: ModelGeometry) -> Estimate:
    """Maximum selected likelihood: ML of the selected model alone."""
    x = np.asarray(x, dtype=float)
    if x.shape != (geo.n,):
        raise ValueError(f"observation must have length N={geo.n}")
    if k == 1:
        return _least_squares(x, geo)
    if k == 2:
        return Estimate(k=2, theta_k=np.array(x), phi_hat=np.array(x))
    raise ValueError(f"model index must be 1 or 2, got {k!r}")


def _penalized(x: np.ndarray, k: int, geo: ModelGeometry, sigma2: float,
               gamma_thr: float, denom: Interpretation) -> Estimate:
    x = np.asarray(x, dtype=float)
    assert k == glrt_select(x, geo, sigma2, gamma_thr), \
        "estimator invoked outside its selection region"
    if k == 1:
        # pi_1 does not depend on theta1, so the penalty is inert.
        return _least_squares(x, geo)
    q = float(glrt_statistic(x, geo, sigma2))
    s = solve_shrinkage(ShrinkageProblem(q=q, r=geo.r, gamma_thr=gamma_thr, denom=denom))
    theta2 = geo.p_col @ x + s * (geo.p_perp @ x)
    return Estimate(k=2, theta_k=theta2, phi_hat=np.array(theta2))


def msnl(x: np.ndarray, k: int, geo: ModelGeometry, sigma2: float, gamma_thr: float) -> Estimate:
    """Maximum selected normalized likelihood (penalty -log alpha_k)."""
    return _penalized(x, k, geo, sigma2, gamma_thr, Interpretation.NORMALIZED)


def psml(x: np.ndarray, k: int, geo: ModelGeometry, sigma2: float, gamma_thr: float) -> Estimate:
    """Post-selection ML (penalty -log pi_k); independent of the mixture weights."""
    return _penalized(x, k, geo, sigma2, gamma_thr, Interpretation.SELECTIVE)


def oracle_ml(x: np.ndarray, true_hypothesis: str, geo: ModelGeometry) -> np.ndarray:
    """ML of phi under the true (unknown in practice) model; benchmark only."""
    x = np.asarray(x, dtype=float)
    if true_hypothesis == "H1":
        return geo.p_col @ x
    if true_hypothesis == "H2":
        return np.array(x)
    raise ValueError(f"true_hypothesis must be 'H1' or 'H2', got {true_hypothesis!r}")


def score_residual(x: np.ndarray, theta2: np.ndarray, geo: ModelGeometry, sigma2: float,
                   gamma_thr: float, denom: Interpretation) -> np.ndarray:
    """Residual of the model-2 score equation at theta2 (zero at the optimum)."""
    x = np.asarray(x, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    lam = float(np.einsum("i,ij,j->", theta2, geo.p_perp, theta2)) / sigma2
    prob = ShrinkageProblem(q=max(lam, 0.0), r=geo.r, gamma_thr=gamma_thr, denom=denom)
    c = shrinkage_coefficient(max(lam, 0.0), prob)
    return x - theta2 - c * (geo.p_perp @ theta2)


# ---------------------------------------------------------------------------
# Assumed log-densities (whole observation space)
# ---------------------------------------------------------------------------

def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, sigma2: float) -> float:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return -0.5 * n * np.log(2.0 * np.pi * sigma2) - 0.5 * float(np.sum((x - mean) ** 2)) / sigma2


def assumed_logpdf(interpretation: Interpretation, x: np.ndarray, theta1: np.ndarray,
                   theta2: np.ndarray, geo: ModelGeometry, sigma2: float, gamma_thr: float,
                   weights: tuple[float, float] = (0.5, 0.5)) -> float:
    """log of the assumed density at x for the full augmented parameter.

    The naive density is the selected model's pdf (and does not integrate
    to one); the normalized one divides by alpha(theta); the selective one
    conditions branch k on its own selection event, mixed with any weights
    that are nonnegative, theta-free, and sum to one.
    """
    k = glrt_select(x, geo, sigma2, gamma_thr)
    mean = geo.h @ np.asarray(theta1, dtype=float) if k == 1 else np.asarray(theta2, dtype=float)
    log_fk = _gaussian_logpdf(x, mean, sigma2)
    if interpretation is Interpretation.NAIVE:
        return log_fk
    if interpretation is Interpretation.NORMALIZED:
        alpha = (assumed_selection_prob(1, theta1, geo, sigma2, gamma_thr)
                 + assumed_selection_prob(2, theta2, geo, sigma2, gamma_thr))
        return log_fk - np.log(alpha)
    if interpretation is Interpretation.SELECTIVE:
        c1, c2 = weights
        if c1 < 0 or c2 < 0 or abs(c1 + c2 - 1.0) > 1e-12:
            raise ValueError("selective weights must be nonnegative and sum to one")
        ck = c1 if k == 1 else c2
        theta_k = theta1 if k == 1 else theta2
        pik = assumed_selection_prob(k, theta_k, geo, sigma2, gamma_thr)
        if pik <= DENOM_FLOOR:
            raise VanishingDenominatorError(f"pi_{k} underflowed at gamma={gamma_thr}")
        return log_fk + np.log(ck) - np.log(pik)
    raise ValueError(f"unknown interpretation {interpretation!r}")
