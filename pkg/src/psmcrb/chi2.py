"""Noncentral chi-square special functions.

Self-contained regularized incomplete gamma functions, central and
noncentral chi-square CDFs, the upper-tail survival function, and analytic
derivatives of the noncentral CDF with respect to the noncentrality
parameter.

The noncentral CDF is the Poisson mixture of central CDFs

    F_r(g; lam) = sum_m  pois(m; lam/2) * P(r/2 + m, g/2),

summed outward from the Poisson mode so the retained terms dominate.  The
survival function Q_r = 1 - F_r is accumulated independently from upper
regularized gammas (all terms positive), which keeps relative precision
deep in the tail where forming 1 - F_r would cancel to nothing.  The CDF
difference that drives every noncentrality derivative uses the identity

    F_r(g; lam) - F_{r+2}(g; lam) = sum_m pois(m; lam/2) * t(r/2 + m),
    t(a) = (g/2)^a exp(-g/2) / Gamma(a+1),

a positive-term series immune to cancellation even when both CDFs sit next
to 0 or 1.

Array variants (``*_vec``) evaluate a batch of noncentralities against one
(r, g) pair; they exist for the Monte-Carlo solver hot path and must agree
with the scalar routines to ~1e-13.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

GAMMA_TOL = 1e-15
GAMMA_MAX_ITER = 500
POISSON_TAIL = 1e-15
MAX_TERMS = 10_000

# Below this, an extra series term can no longer move the running total.
_NEGLIGIBLE = 1e-16


class ConvergenceError(RuntimeError):
    """A series or continued fraction failed to reach tolerance in its cap."""


def _check_dof(r) -> int:
    if r != int(r) or r < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {r!r}")
    return int(r)


def _check_nonneg(value: float, name: str) -> float:
    value = float(value)
    if not value >= 0.0:  # also rejects NaN
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    return value


@dataclass(frozen=True)
class ChiSqParams:
    """Parameters of a noncentral chi-square evaluation point.

    r: degrees of freedom (>= 1), gamma_thr: threshold (>= 0),
    lam: noncentrality (>= 0).
    """

    r: int
    gamma_thr: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "r", _check_dof(self.r))
        object.__setattr__(self, "gamma_thr", _check_nonneg(self.gamma_thr, "gamma_thr"))
        object.__setattr__(self, "lam", _check_nonneg(self.lam, "lam"))

    def cdf(self) -> float:
        return chi2_cdf_noncentral(self.r, self.gamma_thr, self.lam)

    def survival(self) -> float:
        return chi2_survival_noncentral(self.r, self.gamma_thr, self.lam)

    def dlambda(self) -> float:
        return chi2_cdf_dlambda(self.r, self.gamma_thr, self.lam)

    def d2lambda(self) -> float:
        return chi2_cdf_d2lambda(self.r, self.gamma_thr, self.lam)


# ---------------------------------------------------------------------------
# Regularized incomplete gamma
# ---------------------------------------------------------------------------

def _lower_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges fastest for x < a + 1.
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * GAMMA_TOL:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ConvergenceError(f"lower gamma series stalled for a={a}, x={x}")


def _upper_cf(a: float, x: float) -> float:
    # Q(a, x) by the Lentz continued fraction; use for x >= a + 1.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < GAMMA_TOL:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ConvergenceError(f"upper gamma continued fraction stalled for a={a}, x={x}")


def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    a = float(a)
    if not a > 0.0:
        raise ValueError(f"shape parameter must be positive, got {a!r}")
    x = _check_nonneg(x, "x")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _lower_series(a, x)
    return 1.0 - _upper_cf(a, x)


def reg_upper_gamma(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    a = float(a)
    if not a > 0.0:
        raise ValueError(f"shape parameter must be positive, got {a!r}")
    x = _check_nonneg(x, "x")
    if x == 0.0:
        return 1.0
    if x >= a + 1.0:
        return _upper_cf(a, x)
    return 1.0 - _lower_series(a, x)


# ---------------------------------------------------------------------------
# Central chi-square
# ---------------------------------------------------------------------------

def chi2_cdf_central(r: int, gamma_thr: float) -> float:
    """Central chi-square CDF F_r(gamma; 0) = P(r/2, gamma/2)."""
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    return reg_lower_gamma(0.5 * r, 0.5 * gamma_thr)


def _log_halfpoint_term(a: float, x: float) -> float:
    # log t(a) with t(a) = x^a e^{-x} / Gamma(a+1); t(a) = P(a,x) - P(a+1,x).
    return a * math.log(x) - x - math.lgamma(a + 1.0)


# ---------------------------------------------------------------------------
# Noncentral chi-square CDF / survival
# ---------------------------------------------------------------------------

def chi2_cdf_noncentral(r: int, gamma_thr: float, lam: float) -> float:
    """Noncentral chi-square CDF F_r(gamma; lam)."""
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = _check_nonneg(lam, "lam")
    if gamma_thr == 0.0:
        return 0.0
    if lam == 0.0:
        return chi2_cdf_central(r, gamma_thr)

    half = 0.5 * lam
    a0 = 0.5 * r
    x = 0.5 * gamma_thr
    m0 = int(half)
    w_mode = math.exp(-half + m0 * math.log(half) - math.lgamma(m0 + 1))
    p_mode = reg_lower_gamma(a0 + m0, x)

    total = w_mode * p_mode
    terms = 1

    # Downward sweep: P(a-1) = P(a) + t(a-1), additions only.
    w = w_mode
    p = p_mode
    m = m0
    while m > 0:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"noncentral CDF series hit {MAX_TERMS} terms")
        w *= m / half
        p += math.exp(_log_halfpoint_term(a0 + m - 1, x))
        m -= 1
        contrib = w * p
        total += contrib
        terms += 1
        ratio = m / half
        if ratio < 1.0 and w * ratio / (1.0 - ratio) < POISSON_TAIL:
            break

    # Upward sweep: P(a+1) = P(a) - t(a); clamp tiny negatives from roundoff.
    w = w_mode
    p = p_mode
    m = m0
    prev_contrib = math.inf
    while True:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"noncentral CDF series hit {MAX_TERMS} terms")
        p = max(p - math.exp(_log_halfpoint_term(a0 + m, x)), 0.0)
        m += 1
        w *= half / m
        contrib = w * p
        total += contrib
        terms += 1
        ratio = half / (m + 1)
        tail_small = ratio < 1.0 and w * ratio / (1.0 - ratio) < POISSON_TAIL
        if tail_small and contrib <= prev_contrib and contrib <= _NEGLIGIBLE * total:
            break
        if p == 0.0 and tail_small:
            break
        prev_contrib = contrib

    return min(total, 1.0)


def chi2_survival_noncentral(r: int, gamma_thr: float, lam: float) -> float:
    """Noncentral chi-square survival Q_r(gamma; lam) = 1 - F_r(gamma; lam).

    Accumulated from upper regularized gammas so the deep right tail keeps
    relative accuracy instead of cancelling against 1.
    """
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = _check_nonneg(lam, "lam")
    if gamma_thr == 0.0:
        return 1.0
    if lam == 0.0:
        return reg_upper_gamma(0.5 * r, 0.5 * gamma_thr)

    half = 0.5 * lam
    a0 = 0.5 * r
    x = 0.5 * gamma_thr
    m0 = int(half)
    w_mode = math.exp(-half + m0 * math.log(half) - math.lgamma(m0 + 1))
    q_mode = reg_upper_gamma(a0 + m0, x)

    total = w_mode * q_mode
    terms = 1

    # Downward sweep: the subtractive recurrence for Q cancels badly in the
    # tail, so each term below the mode is evaluated directly.
    w = w_mode
    m = m0
    while m > 0:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"noncentral survival series hit {MAX_TERMS} terms")
        w *= m / half
        m -= 1
        contrib = w * reg_upper_gamma(a0 + m, x)
        total += contrib
        terms += 1
        ratio = m / half
        if ratio < 1.0 and w * ratio / (1.0 - ratio) < POISSON_TAIL:
            break

    # Upward sweep: Q(a+1) = Q(a) + t(a), additions only.
    w = w_mode
    q = q_mode
    m = m0
    prev_contrib = math.inf
    while True:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"noncentral survival series hit {MAX_TERMS} terms")
        q += math.exp(_log_halfpoint_term(a0 + m, x))
        m += 1
        w *= half / m
        contrib = w * q
        total += contrib
        terms += 1
        ratio = half / (m + 1)
        tail_small = ratio < 1.0 and w * ratio / (1.0 - ratio) < POISSON_TAIL
        if tail_small and contrib <= prev_contrib and contrib <= _NEGLIGIBLE * total:
            break
        prev_contrib = contrib

    return min(total, 1.0)


# ---------------------------------------------------------------------------
# CDF differences and noncentrality derivatives
# ---------------------------------------------------------------------------

def chi2_cdf_diff(r: int, gamma_thr: float, lam: float) -> float:
    """F_r(gamma; lam) - F_{r+2}(gamma; lam), evaluated as a positive series.

    Equals Q_{r+2} - Q_r; always in [0, 1].  This is the numerator of every
    shrinkage coefficient and selection-probability derivative downstream.
    """
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = _check_nonneg(lam, "lam")
    if gamma_thr == 0.0:
        return 0.0
    half = 0.5 * lam
    a0 = 0.5 * r
    x = 0.5 * gamma_thr
    if half == 0.0:
        return math.exp(_log_halfpoint_term(a0, x))

    # Terms pois(m; half) * t(a0 + m) are log-concave in m; scan outward
    # from the approximate mode m* solving m (m + a0) = half * x.
    m_star = int(max(0.5 * (-a0 + math.sqrt(a0 * a0 + 4.0 * half * x)), 0.0))
    log_mode = (-half + m_star * math.log(half) - math.lgamma(m_star + 1)
                + _log_halfpoint_term(a0 + m_star, x))
    t_mode = math.exp(log_mode)
    if t_mode == 0.0:
        return 0.0

    total = t_mode
    terms = 1
    # Downward.
    t = t_mode
    m = m_star
    while m > 0:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"CDF-difference series hit {MAX_TERMS} terms")
        t *= (m / half) * ((a0 + m) / x)
        m -= 1
        total += t
        terms += 1
        if t < _NEGLIGIBLE * total:
            break
    # Upward.
    t = t_mode
    m = m_star
    while True:
        if terms >= MAX_TERMS:
            raise ConvergenceError(f"CDF-difference series hit {MAX_TERMS} terms")
        m += 1
        t *= (half / m) * (x / (a0 + m))
        total += t
        terms += 1
        if t < _NEGLIGIBLE * total:
            break

    return min(total, 1.0)


def chi2_cdf_dlambda(r: int, gamma_thr: float, lam: float) -> float:
    """d F_r(gamma; lam) / d lam = (F_{r+2} - F_r) / 2; always <= 0."""
    return -0.5 * chi2_cdf_diff(r, gamma_thr, lam)


def chi2_cdf_d2lambda(r: int, gamma_thr: float, lam: float) -> float:
    """d^2 F_r(gamma; lam) / d lam^2 = (F_r - 2 F_{r+2} + F_{r+4}) / 4."""
    return 0.25 * (chi2_cdf_diff(r, gamma_thr, lam) - chi2_cdf_diff(r + 2, gamma_thr, lam))


def chi2_cdf_diff2(r: int, gamma_thr: float, lam: float) -> float:
    """F_r - 2 F_{r+2} + F_{r+4} at (gamma; lam)."""
    return chi2_cdf_diff(r, gamma_thr, lam) - chi2_cdf_diff(r + 2, gamma_thr, lam)


# ---------------------------------------------------------------------------
# Array variants over a batch of noncentralities (shared r, gamma)
# ---------------------------------------------------------------------------

# Largest lam/2 for which exp(-lam/2) stays normal; beyond it the batched
# forward recurrence would start from a denormal weight.
_VEC_HALF_LIMIT = 700.0


def _quantize_cap(cap: float) -> int:
    cap = min(max(int(math.ceil(cap)), 40), MAX_TERMS)
    return ((cap + 63) // 64) * 64  # quantize so cached arrays are reusable


def _poisson_cap(half_max: float, a0: float) -> int:
    # Poisson mass beyond mode + 12 sqrt(mode) is far below POISSON_TAIL.
    return _quantize_cap(half_max + 12.0 * math.sqrt(half_max + 1.0) + a0 + 30.0)


def _cdf_cap(half_max: float, x: float, a0: float) -> int:
    # P(a0 + m, x) itself is negligible once a0 + m clears x, whatever the
    # remaining Poisson mass multiplies it by.
    p_side = x + 12.0 * math.sqrt(x + 1.0) + a0 + 30.0
    return min(_poisson_cap(half_max, a0), _quantize_cap(p_side))


def _diff_cap(half_max: float, x: float, a0: float) -> int:
    # Terms pois(m) t(a0 + m) are log-concave with mode at the solution of
    # m (m + a0) = half * x; truncate a dozen mode-scaled deviations past it.
    m_star = max(0.5 * (-a0 + math.sqrt(a0 * a0 + 4.0 * half_max * x)), 0.0)
    d_side = m_star + 12.0 * math.sqrt(m_star + 1.0) + a0 + 30.0
    return min(_poisson_cap(half_max, a0), _quantize_cap(d_side))


def _halfpoint_terms(a0: float, x: float, cap: int) -> np.ndarray:
    # t(a0 + m) for m = 0..cap-1 via t(a+1) = t(a) x / (a+1).
    out = np.empty(cap)
    t = math.exp(_log_halfpoint_term(a0, x))
    for m in range(cap):
        out[m] = t
        t *= x / (a0 + m + 1.0)
    return out


@functools.lru_cache(maxsize=512)
def _central_p_terms(a0: float, x: float, cap: int) -> np.ndarray:
    # P(a0 + m, x) for m = 0..cap-1 via P(a+1) = P(a) - t(a), clamped at 0.
    t = _halfpoint_terms(a0, x, cap)
    out = np.maximum(reg_lower_gamma(a0, x) - np.concatenate([[0.0], np.cumsum(t[:-1])]), 0.0)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=512)
def _central_q_terms(a0: float, x: float, cap: int) -> np.ndarray:
    # Q(a0 + m, x) for m = 0..cap-1 via Q(a+1) = Q(a) + t(a); additions only.
    t = _halfpoint_terms(a0, x, cap)
    out = reg_upper_gamma(a0, x) + np.concatenate([[0.0], np.cumsum(t[:-1])])
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=512)
def _halfpoint_terms_cached(a0: float, x: float, cap: int) -> np.ndarray:
    out = _halfpoint_terms(a0, x, cap)
    out.setflags(write=False)
    return out


def _poisson_mixture_vec(central_terms: np.ndarray, half: np.ndarray) -> np.ndarray:
    w = np.exp(-half)
    total = w * central_terms[0]
    scratch = np.empty_like(w)
    for m in range(1, len(central_terms)):
        np.multiply(w, half, out=w)
        w /= m
        np.multiply(w, central_terms[m], out=scratch)
        total += scratch
    return total


def _poisson_mixture_pair_vec(terms_a: np.ndarray, terms_b: np.ndarray,
                              half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # One weight sweep feeding two accumulators; terms_a/terms_b share cap.
    w = np.exp(-half)
    total_a = w * terms_a[0]
    total_b = w * terms_b[0]
    scratch = np.empty_like(w)
    for m in range(1, len(terms_a)):
        np.multiply(w, half, out=w)
        w /= m
        np.multiply(w, terms_a[m], out=scratch)
        total_a += scratch
        np.multiply(w, terms_b[m], out=scratch)
        total_b += scratch
    return total_a, total_b


def chi2_diff_and_survival_vec(r: int, gamma_thr: float,
                               lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(F_r - F_{r+2}, Q_r) over an array of noncentralities in one sweep.

    The shrinkage coefficient needs both at the same lam; sharing the
    Poisson weight recurrence halves the work of the solver hot path.
    """
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = np.asarray(lam, dtype=float)
    if lam.size and float(np.min(lam)) < 0.0:
        raise ValueError("lam must be nonnegative")
    if gamma_thr == 0.0 or lam.size == 0:
        return np.zeros_like(lam), np.ones_like(lam)
    half = 0.5 * lam
    if float(np.max(half)) > _VEC_HALF_LIMIT:
        return chi2_cdf_diff_vec(r, gamma_thr, lam), chi2_survival_noncentral_vec(r, gamma_thr, lam)
    a0, x = 0.5 * r, 0.5 * gamma_thr
    cap = _poisson_cap(float(np.max(half)), a0)
    diff, surv = _poisson_mixture_pair_vec(
        _halfpoint_terms_cached(a0, x, cap), _central_q_terms(a0, x, cap), half)
    return np.minimum(diff, 1.0), np.minimum(surv, 1.0)


def chi2_cdf_noncentral_vec(r: int, gamma_thr: float, lam: np.ndarray) -> np.ndarray:
    """Batched F_r(gamma; lam) over an array of noncentralities."""
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = np.asarray(lam, dtype=float)
    if lam.size and float(np.min(lam)) < 0.0:
        raise ValueError("lam must be nonnegative")
    if gamma_thr == 0.0 or lam.size == 0:
        return np.zeros_like(lam)
    half = 0.5 * lam
    if float(np.max(half)) > _VEC_HALF_LIMIT:
        return np.array([chi2_cdf_noncentral(r, gamma_thr, v) for v in lam.ravel()]).reshape(lam.shape)
    a0, x = 0.5 * r, 0.5 * gamma_thr
    cap = _cdf_cap(float(np.max(half)), x, a0)
    out = _poisson_mixture_vec(_central_p_terms(a0, x, cap), half)
    return np.minimum(out, 1.0)


def chi2_survival_noncentral_vec(r: int, gamma_thr: float, lam: np.ndarray) -> np.ndarray:
    """Batched Q_r(gamma; lam) over an array of noncentralities."""
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = np.asarray(lam, dtype=float)
    if lam.size and float(np.min(lam)) < 0.0:
        raise ValueError("lam must be nonnegative")
    if gamma_thr == 0.0 or lam.size == 0:
        return np.ones_like(lam)
    half = 0.5 * lam
    if float(np.max(half)) > _VEC_HALF_LIMIT:
        return np.array([chi2_survival_noncentral(r, gamma_thr, v) for v in lam.ravel()]).reshape(lam.shape)
    a0, x = 0.5 * r, 0.5 * gamma_thr
    cap = _poisson_cap(float(np.max(half)), a0)
    out = _poisson_mixture_vec(_central_q_terms(a0, x, cap), half)
    return np.minimum(out, 1.0)


def chi2_cdf_diff_vec(r: int, gamma_thr: float, lam: np.ndarray) -> np.ndarray:
    """Batched F_r - F_{r+2} over an array of noncentralities."""
    r = _check_dof(r)
    gamma_thr = _check_nonneg(gamma_thr, "gamma_thr")
    lam = np.asarray(lam, dtype=float)
    if lam.size and float(np.min(lam)) < 0.0:
        raise ValueError("lam must be nonnegative")
    if gamma_thr == 0.0 or lam.size == 0:
        return np.zeros_like(lam)
    half = 0.5 * lam
    if float(np.max(half)) > _VEC_HALF_LIMIT:
        return np.array([chi2_cdf_diff(r, gamma_thr, v) for v in lam.ravel()]).reshape(lam.shape)
    a0, x = 0.5 * r, 0.5 * gamma_thr
    cap = _diff_cap(float(np.max(half)), x, a0)
    out = _poisson_mixture_vec(_halfpoint_terms_cached(a0, x, cap), half)
    return np.minimum(out, 1.0)
