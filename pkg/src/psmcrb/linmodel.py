"""Gaussian linear observation model with GLRT channel detection.

Observations follow x = phi + w with w ~ N(0, sigma^2 I).  Model 1 assumes
phi = H theta1 for a known N x M channel H (M < N); model 2 leaves phi
unconstrained.  The GLRT compares the scaled residual energy
x' Pperp x / sigma^2 against a threshold and selects model 1 on ties.

Both families of selection probabilities live here: the true ones (under
the distribution of phi) and the assumed ones (under each candidate model's
own distribution).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chi2

# Relative smallest-singular-value threshold below which H is treated as
# rank deficient; (H'H)^{-1} conditioning degrades past this point.
RANK_RTOL = 1e-10

HYPOTHESES = ("H1", "H2")


class RankDeficiencyError(ValueError):
    """Channel matrix does not have full column rank."""


class ConfigError(ValueError):
    """Experiment configuration violates an invariant."""


@dataclass(frozen=True)
class ModelGeometry:
    """Projection geometry of the channel H.

    h_pinv is (H'H)^{-1} H', p_col projects onto col(H), p_perp onto its
    orthogonal complement; r = N - M is the GLRT degrees of freedom.
    """

    h: np.ndarray
    h_pinv: np.ndarray
    p_col: np.ndarray
    p_perp: np.ndarray
    r: int

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[1]


def build_geometry(h: np.ndarray) -> ModelGeometry:
    """Build projection geometry from a full-column-rank channel matrix."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] <= h.shape[1] or h.shape[1] < 1:
        raise ConfigError(f"channel must be N x M with 1 <= M < N, got shape {h.shape}")
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficiencyError(
            f"channel is rank deficient: singular values {s.tolist()}"
        )
    h_pinv = (vt.T / s) @ u.T
    p_col = u @ u.T
    n = h.shape[0]
    p_perp = np.eye(n) - p_col
    p_perp = 0.5 * (p_perp + p_perp.T)
    return ModelGeometry(h=h, h_pinv=h_pinv, p_col=p_col, p_perp=p_perp, r=n - h.shape[1])


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one estimation-after-detection experiment."""

    h: np.ndarray
    sigma2: float
    true_hypothesis: str
    theta1_true: np.ndarray | None
    theta2_true: np.ndarray | None
    gamma_grid: np.ndarray
    trials: int
    master_seed: int
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "gamma_grid", np.asarray(self.gamma_grid, dtype=float))
        if self.theta1_true is not None:
            object.__setattr__(self, "theta1_true", np.asarray(self.theta1_true, dtype=float))
        if self.theta2_true is not None:
            object.__setattr__(self, "theta2_true", np.asarray(self.theta2_true, dtype=float))
        self.validate()

    def validate(self) -> None:
        if self.true_hypothesis not in HYPOTHESES:
            raise ConfigError(f"true_hypothesis must be one of {HYPOTHESES}, got {self.true_hypothesis!r}")
        if not self.sigma2 > 0.0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2!r}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must fit in an unsigned 64-bit integer")
        build_geometry(self.h)  # raises on bad shape / rank
        n, m = self.h.shape
        if self.true_hypothesis == "H1":
            if self.theta1_true is None or self.theta1_true.shape != (m,):
                raise ConfigError(f"theta1 must be a length-{m} vector under H1")
        else:
            if self.theta2_true is None or self.theta2_true.shape != (n,):
                raise ConfigError(f"theta2 must be a length-{n} vector under H2")
        g = self.gamma_grid
        if g.ndim != 1 or g.size < 1:
            raise ConfigError("gamma_grid must be a nonempty 1-D list")
        if np.any(g < 0.0):
            raise ConfigError("gamma_grid thresholds must be nonnegative")
        if g.size > 1 and np.any(np.diff(g) <= 0.0):
            raise ConfigError("gamma_grid must be strictly ascending")

    @property
    def phi(self) -> np.ndarray:
        """True mean parameter: H theta1 under H1, theta2 under H2."""
        if self.true_hypothesis == "H1":
            return self.h @ self.theta1_true
        return np.array(self.theta2_true, copy=True)

    def geometry(self) -> ModelGeometry:
        return build_geometry(self.h)


def generate_standard_gaussian_setup(seed: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (H, theta1, theta2) once with standard-Gaussian entries.

    Draw order is frozen: H row-major, then theta1, then theta2, from a
    Philox stream keyed by (seed, 0).  A rank-deficient draw is an error,
    never a silent retry.
    """
    if not (1 <= m < n):
        raise ConfigError(f"need 1 <= M < N, got N={n}, M={m}")
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    h = gen.standard_normal((n, m))
    theta1 = gen.standard_normal(m)
    theta2 = gen.standard_normal(n)
    build_geometry(h)  # rank check; ConfigError/RankDeficiencyError on failure
    return h, theta1, theta2


# ---------------------------------------------------------------------------
# GLRT statistic and selection
# ---------------------------------------------------------------------------

def glrt_statistic(x: np.ndarray, geo: ModelGeometry, sigma2: float) -> float | np.ndarray:
    """Scaled residual energy ||Pperp x||^2 / sigma^2; accepts (..., N) batches.

    Projecting first and squaring the residual keeps relative accuracy when
    sigma^2 is far below ||x||^2; the direct quadratic form x' Pperp x has
    an absolute roundoff floor of order eps ||x||^2.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != geo.n:
        raise ValueError(f"observation length {x.shape[-1]} does not match N={geo.n}")
    resid = x @ geo.p_perp
    stat = np.einsum("...i,...i->...", resid, resid) / sigma2
    return float(stat) if stat.ndim == 0 else stat


def glrt_select(x: np.ndarray, geo: ModelGeometry, sigma2: float, gamma_thr: float) -> int:
    """Select model 1 iff the statistic is <= gamma (ties go to model 1)."""
    if gamma_thr < 0.0:
        raise ValueError(f"gamma_thr must be nonnegative, got {gamma_thr!r}")
    return 1 if glrt_statistic(x, geo, sigma2) <= gamma_thr else 2


def noncentrality(v: np.ndarray, geo: ModelGeometry, sigma2: float) -> float:
    """Noncentrality v' Pperp v / sigma^2 of the GLRT statistic at mean v."""
    return glrt_statistic(v, geo, sigma2)


def true_selection_probs(lam: float, gamma_thr: float, r: int) -> tuple[float, float]:
    """(p1, p2) = (F_r(gamma; lam), Q_r(gamma; lam)) under the true model."""
    p1 = chi2.chi2_cdf_noncentral(r, gamma_thr, lam)
    p2 = chi2.chi2_survival_noncentral(r, gamma_thr, lam)
    return p1, p2


def assumed_selection_prob(k: int, theta_k: np.ndarray, geo: ModelGeometry,
                           sigma2: float, gamma_thr: float) -> float:
    """Selection probability of model k under model k's own distribution.

    For k=1 the statistic is central regardless of theta1; for k=2 the
    noncentrality is theta2' Pperp theta2 / sigma^2.
    """
    if k == 1:
        theta_k = np.asarray(theta_k, dtype=float)
        if theta_k.shape != (geo.m,):
            raise ValueError(f"theta1 must have length M={geo.m}")
        return chi2.chi2_cdf_central(geo.r, gamma_thr)
    if k == 2:
        lam2 = noncentrality(theta_k, geo, sigma2)
        return chi2.chi2_survival_noncentral(geo.r, gamma_thr, lam2)
    raise ValueError(f"model index must be 1 or 2, got {k!r}")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_observation(rng: np.random.Generator, phi: np.ndarray, sigma2: float) -> np.ndarray:
    """One draw x = phi + w, w ~ N(0, sigma2 I), from the given stream.

    The Gaussian variates come from numpy's ziggurat rejection sampler
    (inverse-free); the contract relied on throughout is only that a given
    stream state yields identical output.
    """
    phi = np.asarray(phi, dtype=float)
    return phi + np.sqrt(sigma2) * rng.standard_normal(phi.shape[0])


def sample_observations(rng: np.random.Generator, phi: np.ndarray, sigma2: float,
                        count: int) -> np.ndarray:
    """Batch of `count` observations, rows in draw order."""
    phi = np.asarray(phi, dtype=float)
    return phi + np.sqrt(sigma2) * rng.standard_normal((count, phi.shape[0]))
