"""Reduced-scale invariant suite behind the `selfcheck` subcommand.

Each check re-derives one of the library's structural identities (special
function derivatives, moment mixtures, estimator coincidences and score
residuals, pseudo-true argmax, bound symmetry/PSD and closed-form
agreement) and reports pass/fail.  Statistical checks scale their bands
with the requested trial count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bounds as bounds_mod
from . import chi2
from . import linmodel
from . import moments as moments_mod
from . import pseudotrue as pt_mod
from .estimators import INTERPRETATIONS, Interpretation, msl, msnl, psml, score_residual
from .linmodel import build_geometry, generate_standard_gaussian_setup, glrt_select

DERIV_GRID = [(r, g, lam) for r in (1, 2, 4) for g in (0.5, 2.0, 8.0) for lam in (0.0, 1.0, 5.0)]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name, fn) -> CheckResult:
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failure, not an abort
        return CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
    return CheckResult(name, bool(passed), detail)


def _fixture():
    h, th1, th2 = generate_standard_gaussian_setup(2, 4, 2)
    geo = build_geometry(h)
    return h, th1, th2, geo


def run_selfcheck(trials: int = 200_000) -> list[CheckResult]:
    h, th1, th2, geo = _fixture()
    sigma2 = 1.0
    phi2 = np.array(th2)
    gam_mid = 2.5
    results = []

    def cdf_bounds_monotone():
        worst = 0.0
        for r in (1, 2, 4):
            for lam in (0.0, 2.0):
                grid = np.linspace(0.0, 30.0, 120)
                vals = [chi2.chi2_cdf_noncentral(r, g, lam) for g in grid]
                if any(v < 0 or v > 1 for v in vals):
                    return False, "CDF left [0, 1]"
                worst = max(worst, -min(np.diff(vals)))
        return worst <= 1e-13, f"max monotonicity violation {worst:.2e}"

    results.append(_check("chi2 cdf in [0,1], monotone in gamma", cdf_bounds_monotone))

    def lam0_reduction():
        worst = max(abs(chi2.chi2_cdf_noncentral(r, g, 0.0) - chi2.chi2_cdf_central(r, g))
                    for r in (1, 2, 4) for g in np.linspace(0.0, 40.0, 30))
        return worst <= 1e-12, f"max |F(.,0) - central| = {worst:.2e}"

    results.append(_check("chi2 lam=0 reduction", lam0_reduction))

    def first_derivative():
        step = 1e-5
        worst = 0.0
        for r, g, lam in DERIV_GRID:
            at = lam if lam > 0.0 else step  # keep the centered stencil in-domain
            fd = (chi2.chi2_cdf_noncentral(r, g, at + step)
                  - chi2.chi2_cdf_noncentral(r, g, at - step)) / (2.0 * step)
            worst = max(worst, abs(chi2.chi2_cdf_dlambda(r, g, at) - fd))
        return worst <= 1e-7, f"max |analytic - FD| = {worst:.2e}"

    results.append(_check("chi2 dF/dlam vs finite differences", first_derivative))

    def second_derivative():
        step = 1e-4
        worst = 0.0
        for r, g, lam in DERIV_GRID:
            base = max(lam, step)
            fd = (chi2.chi2_cdf_noncentral(r, g, base + step)
                  - 2.0 * chi2.chi2_cdf_noncentral(r, g, base)
                  + chi2.chi2_cdf_noncentral(r, g, base - step)) / step**2
            worst = max(worst, abs(chi2.chi2_cdf_d2lambda(r, g, base) - fd))
        return worst <= 1e-6, f"max |analytic - FD| = {worst:.2e}"

    results.append(_check("chi2 d2F/dlam2 vs finite differences", second_derivative))

    def dominance():
        worst = max(chi2.chi2_cdf_noncentral(r + 2, g, lam) - chi2.chi2_cdf_noncentral(r, g, lam)
                    for r, g, lam in DERIV_GRID)
        return worst <= 0.0, f"max F_(r+2) - F_r = {worst:.2e}"

    results.append(_check("chi2 dof dominance", dominance))

    def cdf_survival_sum():
        worst = max(abs(chi2.chi2_cdf_noncentral(r, g, lam)
                        + chi2.chi2_survival_noncentral(r, g, lam) - 1.0)
                    for r in (1, 2, 4) for g in (0.5, 2.0, 8.0, 40.0, 100.0)
                    for lam in (0.0, 1.0, 5.0))
        return worst <= 1e-11, f"max |F + Q - 1| = {worst:.2e}"

    results.append(_check("chi2 cdf + survival = 1 (gamma up to 100)", cdf_survival_sum))

    def mixture_mean():
        lam = linmodel.noncentrality(phi2, geo, sigma2)
        p1, p2 = linmodel.true_selection_probs(lam, gam_mid, geo.r)
        mu1 = moments_mod.cond_mean(1, phi2, geo, sigma2, gam_mid)
        mu2 = moments_mod.cond_mean(2, phi2, geo, sigma2, gam_mid)
        worst = float(np.abs(p1 * mu1 + p2 * mu2 - phi2).max())
        return worst <= 1e-10, f"max deviation {worst:.2e}"

    results.append(_check("moments mixture mean identity", mixture_mean))

    def total_covariance():
        lam = linmodel.noncentrality(phi2, geo, sigma2)
        p1, p2 = linmodel.true_selection_probs(lam, gam_mid, geo.r)
        acc = np.zeros((geo.n, geo.n))
        for k, p in ((1, p1), (2, p2)):
            mu = moments_mod.cond_mean(k, phi2, geo, sigma2, gam_mid)
            cov = moments_mod.cond_cov(k, phi2, geo, sigma2, gam_mid)
            acc += p * (cov + np.outer(mu - phi2, mu - phi2))
        worst = float(np.abs(acc - sigma2 * np.eye(geo.n)).max())
        return worst <= 1e-9, f"max deviation {worst:.2e}"

    results.append(_check("moments law of total covariance", total_covariance))

    def mean_shift_structure():
        ok = True
        details = []
        pp_phi = geo.p_perp @ phi2
        for k, sign in ((1, -1.0), (2, 1.0)):
            mu = moments_mod.cond_mean(k, phi2, geo, sigma2, gam_mid)
            col_part = float(np.abs(geo.p_col @ (mu - phi2)).max())
            inner = float((mu - phi2) @ pp_phi)
            ok = ok and col_part <= 1e-10 and sign * inner >= 0.0
            details.append(f"k={k}: col comp {col_part:.1e}, signed inner {inner:+.3f}")
        return ok, "; ".join(details)

    results.append(_check("moments shift in range(Pperp) with correct sign", mean_shift_structure))

    def estimator_coincidence():
        gen = np.random.Generator(np.random.Philox(key=np.array([11, 0], dtype=np.uint64)))
        worst_k1 = 0.0
        worst_g0 = 0.0
        for _ in range(50):
            x = linmodel.sample_observation(gen, phi2, sigma2)
            e0 = (msl(x, 2, geo).phi_hat, msnl(x, 2, geo, sigma2, 0.0).phi_hat,
                  psml(x, 2, geo, sigma2, 0.0).phi_hat)
            worst_g0 = max(worst_g0, float(np.abs(e0[0] - e0[1]).max()),
                           float(np.abs(e0[0] - e0[2]).max()))
            if glrt_select(x, geo, sigma2, gam_mid) == 1:
                a = msl(x, 1, geo).theta_k
                b = msnl(x, 1, geo, sigma2, gam_mid).theta_k
                c = psml(x, 1, geo, sigma2, gam_mid).theta_k
                worst_k1 = max(worst_k1, float(np.abs(a - b).max()), float(np.abs(a - c).max()))
        return worst_k1 <= 1e-12 and worst_g0 <= 1e-10, \
            f"k=1 max {worst_k1:.1e}, gamma=0 max {worst_g0:.1e}"

    results.append(_check("estimator coincidence (k=1 branch; gamma=0)", estimator_coincidence))

    def score_residuals():
        gen = np.random.Generator(np.random.Philox(key=np.array([12, 0], dtype=np.uint64)))
        n_trials = max(40, min(400, trials // 500))
        worst = 0.0
        ordering_ok = True
        for g in (0.3, 1.0, 2.5, 6.0, 12.0):
            for _ in range(n_trials):
                x = linmodel.sample_observation(gen, phi2, sigma2)
                if glrt_select(x, geo, sigma2, g) != 2:
                    continue
                scale = 1.0 + float(np.linalg.norm(x))
                en = msnl(x, 2, geo, sigma2, g)
                ep = psml(x, 2, geo, sigma2, g)
                rn = score_residual(x, en.theta_k, geo, sigma2, g, Interpretation.NORMALIZED)
                rp = score_residual(x, ep.theta_k, geo, sigma2, g, Interpretation.SELECTIVE)
                worst = max(worst, float(np.linalg.norm(rn)) / scale,
                            float(np.linalg.norm(rp)) / scale)
                perp = [float(np.linalg.norm(geo.p_perp @ v))
                        for v in (ep.theta_k, en.theta_k, x)]
                ordering_ok = ordering_ok and perp[0] <= perp[1] + 1e-12 <= perp[2] + 2e-12
        return worst <= 1e-9 and ordering_ok, \
            f"max residual/(1+|x|) = {worst:.2e}, ordering {'ok' if ordering_ok else 'violated'}"

    results.append(_check("estimator score residuals and shrinkage ordering", score_residuals))

    def pt_structure():
        vt3 = pt_mod.pt_selective(2, phi2, geo, sigma2, gam_mid, verify=True)
        eq_phi = bool(np.array_equal(vt3, phi2))
        k1 = [pt_mod.pseudo_true(itp, 1, phi2, geo, sigma2, gam_mid) for itp in INTERPRETATIONS]
        k1_eq = float(max(np.abs(k1[0] - k1[1]).max(), np.abs(k1[0] - k1[2]).max()))
        return eq_phi and k1_eq == 0.0, f"selective k=2 is phi: {eq_phi}; k=1 spread {k1_eq:.1e}"

    results.append(_check("pseudo-true structure (selective exact; k=1 shared)", pt_structure))

    def pt_argmax():
        n = max(20_000, trials)
        worst = np.inf
        for itp in INTERPRETATIONS:
            vt = pt_mod.pseudo_true(itp, 2, phi2, geo, sigma2, gam_mid)
            gen = np.random.Generator(np.random.Philox(key=np.array([13, 0], dtype=np.uint64)))
            deltas = pt_mod.verify_argmax(gen, n, 2, itp, vt, phi2, geo, sigma2, gam_mid)
            worst = min(worst, min(d + pt_mod.ARGMAX_SLACK_SE * se for d, se in deltas))
        return worst >= 0.0, f"min slack-adjusted margin {worst:+.2e}"

    results.append(_check("pseudo-true argmax against perturbations", pt_argmax))

    def b_identity():
        worst = 0.0
        for k in (1, 2):
            mats = []
            for itp in INTERPRETATIONS:
                vt = pt_mod.pseudo_true(itp, k, phi2, geo, sigma2, gam_mid)
                mats.append(bounds_mod.outer_fim(itp, k, vt, phi2, geo, sigma2, gam_mid))
            worst = max(worst, float(np.abs(mats[0] - mats[1]).max()),
                        float(np.abs(mats[0] - mats[2]).max()))
        return worst <= 1e-10, f"max cross-interpretation spread {worst:.2e}"

    results.append(_check("bound outer-product matrices identical across interpretations", b_identity))

    def a_closed_form():
        worst = 0.0
        for itp in (Interpretation.NORMALIZED, Interpretation.SELECTIVE):
            vt = pt_mod.pseudo_true(itp, 2, phi2, geo, sigma2, gam_mid)
            gen = bounds_mod.hessian_fim(itp, 2, vt, geo, sigma2, gam_mid)
            lit = bounds_mod.hessian_fim_closed_form(itp, vt, geo, sigma2, gam_mid)
            worst = max(worst, float(np.abs(gen - lit).max()))
        return worst <= 1e-9, f"max generic-vs-transcribed deviation {worst:.2e}"

    results.append(_check("bound Hessian generic path vs closed form", a_closed_form))

    def bound_psd():
        worst = np.inf
        for g in (0.3, 1.0, 2.5, 6.0, 12.0):
            for itp in INTERPRETATIONS:
                ib = bounds_mod.interpretation_bound(itp, phi2, geo, sigma2, g)
                for mat in (ib.mcrb_k1, ib.mcrb_k2, ib.total):
                    if mat is not None:
                        worst = min(worst, float(np.linalg.eigvalsh(mat).min()))
        return worst >= -1e-8, f"min eigenvalue {worst:.2e}"

    results.append(_check("bound matrices positive semidefinite", bound_psd))

    def misspec_signature():
        info = bounds_mod.info_matrices(Interpretation.NAIVE, 2, phi2, geo, sigma2, gam_mid)
        gap = float(np.abs(np.trace(info.a + info.b)))
        return gap > 1e-6, f"trace |A + B| = {gap:.3e}"

    results.append(_check("misspecification signature A != -B (naive, k=2)", misspec_signature))

    def extreme_collapse():
        g_small = 1e-9
        conv2 = bounds_mod.conventional_mcrb(2, phi2, geo, sigma2).phi_trace
        worst = 0.0
        for itp in INTERPRETATIONS:
            tot = bounds_mod.ps_mcrb_total(itp, phi2, geo, sigma2, g_small)
            worst = max(worst, abs(float(np.trace(tot)) - conv2))
        return worst <= 1e-6, f"max |trace - conventional_2| = {worst:.2e}"

    results.append(_check("extreme-threshold collapse to assumed-2 conventional bound", extreme_collapse))

    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<{width}}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
