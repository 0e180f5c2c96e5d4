"""Acceptance gate: twelve numbered criteria, one PASS/FAIL line each.

Each test computes its verdict first, records the line for the terminal
summary, then asserts, so failures still report.  The sound-mode runs
(criteria 5/6) share one module-scoped ensemble; the whole gate takes
roughly 15-20 minutes, dominated by those runs.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.optimize import curve_fit

from chainlab import kernels
from chainlab.dynamics import SimConfig, advance_state, run_ensemble, \
    sample_equilibrium, conserved_totals
from chainlab.fluctuation import Mode, ModeSeries, autocorrelation, \
    bg_residual_variance, mode_ensemble, mode_profile, static_covariance
from chainlab.micro import ensembles_gap_curve, harmonic_moment_p1, \
    sample_sphere_harmonic, sphere_radius, spectral_gap_estimate, \
    tau_K, tau_K_det_bounds, tau_K_det_fd, two_point_poincare_ratio
from chainlab.potential import PotentialSpec
from chainlab.thermo import CanonicalParams

HARM = PotentialSpec("harmonic")
SOFT = PotentialSpec("softened-quadratic", a=0.2)


def _record(request, num, ok, detail):
    status = "PASS" if ok else "FAIL"
    line = f"{status} Criterion {num:2d}: {detail}"
    request.config._acceptance_lines.append((num, line))
    assert ok, line


# --- 1: thermodynamic exactness (harmonic closed forms) -----------------------

def test_criterion_01_thermo_exactness(request):
    worst = 0.0
    for beta, tau in ((1.0, 0.3), (2.0, -0.7), (0.6, 0.0)):
        par = CanonicalParams.compute(HARM, beta, tau)
        g0 = 0.5 * beta * tau * tau + math.log(2.0 * math.pi / beta)
        sigma0 = np.array([
            [1.0 / beta, 0.0, 0.0],
            [0.0, 1.0 / beta, tau / beta],
            [0.0, tau / beta, tau * tau / beta + 1.0 / beta ** 2]])
        scale = max(abs(g0), 1.0)
        worst = max(worst,
                    abs(par.G - g0) / scale,
                    abs(par.r_bar - tau) / max(abs(tau), 1.0),
                    abs(par.e_bar - (1.0 / beta + tau * tau / 2.0))
                    / par.e_bar,
                    float(np.max(np.abs(par.Sigma - sigma0)))
                    / float(np.max(np.abs(sigma0))))
    _record(request, 1, worst <= 1e-8,
            f"harmonic G/means/covariance worst relative error "
            f"{worst:.2e} (tolerance 1e-8)")


# --- 2: rotation identity ------------------------------------------------------

def test_criterion_02_rotation_identity(request):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(5):
        beta = rng.uniform(0.5, 2.0)
        tau = rng.uniform(-1.0, 1.0)
        par = CanonicalParams.compute(SOFT, beta, tau)
        worst = max(worst, float(np.max(np.abs(
            par.R.T @ par.Sigma @ par.R - par.Q))))
    _record(request, 2, worst <= 1e-8,
            f"max |R^T Sigma R - Q| = {worst:.2e} over 5 random "
            f"(beta, tau) (tolerance 1e-8)")


# --- 3: conservation of the exchange noise -------------------------------------

def _totals(spec, p, r):
    return conserved_totals(spec, p, r)


def test_criterion_03_conservation(request):
    rng = np.random.default_rng(7)

    # per-step, per-bond: a 2-site wall chain is a single bond
    worst_bond = 0.0
    for trial in range(50):
        p = rng.normal(size=2)
        r = rng.normal(size=2)
        before = _totals(SOFT, p, r)
        for step in range(20):
            kernels.noise_sweep_circle(p, r, 0.02, SOFT.kind_code, SOFT.a,
                                       False, 11, trial, step, step % 2 == 0)
            after = _totals(SOFT, p, r)
            worst_bond = max(worst_bond,
                             float(np.max(np.abs(after - before))))
            before = after

    # periodic totals over 1e5 noise sweeps
    n = 32
    p = rng.normal(size=n)
    r = rng.normal(size=n)
    start = _totals(SOFT, p, r)
    for step in range(100_000):
        kernels.noise_sweep_circle(p, r, 0.01, SOFT.kind_code, SOFT.a,
                                   True, 12, 0, step, step % 2 == 0)
    drift_noise = float(np.max(np.abs(_totals(SOFT, p, r) - start)))

    # full dynamics on the periodic chain: momentum/stretch totals telescope
    cfg = SimConfig(SOFT, n, beta=1.0, tau=0.0, gamma=1.0, periodic=True,
                    seed=13)
    p, r = sample_equilibrium(SOFT, 1.0, 0.0, n, np.random.default_rng(14))
    start = _totals(SOFT, p, r)
    advance_state(cfg, p, r, 100_000 * cfg.h_micro)
    drift_full = float(np.max(np.abs(_totals(SOFT, p, r)[:2] - start[:2])))

    ok = worst_bond <= 1e-12 and drift_noise <= 1e-9 and drift_full <= 1e-9
    _record(request, 3, ok,
            f"bond sums per step {worst_bond:.2e} (<=1e-12); periodic "
            f"totals over 1e5 noise sweeps {drift_noise:.2e} and full-"
            f"dynamics p/r totals {drift_full:.2e} (<=1e-9)")


# --- 4: stationarity of the Gibbs measure --------------------------------------

def test_criterion_04_stationarity(request):
    n, reps = 64, 200
    par = CanonicalParams.compute(SOFT, 1.0, 0.3)
    cfg = SimConfig(SOFT, n, beta=1.0, tau=0.3, gamma=1.0, seed=31)
    snap = run_ensemble(cfg, [1.0], reps)[0]          # (reps, n, 3)
    centered = snap - par.w_bar
    per_rep = np.einsum("rni,rnj->rij", centered, centered) / n
    est = per_rep.mean(axis=0)
    stderr = per_rep.std(axis=0, ddof=1) / math.sqrt(reps)
    sig = float(np.max(np.abs(est - par.Sigma) / stderr))
    _record(request, 4, sig <= 4.0,
            f"single-site covariance at t=1 within {sig:.2f} standard "
            f"errors of Sigma ({reps} replicas, limit 4)")


# --- 5/6: sound-mode oscillation and entropy-mode freezing ---------------------

T_GRID = np.arange(0.0, 4.0001, 0.1)


def _damped_cos(t, amp, lam, w):
    return amp * np.exp(-lam * t) * np.cos(w * t)


def _fit_sound(series):
    lags, c, err = autocorrelation(series)
    popt, _ = curve_fit(_damped_cos, lags, c, p0=[1.0, 0.02, math.pi / 2],
                        sigma=np.maximum(err, 1e-6))
    # batch the replicas for an honest frequency error: the C(t) points
    # share replicas, so the diagonal curve_fit error is too small
    n_batches = 10
    w_b = []
    for b in range(n_batches):
        sub = ModeSeries(series.mode, series.times,
                         series.values[b::n_batches])
        lb, cb, eb = autocorrelation(sub, min_replicas=10)
        w_b.append(curve_fit(_damped_cos, lb, cb,
                             p0=[1.0, 0.02, math.pi / 2],
                             sigma=np.maximum(eb, 1e-6))[0][2])
    sigma_w = float(np.std(w_b, ddof=1) / math.sqrt(n_batches))
    cross = next((lags[i] for i in range(1, len(c)) if c[i - 1] > 0 >= c[i]),
                 math.inf)
    return popt, sigma_w, float(cross)


@pytest.fixture(scope="module")
def sound_runs():
    par = CanonicalParams.compute(HARM, 1.0, 0.0)
    modes = [Mode("sine", 0), Mode("entropy-cosine", 0)]
    out = {}
    for n in (128, 256):
        cfg = SimConfig(HARM, n, beta=1.0, tau=0.0, gamma=1.0, seed=57)
        sine, entropy = mode_ensemble(cfg, par, modes, T_GRID, 200)
        (amp, lam, w), sigma_w, cross = _fit_sound(sine)
        lags, c_ent, _ = autocorrelation(entropy)
        ratio = float(np.min(c_ent[lags <= 0.5001] / c_ent[0]))
        out[n] = {"amp": amp, "w": w, "sigma_w": sigma_w, "cross": cross,
                  "entropy_ratio": ratio}
    return out


def test_criterion_05_sound_mode_frequency(request, sound_runs):
    w_ref = math.pi / 2.0  # c * theta_0 with c = 1
    r128, r256 = sound_runs[128], sound_runs[256]
    disc = {n: abs(sound_runs[n]["w"] - w_ref) for n in (128, 256)}
    slack = 2.0 * math.hypot(r128["sigma_w"], r256["sigma_w"])
    ok_w = disc[256] <= 0.05 * w_ref
    ok_amp = abs(r256["amp"] - 1.0) <= 0.15
    ok_trend = disc[256] <= disc[128] + slack
    _record(request, 5, ok_w and ok_amp and ok_trend,
            f"N=256 frequency {r256['w']:.4f} vs {w_ref:.4f} "
            f"(|err| {disc[256]:.4f} <= {0.05 * w_ref:.4f}), amplitude "
            f"{r256['amp']:.3f} vs 1.0 (+-0.15); discrepancy N=128->256 "
            f"{disc[128]:.4f} -> {disc[256]:.4f} (slack {slack:.4f})")


def test_criterion_06_entropy_mode_freezing(request, sound_runs):
    r256 = sound_runs[256]
    ok_ent = r256["entropy_ratio"] >= 0.9
    ok_cross = r256["cross"] < 2.0
    _record(request, 6, ok_ent and ok_cross,
            f"entropy-branch C(t)/C(0) >= {r256['entropy_ratio']:.3f} for "
            f"t <= 0.5 (threshold 0.9); sine branch crosses zero at "
            f"t = {r256['cross']:.1f} (< 2.0)")


# --- 7: two-point spectral gap --------------------------------------------------

def test_criterion_07_two_point_gap(request):
    worst = 0.0
    for w in ((0.0, 0.0, 1.0), (0.3, 0.2, 1.0), (-0.2, 0.5, 1.5)):
        gap, _ = spectral_gap_estimate(HARM, w, 2)
        worst = max(worst, abs(gap - 1.0))
    ratio = two_point_poincare_ratio(HARM, (0.0, 0.0, 1.0))
    ok = worst <= 0.05 and abs(ratio - 0.5) <= 1e-6
    _record(request, 7, ok,
            f"harmonic two-point gap within {worst:.2e} of 1 at three "
            f"mean vectors (tolerance 0.05); Poincare ratio "
            f"{ratio:.8f} vs 1/2 (tolerance 1e-6)")


# --- 8: gap scaling in the block size ------------------------------------------

def test_criterion_08_gap_scaling(request):
    spec = PotentialSpec("softened-quadratic", a=0.05)
    w = (0.0, 0.0, 1.0)
    ks = np.array([2, 3, 4, 6, 8])
    scaled = []
    for k in ks:
        gap, _ = spectral_gap_estimate(spec, w, int(k), seed=5)
        scaled.append(gap * k ** 2)
    scaled = np.array(scaled)
    band = float(scaled.max() / scaled.min())
    slope = float(np.polyfit(np.log(ks), np.log(scaled), 1)[0])
    ok = band <= 4.0 and slope > -0.5
    _record(request, 8, ok,
            f"gap*K^2 = {np.array2string(scaled, precision=2)} for "
            f"K={ks.tolist()}: band ratio {band:.2f} (<= 4), fitted "
            f"exponent {slope:+.2f} (> -0.5)")


# --- 9: sphere bijection geometry ----------------------------------------------

def test_criterion_09_tau_k_geometry(request):
    rng = np.random.default_rng(9)
    k = 4
    worst_sphere = 0.0
    lo, hi = tau_K_det_bounds(SOFT, k)
    det_ok = True
    harm_worst = 0.0
    for _ in range(1000):
        x = np.column_stack([rng.normal(size=k), rng.normal(0.3, 1.0, k)])
        w = (x[:, 0].mean(), x[:, 1].mean(),
             float(np.mean(0.5 * x[:, 0] ** 2)
                   + np.mean([0.5 * r * r
                              + SOFT.a * (math.hypot(1.0, r) - 1.0)
                              for r in x[:, 1]])))
        img = tau_K(SOFT, x)
        radius = sphere_radius(SOFT, w)
        # image keeps the column means and has mean square |x|^2 = R
        msq = float((img ** 2).sum(axis=1).mean())
        err = max(abs(img[:, 0].mean() - w[0]), abs(img[:, 1].mean() - w[1]),
                  abs(msq - radius) / (1.0 + radius))
        worst_sphere = max(worst_sphere, err)
        det = tau_K_det_fd(SOFT, x)
        if not (lo * (1.0 - 1e-6) <= det <= hi * (1.0 + 1e-6)):
            det_ok = False
        harm_worst = max(harm_worst, abs(tau_K_det_fd(HARM, x) - 1.0))
    ok = worst_sphere <= 1e-10 and det_ok and harm_worst <= 1e-6
    _record(request, 9, ok,
            f"1000 random K=4 configs: sphere constraint error "
            f"{worst_sphere:.2e} (<=1e-10); |det| in "
            f"[{lo:.3f}, {hi:.3f}] {'holds' if det_ok else 'FAILS'}; "
            f"harmonic |det - 1| <= {harm_worst:.2e} (<=1e-6)")


# --- 10: equivalence of ensembles -----------------------------------------------

def test_criterion_10_equivalence_of_ensembles(request):
    # The stated observable G = V'(r_1) is degenerate for the harmonic
    # potential: exchangeability gives E[r_1 | w] = r exactly for every n,
    # so the gap is identically zero (and likewise E[p_1^2 | w] = 1/beta
    # exactly).  The test asserts that degeneracy, then measures the
    # genuine O(1/n) gap of the simplest non-degenerate local observable,
    # p_1^4, whose exact conditional moment is 3/beta^2 (1 - 1/n).
    beta = 1.0
    w = (0.0, 0.0, 1.0 / beta)
    ns = [8, 16, 32, 64, 128]
    canonical_p4 = 3.0 / beta ** 2
    rng = np.random.default_rng(10)
    degenerate_ok = all(
        abs(harmonic_moment_p1(w, n, 2) - 1.0 / beta) < 1e-12 for n in ns)
    gaps, errs = [], []
    for n in ns:
        total, totsq, count = 0.0, 0.0, 0
        for _ in range(8):                       # 8 x 50k exact samples
            p, r = sample_sphere_harmonic(w, n, 50_000, rng)
            vals = (p ** 4).mean(axis=1)         # site-averaged p^4
            total += vals.sum()
            totsq += (vals ** 2).sum()
            count += vals.size
            # the sampler pins the mean stretch, so E[V'(r_1)|w] - r = 0
            assert abs(r.mean() - w[1]) < 1e-12
        mean = total / count
        var = totsq / count - mean ** 2
        gaps.append(abs(mean - canonical_p4))
        errs.append(math.sqrt(var / count))
        oracle = canonical_p4 - harmonic_moment_p1(w, n, 4)
        assert abs(gaps[-1] - oracle) < 4.0 * errs[-1]
    fit = ensembles_gap_curve(ns, gaps, errs)
    ok = (-1.35 <= fit["slope"] <= -0.65 and not fit["inconclusive"]
          and degenerate_ok)
    _record(request, 10, ok,
            f"log-log gap slope {fit['slope']:+.3f} "
            f"(+-{fit['slope_stderr']:.3f}) over n={ns}, window "
            f"[-1.35, -0.65]; stated harmonic observables are exactly "
            f"degenerate (gap 0), measured with p^4 instead")


# --- 11: Boltzmann-Gibbs residual trend -----------------------------------------

def test_criterion_11_boltzmann_gibbs_trend(request):
    par = CanonicalParams.compute(SOFT, 1.0, 0.3)
    results = []
    for n in (32, 64, 128):
        cfg = SimConfig(SOFT, n, beta=1.0, tau=0.3, gamma=1.0, seed=23)
        x = np.arange(1, n) / n
        dx_h = np.outer(math.sqrt(2.0) * (math.pi / 2.0)
                        * np.cos(math.pi / 2.0 * x), par.R[:, 0])
        results.append(bg_residual_variance(cfg, par, dx_h, 0.5, 48))
    vals = [v for v, _ in results]
    errs = [e for _, e in results]
    ok = all(vals[i + 1] + errs[i + 1] < vals[i] - errs[i]
             for i in range(2))
    detail = ", ".join(f"N={n}: {v:.5f}+-{e:.5f}"
                       for n, (v, e) in zip((32, 64, 128), results))
    _record(request, 11, ok,
            f"residual variance at T=0.5 decreases beyond error bars: "
            f"{detail}")


# --- 12: integrator validation --------------------------------------------------

def test_criterion_12_integrator_validation(request):
    # gamma = 0, N = 2 harmonic wall chain: (p1, p2, r1, r2) evolves as an
    # affine linear system in the N-dilated time, so expm is an exact oracle
    tau = 0.3
    gen = np.array([
        [0.0, 0.0, -1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0, tau],
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [-1.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0]])
    p = np.array([0.4, -0.2])
    r = np.array([0.1, 0.5])
    z = np.array([p[0], p[1], r[0], r[1], 1.0])
    exact = expm(2.0 * 0.1 * gen) @ z
    cfg = SimConfig(HARM, 2, beta=1.0, tau=tau, gamma=0.0, seed=0)
    advance_state(cfg, p, r, 0.1)
    err = float(np.max(np.abs(np.concatenate([p, r]) - exact[:4])))

    # weak order: the Euler-Maruyama scheme's stationary mode-variance bias
    # is first order in the effective step, so it halves with the step
    par = CanonicalParams.compute(SOFT, 1.0, 0.3)
    mode = Mode("entropy-cosine", 1)
    n, reps = 16, 800
    h0 = SimConfig(SOFT, n, 1.0, 0.3, 1.0, scheme="direct-em").h_micro
    biases = []
    for h in (h0, h0 / 2.0):
        cfg = SimConfig(SOFT, n, 1.0, 0.3, 1.0, scheme="direct-em",
                        h_micro=h, seed=77)
        series = mode_ensemble(cfg, par, [mode], [0.4], reps)[0]
        prof = mode_profile(par, mode, n)
        exact_var = static_covariance(par, prof, prof)
        biases.append(float(series.values.var(ddof=1)) - exact_var)
    ratio = biases[0] / biases[1]
    ok = err <= 1e-6 and 1.4 <= ratio <= 2.8
    _record(request, 12, ok,
            f"matrix-exponential oracle error {err:.2e} over t=0.1 at the "
            f"default step (<=1e-6); EM variance bias ratio under step "
            f"halving {ratio:.2f} (window [1.4, 2.8])")
