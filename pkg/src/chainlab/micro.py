"""Microcanonical geometry, sampling, and spectral-gap estimation.

The microcanonical manifold of K sites pins the empirical means of
(p, r, e).  Its elementary building block is the two-point circle: a bond
with fixed sums is a one-dimensional circle parameterized by an angle θ,
with a Jacobian density 𝔍(θ) bounded above and below by curvature
constants.  A change of variables τ_K = (ζ*, ζ applied to the stretches)
maps the manifold onto a round sphere, which is what makes uniform-measure
reasoning and exact harmonic oracles available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from . import kernels
from .potential import PotentialSpec, curvature_bounds, derivative, value
from .thermo import entropy_and_multipliers, gibbs_potential

_MEAN_TOL = 1e-10


# --- two-point circle coordinates -------------------------------------------

@dataclass(frozen=True)
class TwoPointCoords:
    """Circle coordinates of one bond: means, internal energy, angle."""

    p: float
    r: float
    e_int: float
    theta: float

    def __post_init__(self):
        if self.e_int < 0.0:
            raise ValueError("internal energy must be nonnegative")
        if not 0.0 <= self.theta < 2.0 * math.pi:
            raise ValueError("theta must lie in [0, 2*pi)")


def to_circle(spec: PotentialSpec, x1, x2) -> TwoPointCoords:
    """Map two sites x = (p, r) to circle coordinates.

    Convention: θ = 0 when the bond is at its energy minimum (x1 = x2).
    """
    pm, rm, e_int, theta = kernels.bond_to_circle(
        x1[0], x1[1], x2[0], x2[1], spec.kind_code, spec.a)
    return TwoPointCoords(pm, rm, e_int, theta)


def from_circle(spec: PotentialSpec, coords: TwoPointCoords):
    """Inverse of :func:`to_circle`; returns ((p1, r1), (p2, r2))."""
    p1, r1, p2, r2 = kernels.bond_from_circle(
        coords.p, coords.r, coords.e_int, coords.theta,
        spec.kind_code, spec.a)
    return (p1, r1), (p2, r2)


def jacobian_bounds(spec: PotentialSpec) -> tuple[float, float]:
    """Analytic bounds [√δ₋/(√2 δ₊), √δ₊/(√2 δ₋)] on the circle Jacobian."""
    lo, hi = curvature_bounds(spec)
    return math.sqrt(lo) / (math.sqrt(2.0) * hi), \
        math.sqrt(hi) / (math.sqrt(2.0) * lo)


def jacobian(spec: PotentialSpec, coords: TwoPointCoords) -> float:
    """Circle Jacobian 𝔍 = √2·√(V(r₁)+V(r₂)−2V(r)) / |V'(r₁)−V'(r₂)|.

    The coincident-stretch branch returns the analytic limit
    1/√(2V''(r)).  Asserts the curvature bounds.
    """
    val = kernels.jacobian_at(coords.p, coords.r, coords.e_int, coords.theta,
                              spec.kind_code, spec.a)
    lo, hi = jacobian_bounds(spec)
    assert lo - 1e-12 <= val <= hi + 1e-12, \
        f"Jacobian {val} escaped its analytic bounds [{lo}, {hi}]"
    return val


# --- microstates -------------------------------------------------------------

@dataclass
class MicrostateK:
    """K sites with pinned empirical means w = (p, r, e)."""

    spec: PotentialSpec
    x: np.ndarray  # shape (K, 2): columns (p_k, r_k)
    w: np.ndarray  # target mean vector

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.x.ndim != 2 or self.x.shape[1] != 2 or self.x.shape[0] < 2:
            raise ValueError("need an array of K >= 2 (p, r) pairs")
        means = np.array([
            self.x[:, 0].mean(),
            self.x[:, 1].mean(),
            float(np.mean(0.5 * self.x[:, 0] ** 2
                          + value(self.spec, self.x[:, 1]))),
        ])
        if np.max(np.abs(means - self.w)) > _MEAN_TOL:
            raise ValueError(
                f"configuration means {means} miss the target {self.w}")

    @property
    def K(self) -> int:
        return self.x.shape[0]


def feasible(spec: PotentialSpec, w) -> bool:
    """True iff some configuration attains the mean vector w, strictly."""
    p, r, e = (float(v) for v in w)
    return e > 0.5 * p * p + value(spec, r)


def initial_microstate(spec: PotentialSpec, w, k_sites: int) -> MicrostateK:
    """A deterministic starting point on the manifold: equal stretches and
    momenta spread along a fixed zero-sum, unit-norm direction."""
    p, r, e = (float(v) for v in w)
    if not feasible(spec, w):
        raise ValueError(f"infeasible mean vector {w}: "
                         "need e > p^2/2 + V(r)")
    if k_sites < 2:
        raise ValueError("need at least two sites")
    c = np.zeros(k_sites)
    c[0], c[1] = 1.0, -1.0
    c /= math.sqrt(2.0)
    rho = math.sqrt(k_sites * (2.0 * (e - value(spec, r)) - p * p))
    x = np.empty((k_sites, 2))
    x[:, 0] = p + rho * c
    x[:, 1] = r
    return MicrostateK(spec, x, np.asarray(w, dtype=float))


# --- the sphere bijection ----------------------------------------------------

def sphere_radius(spec: PotentialSpec, w) -> float:
    """Mean-square radius R = 2e − 2V(r) + r² of the comparison sphere."""
    p, r, e = (float(v) for v in w)
    return 2.0 * e - 2.0 * value(spec, r) + r * r


def _zeta(spec: PotentialSpec, r: np.ndarray) -> np.ndarray:
    k_sites = r.size
    alpha = np.cumsum(r) / np.arange(1, k_sites + 1)
    out = np.empty(k_sites)
    out[-1] = alpha[-1]
    for k in range(1, k_sites):  # k is the 1-based recursion index
        gap = value(spec, r[k]) + k * value(spec, alpha[k - 1]) \
            - (k + 1) * value(spec, alpha[k])
        val = math.sqrt(max(2.0 * k / (k + 1) * gap, 0.0))
        # sign follows r_{k+1} - alpha_k, the quantity whose vanishing
        # degenerates the square root
        out[k - 1] = val if r[k] >= alpha[k - 1] else -val
    return out


def _zeta_star(rp: np.ndarray) -> np.ndarray:
    k_sites = rp.size
    out = np.empty(k_sites)
    inv = rp[:-1] / np.arange(1, k_sites)
    tail = np.concatenate([np.cumsum(inv[::-1])[::-1], [0.0]])
    out[0] = rp[-1] - tail[0]
    for k in range(2, k_sites):
        out[k - 1] = rp[-1] + rp[k - 2] - tail[k - 1]
    out[-1] = rp[-1] + rp[-2]
    return out


def tau_K(spec: PotentialSpec, config: np.ndarray) -> np.ndarray:
    """The stretch-coordinate bijection onto the comparison sphere.

    Momenta pass through unchanged; stretches map by ζ then ζ*.  For a
    configuration with means w the image has column means (p, r) and mean
    square |x|² equal to sphere_radius(spec, w).
    """
    config = np.asarray(config, dtype=float)
    if config.shape[0] < 3:
        raise ValueError("the sphere bijection needs K >= 3 sites")
    out = config.copy()
    out[:, 1] = _zeta_star(_zeta(spec, config[:, 1]))
    return out


def tau_K_det_fd(spec: PotentialSpec, config: np.ndarray,
                 h: float = 1e-6) -> float:
    """|det| of the stretch-block Jacobian of τ_K by central differences."""
    r = np.asarray(config, dtype=float)[:, 1]
    k_sites = r.size
    jac = np.empty((k_sites, k_sites))
    for j in range(k_sites):
        rp = r.copy()
        rm = r.copy()
        rp[j] += h
        rm[j] -= h
        jac[:, j] = (_zeta_star(_zeta(spec, rp))
                     - _zeta_star(_zeta(spec, rm))) / (2.0 * h)
    return abs(float(np.linalg.det(jac)))


def tau_K_det_bounds(spec: PotentialSpec, k_sites: int) -> tuple[float, float]:
    """The analytic band [c₋^{K−1}, c₊^{K−1}] for |det τ'_K|."""
    lo, hi = curvature_bounds(spec)
    c_minus = lo / math.sqrt(hi)
    c_plus = hi / math.sqrt(lo)
    return c_minus ** (k_sites - 1), c_plus ** (k_sites - 1)


# --- sampling ----------------------------------------------------------------

def mcmc_microcanonical(spec: PotentialSpec, w, k_sites: int,
                        n_samples: int, thin: int = 10, burn_in: int = 200,
                        seed: int = 0, chain: int = 0):
    """Random-scan bond MCMC targeting the microcanonical measure.

    Each update resamples one bond's circle angle from the density ∝ 𝔍(θ)
    by rejection against a uniform envelope scaled with the analytic upper
    bound, so every sample lies exactly on the manifold.  Returns arrays
    (p, r) of shape (n_samples, k_sites).
    """
    state = initial_microstate(spec, w, k_sites)
    p = np.ascontiguousarray(state.x[:, 0])
    r = np.ascontiguousarray(state.x[:, 1])
    _, jmax = jacobian_bounds(spec)
    kernels.mcmc_run(p, r, burn_in * k_sites, spec.kind_code, spec.a,
                     jmax, seed, chain, 1 << 40)
    out_p = np.empty((n_samples, k_sites))
    out_r = np.empty((n_samples, k_sites))
    kernels.mcmc_collect(p, r, n_samples, thin, k_sites, spec.kind_code,
                         spec.a, jmax, seed, chain, out_p, out_r)
    return out_p, out_r


def sample_sphere_harmonic(w, k_sites: int, n_samples: int,
                           rng: np.random.Generator):
    """Exact uniform samples of the harmonic microcanonical manifold.

    For the harmonic potential the manifold is a round sphere in the
    subspace of fixed momentum and stretch means, so projecting Gaussians
    and rescaling is exact.  Returns (p, r) of shape (n_samples, k_sites).
    """
    p_bar, r_bar, e_bar = (float(v) for v in w)
    rho2 = k_sites * (2.0 * e_bar - p_bar ** 2 - r_bar ** 2)
    if rho2 <= 0.0:
        raise ValueError(f"infeasible mean vector {w}")
    g = rng.normal(size=(n_samples, 2 * k_sites))
    g[:, :k_sites] -= g[:, :k_sites].mean(axis=1, keepdims=True)
    g[:, k_sites:] -= g[:, k_sites:].mean(axis=1, keepdims=True)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    u = g * (math.sqrt(rho2) / norms)
    return p_bar + u[:, :k_sites], r_bar + u[:, k_sites:]


def harmonic_moment_p1(w, k_sites: int, order: int) -> float:
    """Exact conditional moment E[p₁^order] on the harmonic manifold
    (order 2 or 4), from uniform-on-sphere marginal moments."""
    p_bar, r_bar, e_bar = (float(v) for v in w)
    rho2 = k_sites * (2.0 * e_bar - p_bar ** 2 - r_bar ** 2)
    d = 2 * k_sites - 2
    v2 = 1.0 - 1.0 / k_sites  # squared norm of the projected coordinate
    m2 = v2 * rho2 / d
    if order == 2:
        return p_bar ** 2 + m2
    if order == 4:
        m4 = 3.0 * v2 ** 2 * rho2 ** 2 / (d * (d + 2))
        return p_bar ** 4 + 6.0 * p_bar ** 2 * m2 + m4
    raise ValueError("only orders 2 and 4 are tabulated")


def micro_expectation(spec: PotentialSpec, observable, w, n_sites: int,
                      n_samples: int = 4000, thin: int | None = None,
                      seed: int = 0, n_batches: int = 32):
    """Microcanonical expectation of an observable with batch-means errors.

    ``observable(p, r)`` receives (n_samples, n_sites) arrays and returns
    one value per sample.  Returns (estimate, stderr).
    """
    if thin is None:
        thin = 4 * n_sites
    p, r = mcmc_microcanonical(spec, w, n_sites, n_samples, thin, seed=seed)
    vals = np.asarray(observable(p, r), dtype=float)
    batches = np.array_split(vals, n_batches)
    means = np.array([b.mean() for b in batches])
    return float(vals.mean()), \
        float(means.std(ddof=1) / math.sqrt(len(batches)))


# --- spectral gap ------------------------------------------------------------

def _circle_density(spec: PotentialSpec, w, thetas: np.ndarray) -> np.ndarray:
    """𝔍(θ) on a two-site bond whose means match w."""
    p_bar, r_bar, e_bar = (float(v) for v in w)
    e_int = e_bar - 0.5 * p_bar ** 2 - value(spec, r_bar)
    if e_int <= 0.0:
        raise ValueError(f"infeasible mean vector {w}")
    return np.array([kernels.jacobian_at(p_bar, r_bar, e_int, t,
                                         spec.kind_code, spec.a)
                     for t in thetas])


def two_point_gap_quadrature(spec: PotentialSpec, w,
                             n_grid: int = 512) -> float:
    """Smallest nonzero eigenvalue of the two-site noise generator.

    Solves the generalized eigenproblem of the circle diffusion: Dirichlet
    form ½∫(f')²𝔍⁻¹dθ against mass ∫f²𝔍dθ on a periodic grid.  For the
    harmonic potential the diffusion is the standard circle Laplacian with
    gap exactly 1.
    """
    dth = 2.0 * math.pi / n_grid
    nodes = dth * np.arange(n_grid)
    mids = nodes + 0.5 * dth
    jac_mid = _circle_density(spec, w, mids)
    jac_node = _circle_density(spec, w, nodes)
    w_edge = 0.5 / (jac_mid * dth)  # ½·𝔍⁻¹ per edge, FD weight 1/dth
    stiff = np.zeros((n_grid, n_grid))
    idx = np.arange(n_grid)
    nxt = (idx + 1) % n_grid
    np.add.at(stiff, (idx, idx), w_edge)
    np.add.at(stiff, (nxt, nxt), w_edge)
    np.add.at(stiff, (idx, nxt), -w_edge)
    np.add.at(stiff, (nxt, idx), -w_edge)
    mass = np.diag(jac_node * dth)
    vals = eigh(stiff, mass, eigvals_only=True, subset_by_index=[0, 1])
    return float(vals[1])


def two_point_poincare_ratio(spec: PotentialSpec, w,
                             n_grid: int = 4096) -> float:
    """Var(cosθ) / E[(𝒴 cosθ)²] under the bond's circle measure ∝ 𝔍dθ;
    equals 1/2 for the harmonic potential."""
    dth = 2.0 * math.pi / n_grid
    thetas = dth * (np.arange(n_grid) + 0.5)
    jac = _circle_density(spec, w, thetas)
    z = np.sum(jac) * dth
    f = np.cos(thetas)
    mean = np.sum(f * jac) * dth / z
    var = np.sum((f - mean) ** 2 * jac) * dth / z
    # 𝒴 cosθ = 𝔍⁻¹·(−sinθ), so the energy is ∫ sin²θ 𝔍⁻¹ dθ / Z
    energy = np.sum(np.sin(thetas) ** 2 / jac) * dth / z
    return var / energy


def _fit_decay_rate(lags: np.ndarray, corr: np.ndarray) -> float:
    """Slope of −log C(t) on the tail window C/C(0) in (0.1, 0.7).

    The late window suppresses contamination by fast modes, whose weight
    in the mixture Σ aᵢ e^{−λᵢt} has decayed there.
    """
    c0 = corr[0]
    if c0 <= 0.0:
        return math.nan
    rel = corr / c0
    below = np.nonzero(rel <= 0.1)[0]
    stop = below[0] if below.size else rel.size
    mask = np.zeros(rel.size, dtype=bool)
    mask[:stop] = True
    mask &= (rel > 0.1) & (rel < 0.7) & (lags > 0)
    if mask.sum() < 3:
        return math.nan
    x = lags[mask]
    y = -np.log(rel[mask])
    slope = float(np.polyfit(x, y, 1)[0])
    return slope


def spectral_gap_estimate(spec: PotentialSpec, w, k_sites: int,
                          n_chains: int = 16, n_records: int = 2500,
                          h: float = 0.02, rec_every: int | None = None,
                          seed: int = 0):
    """Smallest nonzero eigenvalue of the K-site noise generator.

    K = 2 uses the exact quadrature eigensolve (stderr 0).  K >= 3 runs the
    exchange-noise diffusion and fits exponential decay rates of a basket
    of smooth observables (site fields, a cross moment, bond angles),
    taking the slowest; the standard error is a jackknife over chains.
    Returns (gap, stderr); a fit failure yields (nan, inf).
    """
    if k_sites == 2:
        return two_point_gap_quadrature(spec, w), 0.0
    _, jmax = jacobian_bounds(spec)
    tau_c = k_sites ** 2 / 4.0  # expected correlation time, gap ~ 4/K²
    if rec_every is None:
        rec_every = max(1, round(tau_c / 20.0 / h))
    max_lag = min(n_records // 4, max(20, round(3.0 * tau_c
                                                / (h * rec_every))))
    per_chain = []
    for chain in range(n_chains):
        state = initial_microstate(spec, w, k_sites)
        p = np.ascontiguousarray(state.x[:, 0])
        r = np.ascontiguousarray(state.x[:, 1])
        kernels.mcmc_run(p, r, 200 * k_sites, spec.kind_code, spec.a, jmax,
                         seed, chain, 1 << 40)
        out_p = np.empty((n_records, k_sites))
        out_r = np.empty((n_records, k_sites))
        kernels.noise_evolve(p, r, n_records * rec_every, h, spec.kind_code,
                             spec.a, seed, chain, rec_every, out_p, out_r)
        obs = _gap_observables(spec, out_p, out_r)
        per_chain.append(_autocorr_matrix(obs, max_lag))
    per_chain = np.array(per_chain)  # (chains, n_obs, max_lag+1)
    lags = h * rec_every * np.arange(max_lag + 1)

    def slowest(acf_mean):
        rates = [_fit_decay_rate(lags, acf_mean[i])
                 for i in range(acf_mean.shape[0])]
        rates = [x for x in rates if math.isfinite(x) and x > 0]
        return min(rates) if rates else math.nan

    full = slowest(per_chain.mean(axis=0))
    if not math.isfinite(full):
        return math.nan, math.inf
    jack = []
    for i in range(n_chains):
        rest = np.delete(per_chain, i, axis=0).mean(axis=0)
        jack.append(slowest(rest))
    jack = np.array(jack)
    if not np.all(np.isfinite(jack)):
        return full, math.inf
    stderr = math.sqrt((n_chains - 1) / n_chains
                       * float(np.sum((jack - jack.mean()) ** 2)))
    return full, stderr


def _gap_observables(spec: PotentialSpec, p: np.ndarray,
                     r: np.ndarray) -> np.ndarray:
    """Observable basket for rate fitting: p₁, r₁, e₁, p₁p₂, bond cos θ."""
    cols = [p[:, 0], r[:, 0],
            0.5 * p[:, 0] ** 2 + value(spec, r[:, 0]),
            p[:, 0] * p[:, 1]]
    for b in range(p.shape[1] - 1):
        pm = 0.5 * (p[:, b] + p[:, b + 1])
        dp = p[:, b] - p[:, b + 1]
        rm = 0.5 * (r[:, b] + r[:, b + 1])
        vpart = np.maximum(
            0.5 * (value(spec, r[:, b]) + value(spec, r[:, b + 1]))
            - value(spec, rm), 0.0)
        e_int = 0.125 * dp ** 2 + vpart
        with np.errstate(divide="ignore", invalid="ignore"):
            ct = np.where(e_int > 0, math.sqrt(2.0) * dp / 4.0
                          / np.sqrt(e_int), 0.0)
        cols.append(ct)
    return np.array(cols)


def _autocorr_matrix(obs: np.ndarray, max_lag: int) -> np.ndarray:
    """Empirical autocovariances C_i(t) for each observable row."""
    n_obs, n_t = obs.shape
    out = np.empty((n_obs, max_lag + 1))
    centered = obs - obs.mean(axis=1, keepdims=True)
    for i in range(n_obs):
        c = centered[i]
        for lag in range(max_lag + 1):
            out[i, lag] = np.dot(c[:n_t - lag], c[lag:]) / (n_t - lag)
    return out


# --- equivalence of ensembles -------------------------------------------------

def ensembles_gap_curve(n_list, gaps, stderrs=None):
    """Fit the log-log slope of microcanonical-vs-canonical gaps.

    ``gaps[i]`` is |⟨G|u⟩_{n_i} − E_canonical[G]|.  Returns a dict with the
    slope, intercept, slope stderr, and an ``inconclusive`` flag raised
    when sampling noise dominates any gap (gap < 3 × its stderr); in that
    case the required sample budget scales with (3·stderr/gap)².
    """
    n_list = np.asarray(n_list, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    inconclusive = False
    if stderrs is not None:
        stderrs = np.asarray(stderrs, dtype=float)
        inconclusive = bool(np.any(gaps < 3.0 * stderrs))
    if np.any(gaps <= 0.0):
        return {"slope": math.nan, "intercept": math.nan,
                "slope_stderr": math.inf, "inconclusive": True}
    x = np.log(n_list)
    y = np.log(gaps)
    if x.size >= 3:
        coeffs, cov = np.polyfit(x, y, 1, cov=True)
        stderr = float(math.sqrt(max(cov[0, 0], 0.0)))
    else:  # two points determine the line; no residual to scale by
        coeffs = np.polyfit(x, y, 1)
        stderr = math.inf
    return {"slope": float(coeffs[0]), "intercept": float(coeffs[1]),
            "slope_stderr": stderr,
            "inconclusive": inconclusive}


# --- rate function -------------------------------------------------------------

def rate_function(spec: PotentialSpec, lam, u) -> float:
    """Large-deviation rate of the mean conserved vector at u = (p, r, e).

    I_λ(u) = Z*(u) − Z*(u_λ) − ∇Z*(u_λ)·(u − u_λ) with Z*(p, r, e) =
    −S(r, e − p²/2), the entropy evaluated at the internal energy.  The
    admissible domain requires e − p²/2 > V(r).
    """
    from .thermo import _beta_tau, mean_quantities

    beta, tau = _beta_tau(lam)
    p, r, e = (float(v) for v in u)
    e_int = e - 0.5 * p * p
    if e_int <= value(spec, r):
        raise ValueError(
            f"u = {tuple(u)} outside the admissible domain: need "
            "e - p^2/2 > V(r)")
    s_u, _, _ = entropy_and_multipliers(spec, r, e_int)
    r_bar, e_bar = mean_quantities(spec, lam)
    s_ref, _, _ = entropy_and_multipliers(spec, r_bar, e_bar)
    # gradient of Z* at u_λ: (β·0, βτ, −β)
    grad_dot = beta * tau * (r - r_bar) - beta * (e - e_bar)
    return -s_u + s_ref - grad_dot


def rate_function_tail_bound(n_sites: int, delta: float, big_m: float,
                             d: int = 3) -> float:
    """The exponential Chebyshev bound 2^d exp(−n·M·δ²/d) on the canonical
    probability that the empirical mean strays by δ."""
    return 2.0 ** d * math.exp(-n_sites * big_m * delta ** 2 / d)
