"""Numba implementations of the hot inner loops.

All kernels share a counter-based RNG: every Gaussian or uniform variate is
a pure hash of ``(seed, replica, step, bond, substream)``, so trajectories
are reproducible, independent of sweep scheduling, and replicas can be
extended or parallelized without shared state.
"""

import math

import numpy as np
from numba import njit

BACKEND = "numba"

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_K1 = np.uint64(0xA24BAED4963EE407)
_K2 = np.uint64(0x9FB21C651E98DF25)
_K3 = np.uint64(0xC2B2AE3D27D4EB4F)
_K4 = np.uint64(0x165667B19E3779F9)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _key(seed, a, b, c, d):
    z = _mix64(np.uint64(seed) + _GOLD)
    z = _mix64(z + np.uint64(a) * _K1)
    z = _mix64(z + np.uint64(b) * _K2)
    z = _mix64(z + np.uint64(c) * _K3)
    z = _mix64(z + np.uint64(d) * _K4)
    return z


@njit(cache=True, inline="always")
def counter_uniform(seed, a, b, c, d):
    """Uniform in (0, 1], a pure function of its integer arguments."""
    h = _key(seed, a, b, c, d)
    return (float(h >> np.uint64(11)) + 1.0) * _INV53


@njit(cache=True, inline="always")
def counter_normal(seed, a, b, c, d):
    """Standard normal, a pure function of its integer arguments."""
    h1 = _key(seed, a, b, c, d)
    h2 = _mix64(h1 + _GOLD)
    u1 = (float(h1 >> np.uint64(11)) + 1.0) * _INV53
    u2 = float(h2 >> np.uint64(11)) * _INV53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


# --- potential, inlined per kind code (0 harmonic, 1 softened-quadratic) ---

@njit(cache=True, inline="always")
def _v(kind, a, r):
    if kind == 0:
        return 0.5 * r * r
    return 0.5 * r * r + a * (math.sqrt(1.0 + r * r) - 1.0)


@njit(cache=True, inline="always")
def _vp(kind, a, r):
    if kind == 0:
        return r
    return r + a * r / math.sqrt(1.0 + r * r)


@njit(cache=True, inline="always")
def _vpp(kind, a, r):
    if kind == 0:
        return 1.0
    s = math.sqrt(1.0 + r * r)
    return 1.0 + a / (s * s * s)


# --- two-point circle coordinates -----------------------------------------

@njit(cache=True)
def bond_to_circle(p1, r1, p2, r2, kind, a):
    """Map a bond to its microcanonical circle coordinates (p, r, E, theta)."""
    pm = 0.5 * (p1 + p2)
    rm = 0.5 * (r1 + r2)
    vpart = 0.5 * (_v(kind, a, r1) + _v(kind, a, r2)) - _v(kind, a, rm)
    if vpart < 0.0:
        vpart = 0.0
    e_int = 0.125 * (p1 - p2) ** 2 + vpart
    if e_int <= 0.0:
        return pm, rm, 0.0, 0.0
    cos_part = math.sqrt(2.0) * (p1 - p2) / 4.0
    sin_part = math.sqrt(vpart)
    if r1 < r2:
        sin_part = -sin_part
    theta = math.atan2(sin_part, cos_part)
    if theta < 0.0:
        theta += 2.0 * math.pi
    return pm, rm, e_int, theta


@njit(cache=True)
def _solve_gap(kind, a, rm, target):
    """Positive d with (V(rm+d/2)+V(rm-d/2))/2 - V(rm) = target.

    Safeguarded Newton from the upper curvature bracket; the gap function
    is even, strictly increasing in d > 0 and convex under the curvature
    assumptions.
    """
    if target <= 0.0:
        return 0.0
    if kind == 0:
        return math.sqrt(8.0 * target)
    d_hi = math.sqrt(8.0 * target)  # delta_minus = 1 for this family
    d_lo = math.sqrt(8.0 * target / (1.0 + a))
    d = d_hi
    vm = _v(kind, a, rm)
    # absolute floor: g is a difference of O(1 + |vm|) quantities, so its
    # round-off error cannot fall below ~eps * (1 + |vm|)
    tol = 1e-15 * target + 4e-16 * (1.0 + abs(vm))
    for _ in range(60):
        g = 0.5 * (_v(kind, a, rm + 0.5 * d) + _v(kind, a, rm - 0.5 * d)) - vm
        err = g - target
        if abs(err) <= tol:
            break
        gp = 0.25 * (_vp(kind, a, rm + 0.5 * d) - _vp(kind, a, rm - 0.5 * d))
        d_new = d - err / gp
        if abs(d_new - d) <= 4e-16 * d:
            d = d_new
            break
        if d_new < d_lo or d_new > d_hi:
            d_new = 0.5 * (d_lo + d_hi)
        if err > 0.0:
            d_hi = d
        else:
            d_lo = d
        d = d_new
    return d


@njit(cache=True)
def bond_from_circle(pm, rm, e_int, theta, kind, a):
    """Inverse of :func:`bond_to_circle`."""
    ct = math.cos(theta)
    st = math.sin(theta)
    dp = 2.0 * math.sqrt(2.0 * e_int) * ct
    target = e_int * st * st
    d = _solve_gap(kind, a, rm, target)
    if st < 0.0:
        d = -d
    p1 = pm + 0.5 * dp
    p2 = pm - 0.5 * dp
    r1 = rm + 0.5 * d
    r2 = rm - 0.5 * d
    return p1, r1, p2, r2


@njit(cache=True)
def jacobian_at(pm, rm, e_int, theta, kind, a):
    """Jacobian determinant of the circle change of variables at theta."""
    if e_int <= 0.0:
        return 1.0 / math.sqrt(2.0 * _vpp(kind, a, rm))
    st = math.sin(theta)
    target = e_int * st * st
    # below the gap solver's accuracy floor the coincident-stretch series
    # is the more accurate branch (both errors ~1e-6 at the crossover)
    if target <= 1e-10 * (1.0 + abs(_v(kind, a, rm))):
        return 1.0 / math.sqrt(2.0 * _vpp(kind, a, rm))
    d = _solve_gap(kind, a, rm, target)
    dvp = _vp(kind, a, rm + 0.5 * d) - _vp(kind, a, rm - 0.5 * d)
    if dvp < 1e-10 * (1.0 + abs(rm)):
        # r1 -> r2 limit
        return 1.0 / math.sqrt(2.0 * _vpp(kind, a, rm))
    return 2.0 * math.sqrt(e_int) * abs(st) / dvp


@njit(cache=True, inline="always")
def _jinv(pm, rm, e_int, theta, kind, a):
    return 1.0 / jacobian_at(pm, rm, e_int, theta, kind, a)


# --- drift: velocity Verlet for the accelerated Liouville flow -------------

@njit(cache=True)
def _kick(p, r, s, tau, kind, a, periodic):
    n = p.shape[0]
    if periodic:
        for i in range(n):
            ip1 = i + 1 if i + 1 < n else 0
            p[i] += s * (_vp(kind, a, r[ip1]) - _vp(kind, a, r[i]))
    else:
        for i in range(n - 1):
            p[i] += s * (_vp(kind, a, r[i + 1]) - _vp(kind, a, r[i]))
        p[n - 1] += s * (tau - _vp(kind, a, r[n - 1]))


@njit(cache=True)
def _drift_positions(p, r, s, periodic):
    n = p.shape[0]
    if periodic:
        p0 = p[n - 1]
    else:
        p0 = 0.0
    prev = p0
    for i in range(n):
        cur = p[i]
        r[i] += s * (cur - prev)
        prev = cur


@njit(cache=True)
def verlet_step(p, r, s, tau, kind, a, periodic):
    """One time-reversible Verlet step of the drift over effective time s."""
    _kick(p, r, 0.5 * s, tau, kind, a, periodic)
    _drift_positions(p, r, s, periodic)
    _kick(p, r, 0.5 * s, tau, kind, a, periodic)


# --- noise substeps --------------------------------------------------------

_FD_THETA = 1e-6


@njit(cache=True)
def _circle_bond_update(p, r, i, j, teff, kind, a, xi):
    """Rotate bond (i, j) on its microcanonical circle by an EM step."""
    pm, rm, e_int, theta = bond_to_circle(p[i], r[i], p[j], r[j], kind, a)
    if e_int <= 0.0:
        return
    if kind == 0:
        jinv = math.sqrt(2.0)
        drift = 0.0
    else:
        jinv = _jinv(pm, rm, e_int, theta, kind, a)
        jp = _jinv(pm, rm, e_int, theta + _FD_THETA, kind, a)
        jm = _jinv(pm, rm, e_int, theta - _FD_THETA, kind, a)
        drift = 0.5 * jinv * (jp - jm) / (2.0 * _FD_THETA)
    theta = theta + drift * teff + jinv * math.sqrt(teff) * xi
    p1, r1, p2, r2 = bond_from_circle(pm, rm, e_int, theta, kind, a)
    p[i] = p1
    r[i] = r1
    p[j] = p2
    r[j] = r2


@njit(cache=True)
def noise_sweep_circle(p, r, teff, kind, a, periodic, seed, replica, step,
                       even_first):
    """Apply the circle diffusion to even bonds then odd bonds (or reversed).

    Bond b couples sites (b, b+1); a periodic chain adds the wrap bond.
    """
    n = p.shape[0]
    nb = n if periodic else n - 1
    for phase in range(2):
        par = phase if even_first else 1 - phase
        b = par
        while b < nb:
            j = b + 1 if b + 1 < n else 0
            xi = counter_normal(seed, replica, step, b, 0)
            _circle_bond_update(p, r, b, j, teff, kind, a, xi)
            b += 2


@njit(cache=True)
def noise_sweep_em(p, r, teff, kind, a, periodic, seed, replica, step):
    """Euler-Maruyama step of the exchange noise, one shared dB per bond.

    The per-bond fluxes telescope, so the chain totals of p and r are
    conserved exactly; bond energies only to O(teff).
    """
    n = p.shape[0]
    nb = n if periodic else n - 1
    djp = np.empty(nb)
    djr = np.empty(nb)
    sq = math.sqrt(teff)
    for b in range(nb):
        j = b + 1 if b + 1 < n else 0
        dvp = _vp(kind, a, r[j]) - _vp(kind, a, r[b])
        dp = p[j] - p[b]
        xi = counter_normal(seed, replica, step, b, 0)
        djp[b] = 0.5 * teff * (_vpp(kind, a, r[j]) + _vpp(kind, a, r[b])) * dp \
            + sq * dvp * xi
        djr[b] = teff * dvp - sq * dp * xi
    for b in range(nb):
        j = b + 1 if b + 1 < n else 0
        p[b] += djp[b]
        r[b] += djr[b]
        p[j] -= djp[b]
        r[j] -= djr[b]


# --- full Strang stepper ----------------------------------------------------

# longest Verlet substep of the accelerated drift; keeps the bounded
# shadow-energy oscillation of the drift invariant below ~5e-7 relative
_MAX_DRIFT_SUBSTEP = 0.0015


@njit(cache=True)
def drift_half(p, r, s_half, tau, kind, a, periodic):
    """Integrate the accelerated drift over s_half by Verlet substeps."""
    m = int(math.ceil(s_half / _MAX_DRIFT_SUBSTEP))
    if m < 1:
        m = 1
    s = s_half / m
    for _ in range(m):
        verlet_step(p, r, s, tau, kind, a, periodic)


@njit(cache=True)
def advance(p, r, steps, h, gamma, tau, kind, a, periodic, use_em,
            seed, replica, step0):
    """Advance the accelerated dynamics by `steps` Strang steps in place.

    Returns 0 on success, 1 if the instability detector tripped.
    """
    n = p.shape[0]
    s_drift = n * h
    teff = gamma * n * h
    for k in range(steps):
        step = step0 + k
        drift_half(p, r, 0.5 * s_drift, tau, kind, a, periodic)
        if teff > 0.0:
            if use_em:
                noise_sweep_em(p, r, teff, kind, a, periodic, seed, replica,
                               step)
            else:
                noise_sweep_circle(p, r, teff, kind, a, periodic, seed,
                                   replica, step, step % 2 == 0)
        drift_half(p, r, 0.5 * s_drift, tau, kind, a, periodic)
        if k % 64 == 0:
            m = 0.0
            for i in range(n):
                if abs(p[i]) > m:
                    m = abs(p[i])
                if abs(r[i]) > m:
                    m = abs(r[i])
            if not (m < 1e6):
                return 1
    return 0


@njit(cache=True)
def advance_bg(p, r, steps, h, gamma, tau, kind, a, use_em, seed, replica,
               step0, coeff, tau_r, tau_e, r_bar, e_bar, acc_state):
    """Advance a wall chain while accumulating the linearization residual.

    ``coeff[j]`` multiplies the residual current at site j+1 (j = 0..N-2);
    ``acc_state = [integral, max |integral|]`` is updated in place.  The
    1/sqrt(N) normalization is applied by the caller.
    """
    n = p.shape[0]
    s_drift = n * h
    teff = gamma * n * h
    acc = acc_state[0]
    amax = acc_state[1]
    for k in range(steps):
        step = step0 + k
        drift_half(p, r, 0.5 * s_drift, tau, kind, a, False)
        if teff > 0.0:
            if use_em:
                noise_sweep_em(p, r, teff, kind, a, False, seed, replica,
                               step)
            else:
                noise_sweep_circle(p, r, teff, kind, a, False, seed, replica,
                                   step, step % 2 == 0)
        drift_half(p, r, 0.5 * s_drift, tau, kind, a, False)
        tot = 0.0
        for j in range(n - 1):
            e_j = 0.5 * p[j] * p[j] + _v(kind, a, r[j])
            cur = _vp(kind, a, r[j + 1]) - tau
            phi1 = cur - tau_r * (r[j] - r_bar) - tau_e * (e_j - e_bar)
            phi3 = p[j] * cur
            tot += coeff[j, 0] * phi1 + coeff[j, 2] * phi3
        acc += h * tot
        if abs(acc) > amax:
            amax = abs(acc)
    acc_state[0] = acc
    acc_state[1] = amax
    return 0


# --- microcanonical samplers ------------------------------------------------

@njit(cache=True)
def mcmc_run(p, r, n_updates, kind, a, jmax, seed, chain, step0):
    """Random-scan bond MCMC on the microcanonical manifold.

    Each update picks a bond uniformly and resamples its circle angle from
    the density proportional to the Jacobian, by rejection against the
    uniform envelope scaled with the certified upper bound ``jmax``.
    Returns the number of accepted proposals.
    """
    n = p.shape[0]
    accepted = 0
    for k in range(n_updates):
        step = step0 + k
        b = int(counter_uniform(seed, chain, step, 0, 1) * (n - 1))
        if b >= n - 1:
            b = n - 2
        j = b + 1
        pm, rm, e_int, _ = bond_to_circle(p[b], r[b], p[j], r[j], kind, a)
        if e_int <= 0.0:
            continue
        for attempt in range(1000):
            theta = counter_uniform(seed, chain, step, attempt, 2) \
                * 2.0 * math.pi
            u = counter_uniform(seed, chain, step, attempt, 3)
            jac = jacobian_at(pm, rm, e_int, theta, kind, a)
            if u * jmax <= jac:
                p1, r1, p2, r2 = bond_from_circle(pm, rm, e_int, theta,
                                                  kind, a)
                p[b] = p1
                r[b] = r1
                p[j] = p2
                r[j] = r2
                accepted += 1
                break
    return accepted


@njit(cache=True)
def mcmc_collect(p, r, n_samples, thin, k_sites, kind, a, jmax, seed, chain,
                 out_p, out_r):
    """Run the bond MCMC, recording the first k_sites sites every `thin`
    updates into preallocated (n_samples, k_sites) buffers."""
    step0 = 0
    for s in range(n_samples):
        mcmc_run(p, r, thin, kind, a, jmax, seed, chain, step0)
        step0 += thin
        for i in range(k_sites):
            out_p[s, i] = p[i]
            out_r[s, i] = r[i]


@njit(cache=True)
def noise_evolve(p, r, steps, h, kind, a, seed, chain, rec_every,
                 out_p, out_r):
    """Unaccelerated exchange-noise diffusion on a K-site chain, recording
    the full configuration every `rec_every` sweeps."""
    n = p.shape[0]
    rec = 0
    for k in range(steps):
        noise_sweep_circle(p, r, h, kind, a, False, seed, chain, k, k % 2 == 0)
        if (k + 1) % rec_every == 0:
            for i in range(n):
                out_p[rec, i] = p[i]
                out_r[rec, i] = r[i]
            rec += 1
    return rec
