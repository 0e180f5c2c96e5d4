"""Pure-numpy implementations of the hot inner loops.

Mirrors the public surface of the numba backend with vectorized updates
(the even/odd bond sets are disjoint, so each half-sweep is a gather/scatter
over independent bonds).  The counter-based RNG applies the same 64-bit hash
chain, so both backends draw from identical stream definitions; results
agree statistically but not bit-for-bit because elementary-function
implementations differ.
"""

import math

import numpy as np

BACKEND = "numpy"

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_K1 = np.uint64(0xA24BAED4963EE407)
_K2 = np.uint64(0x9FB21C651E98DF25)
_K3 = np.uint64(0xC2B2AE3D27D4EB4F)
_K4 = np.uint64(0x165667B19E3779F9)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key(seed, a, b, c, d):
    # 64-bit hashing relies on wrap-around; silence overflow warnings that
    # numpy emits for scalar (0-d) operands
    with np.errstate(over="ignore"):
        z = _mix64(np.uint64(seed) + _GOLD)
        z = _mix64(z + np.asarray(a, dtype=np.uint64) * _K1)
        z = _mix64(z + np.asarray(b, dtype=np.uint64) * _K2)
        z = _mix64(z + np.asarray(c, dtype=np.uint64) * _K3)
        z = _mix64(z + np.asarray(d, dtype=np.uint64) * _K4)
    return z


def counter_uniform(seed, a, b, c, d):
    """Uniform in (0, 1]; broadcasts over integer-array arguments."""
    h = _key(seed, a, b, c, d)
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53


def counter_normal(seed, a, b, c, d):
    """Standard normal; broadcasts over integer-array arguments."""
    h1 = _key(seed, a, b, c, d)
    with np.errstate(over="ignore"):
        h2 = _mix64(h1 + _GOLD)
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# --- potential --------------------------------------------------------------

def _v(kind, a, r):
    if kind == 0:
        return 0.5 * r * r
    return 0.5 * r * r + a * (np.sqrt(1.0 + r * r) - 1.0)


def _vp(kind, a, r):
    if kind == 0:
        return +r
    return r + a * r / np.sqrt(1.0 + r * r)


def _vpp(kind, a, r):
    if kind == 0:
        return np.ones_like(np.asarray(r, dtype=np.float64))
    s = np.sqrt(1.0 + r * r)
    return 1.0 + a / (s * s * s)


# --- two-point circle coordinates (vectorized) ------------------------------

def _to_circle_vec(p1, r1, p2, r2, kind, a):
    pm = 0.5 * (p1 + p2)
    rm = 0.5 * (r1 + r2)
    vpart = 0.5 * (_v(kind, a, r1) + _v(kind, a, r2)) - _v(kind, a, rm)
    vpart = np.maximum(vpart, 0.0)
    e_int = 0.125 * (p1 - p2) ** 2 + vpart
    cos_part = math.sqrt(2.0) * (p1 - p2) / 4.0
    sin_part = np.where(r1 >= r2, np.sqrt(vpart), -np.sqrt(vpart))
    theta = np.arctan2(sin_part, cos_part)
    theta = np.where(theta < 0.0, theta + 2.0 * np.pi, theta)
    theta = np.where(e_int > 0.0, theta, 0.0)
    return pm, rm, e_int, theta


def _solve_gap_vec(kind, a, rm, target):
    """Vectorized safeguarded Newton for the inter-site gap d > 0."""
    target = np.maximum(target, 0.0)
    if kind == 0:
        return np.sqrt(8.0 * target)
    d_hi = np.sqrt(8.0 * target)
    d_lo = np.sqrt(8.0 * target / (1.0 + a))
    d = d_hi.copy()
    vm = _v(kind, a, rm)
    live = target > 0.0
    # absolute floor: g is a difference of O(1 + |vm|) quantities, so its
    # round-off error cannot fall below ~eps * (1 + |vm|)
    tol = 1e-15 * target + 4e-16 * (1.0 + np.abs(vm))
    for _ in range(60):
        g = 0.5 * (_v(kind, a, rm + 0.5 * d) + _v(kind, a, rm - 0.5 * d)) - vm
        err = g - target
        live = live & (np.abs(err) > tol)
        if not np.any(live):
            break
        gp = 0.25 * (_vp(kind, a, rm + 0.5 * d) - _vp(kind, a, rm - 0.5 * d))
        with np.errstate(divide="ignore", invalid="ignore"):
            d_new = d - err / gp
        # a stagnant Newton update means machine precision: accept it
        stag = np.abs(d_new - d) <= 4e-16 * np.abs(d)
        bad = ((d_new < d_lo) | (d_new > d_hi) | ~np.isfinite(d_new)) & ~stag
        d_new = np.where(bad, 0.5 * (d_lo + d_hi), d_new)
        d_hi = np.where(live & (err > 0.0) & ~stag, d, d_hi)
        d_lo = np.where(live & (err <= 0.0) & ~stag, d, d_lo)
        d = np.where(live, d_new, d)
        live = live & ~stag
    return np.where(target > 0.0, d, 0.0)


def _from_circle_vec(pm, rm, e_int, theta, kind, a):
    ct = np.cos(theta)
    st = np.sin(theta)
    dp = 2.0 * np.sqrt(2.0 * e_int) * ct
    d = _solve_gap_vec(kind, a, rm, e_int * st * st)
    d = np.where(st < 0.0, -d, d)
    return pm + 0.5 * dp, rm + 0.5 * d, pm - 0.5 * dp, rm - 0.5 * d


def _jacobian_vec(pm, rm, e_int, theta, kind, a):
    st = np.sin(theta)
    target = e_int * st * st
    d = _solve_gap_vec(kind, a, rm, target)
    dvp = _vp(kind, a, rm + 0.5 * d) - _vp(kind, a, rm - 0.5 * d)
    limit = 1.0 / np.sqrt(2.0 * _vpp(kind, a, rm))
    # below the gap solver's accuracy floor the coincident-stretch series
    # is the more accurate branch (both errors ~1e-6 at the crossover)
    small = (e_int <= 0.0) \
        | (target <= 1e-10 * (1.0 + np.abs(_v(kind, a, rm)))) \
        | (dvp < 1e-10 * (1.0 + np.abs(rm)))
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = 2.0 * np.sqrt(e_int) * np.abs(st) / dvp
    return np.where(small, limit, jac)


# scalar wrappers, for API parity with the numba backend

def bond_to_circle(p1, r1, p2, r2, kind, a):
    out = _to_circle_vec(np.float64(p1), np.float64(r1), np.float64(p2),
                         np.float64(r2), kind, a)
    return tuple(float(x) for x in out)


def bond_from_circle(pm, rm, e_int, theta, kind, a):
    out = _from_circle_vec(np.float64(pm), np.float64(rm), np.float64(e_int),
                           np.float64(theta), kind, a)
    return tuple(float(x) for x in out)


def jacobian_at(pm, rm, e_int, theta, kind, a):
    return float(_jacobian_vec(np.float64(pm), np.float64(rm),
                               np.float64(e_int), np.float64(theta), kind, a))


# --- drift ------------------------------------------------------------------

def _kick(p, r, s, tau, kind, a, periodic):
    vp = _vp(kind, a, r)
    if periodic:
        p += s * (np.roll(vp, -1) - vp)
    else:
        p[:-1] += s * (vp[1:] - vp[:-1])
        p[-1] += s * (tau - vp[-1])


def _drift_positions(p, r, s, periodic):
    if periodic:
        r += s * (p - np.roll(p, 1))
    else:
        r[0] += s * p[0]
        r[1:] += s * (p[1:] - p[:-1])


def verlet_step(p, r, s, tau, kind, a, periodic):
    """One time-reversible Verlet step of the drift over effective time s."""
    _kick(p, r, 0.5 * s, tau, kind, a, periodic)
    _drift_positions(p, r, s, periodic)
    _kick(p, r, 0.5 * s, tau, kind, a, periodic)


# --- noise substeps ---------------------------------------------------------

_FD_THETA = 1e-6


def _circle_update_bonds(p, r, bonds, jidx, teff, kind, a, xi):
    pm, rm, e_int, theta = _to_circle_vec(p[bonds], r[bonds], p[jidx],
                                          r[jidx], kind, a)
    live = e_int > 0.0
    if kind == 0:
        jinv = math.sqrt(2.0)
        drift = 0.0
    else:
        jinv = 1.0 / _jacobian_vec(pm, rm, e_int, theta, kind, a)
        jp = 1.0 / _jacobian_vec(pm, rm, e_int, theta + _FD_THETA, kind, a)
        jm = 1.0 / _jacobian_vec(pm, rm, e_int, theta - _FD_THETA, kind, a)
        drift = 0.5 * jinv * (jp - jm) / (2.0 * _FD_THETA)
    theta_new = theta + drift * teff + jinv * math.sqrt(teff) * xi
    p1, r1, p2, r2 = _from_circle_vec(pm, rm, e_int, theta_new, kind, a)
    p[bonds] = np.where(live, p1, p[bonds])
    r[bonds] = np.where(live, r1, r[bonds])
    p[jidx] = np.where(live, p2, p[jidx])
    r[jidx] = np.where(live, r2, r[jidx])


def noise_sweep_circle(p, r, teff, kind, a, periodic, seed, replica, step,
                       even_first):
    """Apply the circle diffusion to even bonds then odd bonds (or reversed)."""
    n = p.shape[0]
    nb = n if periodic else n - 1
    for phase in range(2):
        par = phase if even_first else 1 - phase
        bonds = np.arange(par, nb, 2)
        if bonds.size == 0:
            continue
        jidx = (bonds + 1) % n
        xi = counter_normal(seed, replica, step, bonds, 0)
        _circle_update_bonds(p, r, bonds, jidx, teff, kind, a, xi)


def noise_sweep_em(p, r, teff, kind, a, periodic, seed, replica, step):
    """Euler-Maruyama step of the exchange noise, one shared dB per bond."""
    n = p.shape[0]
    nb = n if periodic else n - 1
    bonds = np.arange(nb)
    jidx = (bonds + 1) % n
    dvp = _vp(kind, a, r[jidx]) - _vp(kind, a, r[bonds])
    dp = p[jidx] - p[bonds]
    xi = counter_normal(seed, replica, step, bonds, 0)
    sq = math.sqrt(teff)
    djp = 0.5 * teff * (_vpp(kind, a, r[jidx]) + _vpp(kind, a, r[bonds])) * dp \
        + sq * dvp * xi
    djr = teff * dvp - sq * dp * xi
    np.add.at(p, bonds, djp)
    np.add.at(r, bonds, djr)
    np.subtract.at(p, jidx, djp)
    np.subtract.at(r, jidx, djr)


# --- full Strang stepper ----------------------------------------------------

# longest Verlet substep of the accelerated drift; keeps the bounded
# shadow-energy oscillation of the drift invariant below ~5e-7 relative
_MAX_DRIFT_SUBSTEP = 0.0015


def drift_half(p, r, s_half, tau, kind, a, periodic):
    """Integrate the accelerated drift over s_half by Verlet substeps."""
    m = max(1, int(math.ceil(s_half / _MAX_DRIFT_SUBSTEP)))
    s = s_half / m
    for _ in range(m):
        verlet_step(p, r, s, tau, kind, a, periodic)


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
            m = max(np.max(np.abs(p)), np.max(np.abs(r)))
            if not (m < 1e6):
                return 1
    return 0


def advance_bg(p, r, steps, h, gamma, tau, kind, a, use_em, seed, replica,
               step0, coeff, tau_r, tau_e, r_bar, e_bar, acc_state):
    """Advance a wall chain while accumulating the linearization residual."""
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
        e = 0.5 * p[:-1] ** 2 + _v(kind, a, r[:-1])
        cur = _vp(kind, a, r[1:]) - tau
        phi1 = cur - tau_r * (r[:-1] - r_bar) - tau_e * (e - e_bar)
        phi3 = p[:-1] * cur
        acc += h * float(np.dot(coeff[:, 0], phi1) + np.dot(coeff[:, 2], phi3))
        if abs(acc) > amax:
            amax = abs(acc)
    acc_state[0] = acc
    acc_state[1] = amax
    return 0


# --- microcanonical samplers ------------------------------------------------

def mcmc_run(p, r, n_updates, kind, a, jmax, seed, chain, step0):
    """Random-scan bond MCMC on the microcanonical manifold."""
    n = p.shape[0]
    accepted = 0
    for k in range(n_updates):
        step = step0 + k
        b = int(counter_uniform(seed, chain, step, 0, 1) * (n - 1))
        b = min(b, n - 2)
        j = b + 1
        pm, rm, e_int, _ = bond_to_circle(p[b], r[b], p[j], r[j], kind, a)
        if e_int <= 0.0:
            continue
        for attempt in range(1000):
            theta = float(counter_uniform(seed, chain, step, attempt, 2)) \
                * 2.0 * math.pi
            u = float(counter_uniform(seed, chain, step, attempt, 3))
            jac = jacobian_at(pm, rm, e_int, theta, kind, a)
            if u * jmax <= jac:
                p[b], r[b], p[j], r[j] = bond_from_circle(pm, rm, e_int,
                                                          theta, kind, a)
                accepted += 1
                break
    return accepted


def mcmc_collect(p, r, n_samples, thin, k_sites, kind, a, jmax, seed, chain,
                 out_p, out_r):
    """Run the bond MCMC, recording the first k_sites sites every `thin`
    updates into preallocated (n_samples, k_sites) buffers."""
    step0 = 0
    for s in range(n_samples):
        mcmc_run(p, r, thin, kind, a, jmax, seed, chain, step0)
        step0 += thin
        out_p[s, :] = p[:k_sites]
        out_r[s, :] = r[:k_sites]


def noise_evolve(p, r, steps, h, kind, a, seed, chain, rec_every,
                 out_p, out_r):
    """Unaccelerated exchange-noise diffusion on a K-site chain, recording
    the full configuration every `rec_every` sweeps."""
    rec = 0
    for k in range(steps):
        noise_sweep_circle(p, r, h, kind, a, False, seed, chain, k, k % 2 == 0)
        if (k + 1) % rec_every == 0:
            out_p[rec, :] = p
            out_r[rec, :] = r
            rec += 1
    return rec
