"""Equilibrium thermodynamics of the single-site tilted measure.

The single-site equilibrium law at multiplier ``lambda = (beta*tau, -beta)``
has momentum marginal N(0, 1/beta) and stretch density proportional to
``exp(-beta V(r) + beta tau r)``.  Everything in this module reduces to
one-dimensional adaptive Gauss-Kronrod quadratures of tilted moments; no
finite differences are used, so the resulting covariance matrices are
positive definite to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import potential as pot
from .potential import PotentialSpec

_QUAD_EPS = 1e-12
# exp(-x^2) drops below 4e-18 when the exponent of the Gaussian tail bound
# beta*delta_minus*(r - m)^2 / 4 reaches 40
_TAIL_EXPONENT = 40.0


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ConvergenceError(RuntimeError):
    """Newton / bisection inversion of the mean map failed."""


def _tilt_argmax(spec: PotentialSpec, tau: float) -> float:
    """Maximizer of -V(r) + tau*r, i.e. the solution of V'(m) = tau."""
    m = tau  # exact for the harmonic spring, good start in general
    for _ in range(100):
        _, vp, vpp = pot.evaluate(spec, m)
        step = (tau - vp) / vpp
        m += step
        if abs(step) <= 1e-14 * (1.0 + abs(m)):
            return m
    raise ConvergenceError(f"V'(m) = tau not solved for tau={tau}")


def _integration_window(spec: PotentialSpec, beta: float, tau: float):
    m = _tilt_argmax(spec, tau)
    dmin, _ = pot.curvature_bounds(spec)
    w = np.sqrt(4.0 * _TAIL_EXPONENT / (beta * dmin))
    return m, w


def tilted_moments(spec: PotentialSpec, beta: float, tau: float, funcs):
    """Expectations of ``funcs`` of r under the tilted stretch law.

    Also returns the log normalization constant as the first element:
    ``log integral exp(-beta V + beta tau r) dr``.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    m, w = _integration_window(spec, beta, tau)
    vm = pot.value(spec, m)
    phi_m = -beta * vm + beta * tau * m

    def weight(r):
        v = pot.value(spec, r)
        return np.exp(-beta * v + beta * tau * r - phi_m)

    def _quad(f):
        val, err = integrate.quad(f, m - w, m + w,
                                  epsabs=_QUAD_EPS, epsrel=_QUAD_EPS,
                                  limit=400)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise QuadratureError(
                f"quadrature error {err:.3e} on [{m - w:.3g}, {m + w:.3g}] "
                f"for beta={beta}, tau={tau}")
        return val

    z0 = _quad(weight)
    log_z = np.log(z0) + phi_m
    out = [log_z]
    for f in funcs:
        out.append(_quad(lambda r, f=f: f(r) * weight(r)) / z0)
    return out


def _beta_tau(lam) -> tuple[float, float]:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (2,):
        raise ValueError(f"lambda must be a 2-vector, got shape {lam.shape}")
    if lam[1] >= 0:
        raise ValueError("second multiplier component must be negative "
                         f"(lambda = (beta*tau, -beta)), got {lam[1]}")
    beta = -lam[1]
    tau = lam[0] / beta
    return beta, tau


def gibbs_potential(spec: PotentialSpec, lam) -> float:
    """Log normalization of the tilted single-site measure."""
    beta, tau = _beta_tau(lam)
    (log_z,) = tilted_moments(spec, beta, tau, [])
    return log_z + 0.5 * np.log(2.0 * np.pi / beta)


def mean_quantities(spec: PotentialSpec, lam) -> tuple[float, float]:
    """Equilibrium means (r_bar, e_bar) at the given multiplier."""
    beta, tau = _beta_tau(lam)
    _, er, ev = tilted_moments(spec, beta, tau,
                               [lambda r: r, lambda r: pot.value(spec, r)])
    return er, ev + 0.5 / beta


def _stretch_hessian(spec: PotentialSpec, beta: float, tau: float):
    """Means and centered second moments of (r, V(r)) under the tilted law."""
    vfun = lambda r: pot.value(spec, r)
    _, er, ev, err_, erv, evv = tilted_moments(
        spec, beta, tau,
        [lambda r: r, vfun,
         lambda r: r * r,
         lambda r: r * vfun(r),
         lambda r: vfun(r) ** 2])
    var_r = err_ - er * er
    cov_rv = erv - er * ev
    var_v = evv - ev * ev
    return er, ev, var_r, cov_rv, var_v


def covariance(spec: PotentialSpec, lam) -> np.ndarray:
    """3x3 covariance of the conserved vector (p, r, e) in equilibrium."""
    beta, tau = _beta_tau(lam)
    _, _, var_r, cov_rv, var_v = _stretch_hessian(spec, beta, tau)
    # e = p^2/2 + V(r) with p independent: Var(p^2/2) = 1/(2 beta^2)
    sigma = np.zeros((3, 3))
    sigma[0, 0] = 1.0 / beta
    sigma[1, 1] = var_r
    sigma[1, 2] = sigma[2, 1] = cov_rv
    sigma[2, 2] = var_v + 0.5 / beta ** 2
    return sigma


def entropy_and_multipliers(spec: PotentialSpec, r: float, e: float):
    """Thermodynamic entropy S(r, e) and its multipliers (S, beta, tau).

    Solves the concave maximization behind the Legendre transform by a
    damped Newton iteration on the mean map, with a bisection fallback in
    beta.  The returned multipliers invert ``mean_quantities`` to 1e-8.
    """
    if e <= pot.value(spec, r):
        raise ValueError(
            f"energy e={e} must exceed V(r)={pot.value(spec, r):.6g} for a "
            "positive-temperature state")

    def residual(beta, tau):
        rb, eb = mean_quantities(spec, np.array([beta * tau, -beta]))
        return np.array([rb - r, eb - e])

    # harmonic-inspired start
    beta = 1.0 / (e - pot.value(spec, r))
    tau = pot.derivative(spec, r)

    res = residual(beta, tau)
    for _ in range(80):
        if np.max(np.abs(res)) < 1e-11 * (1.0 + abs(r) + abs(e)):
            break
        hess = _mean_jacobian(spec, beta, tau)
        try:
            dbt = np.linalg.solve(hess, -res)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise ConvergenceError("singular mean-map Jacobian") from exc
        step = 1.0
        while True:
            b_new = beta + step * dbt[0]
            t_new = tau + step * dbt[1]
            if b_new > 0:
                res_new = residual(b_new, t_new)
                if np.linalg.norm(res_new) < np.linalg.norm(res):
                    beta, tau, res = b_new, t_new, res_new
                    break
            step *= 0.5
            if step < 1e-8:
                beta, tau = _bisect_beta(spec, r, e, tau)
                res = residual(beta, tau)
                break
    else:
        raise ConvergenceError(
            f"mean-map inversion did not converge for (r, e)=({r}, {e})")

    lam = np.array([beta * tau, -beta])
    s = gibbs_potential(spec, lam) - lam @ np.array([r, e])
    return s, beta, tau


def _mean_jacobian(spec: PotentialSpec, beta: float, tau: float) -> np.ndarray:
    """Jacobian of (r_bar, e_bar) with respect to (beta, tau)."""
    g = _hessian(spec, np.array([beta * tau, -beta]))
    # lambda = (beta*tau, -beta): d lambda / d(beta, tau) = [[tau, beta], [-1, 0]]
    chain = np.array([[tau, beta], [-1.0, 0.0]])
    return g @ chain


def _bisect_beta(spec: PotentialSpec, r: float, e: float, tau: float):
    """Fallback: bisection in beta with tau re-solved at each step."""

    def e_at(beta):
        t = _tau_for_r(spec, beta, r)
        _, eb = mean_quantities(spec, np.array([beta * t, -beta]))
        return eb, t

    lo, hi = 1e-6, 1e6
    e_lo, _ = e_at(lo)
    e_hi, _ = e_at(hi)
    if not (e_hi < e < e_lo):  # e_bar decreases in beta
        raise ConvergenceError(f"(r, e)=({r}, {e}) outside bisection bracket")
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        e_mid, t_mid = e_at(mid)
        if abs(e_mid - e) < 1e-12 * (1.0 + abs(e)):
            return mid, t_mid
        if e_mid > e:
            lo = mid
        else:
            hi = mid
    mid = np.sqrt(lo * hi)
    return mid, _tau_for_r(spec, mid, r)


def _tau_for_r(spec: PotentialSpec, beta: float, r: float) -> float:
    """Solve r_bar(beta, tau) = r for tau at fixed beta."""
    tau = pot.derivative(spec, r)
    for _ in range(100):
        lam = np.array([beta * tau, -beta])
        rb, _ = mean_quantities(spec, lam)
        var_r = _stretch_hessian(spec, beta, tau)[2]
        step = (r - rb) / (beta * var_r)
        tau += step
        if abs(step) < 1e-13 * (1.0 + abs(tau)):
            return tau
    raise ConvergenceError(f"tau not solved for r={r} at beta={beta}")


def _hessian(spec: PotentialSpec, lam) -> np.ndarray:
    """Hessian of the Gibbs potential with respect to lambda."""
    beta, tau = _beta_tau(lam)
    _, _, var_r, cov_rv, var_v = _stretch_hessian(spec, beta, tau)
    return np.array([[var_r, cov_rv],
                     [cov_rv, var_v + 0.5 / beta ** 2]])


def linear_coefficients(spec: PotentialSpec, lam):
    """Gradient (tau_r, tau_e) of the tension function and sound speed c.

    Obtained from the exact identity G''(lambda) (tau_r, tau_e)^T =
    (1/beta, tau/beta)^T rather than by finite-differencing the entropy.
    """
    beta, tau = _beta_tau(lam)
    g = _hessian(spec, lam)
    tau_r, tau_e = np.linalg.solve(g, np.array([1.0 / beta, tau / beta]))
    c_sq = tau_r + tau * tau_e
    if c_sq <= 0:
        raise RuntimeError(f"non-positive squared sound speed {c_sq}")
    return tau_r, tau_e, np.sqrt(c_sq)


def rotation_matrix(spec: PotentialSpec, lam):
    """Mode rotation R and the diagonal stationary covariance Q.

    Asserts the defining identity R^T Sigma R = Q to 1e-8.
    """
    beta, tau = _beta_tau(lam)
    tau_r, tau_e, c = linear_coefficients(spec, lam)
    r_mat = np.array([[1.0, 0.0, 0.0],
                      [0.0, tau_r, -beta * tau],
                      [0.0, tau_e, beta]])
    g = _hessian(spec, lam)
    d2g_beta = np.array([tau, -1.0]) @ g @ np.array([tau, -1.0])
    q = np.diag([1.0 / beta, c ** 2 / beta, beta ** 2 * d2g_beta])
    sigma = covariance(spec, lam)
    dev = np.max(np.abs(r_mat.T @ sigma @ r_mat - q))
    if dev > 1e-8:
        raise RuntimeError(
            f"rotation identity violated: max |R^T Sigma R - Q| = {dev:.3e}")
    return r_mat, q


@dataclass(frozen=True)
class CanonicalParams:
    """Cached thermodynamic state at a fixed (beta, tau).

    Immutable after construction; safe to share between threads.
    """

    spec: PotentialSpec
    beta: float
    tau: float
    G: float
    r_bar: float
    e_bar: float
    Sigma: np.ndarray = field(repr=False)
    tau_r: float
    tau_e: float
    c: float
    R: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)

    @property
    def lam(self) -> np.ndarray:
        return np.array([self.beta * self.tau, -self.beta])

    @property
    def w_bar(self) -> np.ndarray:
        return np.array([0.0, self.r_bar, self.e_bar])

    @classmethod
    def compute(cls, spec: PotentialSpec, beta: float, tau: float
                ) -> "CanonicalParams":
        lam = np.array([beta * tau, -beta])
        g = gibbs_potential(spec, lam)
        r_bar, e_bar = mean_quantities(spec, lam)
        sigma = covariance(spec, lam)
        tau_r, tau_e, c = linear_coefficients(spec, lam)
        r_mat, q = rotation_matrix(spec, lam)
        return cls(spec=spec, beta=beta, tau=tau, G=g, r_bar=r_bar,
                   e_bar=e_bar, Sigma=sigma, tau_r=tau_r, tau_e=tau_e,
                   c=c, R=r_mat, Q=q)
