"""Closed-form reference solution of the linearized sound-wave system.

The linearization of the macroscopic conservation laws around equilibrium
is the hyperbolic system u_t = B u_x with drift matrix

    B = [[0, τ_r, τ_e], [1, 0, 0], [τ, 0, 0]],   eigenvalues {0, ±c}.

In the rotated coordinates (p̃, τ̃-like sound coordinate g, frozen entropy
coordinate s) the system decouples into a scalar wave pair plus a constant,
so all evolution here is spectral (exact mode rotations), never a
time-stepping PDE solve.  Test functions live on [0, 1] with the wall at
x = 0 and the tension end at x = 1; the admissible class requires
H₁(0) = 0 and H₂(1) + τH₃(1) = 0, which our basis satisfies identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fluctuation import Mode
from .thermo import CanonicalParams

_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class LinearizedSystem:
    """Coefficients of the linearized system at one equilibrium point."""

    beta: float
    tau: float
    tau_r: float
    tau_e: float
    c: float
    R: np.ndarray
    Q: np.ndarray

    @classmethod
    def from_params(cls, params: CanonicalParams) -> "LinearizedSystem":
        return cls(params.beta, params.tau, params.tau_r, params.tau_e,
                   params.c, params.R, params.Q)

    @property
    def drift_matrix(self) -> np.ndarray:
        """B with eigenvalues {0, ±c}."""
        return np.array([[0.0, self.tau_r, self.tau_e],
                         [1.0, 0.0, 0.0],
                         [self.tau, 0.0, 0.0]])


def predicted_mode_covariance(lsys: LinearizedSystem, branch_a: str,
                              branch_b: str, n: int, t: float) -> float:
    """Stationary covariance E[Y(t, mode_a) Y(0, mode_b)] of the reference
    process for two modes with the same index n.

    sine/sine oscillates at frequency cθ_n with amplitude 1/β; the cosine
    diagonal carries the extra factor c²; the sine-cosine cross term is the
    quarter-period-shifted −(c/β)sin; entropy modes do not evolve; sound
    and entropy branches (and distinct indices) are uncorrelated.
    """
    sound = ("sine", "cosine")
    entropy = ("entropy-sine", "entropy-cosine")
    theta_n = Mode("sine", n).wavenumber
    if branch_a in sound and branch_b in sound:
        omega = lsys.c * theta_n * t
        if branch_a == branch_b == "sine":
            return math.cos(omega) / lsys.beta
        if branch_a == branch_b == "cosine":
            return lsys.c ** 2 * math.cos(omega) / lsys.beta
        return -(lsys.c / lsys.beta) * math.sin(omega)
    if branch_a in entropy and branch_b in entropy:
        if branch_a != branch_b:
            return 0.0
        if branch_a == "entropy-sine" and n == 0:
            return 0.0  # the n=0 entropy-sine profile vanishes identically
        return float(lsys.Q[2, 2])
    return 0.0


@dataclass
class TestFunction:
    """A 3-vector test function in decoupled-coordinate representation.

    ``a[n]`` are the √2 sin(θ_n x) coefficients of the first coordinate
    H₁; ``b[n]`` the √2 cos(θ_n x) coefficients of the sound coordinate
    g = H₂ + τH₃; ``s_sin[n]``/``s_cos[n]`` the √2 sin(κ_n x)/√2 cos(κ_n x)
    coefficients of the frozen entropy coordinate s = τ_e H₂ − τ_r H₃.
    This representation satisfies H₁(0) = 0 and H₂(1) + τH₃(1) = 0 by
    construction.
    """

    a: np.ndarray
    b: np.ndarray
    s_sin: np.ndarray
    s_cos: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.s_sin = np.atleast_1d(np.asarray(self.s_sin, dtype=float))
        self.s_cos = np.atleast_1d(np.asarray(self.s_cos, dtype=float))
        if self.a.shape != self.b.shape:
            raise ValueError("sound coefficient arrays must align")


def evaluate(lsys: LinearizedSystem, h: TestFunction, x) -> np.ndarray:
    """Evaluate the physical 3-vector H(x); returns shape (len(x), 3)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = (2 * np.arange(h.a.size) + 1) * math.pi / 2.0
    kap_s = 2 * np.arange(h.s_sin.size) * math.pi
    kap_c = 2 * np.arange(h.s_cos.size) * math.pi
    sq = math.sqrt(2.0)
    g1 = sq * np.sin(np.outer(x, theta)) @ h.a
    g = sq * np.cos(np.outer(x, theta)) @ h.b
    s = sq * np.sin(np.outer(x, kap_s)) @ h.s_sin \
        + sq * np.cos(np.outer(x, kap_c)) @ h.s_cos
    c2 = lsys.c ** 2
    h2 = (lsys.tau_r * g + lsys.tau * s) / c2
    h3 = (lsys.tau_e * g - s) / c2
    return np.stack([g1, h2, h3], axis=1)


def from_grid(lsys: LinearizedSystem, h_grid: np.ndarray, x: np.ndarray,
              n_max: int = 16, tol: float = 1e-6) -> TestFunction:
    """Project grid samples of a 3-vector function onto the decoupled bases.

    Rejects functions outside the admissible boundary class (H₁(0) ≠ 0 or
    H₂(1) + τH₃(1) ≠ 0) or not resolved by n_max modes within ``tol``.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.max(np.abs(h_grid))))
    g1 = h_grid[:, 0]
    g = h_grid[:, 1] + lsys.tau * h_grid[:, 2]
    s = lsys.tau_e * h_grid[:, 1] - lsys.tau_r * h_grid[:, 2]
    bv0 = np.interp(0.0, x, g1)
    bv1 = np.interp(1.0, x, g)
    if abs(bv0) > tol * scale:
        raise ValueError(f"boundary class violated: H1(0) = {bv0:.3e} != 0")
    if abs(bv1) > tol * scale:
        raise ValueError(
            f"boundary class violated: H2(1) + tau*H3(1) = {bv1:.3e} != 0")
    theta = (2 * np.arange(n_max) + 1) * math.pi / 2.0
    kap = 2 * np.arange(n_max) * math.pi
    sq = math.sqrt(2.0)
    # the √2 sin/cos families are orthonormal on [0,1]; trapezoid projection
    def proj(f, basis):
        return _trapz(f[None, :] * basis, x, axis=1)

    a = proj(g1, sq * np.sin(np.outer(theta, x)))
    b = proj(g, sq * np.cos(np.outer(theta, x)))
    s_sin = proj(s, sq * np.sin(np.outer(kap, x)))
    s_cos = proj(s, sq * np.cos(np.outer(kap, x)))
    s_cos[0] = _trapz(s, x) * sq / 2.0  # the constant basis has norm² = 2
    tf = TestFunction(a, b, s_sin, s_cos)
    recon = evaluate(lsys, tf, x)
    err = float(np.max(np.abs(recon - h_grid)))
    if err > max(tol, 1e-3) * scale:
        raise ValueError(
            f"function not resolved by {n_max} modes (residual {err:.3e})")
    return tf


def backward_evolve(lsys: LinearizedSystem, h: TestFunction,
                    t: float) -> TestFunction:
    """Evolve a test function by the adjoint wave group for time t.

    Mode n rotates at frequency cθ_n in the (a, b/c) plane; the entropy
    coordinate is frozen.  Asserts the boundary class of the result on a
    fine grid to 1e-10.
    """
    theta = (2 * np.arange(h.a.size) + 1) * math.pi / 2.0
    omega = lsys.c * theta * t
    cw, sw = np.cos(omega), np.sin(omega)
    a_t = h.a * cw + (h.b / lsys.c) * sw
    b_t = h.b * cw - lsys.c * h.a * sw
    out = TestFunction(a_t, b_t, h.s_sin.copy(), h.s_cos.copy())
    xs = np.array([0.0, 1.0])
    vals = evaluate(lsys, out, xs)
    assert abs(vals[0, 0]) <= 1e-10, "wall boundary value drifted"
    assert abs(vals[1, 1] + lsys.tau * vals[1, 2]) <= 1e-10, \
        "tension-end boundary value drifted"
    return out


def check_compatibility(lsys: LinearizedSystem, h: TestFunction,
                        tol: float = 1e-6) -> bool:
    """True iff the initial condition launches a classical solution.

    Beyond the boundary class (automatic in this representation), the wave
    evolution is compatible iff the first spatial derivatives vanish at the
    matching endpoints: ∂ₓH₁(0) = 0 and ∂ₓ(H₂ + τH₃)(1) = 0.  The
    second-time-derivative conditions, rewritten through the equation as
    c²·second spatial derivatives, vanish identically for this basis
    (sin θ_n x at 0, cos θ_n x at 1).
    """
    theta = (2 * np.arange(h.a.size) + 1) * math.pi / 2.0
    sq = math.sqrt(2.0)
    scale = max(1.0, float(np.max(np.abs(h.a))), float(np.max(np.abs(h.b))))
    d_g1_0 = sq * float(np.dot(h.a, theta))
    signs = np.where(np.arange(h.b.size) % 2 == 0, 1.0, -1.0)
    d_g_1 = -sq * float(np.dot(h.b, theta * signs))
    return abs(d_g1_0) <= tol * scale and abs(d_g_1) <= tol * scale
