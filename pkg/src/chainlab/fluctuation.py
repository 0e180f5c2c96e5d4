"""Empirical fluctuation fields and boundary-adapted mode projections.

The fluctuation field pairs the centered conserved fields with a test
function on the unit interval: Y_N(H) = N^{-1/2} Σ_i H(i/N)·(w_i − w̄).
Test functions adapted to the wall boundary come in four branches built
from the rotation matrix R of the linearized system:

- ``sine``:           R e₁ · √2 sin(θ_n x),  θ_n = (2n+1)π/2
- ``cosine``:         R e₂ · √2 cos(θ_n x)
- ``entropy-sine``:   R e₃ · √2 sin(κ_n x),  κ_n = 2nπ
- ``entropy-cosine``: R e₃ · √2 cos(κ_n x)

The sine profile vanishes at x=0 (the wall), the cosine profile at x=1
(the tension end); entropy profiles carry the transported coordinate that
the linearized flow leaves frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SimConfig, run_bg_residual, run_ensemble
from .thermo import CanonicalParams

BRANCHES = ("sine", "cosine", "entropy-sine", "entropy-cosine")

_BRANCH_COLUMN = {"sine": 0, "cosine": 1,
                  "entropy-sine": 2, "entropy-cosine": 2}


@dataclass(frozen=True)
class Mode:
    """One boundary-adapted Fourier mode."""

    branch: str
    n: int

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}; "
                             f"choose from {BRANCHES}")
        if self.n < 0:
            raise ValueError("mode index must be nonnegative")

    @property
    def wavenumber(self) -> float:
        """θ_n = (2n+1)π/2 for sound branches, κ_n = 2nπ for entropy."""
        if self.branch in ("sine", "cosine"):
            return (2 * self.n + 1) * math.pi / 2.0
        return 2 * self.n * math.pi

    def scalar_profile(self, x):
        """The scalar basis function evaluated at x."""
        k = self.wavenumber
        if self.branch in ("sine", "entropy-sine"):
            return math.sqrt(2.0) * np.sin(k * np.asarray(x, dtype=float))
        return math.sqrt(2.0) * np.cos(k * np.asarray(x, dtype=float))


def grid(n_sites: int) -> np.ndarray:
    """The sampling grid x = i/N, i = 1..N."""
    return np.arange(1, n_sites + 1) / n_sites


def mode_profile(params: CanonicalParams, mode: Mode,
                 n_sites: int) -> np.ndarray:
    """The 3-vector test function R·(basis) sampled at x = i/N.

    Returns an (n_sites, 3) array.
    """
    col = params.R[:, _BRANCH_COLUMN[mode.branch]]
    return np.outer(mode.scalar_profile(grid(n_sites)), col)


def field(params: CanonicalParams, fields: np.ndarray,
          test_function: np.ndarray) -> np.ndarray:
    """Y_N = N^{-1/2} Σ_i H(i/N)·(w_i − w̄) with w̄ = (0, r̄, ē).

    ``fields`` holds (p, r, e) per site in its last two axes (..., N, 3);
    ``test_function`` is the (N, 3) grid sample of H.  Leading axes (time,
    replica) broadcast through.
    """
    fields = np.asarray(fields, dtype=float)
    test_function = np.asarray(test_function, dtype=float)
    n = test_function.shape[0]
    if fields.shape[-2:] != (n, 3):
        raise ValueError(
            f"grid mismatch: fields have shape {fields.shape}, test "
            f"function is sampled on {n} sites")
    centered = fields - params.w_bar
    return np.einsum("...ij,ij->...", centered, test_function) / math.sqrt(n)


def static_covariance(params: CanonicalParams, h: np.ndarray,
                      g: np.ndarray) -> float:
    """Predicted equal-time covariance ⟨H, ΣG⟩ as the Riemann sum on the
    simulation grid, matching the field normalization exactly."""
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    if h.shape != g.shape:
        raise ValueError("grid mismatch between test functions")
    return float(np.einsum("ij,jk,ik->", h, params.Sigma, g)) / h.shape[0]


def hk_norm(modes, values, k: int) -> float:
    """Truncated negative-Sobolev norm Σ (weight_n)^{-2k} Y_n².

    Sound branches weigh by θ_n^{-2k}, entropy branches by κ_n^{-2k}; the
    n = 0 entropy term, whose wavenumber vanishes, carries weight 1 by
    convention.  The truncation tail is bounded by tr Σ · Σ_{n>n_max}
    θ_n^{-2k}, summable for k > 1/2.
    """
    total = 0.0
    for mode, y in zip(modes, values):
        kappa = mode.wavenumber
        weight = 1.0 if kappa == 0.0 else kappa ** (-2 * k)
        total += weight * float(y) ** 2
    return total


@dataclass
class ModeSeries:
    """Time series of one mode's field values across replicas."""

    mode: Mode
    times: np.ndarray
    values: np.ndarray  # shape (n_replicas, n_times)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.values.shape[1] != self.times.size:
            raise ValueError("one value per replica and time required")


def autocorrelation(series: ModeSeries, min_replicas: int = 30):
    """Cross-replica estimate of C(t) = E[Y(t)Y(0)] with standard errors.

    Returns (lags, C, stderr).  The estimator averages Y(t_j)·Y(t_0) over
    replicas, which is unbiased for a stationary ensemble.
    """
    n_rep = series.values.shape[0]
    if n_rep < min_replicas:
        raise ValueError(
            f"insufficient data: {n_rep} replicas < {min_replicas}")
    prod = series.values * series.values[:, :1]
    c = prod.mean(axis=0)
    stderr = prod.std(axis=0, ddof=1) / math.sqrt(n_rep)
    lags = series.times - series.times[0]
    return lags, c, stderr


def mode_ensemble(cfg: SimConfig, params: CanonicalParams, modes,
                  t_grid, n_replicas: int):
    """Simulate an equilibrium ensemble and project it on the given modes.

    Returns a list of ModeSeries, one per mode, sharing the same replicas.
    """
    snapshots = run_ensemble(cfg, t_grid, n_replicas)  # (T, R, N, 3)
    out = []
    for mode in modes:
        h = mode_profile(params, mode, cfg.n_sites)
        vals = field(params, snapshots, h)  # (T, R)
        out.append(ModeSeries(mode, np.asarray(t_grid, dtype=float), vals.T))
    return out


def bg_residual_variance(cfg: SimConfig, params: CanonicalParams,
                         dx_h: np.ndarray, t_final: float,
                         n_replicas: int):
    """Monte Carlo estimate of E[sup_{t≤T} |Y^Φ(t)|²] where Y^Φ is the
    running time integral of the test-weighted linearization residual.

    ``dx_h`` is the (n_sites - 1, 3) grid sample of ∂ₓH at x = i/N for the
    interior sites i = 1..N-1.  Returns (estimate, stderr).
    """
    maxima = run_bg_residual(cfg, params, dx_h, t_final, n_replicas)
    sq = maxima ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_replicas))
