"""Spring potentials for the oscillator chain.

Two convex families are supported, both normalized so that V(0) = 0,
V'(0) = 0 and V >= 0:

* ``harmonic``:            V(r) = r^2 / 2
* ``softened-quadratic``:  V(r) = r^2 / 2 + a (sqrt(1 + r^2) - 1),  a >= 0

The softened-quadratic family has uniformly bounded curvature,
V''(r) = 1 + a (1 + r^2)^(-3/2), so its curvature bounds are available in
closed form and it degenerates continuously to the harmonic spring as
a -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HARMONIC = "harmonic"
SOFTENED = "softened-quadratic"

VALID_KINDS = (HARMONIC, SOFTENED)

# integer codes used by the compiled kernels
KIND_CODES = {HARMONIC: 0, SOFTENED: 1}


@dataclass(frozen=True)
class PotentialSpec:
    """Immutable description of a spring potential.

    Attributes
    ----------
    kind : str
        One of ``"harmonic"`` or ``"softened-quadratic"``.
    a : float
        Dimensionless softening amplitude, only meaningful for the
        softened-quadratic family.  Must be >= 0.
    """

    kind: str = HARMONIC
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; "
                             f"expected one of {VALID_KINDS}")
        if self.a < 0:
            raise ValueError(f"softening amplitude must be >= 0, got {self.a}")
        if self.kind == HARMONIC and self.a != 0.0:
            raise ValueError("the harmonic potential takes no softening "
                             "amplitude; leave a = 0")

    @property
    def kind_code(self) -> int:
        return KIND_CODES[self.kind]


def evaluate(spec: PotentialSpec, r):
    """Return the triple ``(V(r), V'(r), V''(r))``.

    Accepts scalars or arrays and broadcasts elementwise.
    """
    r = np.asarray(r, dtype=float)
    if spec.kind == HARMONIC:
        v = 0.5 * r * r
        vp = r
        vpp = np.ones_like(r)
    else:
        s = np.sqrt(1.0 + r * r)
        v = 0.5 * r * r + spec.a * (s - 1.0)
        vp = r + spec.a * r / s
        vpp = 1.0 + spec.a / (s * s * s)
    if r.ndim == 0:
        return float(v), float(vp), float(vpp)
    return v, vp, vpp


def value(spec: PotentialSpec, r):
    return evaluate(spec, r)[0]


def derivative(spec: PotentialSpec, r):
    return evaluate(spec, r)[1]


def curvature(spec: PotentialSpec, r):
    return evaluate(spec, r)[2]


def curvature_bounds(spec: PotentialSpec) -> tuple[float, float]:
    """Certified bounds ``(delta_minus, delta_plus)`` on V'' over the line.

    For the harmonic spring both bounds equal 1.  For the softened
    quadratic, V''(r) = 1 + a (1 + r^2)^(-3/2) decreases monotonically in
    |r| from 1 + a down to the unattained infimum 1, so the bounds are
    exactly (1, 1 + a).
    """
    if spec.kind == HARMONIC:
        return 1.0, 1.0
    return 1.0, 1.0 + spec.a


def check_gap_assumption(spec: PotentialSpec, delta: float) -> bool:
    """True iff sup V'' < (1 + delta) inf V''."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    lo, hi = curvature_bounds(spec)
    return hi < (1.0 + delta) * lo
