"""Closed-form linearized reference dynamics: spectra, evolution, predictions."""

import math

import numpy as np
import pytest

from chainlab.euler import (
    LinearizedSystem,
    TestFunction,
    backward_evolve,
    check_compatibility,
    evaluate,
    from_grid,
    predicted_mode_covariance,
)
from chainlab.potential import PotentialSpec
from chainlab.thermo import CanonicalParams

HARM_SYS = LinearizedSystem.from_params(
    CanonicalParams.compute(PotentialSpec("harmonic"), 1.0, 0.0))
SOFT_SYS = LinearizedSystem.from_params(
    CanonicalParams.compute(PotentialSpec("softened-quadratic", a=0.2),
                            2.0, 0.3))


def test_drift_matrix_spectrum():
    rng = np.random.default_rng(1)
    spec = PotentialSpec("softened-quadratic", a=0.2)
    for _ in range(5):
        beta = rng.uniform(0.5, 2.0)
        tau = rng.uniform(-1.0, 1.0)
        lsys = LinearizedSystem.from_params(
            CanonicalParams.compute(spec, beta, tau))
        eig = np.sort_complex(np.linalg.eigvals(lsys.drift_matrix))
        expect = np.sort_complex(np.array([-lsys.c, 0.0, lsys.c]))
        np.testing.assert_allclose(eig, expect, rtol=0, atol=1e-10)


def test_predicted_covariance_closed_forms():
    b, c = SOFT_SYS.beta, SOFT_SYS.c
    theta0 = math.pi / 2
    t = 0.37
    assert math.isclose(
        predicted_mode_covariance(SOFT_SYS, "sine", "sine", 0, t),
        math.cos(c * theta0 * t) / b, rel_tol=1e-14)
    assert math.isclose(
        predicted_mode_covariance(SOFT_SYS, "cosine", "cosine", 0, t),
        c * c * math.cos(c * theta0 * t) / b, rel_tol=1e-14)
    assert math.isclose(
        predicted_mode_covariance(SOFT_SYS, "sine", "cosine", 0, t),
        -(c / b) * math.sin(c * theta0 * t), rel_tol=1e-14)
    # entropy modes are frozen: constant in t, value Q33
    for t in (0.0, 0.4, 2.0):
        assert predicted_mode_covariance(SOFT_SYS, "entropy-cosine",
                                         "entropy-cosine", 1, t) \
            == SOFT_SYS.Q[2, 2]
    assert predicted_mode_covariance(SOFT_SYS, "entropy-sine",
                                     "entropy-sine", 0, 1.0) == 0.0
    # cross-branch covariances vanish
    assert predicted_mode_covariance(SOFT_SYS, "sine", "entropy-sine",
                                     1, 0.5) == 0.0


def test_sound_covariance_solves_wave_dynamics():
    # d²/dt² C(t) = −(cθ_n)² C(t), verified by finite differences
    n, h = 1, 1e-4
    for pair in [("sine", "sine"), ("cosine", "cosine"),
                 ("sine", "cosine")]:
        f = lambda t: predicted_mode_covariance(SOFT_SYS, *pair, n, t)
        for t in (0.1, 0.9):
            dd = (f(t + h) - 2 * f(t) + f(t - h)) / h ** 2
            omega = SOFT_SYS.c * Mode_theta(n)
            assert math.isclose(dd, -omega ** 2 * f(t), rel_tol=1e-5,
                                abs_tol=1e-5)


def Mode_theta(n):
    return (2 * n + 1) * math.pi / 2


def test_evaluate_reconstruction():
    # a(t)=..., check evaluate maps coefficients to the stated physical form
    h = TestFunction(a=[0.3, -0.1], b=[0.2, 0.4], s_sin=[0.0, 0.5],
                     s_cos=[0.7, 0.0])
    x = np.linspace(0, 1, 101)
    vals = evaluate(SOFT_SYS, h, x)
    sq = math.sqrt(2.0)
    g1 = 0.3 * sq * np.sin(Mode_theta(0) * x) \
        - 0.1 * sq * np.sin(Mode_theta(1) * x)
    g = 0.2 * sq * np.cos(Mode_theta(0) * x) \
        + 0.4 * sq * np.cos(Mode_theta(1) * x)
    s = 0.5 * sq * np.sin(2 * math.pi * x) + 0.7 * sq
    c2 = SOFT_SYS.c ** 2
    np.testing.assert_allclose(vals[:, 0], g1, atol=1e-14)
    np.testing.assert_allclose(
        vals[:, 1], (SOFT_SYS.tau_r * g + SOFT_SYS.tau * s) / c2,
        atol=1e-13)
    np.testing.assert_allclose(
        vals[:, 2], (SOFT_SYS.tau_e * g - s) / c2, atol=1e-13)
    # boundary class holds by construction
    v0 = evaluate(SOFT_SYS, h, [0.0, 1.0])
    assert abs(v0[0, 0]) < 1e-14
    assert abs(v0[1, 1] + SOFT_SYS.tau * v0[1, 2]) < 1e-13


def test_from_grid_round_trip():
    h = TestFunction(a=[0.3, -0.1, 0.05], b=[0.2, 0.4, 0.0],
                     s_sin=[0.0, 0.5, 0.1], s_cos=[0.7, -0.2, 0.0])
    x = np.linspace(0, 1, 4001)
    tf = from_grid(SOFT_SYS, evaluate(SOFT_SYS, h, x), x)
    np.testing.assert_allclose(tf.a[:3], h.a, atol=1e-6)
    np.testing.assert_allclose(tf.b[:3], h.b, atol=1e-6)
    np.testing.assert_allclose(tf.s_sin[:3], h.s_sin, atol=1e-6)
    np.testing.assert_allclose(tf.s_cos[:3], h.s_cos, atol=1e-6)


def test_from_grid_rejects_boundary_violations():
    x = np.linspace(0, 1, 801)
    bad = np.zeros((x.size, 3))
    bad[:, 0] = np.cos(math.pi * x / 2)  # H1(0) = 1 != 0
    with pytest.raises(ValueError, match="boundary"):
        from_grid(SOFT_SYS, bad, x)
    bad2 = np.zeros((x.size, 3))
    bad2[:, 1] = np.ones_like(x)  # H2(1) + τH3(1) = 1 != 0
    with pytest.raises(ValueError, match="boundary"):
        from_grid(SOFT_SYS, bad2, x)


@pytest.mark.parametrize("lsys", [HARM_SYS, SOFT_SYS])
def test_backward_evolution_group_laws(lsys):
    h = TestFunction(a=[0.3, -0.1], b=[0.2, 0.4], s_sin=[0.0, 0.5],
                     s_cos=[0.7, 0.0])
    x = np.linspace(0, 1, 301)
    # reversibility: t then −t restores the function
    back = backward_evolve(lsys, backward_evolve(lsys, h, 0.8), -0.8)
    np.testing.assert_allclose(back.a, h.a, atol=1e-12)
    np.testing.assert_allclose(back.b, h.b, atol=1e-12)
    # semigroup: t1 + t2 equals composition
    one = backward_evolve(lsys, h, 0.9)
    two = backward_evolve(lsys, backward_evolve(lsys, h, 0.5), 0.4)
    np.testing.assert_allclose(evaluate(lsys, one, x),
                               evaluate(lsys, two, x), atol=1e-12)
    # the entropy coordinate is frozen
    np.testing.assert_allclose(one.s_sin, h.s_sin, atol=0)
    np.testing.assert_allclose(one.s_cos, h.s_cos, atol=0)
    # rotation invariant: a² + (b/c)² is preserved mode by mode
    np.testing.assert_allclose(one.a ** 2 + (one.b / lsys.c) ** 2,
                               h.a ** 2 + (h.b / lsys.c) ** 2, rtol=1e-12)


def test_backward_evolution_solves_transport():
    # d/dt a_n = θ_n b_n / ... : check the generator by finite differences
    h = TestFunction(a=[0.2], b=[0.5], s_sin=[0.0], s_cos=[0.0])
    eps = 1e-6
    plus = backward_evolve(SOFT_SYS, h, eps)
    minus = backward_evolve(SOFT_SYS, h, -eps)
    da = (plus.a[0] - minus.a[0]) / (2 * eps)
    db = (plus.b[0] - minus.b[0]) / (2 * eps)
    theta0 = Mode_theta(0)
    assert math.isclose(da, theta0 * h.b[0], rel_tol=1e-8)
    assert math.isclose(db, -SOFT_SYS.c ** 2 * theta0 * h.a[0],
                        rel_tol=1e-8)


def test_compatibility_conditions():
    # the zero function and pure entropy profiles are compatible
    assert check_compatibility(SOFT_SYS, TestFunction(
        a=[0.0], b=[0.0], s_sin=[0.4], s_cos=[0.3]))
    # a single sound mode has nonvanishing endpoint derivatives
    assert not check_compatibility(SOFT_SYS, TestFunction(
        a=[1.0], b=[0.0], s_sin=[0.0], s_cos=[0.0]))
    assert not check_compatibility(SOFT_SYS, TestFunction(
        a=[0.0], b=[1.0], s_sin=[0.0], s_cos=[0.0]))
    # cancellation: Σ aₙθₙ = 0 and Σ bₙθₙ(−1)ⁿ = 0
    a = np.array([3.0, -1.0])  # 3·θ₀ − 1·θ₁ = 3π/2 − 3π/2 = 0
    b = np.array([3.0, 1.0])   # 3·θ₀·(+1) + 1·θ₁·(−1) = 0
    assert check_compatibility(SOFT_SYS, TestFunction(
        a=a, b=b, s_sin=[0.0], s_cos=[0.0]))
