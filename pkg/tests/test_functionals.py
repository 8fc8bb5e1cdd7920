import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cylvort.functionals import (
    EnergyReport,
    GaugeError,
    action,
    action_gradient,
    coulomb_project,
    critical_action,
    energy,
    floer_action,
    gauge_transform,
    gradient_norm,
    moment_map,
    t2_rotate,
)
from cylvort.loops import CriticalLoop, LoopConfig, t_samples


# -- independent quadrature oracle -------------------------------------------

def kinetic_quadrature(v_func, n=4096):
    """Trapezoid value of the loop integral of y dx with finite-difference
    x'; independent of the spectral quadratic form under test."""
    t = np.arange(n) / n
    v = v_func(t)
    x, y = v.real, v.imag
    dx = (np.roll(x, -1) - np.roll(x, 1)) * (n / 2.0)
    return float(np.mean(y * dx))


def coupling_quadrature(v_func, eta_func, r, n=4096):
    t = np.arange(n) / n
    mu = moment_map(v_func(t))
    return float(np.mean((r * mu + (1 - r) * np.mean(mu)) * eta_func(t)))


# -- moment map ----------------------------------------------------------------

def test_moment_map_values():
    assert moment_map(0.0) == 0.5
    assert abs(moment_map(np.exp(0.7j))) < 1e-15
    assert moment_map(2.0) == -1.5


@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 7))
@settings(max_examples=100, deadline=None)
def test_moment_map_phase_invariant(re, im, theta):
    z = re + 1j * im
    assert np.isclose(moment_map(np.exp(1j * theta) * z), moment_map(z),
                      rtol=0, atol=1e-13)


# -- kinetic term ----------------------------------------------------------------

def test_kinetic_term_against_quadrature():
    cases = [
        (lambda t: np.exp(2j * np.pi * t), -np.pi),
        (lambda t: 2.0 * np.exp(-2j * np.pi * t), 4 * np.pi),
        (lambda t: (0.3 + 0.1j) * np.ones_like(t), 0.0),
    ]
    for v_func, exact in cases:
        oracle = kinetic_quadrature(v_func)
        assert abs(oracle - exact) < 1e-5          # oracle converges to the value
        got = floer_action(v_func(t_samples(64)))
        assert abs(got - oracle) < 1e-5
        assert abs(got - exact) < 1e-12


def test_kinetic_term_random_loop_matches_quadrature():
    rng = np.random.default_rng(2)
    coef = {m: rng.normal() + 1j * rng.normal() for m in (-3, -1, 0, 2, 5)}

    def v_func(t):
        return sum(c * np.exp(2j * np.pi * m * t) for m, c in coef.items())

    got = floer_action(v_func(t_samples(64)))
    assert abs(got - kinetic_quadrature(v_func)) < 1e-6


# -- interpolated action ----------------------------------------------------------

def test_action_critical_loops():
    for m in (-2, 0, 1, 3):
        lp = CriticalLoop(m).to_loop()
        for r in (0.0, 0.5, 1.0):
            assert abs(action(lp, r) - critical_action(m)) < 1e-10


def test_action_zero_loop_constant_eta():
    lp = LoopConfig(v=np.zeros(64, dtype=complex), eta=np.full(64, 0.7))
    for r in (0.0, 0.3, 1.0):
        assert abs(action(lp, r) - 0.35) < 1e-14


def test_action_r_equality_for_constant_eta():
    rng = np.random.default_rng(4)
    v = rng.normal(size=64) + 1j * rng.normal(size=64)
    lp = LoopConfig(v=v, eta=np.full(64, -1.3))
    assert abs(action(lp, 1.0) - action(lp, 0.0)) < 1e-13


def test_action_matches_quadrature_oracle():
    def v_func(t):
        return 0.8 * np.exp(2j * np.pi * t) + 0.3 - 0.2j * np.exp(-4j * np.pi * t)

    def eta_func(t):
        return 0.4 + np.sin(2 * np.pi * t)

    lp = LoopConfig(v=v_func(t_samples(64)), eta=eta_func(t_samples(64)))
    for r in (0.0, 0.5, 1.0):
        oracle = kinetic_quadrature(v_func) + coupling_quadrature(v_func, eta_func, r)
        assert abs(action(lp, r) - oracle) < 1e-6


def test_action_rejects_bad_r():
    lp = CriticalLoop(0).to_loop()
    with pytest.raises(ValueError):
        action(lp, 1.5)


# -- gauge action ------------------------------------------------------------------

def test_gauge_identity():
    lp = CriticalLoop(1).to_loop()
    out = gauge_transform(np.ones(64, dtype=complex), lp)
    assert out.allclose(lp, atol=1e-12)


def test_gauge_winding_shift():
    t = t_samples(64)
    out = gauge_transform(np.exp(2j * np.pi * t), CriticalLoop(0).to_loop())
    assert out.allclose(CriticalLoop(1).to_loop(), atol=1e-9)
    # shifting again lands on winding 2
    out2 = gauge_transform(np.exp(2j * np.pi * t), out)
    assert out2.allclose(CriticalLoop(2).to_loop(), atol=1e-9)


def test_gauge_rejects_non_unit():
    lp = CriticalLoop(0).to_loop()
    h = np.ones(64, dtype=complex)
    h[5] = 1.001
    with pytest.raises(GaugeError):
        gauge_transform(h, lp)


def test_action_invariance_under_null_homotopic_gauges():
    rng = np.random.default_rng(7)
    t = t_samples(64)
    v = 0.6 * np.exp(2j * np.pi * t) + 0.4 + 0.05j * np.exp(-2j * np.pi * t)
    lp = LoopConfig(v=v, eta=0.3 + 0.2 * np.cos(2 * np.pi * t))
    a0 = action(lp, 1.0)
    worst = 0.0
    for _ in range(100):
        xi = np.zeros(64)
        for k in range(1, 7):
            xi += rng.normal(scale=0.1) * np.cos(2 * np.pi * k * t + rng.uniform(0, 2 * np.pi))
        out = gauge_transform(np.exp(1j * xi), lp)
        worst = max(worst, abs(action(out, 1.0) - a0))
    assert worst < 1e-9


# -- Coulomb projection ----------------------------------------------------------

def test_coulomb_constant_eta_is_fixed():
    lp = CriticalLoop(1).to_loop()
    out, h = coulomb_project(lp)
    assert out.allclose(lp, atol=1e-13)
    assert np.max(np.abs(h - 1.0)) < 1e-13


def test_coulomb_cosine_example():
    t = t_samples(64)
    lp = LoopConfig(v=np.exp(2j * np.pi * t), eta=0.3 + np.cos(2 * np.pi * t))
    out, h = coulomb_project(lp)
    assert np.max(np.abs(out.eta - 0.3)) < 1e-13
    xi = np.sin(2 * np.pi * t) / (2 * np.pi)
    assert np.max(np.abs(np.angle(h) - xi)) < 1e-13


def test_coulomb_idempotent():
    rng = np.random.default_rng(9)
    lp = LoopConfig(v=rng.normal(size=64) + 1j * rng.normal(size=64),
                    eta=rng.normal(size=64))
    once, _ = coulomb_project(lp)
    twice, h = coulomb_project(once)
    assert twice.allclose(once, atol=1e-13)
    assert np.max(np.abs(h - 1.0)) < 1e-13


# -- torus action ------------------------------------------------------------------

def test_t2_identity_and_action_invariance():
    rng = np.random.default_rng(12)
    lp = LoopConfig(v=rng.normal(size=64) + 1j * rng.normal(size=64),
                    eta=rng.normal(size=64))
    assert t2_rotate(lp, 0.0, 0.0).allclose(lp, atol=1e-13)
    for theta1, theta2 in ((0.4, 0.0), (0.0, 1.1), (2.2, -0.7)):
        rotated = t2_rotate(lp, theta1, theta2)
        assert abs(action(rotated, 1.0) - action(lp, 1.0)) < 1e-12
        assert abs(action(rotated, 0.5) - action(lp, 0.5)) < 1e-12


def test_t2_mode_phases_and_grid_roll():
    rng = np.random.default_rng(13)
    lp = LoopConfig(v=rng.normal(size=64) + 1j * rng.normal(size=64),
                    eta=rng.normal(size=64))
    theta1, theta2 = 0.9, 1.7
    rotated = t2_rotate(lp, theta1, theta2)
    for m in (-5, 0, 1, 7):
        expect = lp.mode(m) * np.exp(1j * (theta1 + m * theta2))
        assert abs(rotated.mode(m) - expect) < 1e-12
    # theta2 a grid multiple: rotation equals an index roll
    k = 5
    rolled = t2_rotate(lp, 0.0, 2 * np.pi * k / 64)
    assert np.max(np.abs(rolled.v - np.roll(lp.v, -k))) < 1e-10


# -- energy of trajectories --------------------------------------------------------

def test_energy_formula_on_critical_pairs():
    traj = [(0.0, CriticalLoop(0).to_loop()), (1.0, CriticalLoop(-1).to_loop())]
    rep = energy(traj)
    assert isinstance(rep, EnergyReport)
    assert abs(rep.energy - np.pi) < 1e-10
    assert abs(rep.vortex_number - 1.0) < 1e-10
    assert rep.converged

    rep2 = energy([(0.0, CriticalLoop(0).to_loop()), (3.0, CriticalLoop(-2).to_loop())])
    assert abs(rep2.energy - 2 * np.pi) < 1e-10


def test_energy_flags_nonconverged_ends():
    rng = np.random.default_rng(15)
    lp = LoopConfig(v=rng.normal(size=64) + 1j * rng.normal(size=64),
                    eta=rng.normal(size=64))
    with pytest.warns(UserWarning, match="not converged"):
        rep = energy([(0.0, lp), (1.0, CriticalLoop(0).to_loop())])
    assert not rep.converged


def test_constant_trajectory_at_critical_loop():
    lp = CriticalLoop(2).to_loop()
    rep = energy([(0.0, lp), (5.0, lp)])
    assert rep.energy == 0.0 and rep.converged


# -- gradient ----------------------------------------------------------------------

def test_gradient_vanishes_at_critical_loops():
    for m in (-1, 0, 2):
        gv, ge = action_gradient(CriticalLoop(m).to_loop(), 1.0)
        assert gradient_norm(gv, ge) < 1e-12


from conftest import central_difference_gradient  # noqa: E402


@pytest.mark.parametrize("r", [1.0, 0.3])
def test_action_gradient_matches_finite_differences(r):
    rng = np.random.default_rng(21)
    lp = LoopConfig(v=rng.normal(size=16) + 1j * rng.normal(size=16),
                    eta=rng.normal(size=16))
    gv, ge = action_gradient(lp, r)
    fv, fe = central_difference_gradient(lp, r)
    scale = max(gradient_norm(gv, ge), 1.0)
    assert np.max(np.abs(gv - fv)) / scale < 1e-5
    assert np.max(np.abs(ge - fe)) / scale < 1e-5
