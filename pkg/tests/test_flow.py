import numpy as np
import pytest

from cylvort.flow import (
    FlowInstabilityError,
    FlowTrajectory,
    FlowVariant,
    FourierWindow,
    NearSingularMetricWarning,
    WindowMismatchError,
    check_mode_confinement,
    energy_identity_gap,
    integrate,
    max_principle_check,
    mode_ode_step,
    perturbed_vacuum,
    rhs,
    shoot_connection,
    xi_v_solve,
)
from cylvort.functionals import action, gauge_transform, moment_map, t2_rotate
from cylvort.loops import TWO_PI, CriticalLoop, LoopConfig, t_samples


def random_loop(seed, n_t=64, const_eta=False):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n_t) + 1j * rng.normal(size=n_t)
    eta = np.full(n_t, rng.normal()) if const_eta else rng.normal(size=n_t)
    return LoopConfig(v=v, eta=eta)


# -- xi_v ---------------------------------------------------------------------

def test_xi_vanishes_for_r0_and_constant_modulus():
    t = t_samples(64)
    v = 1.7 * np.exp(2j * np.pi * 3 * t)
    assert np.max(np.abs(xi_v_solve(v, 0.0))) == 0.0
    assert np.max(np.abs(xi_v_solve(v, 1.0))) < 1e-13


def test_xi_cosine_example():
    t = t_samples(64)
    v = np.sqrt(1.0 + np.cos(2 * np.pi * t))
    xi = xi_v_solve(v, 1.0)
    assert np.max(np.abs(xi + np.sin(2 * np.pi * t) / (4 * np.pi))) < 1e-13
    # quadrature check of the defining ODE at r = 0.5
    xi5 = xi_v_solve(v, 0.5)
    from cylvort.loops import spectral_t_derivative
    mu = moment_map(v)
    assert np.max(np.abs(spectral_t_derivative(xi5) - 0.25 * (mu - mu.mean()))) < 1e-12
    assert abs(np.mean(xi5)) < 1e-15


# -- right-hand sides -----------------------------------------------------------

def test_rhs_critical_loop_is_zero():
    for kind in ("full_l2", "coulomb_g0", "ar_l2"):
        variant = FlowVariant(kind, r=0.4)
        dv, de = rhs(CriticalLoop(2).to_loop(), variant)
        assert np.max(np.abs(dv)) < 1e-12
        assert np.max(np.abs(de)) < 1e-12


def test_rhs_at_origin():
    lp = LoopConfig(v=np.zeros(64, dtype=complex), eta=np.zeros(64))
    dv, de = rhs(lp, FlowVariant.full_l2())
    assert np.max(np.abs(dv)) == 0.0
    assert np.allclose(de, -0.5)


def test_variant_coincidences():
    lp = random_loop(1)
    a_v, a_e = rhs(lp, FlowVariant.ar_l2(1.0))
    f_v, f_e = rhs(lp, FlowVariant.full_l2())
    assert np.max(np.abs(a_v - f_v)) < 1e-14
    assert np.max(np.abs(a_e - f_e)) < 1e-14
    lpc = random_loop(2, const_eta=True)
    g_v, g_e = rhs(lpc, FlowVariant.homotopy_gr(0.0))
    c_v, c_e = rhs(lpc, FlowVariant.coulomb_g0())
    assert np.max(np.abs(g_v - c_v)) < 1e-14
    assert np.max(np.abs(g_e - c_e)) < 1e-14


def test_warped_rhs_and_near_singular_flag():
    lp = random_loop(3)
    dv, de = rhs(lp, FlowVariant.warped())
    mu = moment_map(lp.v)
    assert np.max(np.abs(de + np.abs(lp.v) ** 2 * mu)) < 1e-14
    f_v, _ = rhs(lp, FlowVariant.full_l2())
    assert np.max(np.abs(dv - f_v)) < 1e-14
    tiny = LoopConfig(v=np.full(64, 1e-9 + 0j), eta=np.zeros(64))
    with pytest.warns(NearSingularMetricWarning):
        rhs(tiny, FlowVariant.warped())
    # general gamma bounded away from zero
    dv2, de2 = rhs(lp, FlowVariant.warped(gamma=lambda rho: 2.0 + 0 * rho))
    assert np.max(np.abs(de2 + mu / 4.0)) < 1e-14


def test_rhs_is_minus_gradient_for_flat_variants():
    """<rhs, grad A> = -|grad A|^2 against the finite-difference gradient."""
    from conftest import central_difference_gradient
    lp = random_loop(4, n_t=16)
    for variant in (FlowVariant.full_l2(), FlowVariant.ar_l2(0.4)):
        dv, de = rhs(lp, variant)
        fv, fe = central_difference_gradient(lp, variant.action_r)
        num = np.mean((np.conj(fv) * dv).real) + np.mean(fe * de)
        den = np.mean(np.abs(fv) ** 2) + np.mean(fe ** 2)
        assert abs(num + den) / den < 1e-5
        assert np.max(np.abs(dv + fv)) / np.sqrt(den) < 1e-5


def test_rhs_commutes_with_torus_rotation():
    lp = random_loop(6, const_eta=True)
    for variant in (FlowVariant.full_l2(), FlowVariant.homotopy_gr(0.7)):
        th1, th2 = 0.8, 2 * np.pi * 9 / 64   # grid rotation: same stencils
        dv1, de1 = rhs(t2_rotate(lp, th1, th2), variant)
        dv2, de2 = rhs(lp, variant)
        rotated = t2_rotate(LoopConfig(v=dv2, eta=de2), th1, th2)
        assert np.max(np.abs(dv1 - rotated.v)) < 1e-12
        assert np.max(np.abs(de1 - rotated.eta)) < 1e-12


# -- integrator -------------------------------------------------------------------

def test_integrate_stationary_at_critical_loop():
    traj = integrate(CriticalLoop(1).to_loop(), FlowVariant.coulomb_g0(),
                     ds=1e-2, s_max=5.0)
    assert traj.converged and traj.n_steps == 0
    assert len(traj.samples) == 1


def test_integrate_requires_constant_eta_for_coulomb():
    lp = random_loop(7)   # t-dependent eta
    with pytest.raises(ValueError, match="t-constant"):
        integrate(lp, FlowVariant.coulomb_g0(), ds=1e-3, s_max=1.0)


def test_vortex_trajectory_r0(vortex_trajectories):
    from cylvort.loops import dominant_winding
    traj = vortex_trajectories(0.0)
    assert traj.converged
    assert dominant_winding(traj.initial) == 0
    assert dominant_winding(traj.terminal) == 1
    assert abs(traj.terminal.eta_mean() + TWO_PI) < 1e-6
    assert abs(traj.action_drop() - np.pi) < 0.01 * np.pi
    # terminal state is a critical loop: flat gradient vanishes
    from cylvort.functionals import action_gradient, gradient_norm
    assert gradient_norm(*action_gradient(traj.terminal)) < 1e-6


def test_action_monotone_and_energy_identity(vortex_trajectories):
    traj = vortex_trajectories(0.0)
    a = traj.diagnostics["action"]
    assert np.all(np.diff(a) <= 1e-9)
    assert energy_identity_gap(traj) < 0.01


def test_gauge_equivariance_constant_gauge():
    """Flowing then gauging equals gauging then flowing for t-independent
    gauge loops (exact global phases commute with every stencil)."""
    h = np.full(64, np.exp(0.9j))
    init = perturbed_vacuum(mode=1, amplitude=1e-2)
    variant = FlowVariant.full_l2()
    window = FourierWindow(0, 1)
    t1 = integrate(gauge_transform(h, init), variant, ds=1e-3, s_max=0.5, window=window)
    t2 = integrate(init, variant, ds=1e-3, s_max=0.5, window=window)
    assert np.max(np.abs(t1.terminal.v - gauge_transform(h, t2.terminal).v)) < 1e-8


def test_instability_abort():
    init = perturbed_vacuum(mode=1, amplitude=0.5)
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(FlowInstabilityError):
        integrate(init, FlowVariant.coulomb_g0(), ds=1e4, s_max=1e6)


# -- per-mode stepping ----------------------------------------------------------

def test_mode_ode_step_examples():
    assert mode_ode_step(0.7 + 0.2j, 3, -TWO_PI * 3, 0.37) == 0.7 + 0.2j
    assert abs(mode_ode_step(1.0, 0, -1.0, 1.0) - np.exp(-1.0)) < 1e-15
    # closed form vs a generic midpoint integrator as ds -> 0
    v0, m, eta = 0.3 + 0.1j, 2, -1.7
    for ds in (1e-2, 1e-3):
        rate = eta + TWO_PI * m
        mid = v0 * (1 + ds * rate + 0.5 * (ds * rate) ** 2)
        assert abs(mode_ode_step(v0, m, eta, ds) - mid) < 20 * abs(v0) * (ds * rate) ** 3


def test_integrate_agrees_with_per_mode_stepping():
    """With the recorded multiplier sequence, exact per-mode stepping
    reproduces the integrator's coefficients."""
    init = perturbed_vacuum(mode=1, amplitude=1e-3)
    traj = integrate(init, FlowVariant.coulomb_g0(), ds=1e-3, s_max=0.2)
    s = traj.diagnostics["s"]
    # reconstruct mode evolution from the snapshot sequence
    v0 = traj.samples[0][1]
    v1 = traj.samples[1][1]
    ds = traj.samples[1][0] - traj.samples[0][0]
    for m in (0, 1):
        stepped = mode_ode_step(v0.mode(m), m, float(v0.eta[0]), ds)
        assert abs(stepped - v1.mode(m)) < 1e-8


# -- confinement ------------------------------------------------------------------

def test_confinement_exact_inside_window(vortex_trajectories):
    traj = vortex_trajectories(0.0)
    rep = check_mode_confinement(traj, FourierWindow(0, 1))
    assert rep.max_out_mass == 0.0
    assert rep.passed
    assert (rep.winding_start, rep.winding_end) == (0, 1)
    assert (rep.label_start, rep.label_end) == (0, -1)


def test_confinement_window_mismatch(vortex_trajectories):
    traj = vortex_trajectories(0.0)
    with pytest.raises(WindowMismatchError):
        check_mode_confinement(traj, FourierWindow(-5, 5))


def test_confinement_decaying_junk_modes():
    """Seeded in a wide window, the below-band modes die off; the terminal
    out-of-band mass certifies the asymptotic confinement."""
    rng = np.random.default_rng(5)
    junk = {m: 1e-8 * (rng.normal() + 1j * rng.normal()) for m in range(-5, 0)}

    def make_init(c):
        v_hat = np.zeros(64, dtype=complex)
        v_hat[0] = np.sqrt(1 - 1e-6)
        v_hat[1] = 1e-3
        for m, a in junk.items():
            v_hat[m % 64] = a
        return LoopConfig(v_hat=v_hat, eta=np.full(64, c))

    traj = shoot_connection(make_init, FlowVariant.coulomb_g0(), bracket=(-4.0, 0.0),
                            ds=2e-3, window=FourierWindow(-5, 1))
    assert traj.converged
    rep = check_mode_confinement(traj, FourierWindow(0, 1))
    assert rep.terminal_out_mass < 1e-6
    assert rep.max_out_mass > 1e-8      # the seeds were visible initially
    assert not rep.passed               # max over s fails, terminal passes


def test_confinement_detects_growing_mode():
    """A mode outside the window with positive rate grows under the exact
    per-mode step; the check fails on such data."""
    base = CriticalLoop(1).to_loop()     # eta = -2*pi
    eta = float(base.eta[0])
    amp0 = 1e-8
    hats0 = base.v_hat.copy()
    hats0[5] = amp0
    hats1 = base.v_hat.copy()
    hats1[5] = mode_ode_step(amp0, 5, eta, 0.5)    # rate eta + 10*pi > 0
    assert abs(hats1[5]) > 100 * amp0
    loops = [LoopConfig(v_hat=hats0, eta=base.eta),
             LoopConfig(v_hat=hats1, eta=base.eta)]
    diag = {k: np.zeros(2) for k in ("s", "action", "grad_norm", "u",
                                     "max_abs_v", "dissipation")}
    diag["s"] = np.array([0.0, 0.5])
    traj = FlowTrajectory(FlowVariant.coulomb_g0(), [(0.0, loops[0]), (0.5, loops[1])],
                          diag, converged=True, n_steps=1, stop_tol=1e-8)
    rep = check_mode_confinement(traj, FourierWindow(1, 1))
    assert not rep.passed
    assert rep.terminal_out_mass > 1e-6


# -- maximum principle -------------------------------------------------------------

def _synthetic_trajectory(loops):
    diag = {k: [] for k in ("s", "action", "grad_norm", "u", "max_abs_v", "dissipation")}
    samples = []
    for i, lp in enumerate(loops):
        samples.append((float(i), lp))
        diag["s"].append(float(i))
        diag["action"].append(0.0)
        diag["grad_norm"].append(0.0)
        diag["u"].append(0.5 * float(np.mean(np.abs(lp.v) ** 2)))
        diag["max_abs_v"].append(float(np.max(np.abs(lp.v))))
        diag["dissipation"].append(0.0)
    return FlowTrajectory(FlowVariant.coulomb_g0(), samples,
                          {k: np.array(v) for k, v in diag.items()},
                          converged=True, n_steps=len(loops) - 1, stop_tol=1e-8)


def test_max_principle_vacuum_boundary_case():
    traj = _synthetic_trajectory([CriticalLoop(0).to_loop()] * 3)
    rep = max_principle_check(traj)
    assert abs(rep.max_u - 0.5) < 1e-15
    assert rep.passed


def test_max_principle_zero_field():
    zero = LoopConfig(v=np.zeros(64, dtype=complex), eta=np.zeros(64))
    rep = max_principle_check(_synthetic_trajectory([zero, zero]))
    assert rep.max_u == 0.0 and rep.passed


def test_max_principle_on_vortex_trajectory(vortex_trajectories):
    rep = max_principle_check(vortex_trajectories(0.0))
    assert rep.passed
    assert rep.max_u <= 0.5 + 1e-6


# -- trajectory artifacts -----------------------------------------------------------

def test_trajectory_dump_load_roundtrip(tmp_path, vortex_trajectories):
    traj = vortex_trajectories(0.0)
    traj.dump(tmp_path / "traj")
    back = FlowTrajectory.load(tmp_path / "traj")
    assert back.converged == traj.converged
    assert back.n_steps == traj.n_steps
    assert len(back.samples) == len(traj.samples)
    assert np.allclose(back.diagnostics["action"], traj.diagnostics["action"])
    assert back.terminal.allclose(traj.terminal, atol=1e-15)
