"""Action functionals, moment map, gauge actions, and Coulomb projection.

Sign dictionary (see README): Lie-algebra values a*i are stored as the
real coefficient a, which turns the complex flow system into

    d/ds v   = -i dv/dt + eta * v          (v-component of minus-gradient)
    d/ds eta = -(1 - |v|^2) / 2            (eta-component)

Critical loops pair winding m with the constant multiplier -2*pi*m and
carry action value -pi*m.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .loops import (
    TWO_PI,
    CriticalLoop,
    LoopConfig,
    grid_to_hat,
    hat_to_grid,
    mode_numbers,
    spectral_t_derivative,
)


class GaugeError(ValueError):
    """Raised when a gauge loop fails the unit-modulus requirement."""


def moment_map(z):
    """Real coefficient (1 - |z|^2)/2 of the circle moment map on C.

    The i*R-valued map is -(i/2)|z|^2 + i/2; only its real coefficient is
    materialized.  Vectorized over arrays.
    """
    z = np.asarray(z)
    out = 0.5 * (1.0 - np.abs(z) ** 2)
    return float(out) if out.ndim == 0 else out


def mean_moment(v: np.ndarray) -> float:
    """t-average of the moment map along a loop (trapezoid = mean on the
    uniform periodic grid)."""
    return float(np.mean(moment_map(v)))


def floer_action(v) -> float:
    """Loop-space kinetic term: integral of y dx along the loop.

    Evaluated as the exact quadratic form -pi * sum_m m |v_m|^2 of the
    Fourier coefficients.  Accepts a LoopConfig or a complex sample array.
    """
    if isinstance(v, LoopConfig):
        hat = v.v_hat
        n = v.n_t
    else:
        v = np.asarray(v, dtype=complex)
        hat = grid_to_hat(v)
        n = v.shape[-1]
    return float(-np.pi * np.sum(mode_numbers(n) * np.abs(hat) ** 2))


def action(cfg: LoopConfig, r: float = 1.0) -> float:
    """Interpolated action: kinetic term plus <r*mu(v) + (1-r)*mubar, eta>.

    r = 1 is the moment-map action; r = 0 pairs eta with the t-averaged
    moment map only.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must lie in [0, 1]")
    mu = moment_map(cfg.v)
    mubar = float(np.mean(mu))
    coupling = float(np.mean((r * mu + (1.0 - r) * mubar) * cfg.eta))
    return floer_action(cfg) + coupling


def action_gradient(cfg: LoopConfig, r: float = 1.0):
    """L^2 gradient of `action` at cfg: (i dv/dt - (r eta + (1-r) etabar) v,
    r mu(v) + (1-r) mubar).

    Returned as a (complex loop, real loop) pair in the real-coefficient
    convention; minus this pair is the flow right-hand side in the flat
    metric.
    """
    v, eta = cfg.v, cfg.eta
    etabar = float(np.mean(eta))
    mu = moment_map(v)
    mubar = float(np.mean(mu))
    gv = 1j * spectral_t_derivative(v) - (r * eta + (1.0 - r) * etabar) * v
    geta = r * mu + (1.0 - r) * mubar
    return gv, geta


def gradient_norm(gv: np.ndarray, geta: np.ndarray) -> float:
    """L^2 norm of a tangent (complex loop, real loop) pair."""
    return float(np.sqrt(np.mean(np.abs(gv) ** 2) + np.mean(geta ** 2)))


def _phase_profile(h: np.ndarray):
    """Continuous phase samples and integer winding of a unit-complex loop."""
    dpsi = np.angle(h / np.roll(h, 1))          # wrapped increments, dpsi[0] closes the loop
    winding = int(np.round(np.sum(dpsi) / TWO_PI))
    psi = np.angle(h[0]) + np.concatenate(([0.0], np.cumsum(dpsi[1:])))
    return psi, winding


def gauge_transform(h: np.ndarray, cfg: LoopConfig) -> LoopConfig:
    """Gauge action (v, eta) -> (h v, eta - d/dt arg h).

    h must be unit-modulus to tolerance 1e-9.  A loop h of winding w
    shifts a critical loop of winding m to winding m + w and its
    multiplier by -2*pi*w.
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != (cfg.n_t,):
        raise ValueError("gauge loop must match the configuration grid")
    if np.max(np.abs(np.abs(h) - 1.0)) > 1e-9:
        raise GaugeError("gauge loop is not unit-modulus (tolerance 1e-9)")
    psi, winding = _phase_profile(h)
    periodic_part = psi - TWO_PI * winding * cfg.t
    dpsi_dt = spectral_t_derivative(periodic_part) + TWO_PI * winding
    return LoopConfig(v=h * cfg.v, eta=cfg.eta - dpsi_dt)


def coulomb_project(cfg: LoopConfig):
    """Project onto the Coulomb section: unique h = exp(i xi), xi mean-zero
    with dxi/dt = eta - etabar, so the gauged eta is the constant etabar.

    Returns (gauged config, gauge loop h).  Idempotent.
    """
    eta_hat = cfg.eta_hat.copy()
    etabar = float(eta_hat[0].real)
    k = mode_numbers(cfg.n_t).astype(float)
    k[0] = 1.0  # avoid divide-by-zero; mean mode is zeroed next
    xi_hat = eta_hat / (2j * np.pi * k)
    xi_hat[0] = 0.0
    xi = hat_to_grid(xi_hat).real
    h = np.exp(1j * xi)
    out = LoopConfig(v=h * cfg.v, eta=np.full(cfg.n_t, etabar))
    return out, h


def t2_rotate(cfg: LoopConfig, theta1: float, theta2: float) -> LoopConfig:
    """Two-torus action: global phase exp(i theta1) on v and loop rotation
    t -> t + theta2/(2 pi) applied to both components.

    Fourier mode m picks up the phase exp(i(theta1 + m theta2)); the
    action functional and the flow right-hand sides commute with this.
    """
    m = mode_numbers(cfg.n_t)
    phases = np.exp(1j * (theta1 + m * theta2))
    v_hat = cfg.v_hat * phases
    eta_hat = cfg.eta_hat * np.exp(1j * m * theta2)
    return LoopConfig(v_hat=v_hat, eta_hat=eta_hat)


@dataclass
class EnergyReport:
    """Endpoint action difference of a trajectory and its flux form."""

    energy: float                 # action(end) - action(start)
    vortex_number: float          # energy / pi
    action_start: float
    action_end: float
    grad_norm_start: float
    grad_norm_end: float
    converged: bool               # both terminal gradient norms <= 1e-6


def energy(traj, r: float = 1.0, grad_tol: float = 1e-6) -> EnergyReport:
    """E = action(end) - action(start) for a timestamped loop sequence.

    `traj` is either a FlowTrajectory or a list of (s, LoopConfig) pairs.
    Flags non-convergence (terminal gradient norm above `grad_tol`) with
    a warning; the flux form N = E/pi is exposed on the report.
    """
    samples = getattr(traj, "samples", traj)
    if len(samples) < 1:
        raise ValueError("empty trajectory")
    first, last = samples[0][1], samples[-1][1]
    a0, a1 = action(first, r), action(last, r)
    g0 = gradient_norm(*action_gradient(first, r))
    g1 = gradient_norm(*action_gradient(last, r))
    converged = max(g0, g1) <= grad_tol
    if not converged:
        warnings.warn(f"trajectory ends are not converged (grad norms {g0:.2e}, {g1:.2e})",
                      stacklevel=2)
    e = a1 - a0
    return EnergyReport(energy=e, vortex_number=e / np.pi,
                        action_start=a0, action_end=a1,
                        grad_norm_start=g0, grad_norm_end=g1,
                        converged=converged)


def critical_action(m: int) -> float:
    """Action value of the winding-m critical loop: -pi*m, independent of r."""
    return -np.pi * m


def paper_label(winding: int) -> int:
    """Vortex bookkeeping label of a critical loop; the descending flow
    connecting windings (w-, w+) is recorded as joining labels
    (-w-, -w+), so a single vortex joins labels 0 -> -1."""
    return -winding


__all__ = [
    "GaugeError", "moment_map", "mean_moment", "floer_action", "action",
    "action_gradient", "gradient_norm", "gauge_transform", "coulomb_project",
    "t2_rotate", "energy", "EnergyReport", "critical_action", "paper_label",
    "CriticalLoop",
]
