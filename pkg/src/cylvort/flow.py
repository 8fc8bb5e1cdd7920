"""Gradient-flow steppers on the loop space and their empirical checks.

Five right-hand sides are supported through `FlowVariant`:

* ``full_l2``:    flat-metric flow of the full action, eta t-dependent;
* ``coulomb_g0``: Coulomb-section flow with t-constant eta and the
  averaged moment map driving it (per-mode linear, window preserving);
* ``homotopy_gr``: Coulomb-section flow in the r-interpolated metric,
  with the gauge-correction loop xi_v multiplying v;
* ``ar_l2``:      flat-metric flow of the r-interpolated action;
* ``warped``:     warped-metric variant whose eta-equation carries
  1/gamma(|v|)^2, by default |v|^2 (the Chern-Simons choice).

Stepping is semi-implicit: the stiff loop-rotation term -i dv/dt is an
exact per-mode integrating factor exp(2*pi*m*ds); everything else is
explicit.  Steps that increase the action are rejected and halved.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functionals import action, action_gradient, mean_moment, moment_map, paper_label
from .loops import (
    TWO_PI,
    LoopConfig,
    dominant_winding,
    grid_to_hat,
    hat_to_grid,
    mode_numbers,
    spectral_t_derivative,
    t_samples,
)

_KINDS = ("full_l2", "coulomb_g0", "homotopy_gr", "ar_l2", "warped")


class FlowInstabilityError(RuntimeError):
    """Raised after 40 consecutive step rejections."""


class ShootingError(RuntimeError):
    """Bisection shooting failed to bracket or land the connection."""


class WindowMismatchError(ValueError):
    """Detected asymptotic windings do not match the supplied window."""


class NearSingularMetricWarning(UserWarning):
    """Warped metric evaluated where |v| is uniformly tiny."""


@dataclass(frozen=True)
class FlowVariant:
    kind: str
    r: float = 1.0
    gamma: object = None   # optional callable rho -> gamma(rho) for `warped`

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")

    @classmethod
    def full_l2(cls):
        return cls("full_l2")

    @classmethod
    def coulomb_g0(cls):
        return cls("coulomb_g0")

    @classmethod
    def homotopy_gr(cls, r):
        return cls("homotopy_gr", r=r)

    @classmethod
    def ar_l2(cls, r):
        return cls("ar_l2", r=r)

    @classmethod
    def warped(cls, gamma=None):
        return cls("warped", gamma=gamma)

    @property
    def action_r(self) -> float:
        """Interpolation parameter of the functional this flow descends."""
        return self.r if self.kind == "ar_l2" else 1.0

    @property
    def constant_eta(self) -> bool:
        return self.kind in ("coulomb_g0", "homotopy_gr")

    def label(self) -> str:
        if self.kind in ("homotopy_gr", "ar_l2"):
            return f"{self.kind}(r={self.r:g})"
        return self.kind


@dataclass(frozen=True)
class FourierWindow:
    """Loops with Fourier support in modes mu..nu (inclusive)."""

    mu: int
    nu: int

    def __post_init__(self):
        if self.mu > self.nu:
            raise ValueError("need mu <= nu")

    def contains(self, m: int) -> bool:
        return self.mu <= m <= self.nu

    def mask(self, n_t: int) -> np.ndarray:
        m = mode_numbers(n_t)
        return (m >= self.mu) & (m <= self.nu)

    def project(self, cfg: LoopConfig) -> LoopConfig:
        v_hat = np.where(self.mask(cfg.n_t), cfg.v_hat, 0.0)
        return LoopConfig(v_hat=v_hat, eta=cfg.eta)

    def out_mass(self, cfg: LoopConfig) -> float:
        """L^2 norm of the v-coefficients outside the window."""
        out = np.where(self.mask(cfg.n_t), 0.0, cfg.v_hat)
        return float(np.linalg.norm(out))


def xi_v_solve(v: np.ndarray, r: float) -> np.ndarray:
    """Mean-zero loop xi with dxi/dt = r^2 (mu(v) - mubar(v)).

    Solved per Fourier mode: xi_k = r^2 mu_k / (2 pi i k) for k != 0.
    Returns real coefficients.
    """
    v = np.asarray(v, dtype=complex)
    mu = moment_map(v)
    rhs_hat = grid_to_hat((r * r) * mu.astype(complex))
    k = mode_numbers(v.shape[-1]).astype(float)
    k[0] = 1.0
    xi_hat = rhs_hat / (2j * np.pi * k)
    xi_hat[0] = 0.0
    return hat_to_grid(xi_hat).real


def rhs(cfg: LoopConfig, variant: FlowVariant):
    """Minus-gradient right-hand side of d/ds (v, eta) for the variant.

    Returns a (complex loop, real loop) tangent pair.
    """
    v, eta = cfg.v, cfg.eta
    v_t = spectral_t_derivative(v)
    mu = moment_map(v)
    mubar = float(np.mean(mu))
    kind = variant.kind
    if kind == "full_l2":
        return -1j * v_t + eta * v, -mu
    if kind == "coulomb_g0":
        return -1j * v_t + eta * v, np.full(cfg.n_t, -mubar)
    if kind == "homotopy_gr":
        xi = xi_v_solve(v, variant.r)
        return -1j * xi * v - 1j * v_t + eta * v, np.full(cfg.n_t, -mubar)
    if kind == "ar_l2":
        r = variant.r
        etabar = float(np.mean(eta))
        return -1j * v_t + (r * eta + (1.0 - r) * etabar) * v, -(r * mu + (1.0 - r) * mubar)
    if kind == "warped":
        if np.max(np.abs(v)) < 1e-8:
            warnings.warn("warped metric is near-singular: |v| < 1e-8 on the whole loop",
                          NearSingularMetricWarning, stacklevel=2)
        if variant.gamma is None:
            weight = np.abs(v) ** 2          # gamma(rho) = 1/rho
        else:
            weight = 1.0 / np.asarray(variant.gamma(np.abs(v))) ** 2
        return -1j * v_t + eta * v, -weight * mu
    raise AssertionError(kind)


def mode_ode_step(v_m: complex, m: int, eta_bar: float, ds: float) -> complex:
    """Exact update of one Fourier coefficient under the Coulomb flow:
    v_m -> v_m * exp((eta_bar + 2*pi*m) * ds)."""
    return v_m * np.exp((eta_bar + TWO_PI * m) * ds)


@dataclass
class FlowTrajectory:
    """Flow samples with per-step diagnostics.

    `samples` holds (s, LoopConfig) snapshots (thinned to at most
    `max_snapshots`); `diagnostics` holds per-accepted-step arrays with
    keys s, action, grad_norm, u, max_abs_v, dissipation.
    """

    variant: FlowVariant
    samples: list
    diagnostics: dict
    converged: bool
    n_steps: int
    stop_tol: float
    rejections: int = 0
    escaped: str | None = None   # "high"/"low" when the eta exit band was hit

    @property
    def initial(self) -> LoopConfig:
        return self.samples[0][1]

    @property
    def terminal(self) -> LoopConfig:
        return self.samples[-1][1]

    def action_drop(self) -> float:
        a = self.diagnostics["action"]
        return float(a[0] - a[-1])

    def dissipated(self) -> float:
        """Accumulated squared gradient norm, sum ||grad||^2 ds."""
        return float(self.diagnostics["dissipation"][-1])

    def dump(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": self.variant.kind, "r": self.variant.r,
            "n_t": self.terminal.n_t, "stop_tol": self.stop_tol,
            "converged": bool(self.converged), "n_steps": int(self.n_steps),
            "n_snapshots": len(self.samples), "rejections": int(self.rejections),
        }
        (outdir / "meta.json").write_text(json.dumps(meta, sort_keys=True))
        with open(outdir / "diagnostics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            keys = ["s", "action", "grad_norm", "u", "max_abs_v"]
            w.writerow(keys)
            for row in zip(*(self.diagnostics[k] for k in keys)):
                w.writerow([f"{x:.17g}" for x in row])
        for idx, (s, loop) in enumerate(self.samples):
            d = loop.to_json_dict()
            d["s"] = s
            (outdir / f"snap_{idx:05d}.json").write_text(json.dumps(d))

    @classmethod
    def load(cls, outdir) -> "FlowTrajectory":
        outdir = Path(outdir)
        meta = json.loads((outdir / "meta.json").read_text())
        samples = []
        for p in sorted(outdir.glob("snap_*.json")):
            d = json.loads(p.read_text())
            samples.append((d.pop("s"), LoopConfig.from_json_dict(d)))
        diags = {}
        with open(outdir / "diagnostics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for col, key in enumerate(rows[0]):
            diags[key] = np.array([float(r[col]) for r in rows[1:]])
        variant = FlowVariant(meta["kind"], r=meta["r"])
        return cls(variant=variant, samples=samples, diagnostics=diags,
                   converged=meta["converged"], n_steps=meta["n_steps"],
                   stop_tol=meta["stop_tol"], rejections=meta["rejections"])


def _dissipation_rate(cfg, dv, deta, r_action):
    """-dA[rhs], the instantaneous squared gradient norm in the flow metric."""
    gv, geta = action_gradient(cfg, r_action)
    pair = np.mean((np.conj(gv) * dv).real) + np.mean(geta * deta)
    return -float(pair)


_CONVERGE_STREAK = 10
_MAX_REJECTIONS = 40
_ACCEPT_SLACK = 1e-12


def integrate(init: LoopConfig, variant: FlowVariant, ds: float, s_max: float,
              stop_tol: float = 1e-8, window: FourierWindow | None = None,
              max_snapshots: int = 4096,
              eta_exit: tuple | None = None) -> FlowTrajectory:
    """March the flow from `init` until the gradient norm stays below
    `stop_tol` for 10 consecutive steps or s reaches `s_max`.

    The -i dv/dt term is integrated exactly per Fourier mode; for the
    t-constant-eta variants the eta*v term joins the exact factor.  A
    `window` restricts the v-dynamics to the given Fourier band (the
    Coulomb flow preserves any window it starts in; the r > 0 metrics do
    not, and the band then acts as the Galerkin reduction of the flow).
    Steps that increase the action are rejected and halved; 40 consecutive
    rejections raise FlowInstabilityError.  When `eta_exit` = (lo, hi) is
    given, the run stops once the mean multiplier leaves the band; the
    trajectory then carries escaped = "low"/"high" (used by the shooting
    wrapper to classify runaways of the unbounded functional).
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    if variant.constant_eta:
        if np.ptp(init.eta) > 1e-9:
            raise ValueError(f"{variant.kind} expects t-constant eta (Coulomb gauge)")
        return _integrate_const_eta(init, variant, ds, s_max, stop_tol, window,
                                    max_snapshots, eta_exit)
    return _integrate_grid(init, variant, ds, s_max, stop_tol, window,
                           max_snapshots, eta_exit)


class _Recorder:
    """Shared bookkeeping of both integration engines: per-step diagnostic
    arrays, thinned snapshots, convergence streak, and the eta exit band."""

    def __init__(self, variant, stop_tol, max_snapshots, eta_exit):
        self.diag = {k: [] for k in ("s", "action", "grad_norm", "u",
                                     "max_abs_v", "dissipation")}
        self.samples = []
        self.every = 1
        self.variant = variant
        self.stop_tol = stop_tol
        self.max_snapshots = max_snapshots
        self.eta_exit = eta_exit
        self.streak = 0
        self.escaped = None
        self.rejections = 0

    def record(self, s, a, gn, u, max_abs_v, dissip):
        d = self.diag
        d["s"].append(s)
        d["action"].append(a)
        d["grad_norm"].append(gn)
        d["u"].append(u)
        d["max_abs_v"].append(max_abs_v)
        d["dissipation"].append(dissip)

    def after_step(self, s, n_steps, loop_factory, eta_mean, gn) -> str | None:
        """Snapshot thinning and stop-condition bookkeeping; returns
        "escaped"/"converged" when the run should stop."""
        if self.eta_exit is not None and not \
                self.eta_exit[0] <= eta_mean <= self.eta_exit[1]:
            self.escaped = "low" if eta_mean < self.eta_exit[0] else "high"
            return "escaped"
        if n_steps % self.every == 0:
            self.samples.append((s, loop_factory()))
            if len(self.samples) > self.max_snapshots:
                self.samples = self.samples[::2]
                self.every *= 2
        self.streak = self.streak + 1 if gn < self.stop_tol else 0
        if self.streak >= _CONVERGE_STREAK:
            return "converged"
        return None

    def finish(self, s, loop_factory, converged, n_steps) -> FlowTrajectory:
        if not self.samples or self.samples[-1][0] != s:
            self.samples.append((s, loop_factory()))
        return FlowTrajectory(self.variant, self.samples,
                              {k: np.array(v) for k, v in self.diag.items()},
                              converged=converged, n_steps=n_steps,
                              stop_tol=self.stop_tol, rejections=self.rejections,
                              escaped=self.escaped)


def _integrate_const_eta(init, variant, ds, s_max, stop_tol, window,
                         max_snapshots, eta_exit) -> FlowTrajectory:
    """Spectral engine for the t-constant-eta flows.

    State is (v_hat, eta); the linear v-equation is advanced by the exact
    per-mode factor exp((2 pi m + eta) ds), so unexcited modes stay at
    exactly zero and any Fourier window present in the data is preserved
    bitwise.  For r > 0 the gauge-correction term is the only
    nonlinearity and passes through one transform pair per step.
    """
    n_t = init.n_t
    modes = mode_numbers(n_t)
    rates = TWO_PI * modes
    wmask = window.mask(n_t) if window is not None else None
    v_hat = init.v_hat.copy()
    if wmask is not None:
        v_hat = np.where(wmask, v_hat, 0.0)
    eta = float(init.eta[0])
    r = variant.r if variant.kind == "homotopy_gr" else 0.0
    rec = _Recorder(variant, stop_tol, max_snapshots, eta_exit)

    def loop_of(vh, et):
        return lambda: LoopConfig(v_hat=vh.copy(), eta=np.full(n_t, et))

    def eval_state(vh, et):
        """action, grad norm, dissipation rate, nonlinear hat, mubar, u, max|v|"""
        abs2 = vh.real ** 2 + vh.imag ** 2
        power = float(np.sum(abs2))                  # mean_t |v|^2 by Parseval
        mubar = 0.5 * (1.0 - power)
        a = float(-np.pi * np.sum(modes * abs2)) + mubar * et
        if r > 0.0:
            v = hat_to_grid(vh)
            xi = xi_v_solve(v, r)
            nl_hat = grid_to_hat(-1j * xi * v)
            if wmask is not None:
                nl_hat = np.where(wmask, nl_hat, 0.0)
            max_abs_v = float(np.max(np.abs(v)))
            grad_v_hat = -(rates + et) * vh          # flat gradient, per mode
            rhs_v_hat = -grad_v_hat + nl_hat
            gn = float(np.sqrt(np.sum(np.abs(rhs_v_hat) ** 2) + mubar ** 2))
            # -dA[rhs] via the spectral pairing (deta = -mubar)
            dissip_rate = -(float(np.sum((np.conj(grad_v_hat) * rhs_v_hat).real))
                            - mubar ** 2)
        else:
            nl_hat = None
            max_abs_v = float(np.max(np.abs(hat_to_grid(vh))))
            # rhs = -gradient: the dissipation rate is the squared norm
            gn2 = float(np.sum((rates + et) ** 2 * abs2)) + mubar ** 2
            gn = np.sqrt(gn2)
            dissip_rate = gn2
        return a, gn, dissip_rate, nl_hat, mubar, 0.5 * power, max_abs_v

    a_cur, gn, dis_rate, nl_hat, mubar, u, mav = eval_state(v_hat, eta)
    rec.samples.append((0.0, loop_of(v_hat, eta)()))
    rec.record(0.0, a_cur, gn, u, mav, 0.0)
    if gn < stop_tol:
        return rec.finish(0.0, loop_of(v_hat, eta), True, 0)

    s, ds_cur, n_steps, dissipated = 0.0, ds, 0, 0.0
    converged = False
    while s < s_max:
        rejections = 0
        while True:
            factor = np.exp((rates + eta) * ds_cur)
            if nl_hat is None:
                v_new = factor * v_hat
            else:
                v_new = factor * (v_hat + ds_cur * nl_hat)
            eta_new = eta - ds_cur * mubar
            a_new, gn_new, dis_new, nl_new, mubar_new, u_new, mav_new = \
                eval_state(v_new, eta_new)
            if a_new <= a_cur + _ACCEPT_SLACK * (1.0 + abs(a_cur)):
                break
            rejections += 1
            rec.rejections += 1
            if rejections >= _MAX_REJECTIONS:
                raise FlowInstabilityError(
                    f"step at s={s:.4g} rejected {rejections} times (ds={ds_cur:.3g})")
            ds_cur *= 0.5
        dissipated += dis_rate * ds_cur
        s += ds_cur
        v_hat, eta = v_new, eta_new
        a_cur, gn, dis_rate, nl_hat, mubar, u, mav = \
            a_new, gn_new, dis_new, nl_new, mubar_new, u_new, mav_new
        n_steps += 1
        rec.record(s, a_cur, gn, u, mav, dissipated)
        status = rec.after_step(s, n_steps, loop_of(v_hat, eta), eta, gn)
        if status == "converged":
            converged = True
        if status is not None:
            break
        ds_cur = min(ds_cur * 1.3, ds)
    return rec.finish(s, loop_of(v_hat, eta), converged, n_steps)


def _integrate_grid(init, variant, ds, s_max, stop_tol, window,
                    max_snapshots, eta_exit) -> FlowTrajectory:
    """Pseudospectral engine for the t-dependent-eta flows (flat and
    warped metrics): exact factor for -i dv/dt, explicit products."""
    n_t = init.n_t
    cfg = window.project(init) if window is not None else init
    rates = TWO_PI * mode_numbers(n_t)
    wmask = window.mask(n_t) if window is not None else None
    r_act = variant.action_r
    rec = _Recorder(variant, stop_tol, max_snapshots, eta_exit)

    a_cur = action(cfg, r_act)

    def diagnostics(loop, dv, deta):
        gn = float(np.sqrt(np.mean(np.abs(dv) ** 2) + np.mean(deta ** 2)))
        u = 0.5 * float(np.mean(np.abs(loop.v) ** 2))
        return gn, u, float(np.max(np.abs(loop.v)))

    dv, deta = rhs(cfg, variant)
    if wmask is not None:
        dv = hat_to_grid(np.where(wmask, grid_to_hat(dv), 0.0))
    gn, u, mav = diagnostics(cfg, dv, deta)
    rec.samples.append((0.0, cfg))
    rec.record(0.0, a_cur, gn, u, mav, 0.0)
    if gn < stop_tol:
        return rec.finish(0.0, lambda: cfg, True, 0)

    s, ds_cur, n_steps, dissipated = 0.0, ds, 0, 0.0
    converged = False
    while s < s_max:
        rejections = 0
        while True:
            nonlin = dv + 1j * spectral_t_derivative(cfg.v)
            factor = np.exp(rates * ds_cur)
            nl_hat = grid_to_hat(nonlin)
            if wmask is not None:
                nl_hat = np.where(wmask, nl_hat, 0.0)
            v_hat_new = factor * (cfg.v_hat + ds_cur * nl_hat)
            new = LoopConfig(v_hat=v_hat_new, eta=cfg.eta + ds_cur * deta)
            a_new = action(new, r_act)
            if a_new <= a_cur + _ACCEPT_SLACK * (1.0 + abs(a_cur)):
                break
            rejections += 1
            rec.rejections += 1
            if rejections >= _MAX_REJECTIONS:
                raise FlowInstabilityError(
                    f"step at s={s:.4g} rejected {rejections} times (ds={ds_cur:.3g})")
            ds_cur *= 0.5
        dissipated += _dissipation_rate(cfg, dv, deta, r_act) * ds_cur
        s += ds_cur
        cfg, a_cur = new, a_new
        n_steps += 1
        dv, deta = rhs(cfg, variant)
        if wmask is not None:
            dv = hat_to_grid(np.where(wmask, grid_to_hat(dv), 0.0))
        gn, u, mav = diagnostics(cfg, dv, deta)
        rec.record(s, a_cur, gn, u, mav, dissipated)
        status = rec.after_step(s, n_steps, lambda c=cfg: c, float(np.mean(cfg.eta)), gn)
        if status == "converged":
            converged = True
        if status is not None:
            break
        ds_cur = min(ds_cur * 1.3, ds)
    return rec.finish(s, lambda: cfg, converged, n_steps)


# -- empirical checks ----------------------------------------------------

@dataclass
class ConfinementReport:
    window: FourierWindow
    winding_start: int
    winding_end: int
    label_start: int          # bookkeeping labels -winding
    label_end: int
    max_out_mass: float
    terminal_out_mass: float
    passed: bool              # max over stored s of the out-of-window mass < tol
    tol: float

    def as_dict(self):
        return {
            "window": [self.window.mu, self.window.nu],
            "winding_start": self.winding_start, "winding_end": self.winding_end,
            "label_start": self.label_start, "label_end": self.label_end,
            "max_out_mass": self.max_out_mass,
            "terminal_out_mass": self.terminal_out_mass,
            "passed": bool(self.passed), "tol": self.tol,
        }


def check_mode_confinement(traj: FlowTrajectory, window: FourierWindow,
                           tol: float = 1e-6) -> ConfinementReport:
    """Out-of-window Fourier mass of v along a converged trajectory.

    The trajectory must connect critical loops of windings (w-, w+); the
    matching window is modes w- .. w+ (labels -w-, -w+ in the vortex
    bookkeeping).  A mismatched window raises WindowMismatchError.
    PASS means the mass stayed below `tol` at every stored sample.
    """
    w_minus = dominant_winding(traj.initial)
    w_plus = dominant_winding(traj.terminal)
    if (window.mu, window.nu) != (min(w_minus, w_plus), max(w_minus, w_plus)):
        raise WindowMismatchError(
            f"window L[{window.mu}..{window.nu}] does not match detected windings "
            f"{w_minus} -> {w_plus}")
    masses = [window.out_mass(loop) for _, loop in traj.samples]
    max_mass = float(np.max(masses))
    return ConfinementReport(window=window,
                             winding_start=w_minus, winding_end=w_plus,
                             label_start=paper_label(w_minus), label_end=paper_label(w_plus),
                             max_out_mass=max_mass, terminal_out_mass=float(masses[-1]),
                             passed=max_mass < tol, tol=tol)


@dataclass
class MaxPrincipleReport:
    max_u: float
    s_argmax: float
    passed: bool
    tol: float = 1e-6

    def as_dict(self):
        return {"max_u": self.max_u, "s_argmax": self.s_argmax,
                "passed": bool(self.passed), "tol": self.tol}


def max_principle_check(traj: FlowTrajectory, tol: float = 1e-6) -> MaxPrincipleReport:
    """u(s) = (1/2) * mean_t |v|^2 must stay at or below 1/2 along finite
    energy trajectories; PASS if max u <= 0.5 + tol."""
    u = traj.diagnostics["u"]
    i = int(np.argmax(u))
    return MaxPrincipleReport(max_u=float(u[i]), s_argmax=float(traj.diagnostics["s"][i]),
                              passed=bool(u[i] <= 0.5 + tol), tol=tol)


def energy_identity_gap(traj: FlowTrajectory) -> float:
    """Relative gap between the accumulated dissipation and the action drop."""
    drop = traj.action_drop()
    if drop <= 0:
        return 0.0
    return abs(traj.dissipated() - drop) / drop


def assemble_field(traj: FlowTrajectory):
    """Stack the stored snapshots into a CylinderField over the flow time."""
    from .loops import CylinderField
    s = np.array([p[0] for p in traj.samples])
    v = np.stack([p[1].v for p in traj.samples])
    eta = np.stack([p[1].eta for p in traj.samples])
    return CylinderField(s_min=float(s[0]), s_max=float(s[-1]), v=v, eta=eta)


def shoot_connection(make_init, variant: FlowVariant, bracket: tuple, ds: float,
                     s_max: float = 60.0, stop_tol: float = 1e-7,
                     window: FourierWindow | None = None,
                     eta_exit: tuple = (-4.0 * np.pi, 2.0),
                     max_bisect: int = 120) -> FlowTrajectory:
    """Bisection shooting onto a saddle connection of the flow.

    The multiplier functional is unbounded below, so generic initial data
    runs away through the multiplier direction; connecting trajectories
    form a codimension-one set.  `make_init(c)` parametrizes a curve of
    initial loops crossing it; runaways are classified by the edge of
    `eta_exit` through which the mean multiplier escapes, and the
    parameter is bisected until a trajectory converges.
    """

    def run(c):
        return integrate(make_init(c), variant, ds=ds, s_max=s_max,
                         stop_tol=stop_tol, window=window, eta_exit=eta_exit)

    def classify(traj):
        if traj.escaped is not None:
            return 1 if traj.escaped == "high" else -1
        # no escape within s_max: classify by where the multiplier drifted
        return 1 if traj.terminal.eta_mean() > -np.pi else -1

    lo, hi = bracket
    t_lo, t_hi = run(lo), run(hi)
    if t_lo.converged:
        return t_lo
    if t_hi.converged:
        return t_hi
    c_lo, c_hi = classify(t_lo), classify(t_hi)
    if c_lo == c_hi:
        raise ShootingError(f"bracket {bracket} does not straddle the connection "
                            f"(both runs escape {('high' if c_lo > 0 else 'low')!r})")
    best = None
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        traj = run(mid)
        if traj.converged:
            return traj
        gn_min = float(np.min(traj.diagnostics["grad_norm"]))
        if best is None or gn_min < best[0]:
            best = (gn_min, traj)
        if classify(traj) == c_lo:
            lo = mid
        else:
            hi = mid
    raise ShootingError(
        f"shooting exhausted the bracket without convergence "
        f"(best gradient norm {best[0]:.3e} vs stop_tol {stop_tol})")


def vortex_connection(variant: FlowVariant, n_t: int = 64, amplitude: float = 1e-3,
                      ds: float = 2e-3, s_max: float = 60.0,
                      stop_tol: float = 1e-7) -> FlowTrajectory:
    """The single-vortex trajectory of the variant: from the winding-0
    vacuum circle to the winding-1 circle inside the two-mode window,
    found by shooting on the initial multiplier value."""
    window = FourierWindow(0, 1)

    def make_init(c):
        v_hat = np.zeros(n_t, dtype=complex)
        v_hat[0] = np.sqrt(1.0 - amplitude ** 2)
        v_hat[1] = amplitude
        return LoopConfig(v_hat=v_hat, eta=np.full(n_t, c))

    return shoot_connection(make_init, variant, bracket=(-4.0, 0.0), ds=ds,
                            s_max=s_max, stop_tol=stop_tol, window=window)


def perturbed_vacuum(mode: int = 1, amplitude: float = 1e-3, n_t: int = 64) -> LoopConfig:
    """Seed near the winding-0 vacuum nudged toward `mode`, kept on the
    moment-map zero set so u starts at exactly 1/2.

    Built in Fourier form so every unexcited coefficient is exactly zero
    (a grid-side FFT would seed all modes with cancellation noise, which
    the expanding directions of the flow then amplify).
    """
    v_hat = np.zeros(n_t, dtype=complex)
    v_hat[0] = np.sqrt(1.0 - amplitude ** 2)
    v_hat[mode % n_t] = amplitude
    return LoopConfig(v_hat=v_hat, eta=np.zeros(n_t))
