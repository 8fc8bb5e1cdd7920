"""Constrained Morse machinery: multiplier functionals, tube homotopies,
flow lines, and index bookkeeping.

A constrained critical-point problem (f, h, g_M) on R^n with values of h
in R^k is analyzed through F(x, v*) = f(x) + v*(h(x)) on R^n x R^k.
The homotopy machinery deforms f and g_M inside a tubular neighborhood
of h^{-1}(0) so that, at parameter r = 1, finite-energy flow lines of F
are exactly the constrained flow lines sitting at (h^{-1}(0), v* = 0):
the function is flattened along the tube fibers and the fiber metric is
blown up by kappa^2, which makes leaving the tube cost more energy than
the function can pay (kappa > 16 C / delta^2 with C the height of f on
the constraint).

Manifolds are presented as R^n with explicit derivative evaluators;
compact manifolds enter as constraint sets h^{-1}(0).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


class TubeError(RuntimeError):
    """Tubular-map integration left the regular region; shrink delta."""


class DivergenceError(RuntimeError):
    """Flow line left the configured compact box."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class ConstrainedSystem:
    """Datum (f, h, g_M) with derivative evaluators.

    `metric` is None for the Euclidean metric or a callable x -> SPD
    (n, n) matrix.  `tube_base`/`tube_dbase` optionally supply an
    analytic tubular retraction (used instead of ODE integration).
    `constraint_samples` supplies points on h^{-1}(0) for calibrating
    the homotopy constants.
    """

    n: int
    k: int
    f: Callable
    grad_f: Callable
    h: Callable
    jac_h: Callable
    hess_f: Callable | None = None
    hess_h: Callable | None = None            # -> (k, n, n)
    metric: Callable | None = None
    torus_action: Callable | None = None      # (angles, x) -> rotated x
    tube_base: Callable | None = None
    tube_dbase: Callable | None = None
    constraint_samples: Callable | None = None  # (rng, count) -> (count, n)
    name: str = ""

    def metric_at(self, x) -> np.ndarray:
        if self.metric is None:
            return np.eye(self.n)
        return np.asarray(self.metric(x))

    def hess_h_at(self, x) -> np.ndarray:
        if self.hess_h is None:
            return np.zeros((self.k, self.n, self.n))
        return np.asarray(self.hess_h(x))

    def regular_value_margin(self, points) -> float:
        """Smallest singular value of Dh over the sample points."""
        return min(float(np.linalg.svd(np.asarray(self.jac_h(x)), compute_uv=False)[-1])
                   for x in points)


@dataclass
class LagrangeState:
    x: np.ndarray
    vstar: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.vstar = np.atleast_1d(np.asarray(self.vstar, dtype=float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.vstar))):
            raise ValueError("state entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.vstar])

    @classmethod
    def from_vector(cls, vec, n):
        return cls(x=vec[:n], vstar=vec[n:])

    def copy(self):
        return LagrangeState(self.x.copy(), self.vstar.copy())


def _rk4(fun, y0: np.ndarray, span: float, n_steps: int) -> np.ndarray:
    h = span / n_steps
    y = y0.astype(float).copy()
    for _ in range(n_steps):
        k1 = fun(y)
        k2 = fun(y + 0.5 * h * k1)
        k3 = fun(y + 0.5 * h * k2)
        k4 = fun(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


# -- tubular neighborhood ----------------------------------------------------

@dataclass
class TubularMap:
    """phi: h^{-1}(0) x B_delta -> M with h(phi(x, v)) = v.

    Realized by integrating the metric-orthogonal lift xi_v of v
    (Dh xi_v = v, xi_v perpendicular to ker Dh); the V-coordinate of the
    inverse chart is h itself, the base coordinate integrates xi
    backwards.
    """

    sys: ConstrainedSystem
    delta: float
    n_ode_steps: int = 32
    _fd_step: float = 1e-6

    def _xi(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        J = np.atleast_2d(np.asarray(self.sys.jac_h(y), dtype=float))
        sv = np.linalg.svd(J, compute_uv=False)[-1]
        if sv <= 1e-8:
            raise TubeError(f"Dh nearly singular (sigma_min={sv:.2e}) at |y|={np.linalg.norm(y):.3g}")
        if self.sys.metric is None:
            gi_Jt = J.T
        else:
            gi_Jt = np.linalg.solve(self.sys.metric_at(y), J.T)
        alpha = np.linalg.solve(J @ gi_Jt, np.atleast_1d(v))
        return gi_Jt @ alpha

    def forward(self, x_base: np.ndarray, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return _rk4(lambda y: self._xi(y, v), np.asarray(x_base, dtype=float),
                    1.0, self.n_ode_steps)

    def coord(self, y) -> np.ndarray:
        """Fiber coordinate of the inverse chart; equals h by construction."""
        return np.atleast_1d(np.asarray(self.sys.h(y), dtype=float))

    def base(self, y: np.ndarray) -> np.ndarray:
        if self.sys.tube_base is not None:
            return np.asarray(self.sys.tube_base(y), dtype=float)
        w = self.coord(y)
        return _rk4(lambda z: -self._xi(z, w), np.asarray(y, dtype=float),
                    1.0, self.n_ode_steps)

    def dbase(self, y: np.ndarray) -> np.ndarray:
        """Jacobian of the base retraction (analytic override or central FD)."""
        if self.sys.tube_dbase is not None:
            return np.asarray(self.sys.tube_dbase(y), dtype=float)
        n = self.sys.n
        out = np.empty((n, n))
        e = self._fd_step
        for i in range(n):
            dy = np.zeros(n)
            dy[i] = e
            out[:, i] = (self.base(y + dy) - self.base(y - dy)) / (2.0 * e)
        return out


def build_tubular(sys: ConstrainedSystem, delta: float, n_ode_steps: int = 32) -> TubularMap:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return TubularMap(sys=sys, delta=delta, n_ode_steps=n_ode_steps)


# -- cutoff homotopy ---------------------------------------------------------

def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _smoothstep5_prime(s):
    if s <= 0.0 or s >= 1.0:
        return 0.0
    return 30.0 * s * s * (1.0 - s) ** 2


@dataclass
class HomotopyParams:
    """Tube radius, fiber-metric weight, and the plateau cutoff.

    The cutoff is a quintic smoothstep equal to 1 on [0, delta/2] and 0
    on [3 delta/4, delta).  kappa defaults to 32 C / delta^2, double the
    confinement bound 16 C / delta^2.
    """

    delta: float
    kappa: float | None = None

    def beta_hat(self, rho: float) -> float:
        lo, hi = 0.5 * self.delta, 0.75 * self.delta
        return float(1.0 - _smoothstep5((rho - lo) / (hi - lo)))

    def beta_hat_prime(self, rho: float) -> float:
        lo, hi = 0.5 * self.delta, 0.75 * self.delta
        return -_smoothstep5_prime((rho - lo) / (hi - lo)) / (hi - lo)

    def resolve_kappa(self, C: float) -> float:
        floor = 16.0 * C / self.delta ** 2
        if self.kappa is None:
            return 2.0 * floor
        if self.kappa <= floor:
            raise ValueError(f"kappa={self.kappa} must exceed 16 C/delta^2 = {floor:.4g}")
        return self.kappa


class Homotopy:
    """Evaluators of F_r and g_r after the tube deformation.

    r = 0 is the undeformed multiplier functional with the product
    metric; r = 1 flattens f along the tube fibers and weights them by
    kappa^2.  Everything is immutable after construction.
    """

    def __init__(self, sys: ConstrainedSystem, params: HomotopyParams | None,
                 r: float, rng_seed: int = 0, n_constraint_samples: int = 64):
        if not 0.0 <= r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        if r > 0.0 and params is None:
            raise ValueError("r > 0 needs HomotopyParams")
        self.sys = sys
        self.params = params
        self.r = r
        self.tube = None
        self.kappa = None
        self.C = None
        if params is not None:
            self.tube = build_tubular(sys, params.delta)
            samples = self._constraint_points(rng_seed, n_constraint_samples)
            vals = [sys.f(x) for x in samples]
            self.C = float(max(vals) - min(vals))
            self.kappa = params.resolve_kappa(self.C)
            margin = sys.regular_value_margin(samples)
            if margin <= 1e-8:
                raise TubeError(f"0 is not a numerically regular value (margin {margin:.2e})")

    def _constraint_points(self, seed, count):
        if self.sys.constraint_samples is None:
            raise ValueError("system provides no constraint_samples for calibration")
        return self.sys.constraint_samples(np.random.default_rng(seed), count)

    # -- scalar data ------------------------------------------------------
    def beta(self, x) -> float:
        if self.params is None:
            return 0.0
        rho = float(np.linalg.norm(np.atleast_1d(self.sys.h(x))))
        if rho >= 0.75 * self.params.delta:
            return 0.0
        return self.params.beta_hat(rho)

    def f_1(self, x) -> float:
        b = self.beta(x)
        fx = float(self.sys.f(x))
        if b == 0.0:
            return fx
        return b * float(self.sys.f(self.tube.base(x))) + (1.0 - b) * fx

    def f_r(self, x) -> float:
        if self.r == 0.0:
            return float(self.sys.f(x))
        return (1.0 - self.r) * float(self.sys.f(x)) + self.r * self.f_1(x)

    def value(self, state: LagrangeState) -> float:
        return self.f_r(state.x) + float(state.vstar @ np.atleast_1d(self.sys.h(state.x)))

    # -- derivatives -------------------------------------------------------
    def grad_f_1(self, x) -> np.ndarray:
        b = self.beta(x)
        gf = np.asarray(self.sys.grad_f(x), dtype=float)
        if b == 0.0:
            return gf
        q = self.tube.base(x)
        P = self.tube.dbase(x)
        g_pull = P.T @ np.asarray(self.sys.grad_f(q), dtype=float)
        w = np.atleast_1d(np.asarray(self.sys.h(x), dtype=float))
        rho = float(np.linalg.norm(w))
        dbeta = np.zeros_like(gf)
        bprime = self.params.beta_hat_prime(rho)
        if bprime != 0.0 and rho > 0.0:
            J = np.atleast_2d(np.asarray(self.sys.jac_h(x), dtype=float))
            dbeta = bprime * (J.T @ w) / rho
        return b * g_pull + (float(self.sys.f(q)) - float(self.sys.f(x))) * dbeta \
            + (1.0 - b) * gf

    def grad_f_r(self, x) -> np.ndarray:
        gf = np.asarray(self.sys.grad_f(x), dtype=float)
        if self.r == 0.0:
            return gf
        return (1.0 - self.r) * gf + self.r * self.grad_f_1(x)

    def metric_M_r(self, x) -> np.ndarray:
        gM = self.sys.metric_at(x)
        if self.r == 0.0:
            return gM
        b = self.beta(x)
        if b == 0.0:
            g1 = gM
        else:
            q = self.tube.base(x)
            P = self.tube.dbase(x)
            J = np.atleast_2d(np.asarray(self.sys.jac_h(x), dtype=float))
            g_tube = P.T @ self.sys.metric_at(q) @ P + self.kappa ** 2 * (J.T @ J)
            g1 = b * g_tube + (1.0 - b) * gM
        return (1.0 - self.r) * gM + self.r * g1

    def differential(self, state: LagrangeState) -> np.ndarray:
        """dF_r as a covector (no metric applied)."""
        J = np.atleast_2d(np.asarray(self.sys.jac_h(state.x), dtype=float))
        dx = self.grad_f_r(state.x) + J.T @ state.vstar
        return np.concatenate([dx, np.atleast_1d(self.sys.h(state.x))])

    def _blocks(self, x: np.ndarray, vstar: np.ndarray):
        """One shared pass for the g_r-gradient blocks and the metric
        (beta, tube retraction, and Jacobian are evaluated once; this is
        the flow integrator's hot path)."""
        sys = self.sys
        J = np.atleast_2d(np.asarray(sys.jac_h(x), dtype=float))
        hx = np.atleast_1d(np.asarray(sys.h(x), dtype=float))
        gf = np.asarray(sys.grad_f(x), dtype=float)
        gM = sys.metric_at(x)
        if self.r == 0.0:
            d = gf + J.T @ vstar
            return np.linalg.solve(gM, d), hx, gM
        rho = float(np.sqrt(hx @ hx))
        b = 0.0 if rho >= 0.75 * self.params.delta else self.params.beta_hat(rho)
        if b == 0.0:
            gf1, g1 = gf, gM
        else:
            q = self.tube.base(x)
            P = self.tube.dbase(x)
            gq = np.asarray(sys.grad_f(q), dtype=float)
            gf1 = b * (P.T @ gq) + (1.0 - b) * gf
            bprime = self.params.beta_hat_prime(rho)
            if bprime != 0.0 and rho > 0.0:
                gf1 += (float(sys.f(q)) - float(sys.f(x))) * bprime * (J.T @ hx) / rho
            g_tube = P.T @ sys.metric_at(q) @ P + self.kappa ** 2 * (J.T @ J)
            g1 = b * g_tube + (1.0 - b) * gM
        r = self.r
        gfr = (1.0 - r) * gf + r * gf1
        gMr = (1.0 - r) * gM + r * g1
        return np.linalg.solve(gMr, gfr + J.T @ vstar), hx, gMr

    def gradient(self, state: LagrangeState):
        """g_r-gradient blocks (x-block metric-corrected, multiplier block h)."""
        xb, vb, _ = self._blocks(state.x, state.vstar)
        return xb, vb

    def grad_norm(self, state: LagrangeState) -> float:
        xb, vb, gMr = self._blocks(state.x, state.vstar)
        return float(np.sqrt(xb @ gMr @ xb + vb @ vb))

    def ps_norm_of_gradient(self, state: LagrangeState) -> float:
        """Norm of the g_r-gradient measured in g_PS = g_M (+) Euclid."""
        xb, vb, _ = self._blocks(state.x, state.vstar)
        gM = self.sys.metric_at(state.x)
        return float(np.sqrt(xb @ gM @ xb + vb @ vb))


def build_homotopy(sys: ConstrainedSystem, params: HomotopyParams | None, r: float,
                   **kw) -> Homotopy:
    """Assemble the (F_r, g_r) evaluators; the tube is built when params
    are given, and kappa is calibrated from f on the constraint samples."""
    return Homotopy(sys, params, r, **kw)


def lagrange_grad(sys: ConstrainedSystem, state: LagrangeState, r: float = 0.0,
                  homotopy: Homotopy | None = None):
    """Gradient blocks of the multiplier functional at `state`.

    r = 0 needs no homotopy; for r > 0 pass the result of build_homotopy
    (its parameter must agree with r).
    """
    if r > 0.0:
        if homotopy is None or homotopy.r != r:
            raise ValueError("r > 0 requires a homotopy built at the same r")
        return homotopy.gradient(state)
    if homotopy is not None and homotopy.r == 0.0:
        return homotopy.gradient(state)
    J = np.atleast_2d(np.asarray(sys.jac_h(state.x), dtype=float))
    d = np.asarray(sys.grad_f(state.x), dtype=float) + J.T @ state.vstar
    gM = sys.metric_at(state.x)
    return np.linalg.solve(gM, d), np.atleast_1d(np.asarray(sys.h(state.x), dtype=float))


# -- flow lines ---------------------------------------------------------------

@dataclass
class LagrangeTrajectory:
    samples: list                 # (s, LagrangeState)
    diagnostics: dict             # s, value, grad_norm, tube, vstar_norm arrays
    converged: bool
    n_steps: int
    r: float

    @property
    def initial(self) -> LagrangeState:
        return self.samples[0][1]

    @property
    def terminal(self) -> LagrangeState:
        return self.samples[-1][1]

    def value_drop(self) -> float:
        v = self.diagnostics["value"]
        return float(v[0] - v[-1])

    def max_tube_coord(self) -> float:
        return float(np.max(self.diagnostics["tube"]))


_CONVERGE_STREAK = 10


def integrate_flow_line(homotopy: Homotopy, init: LagrangeState, ds: float,
                        s_max: float, stop_tol: float = 1e-8,
                        guard_box: tuple | None = (50.0, 1e4),
                        adaptive: bool = True,
                        max_snapshots: int = 4096,
                        ds_max: float | None = None) -> LagrangeTrajectory:
    """Gradient flow of F_r in the metric g_r (RK4, metric solve per stage).

    Records value, gradient norm, tube coordinate |h(x)| and |v*| per
    step.  Steps raising F_r are rejected and halved; when `adaptive`,
    accepted steps regrow up to `ds_max` (default `ds`), with the
    value-based rejection holding the step at the stability edge.  The
    large-kappa tube metric makes the fiber relaxation rate 1/kappa, so
    runs to (w, v*) = 0 need ds_max well above the transient step.
    Leaving the guard box (|x|_inf, |v*|_inf) raises DivergenceError with
    the partial trajectory attached.
    """
    sys = homotopy.sys
    n = sys.n
    if ds_max is None:
        ds_max = ds

    def minus_grad(vec):
        xb, vb, _ = homotopy._blocks(vec[:n], vec[n:])
        return -np.concatenate([xb, vb])

    y = init.as_vector()
    state = init.copy()
    val = homotopy.value(state)
    diag = {k: [] for k in ("s", "value", "grad_norm", "tube", "vstar_norm")}
    samples = [(0.0, state.copy())]
    every = 1

    def record(s_now, st, v_now):
        diag["s"].append(s_now)
        diag["value"].append(v_now)
        diag["grad_norm"].append(homotopy.grad_norm(st))
        diag["tube"].append(float(np.linalg.norm(np.atleast_1d(sys.h(st.x)))))
        diag["vstar_norm"].append(float(np.linalg.norm(st.vstar)))

    record(0.0, state, val)
    if diag["grad_norm"][0] < stop_tol:
        return LagrangeTrajectory(samples, {k: np.array(v) for k, v in diag.items()},
                                  converged=True, n_steps=0, r=homotopy.r)

    s = 0.0
    ds_cur = ds
    n_steps = 0
    streak = 0
    converged = False
    while s < s_max:
        rejections = 0
        while True:
            k1 = minus_grad(y)
            k2 = minus_grad(y + 0.5 * ds_cur * k1)
            k3 = minus_grad(y + 0.5 * ds_cur * k2)
            k4 = minus_grad(y + ds_cur * k3)
            y_new = y + (ds_cur / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            st_new = LagrangeState.from_vector(y_new, n)
            val_new = homotopy.value(st_new)
            if val_new <= val + 1e-12 * (1.0 + abs(val)):
                break
            rejections += 1
            if rejections >= 40:
                raise FlowRejectionError(
                    f"flow step at s={s:.4g} rejected {rejections} times")
            ds_cur *= 0.5
        s += ds_cur
        y, state, val = y_new, st_new, val_new
        n_steps += 1
        record(s, state, val)
        if guard_box is not None:
            bx, bv = guard_box
            if np.max(np.abs(state.x)) > bx or np.max(np.abs(state.vstar)) > bv:
                traj = LagrangeTrajectory(samples, {k: np.array(v) for k, v in diag.items()},
                                          converged=False, n_steps=n_steps, r=homotopy.r)
                raise DivergenceError(
                    f"flow left the guard box at s={s:.4g} "
                    f"(|x|={np.max(np.abs(state.x)):.3g}, |v*|={np.max(np.abs(state.vstar)):.3g})",
                    trajectory=traj)
        if n_steps % every == 0:
            samples.append((s, state.copy()))
            if len(samples) > max_snapshots:
                samples = samples[::2]
                every *= 2
        if adaptive:
            ds_cur = min(ds_cur * 1.2, ds_max)
        streak = streak + 1 if diag["grad_norm"][-1] < stop_tol else 0
        if streak >= _CONVERGE_STREAK:
            converged = True
            break
    if samples[-1][0] != s:
        samples.append((s, state.copy()))
    return LagrangeTrajectory(samples, {k: np.array(v) for k, v in diag.items()},
                              converged=converged, n_steps=n_steps, r=homotopy.r)


class FlowRejectionError(RuntimeError):
    """Repeated step rejection; the flow is numerically unstable."""


def normal_form_flow(kappa: float, q0, w0, w1, grad_f_restricted, s_grid):
    """Closed-form tube-normal evolution coupled to the constrained q-flow.

    w(s) = w0 exp(s/sqrt(kappa)) + w1 exp(-s/sqrt(kappa)), and the
    multiplier tracks v* = -kappa dw/ds; the q-factor integrates the
    constrained flow numerically (RK4 on the given s-grid).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    s_grid = np.asarray(s_grid, dtype=float)
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    w1 = np.atleast_1d(np.asarray(w1, dtype=float))
    rt = np.sqrt(kappa)
    up = np.exp(s_grid / rt)[:, None]
    dn = np.exp(-s_grid / rt)[:, None]
    w = w0 * up + w1 * dn
    dw = (w0 * up - w1 * dn) / rt
    vstar = -kappa * dw
    q = np.empty((len(s_grid), len(np.atleast_1d(q0))))
    q[0] = np.atleast_1d(q0)
    for i in range(1, len(s_grid)):
        q[i] = _rk4(lambda z: -np.asarray(grad_f_restricted(z), dtype=float),
                    q[i - 1], s_grid[i] - s_grid[i - 1], 4)
    return {"s": s_grid, "q": q, "w": w, "vstar": vstar}


def flat_tube_system(kappa: float, n_q: int = 1, k: int = 1,
                     quad_diag=None) -> ConstrainedSystem:
    """Flat chart model of the tube: x = (q, w), h(q, w) = w, f = f(q)
    quadratic, fiber metric weighted by kappa so that the flow is exactly
    the normal-form system."""
    if quad_diag is None:
        quad_diag = np.ones(n_q)
    D = np.asarray(quad_diag, dtype=float)
    n = n_q + k
    gmat = np.diag(np.concatenate([np.ones(n_q), kappa * np.ones(k)]))
    Jh = np.hstack([np.zeros((k, n_q)), np.eye(k)])

    return ConstrainedSystem(
        n=n, k=k,
        f=lambda x: 0.5 * float(x[:n_q] @ (D * x[:n_q])),
        grad_f=lambda x: np.concatenate([D * x[:n_q], np.zeros(k)]),
        hess_f=lambda x: np.diag(np.concatenate([D, np.zeros(k)])),
        h=lambda x: x[n_q:],
        jac_h=lambda x: Jh,
        hess_h=lambda x: np.zeros((k, n, n)),
        metric=lambda x: gmat,
        constraint_samples=lambda rng, count: np.hstack(
            [rng.normal(size=(count, n_q)), np.zeros((count, k))]),
        name=f"flat_tube(kappa={kappa:g})",
    )


# -- Hessian index -------------------------------------------------------------

@dataclass
class IndexReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    index: int
    kernel_dim: int
    flagged: bool

    def as_dict(self):
        return {"index": int(self.index), "kernel_dim": int(self.kernel_dim),
                "flagged": bool(self.flagged),
                "eigenvalues": self.eigenvalues.tolist()}


def hessian_index(sys: ConstrainedSystem, state: LagrangeState, r: float = 0.0,
                  homotopy: Homotopy | None = None, grad_tol: float = 1e-8,
                  kernel_tol: float = 1e-8) -> IndexReport:
    """(n+k) x (n+k) Hessian of F_r at a critical state, its negative count
    and kernel dimension.

    At r = 0 the matrix is assembled analytically, including the
    multiplier-weighted second derivatives of h; for r > 0 it is a
    symmetrized finite difference of the analytic differential.
    Eigenvalues inside (kernel_tol, 1e-6) in magnitude flag the count as
    ambiguous.
    """
    if r == 0.0:
        gx, gv = lagrange_grad(sys, state, 0.0)
        gn = float(np.sqrt(gx @ gx + gv @ gv))
    else:
        if homotopy is None or homotopy.r != r:
            raise ValueError("r > 0 requires a homotopy built at the same r")
        gn = homotopy.grad_norm(state)
    if gn >= grad_tol:
        raise ValueError(f"state is not critical (gradient norm {gn:.2e} >= {grad_tol})")

    n, k = sys.n, sys.k
    if r == 0.0 and sys.hess_f is not None:
        Hf = np.asarray(sys.hess_f(state.x), dtype=float)
        Hh = sys.hess_h_at(state.x)
        J = np.atleast_2d(np.asarray(sys.jac_h(state.x), dtype=float))
        top = Hf + np.tensordot(state.vstar, Hh, axes=1)
        H = np.block([[top, J.T], [J, np.zeros((k, k))]])
    else:
        hom = homotopy if homotopy is not None else build_homotopy(sys, None, 0.0)
        y0 = state.as_vector()
        dim = n + k
        H = np.empty((dim, dim))
        eps = 1e-5
        for i in range(dim):
            dy = np.zeros(dim)
            dy[i] = eps
            dp = hom.differential(LagrangeState.from_vector(y0 + dy, n))
            dm = hom.differential(LagrangeState.from_vector(y0 - dy, n))
            H[:, i] = (dp - dm) / (2.0 * eps)
        H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    index = int(np.sum(eig < -kernel_tol))
    kernel = int(np.sum(np.abs(eig) <= kernel_tol))
    flagged = bool(np.any((np.abs(eig) > kernel_tol) & (np.abs(eig) < 1e-6)))
    return IndexReport(matrix=H, eigenvalues=eig, index=index,
                       kernel_dim=kernel, flagged=flagged)


def make_random_quadratic(rng: np.random.Generator, n: int, k: int):
    """Random quadratic f with a linear constraint, its critical state, and
    the constrained-index oracle (reduced Hessian on the null space).

    Returns (system, state, index_oracle, kernel_oracle).
    """
    Q = rng.normal(size=(n, n))
    Q = 0.5 * (Q + Q.T)
    b = rng.normal(size=n)
    A = rng.normal(size=(k, n))
    while np.linalg.matrix_rank(A) < k:
        A = rng.normal(size=(k, n))
    c = rng.normal(size=k)

    sys = ConstrainedSystem(
        n=n, k=k,
        f=lambda x: 0.5 * float(x @ Q @ x) + float(b @ x),
        grad_f=lambda x: Q @ x + b,
        hess_f=lambda x: Q,
        h=lambda x: A @ x + c,
        jac_h=lambda x: A,
        hess_h=lambda x: np.zeros((k, n, n)),
        name=f"quadratic(n={n},k={k})",
    )
    kkt = np.block([[Q, A.T], [A, np.zeros((k, k))]])
    sol = np.linalg.solve(kkt, np.concatenate([-b, -c]))
    state = LagrangeState(x=sol[:n], vstar=sol[n:])

    # independent oracle: spectrum of the reduced Hessian Z^T Q Z
    from scipy.linalg import null_space
    Z = null_space(A)
    red = Z.T @ Q @ Z
    ev = np.linalg.eigvalsh(red) if red.size else np.array([])
    index_oracle = int(np.sum(ev < -1e-8))
    kernel_oracle = int(np.sum(np.abs(ev) <= 1e-8))
    return sys, state, index_oracle, kernel_oracle


# -- Palais-Smale probe ---------------------------------------------------------

@dataclass
class ProbeReport:
    passed: bool
    K0_radius: float | None
    epsilon_estimate: float | None
    table: list

    def as_dict(self):
        return {"passed": bool(self.passed), "K0_radius": self.K0_radius,
                "epsilon_estimate": self.epsilon_estimate, "table": self.table}


def palais_smale_probe(sys: ConstrainedSystem, params: HomotopyParams,
                       radius_schedule=(1.0, 2.0, 3.0, 5.0),
                       r_values=(0.0, 0.25, 0.5, 0.75, 1.0),
                       n_samples: int = 40, seed: int = 0,
                       eps_floor: float = 1e-6) -> ProbeReport:
    """Sample states outside candidate compact sets and bound the ratio
    ||grad F_r||_{g_r}^2 / ||grad F_r||_{g_PS} from below.

    K0 candidates are product boxes {|x| <= R} x {|v*| <= R}; samples mix
    far-multiplier states over the constraint, far-x states (including
    far constraint points carrying their least-squares multiplier, the
    states a failing lower bound shows up on first), and random far
    shells.  A certificate needs the sampled ratio to stay above
    `eps_floor`; failure at the largest radius is a report, not an
    exception.
    """
    rng = np.random.default_rng(seed)
    homs = [build_homotopy(sys, params, r) for r in r_values]
    n = sys.n

    def lsq_multiplier(x):
        J = np.atleast_2d(np.asarray(sys.jac_h(x), dtype=float))
        gf = np.asarray(sys.grad_f(x), dtype=float)
        return np.linalg.lstsq(J.T, -gf, rcond=None)[0]

    def sample_states(R):
        states = []
        on_constraint = sys.constraint_samples(rng, n_samples // 3) \
            if sys.constraint_samples is not None else rng.normal(size=(n_samples // 3, n))
        for x in on_constraint:
            v = rng.normal(size=sys.k)
            v *= (R * rng.uniform(1.05, 4.0)) / max(np.linalg.norm(v), 1e-12)
            states.append(LagrangeState(x, v))
            if np.linalg.norm(x) > R:
                states.append(LagrangeState(x, lsq_multiplier(x)))
        for _ in range(n_samples // 3):
            x = rng.normal(size=n)
            x *= (R * rng.uniform(1.05, 3.0)) / max(np.linalg.norm(x), 1e-12)
            states.append(LagrangeState(x, rng.normal(size=sys.k) * rng.uniform(0, R)))
        while len(states) < n_samples:
            x = rng.normal(size=n) * R
            v = rng.normal(size=sys.k) * R
            if np.linalg.norm(x) > R or np.linalg.norm(v) > R:
                states.append(LagrangeState(x, v))
        return states

    table = []
    best = None
    for R in radius_schedule:
        eps = np.inf
        for hom in homs:
            for st in sample_states(R):
                g2 = hom.grad_norm(st) ** 2
                ps = hom.ps_norm_of_gradient(st)
                if ps == 0.0:
                    eps = 0.0
                    continue
                eps = min(eps, g2 / ps)
        ok = np.isfinite(eps) and eps > eps_floor
        table.append({"radius": R, "epsilon": float(eps) if np.isfinite(eps) else None,
                      "passed": bool(ok)})
        if ok and best is None:
            best = (R, float(eps))
    if best is None:
        return ProbeReport(passed=False, K0_radius=None, epsilon_estimate=None, table=table)
    return ProbeReport(passed=True, K0_radius=best[0], epsilon_estimate=best[1], table=table)


# -- the 4+1 dimensional sphere fixture -----------------------------------------

def hopf_example():
    """Constraint sphere S^3 in R^4 = (z1, z2) with the mode-energy
    function f = -pi |z2|^2 and the level function h = (1 - |z|^2)/2.

    The first circle of the torus action rotates both components (the
    fiber circle of the Hopf map S^3 -> S^2), the second rotates z2
    relative to z1; f descends to an affine function of the S^2 height.
    Returns (system, reference) where the reference dict carries the
    Hopf projection, the critical circles with their multipliers and
    expected indices, and the height relation.
    """

    def split(x):
        return x[0] + 1j * x[1], x[2] + 1j * x[3]

    def f(x):
        return -np.pi * (x[2] ** 2 + x[3] ** 2)

    def grad_f(x):
        return np.array([0.0, 0.0, -TWO_PI * x[2], -TWO_PI * x[3]])

    def hess_f(x):
        return np.diag([0.0, 0.0, -TWO_PI, -TWO_PI])

    def h(x):
        return np.array([0.5 * (1.0 - float(x @ x))])

    def jac_h(x):
        return -np.asarray(x, dtype=float)[None, :]

    def hess_h(x):
        return -np.eye(4)[None, :, :]

    def torus_action(angles, x):
        th1, th2 = angles
        z1, z2 = split(np.asarray(x, dtype=float))
        z1 = z1 * np.exp(1j * th1)
        z2 = z2 * np.exp(1j * (th1 + th2))
        return np.array([z1.real, z1.imag, z2.real, z2.imag])

    def tube_base(y):
        y = np.asarray(y, dtype=float)
        nrm = np.linalg.norm(y)
        if nrm < 0.5:
            raise TubeError("outside the radial chart (|y| < 1/2)")
        return y / nrm

    def tube_dbase(y):
        y = np.asarray(y, dtype=float)
        nrm = np.linalg.norm(y)
        yhat = y / nrm
        return (np.eye(4) - np.outer(yhat, yhat)) / nrm

    def constraint_samples(rng, count):
        pts = rng.normal(size=(count, 4))
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)

    sys = ConstrainedSystem(
        n=4, k=1, f=f, grad_f=grad_f, hess_f=hess_f,
        h=h, jac_h=jac_h, hess_h=hess_h,
        torus_action=torus_action,
        tube_base=tube_base, tube_dbase=tube_dbase,
        constraint_samples=constraint_samples,
        name="hopf",
    )

    def hopf_projection(x):
        z1, z2 = split(np.asarray(x, dtype=float))
        p = 2.0 * z1 * np.conj(z2)
        return np.array([p.real, p.imag, abs(z1) ** 2 - abs(z2) ** 2])

    reference = {
        "hopf_projection": hopf_projection,
        # f restricted to the sphere equals -pi (1 - x3)/2 in the height x3
        "height_value": lambda x: -np.pi * 0.5 * (1.0 - hopf_projection(x)[2]),
        "critical_max": LagrangeState(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0])),
        "critical_min": LagrangeState(np.array([0.0, 0.0, 1.0, 0.0]), np.array([-TWO_PI])),
        "expected_index": {"max": 3, "min": 1},
        "expected_kernel": 1,
        "C": np.pi,
    }
    return sys, reference


# -- moduli count on the sphere fixture ------------------------------------------

def _rotate_state(sys: ConstrainedSystem, angles, state: LagrangeState) -> LagrangeState:
    return LagrangeState(sys.torus_action(angles, state.x), state.vstar.copy())


def _orbit_distance(a: LagrangeState, b: LagrangeState, grid: int = 64) -> float:
    """Torus-orbit distance between two sphere-fixture states, minimized
    over a grid x grid table of rotation angles."""
    th = np.arange(grid) * (TWO_PI / grid)
    z1a, z2a = a.x[0] + 1j * a.x[1], a.x[2] + 1j * a.x[3]
    z1b, z2b = b.x[0] + 1j * b.x[1], b.x[2] + 1j * b.x[3]
    e1 = np.exp(1j * th)[:, None]          # theta1 along axis 0
    e12 = np.exp(1j * th)[None, :]          # theta1+theta2 along axis 1
    d2 = (np.abs(e1 * z1a - z1b) ** 2
          + np.abs(e1 * e12 * z2a - z2b) ** 2)
    return float(np.sqrt(np.min(d2) + np.sum((a.vstar - b.vstar) ** 2)))


@dataclass
class ModuliReport:
    count: int
    n_trajectories: int
    cluster_sizes: list
    unclustered: list
    levels: np.ndarray

    def as_dict(self):
        return {"count": int(self.count), "n_trajectories": self.n_trajectories,
                "cluster_sizes": self.cluster_sizes, "unclustered": self.unclustered}


def _resample_by_level(traj: LagrangeTrajectory, levels: np.ndarray):
    """States interpolated at prescribed functional levels (shift alignment)."""
    vals = traj.diagnostics["value"]
    svals = traj.diagnostics["s"]
    out = []
    for lev in levels:
        idx = int(np.searchsorted(-vals, -lev))
        idx = np.clip(idx, 1, len(vals) - 1)
        v0, v1 = vals[idx - 1], vals[idx]
        lam = 0.0 if v1 == v0 else np.clip((lev - v0) / (v1 - v0), 0.0, 1.0)
        s_at = svals[idx - 1] + lam * (svals[idx] - svals[idx - 1])
        snap_s = np.array([p[0] for p in traj.samples])
        j = int(np.clip(np.searchsorted(snap_s, s_at), 1, len(snap_s) - 1))
        a, b = traj.samples[j - 1][1], traj.samples[j][1]
        mu = 0.0 if snap_s[j] == snap_s[j - 1] else \
            (s_at - snap_s[j - 1]) / (snap_s[j] - snap_s[j - 1])
        out.append(LagrangeState((1 - mu) * a.x + mu * b.x,
                                 (1 - mu) * a.vstar + mu * b.vstar))
    return out


def moduli_count_hopf(params: HomotopyParams | None = None, n_starts: int = 8,
                      eps: float = 0.15, seed: int = 0,
                      rotate: tuple | None = None,
                      cluster_tol: float = 0.05) -> ModuliReport:
    """Count flow-line classes from the top critical circle to the bottom
    one modulo the torus action and shift reparametrization.

    Flow lines of the r = 1 homotopy start on a mesh around the index-3
    circle (|z2| = eps phases), are integrated to convergence, resampled
    by functional level, and clustered by torus-orbit distance.
    """
    sys, ref = hopf_example()
    if params is None:
        params = HomotopyParams(delta=0.2)
    hom = build_homotopy(sys, params, 1.0)
    rng = np.random.default_rng(seed)

    trajs = []
    for j in range(n_starts):
        phi = TWO_PI * j / n_starts
        psi = rng.uniform(0.0, TWO_PI)
        x = np.array([np.sqrt(1 - eps ** 2) * np.cos(psi),
                      np.sqrt(1 - eps ** 2) * np.sin(psi),
                      eps * np.cos(phi), eps * np.sin(phi)])
        st = LagrangeState(x, np.zeros(1))
        if rotate is not None:
            st = _rotate_state(sys, rotate, st)
        traj = integrate_flow_line(hom, st, ds=5e-3, s_max=60.0, stop_tol=1e-7)
        if not traj.converged:
            raise RuntimeError("moduli flow line failed to converge")
        trajs.append(traj)

    upper = min(t.diagnostics["value"][0] for t in trajs)   # common highest level
    lower = max(t.diagnostics["value"][-1] for t in trajs)  # common lowest level
    span = upper - lower
    levels = np.linspace(upper - 0.05 * span, lower + 0.05 * span, 9)
    resampled = [_resample_by_level(t, levels) for t in trajs]

    m = len(trajs)
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(m):
        for j in range(i + 1, m):
            dist = max(_orbit_distance(a, b) for a, b in zip(resampled[i], resampled[j]))
            if dist < cluster_tol:
                parent[find(i)] = find(j)
    roots = [find(i) for i in range(m)]
    root_list = sorted(set(roots))
    sizes = [roots.count(rt) for rt in root_list]
    unclustered = [i for i in range(m) if roots.count(roots[i]) == 1]
    return ModuliReport(count=len(root_list), n_trajectories=m,
                        cluster_sizes=sizes, unclustered=unclustered, levels=levels)
