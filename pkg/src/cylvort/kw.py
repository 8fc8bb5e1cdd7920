"""Singular Kazdan-Warner solver on the truncated cylinder.

The unknown w = ln|v|^2 satisfies

    -Lap w + r^2 e^w + (1 - r^2) int_0^1 e^w dt - 1 = -4 pi sum_j m_j delta_{z_j}
    w -> 0 as s -> +-infinity,

discretized with a 5-point Laplacian, periodic in t, and w = 0 Dirichlet
rows at the s-ends.  The log poles are split off analytically:
w = u0 + u with

    u0(z) = sum_j m_j ln( |E(z - z_j)|^2 / (1 + |E(z - z_j)|^2) ),
    E(z)  = exp(2 pi z) - 1,

the simplest t-periodic holomorphic function with a simple zero at 0.
The smooth defect S = -Lap u0 + 4 pi sum m_j delta (known in closed form)
turns the remainder problem for u into

    -Lap u + r^2 e^w + (1 - r^2) int e^w dt - 1 + S = 0

with no distributional terms, solved by damped Newton iteration.  For
r < 1 the t-average adds a rank-one block per s-row to the Jacobian,
assembled exactly into the sparse system.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .loops import TWO_PI

#: spacing above which solve_kw emits a refinement warning
REFINE_SPACING = 0.05
#: vortices must keep this margin from the s-boundaries
BOUNDARY_MARGIN = 1.0


class KWConvergenceError(RuntimeError):
    """Damped Newton failed to converge within the iteration budget."""


class GridRefinementWarning(UserWarning):
    pass


def wrap_t(t: float) -> float:
    return float(t % 1.0)


def t_distance(a: float, b: float) -> float:
    d = abs((a - b) % 1.0)
    return min(d, 1.0 - d)


@dataclass(frozen=True)
class KWGrid:
    """Cylinder grid geometry: s in [s_min, s_max] on n_s points (ends
    included), t on n_t uniform points of the unit period.

    The default keeps the reference density of 64 s-points per 8 units
    (and 64 across the t-period) on [-32, 32].  The margin looks huge but
    is needed: where |w| >> 1 the field obeys w'' ~ 1 and the skirt of a
    deep multi-vortex core spreads parabolically before the e^{-|s|}
    tail takes over (a triple vortex at s = 3 still has |w| ~ 1e-4 at
    s = 30), and the boundary flux feeds the vortex-number error
    directly.
    """

    s_min: float = -32.0
    s_max: float = 32.0
    n_s: int = 513
    n_t: int = 64

    def __post_init__(self):
        if not self.s_min < self.s_max:
            raise ValueError("need s_min < s_max")
        if self.n_s < 8 or self.n_t < 8:
            raise ValueError("grid too small")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t) / self.n_t

    def mesh(self):
        return np.meshgrid(self.s, self.t, indexing="ij")

    def as_dict(self):
        return {"s_min": self.s_min, "s_max": self.s_max, "n_s": self.n_s, "n_t": self.n_t}

    @classmethod
    def from_dict(cls, d):
        return cls(s_min=d["s_min"], s_max=d["s_max"], n_s=d["n_s"], n_t=d["n_t"])


@dataclass(frozen=True)
class VortexSet:
    """Unordered cylinder points with integer multiplicities.

    Construction wraps t into [0, 1), merges coincident points, and sorts,
    so equality is permutation-invariant (symmetric-product semantics).
    """

    points: tuple = ()

    @classmethod
    def from_points(cls, pts, merge_tol: float = 1e-9) -> "VortexSet":
        raw = []
        for p in pts:
            if len(p) == 2:
                s, t = p
                m = 1
            else:
                s, t, m = p
            if int(m) != m or m < 1:
                raise ValueError("multiplicities must be positive integers")
            raw.append([float(s), wrap_t(t), int(m)])
        merged: list = []
        for s, t, m in raw:
            for q in merged:
                if abs(q[0] - s) <= merge_tol and t_distance(q[1], t) <= merge_tol:
                    q[2] += m
                    break
            else:
                merged.append([s, t, m])
        merged.sort(key=lambda q: (q[0], q[1]))
        return cls(points=tuple((s, t, m) for s, t, m in merged))

    @classmethod
    def empty(cls) -> "VortexSet":
        return cls(points=())

    @property
    def total(self) -> int:
        return sum(m for _, _, m in self.points)

    # spec name: N = total multiplicity
    @property
    def N(self) -> int:
        return self.total

    def translated(self, sigma: float, tau: float) -> "VortexSet":
        return VortexSet.from_points([(s + sigma, t + tau, m) for s, t, m in self.points])

    def matches(self, other: "VortexSet", s_tol: float, t_tol: float) -> bool:
        """Multiplicity-aware matching within per-coordinate tolerances."""
        if self.total != other.total:
            return False
        remaining = list(other.points)
        for s, t, m in self.points:
            for k, (s2, t2, m2) in enumerate(remaining):
                if m == m2 and abs(s - s2) <= s_tol and t_distance(t, t2) <= t_tol:
                    remaining.pop(k)
                    break
            else:
                return False
        return not remaining

    def as_dicts(self):
        return [{"s": s, "t": t, "m": m} for s, t, m in self.points]

    @classmethod
    def from_dicts(cls, dicts):
        return cls.from_points([(d["s"], d["t"], d.get("m", 1)) for d in dicts])


@dataclass(frozen=True)
class KWProblem:
    vortices: VortexSet
    r: float = 1.0
    grid: KWGrid = field(default_factory=KWGrid)

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        lo, hi = self.grid.s_min + BOUNDARY_MARGIN, self.grid.s_max - BOUNDARY_MARGIN
        for s, _, _ in self.vortices.points:
            if not lo < s < hi:
                raise ValueError(f"vortex at s={s} too close to the truncation boundary")

    def as_dict(self):
        return {"vortices": self.vortices.as_dicts(), "r": self.r, "grid": self.grid.as_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(vortices=VortexSet.from_dicts(d["vortices"]), r=d.get("r", 1.0),
                   grid=KWGrid.from_dict(d["grid"]))


# -- singular background --------------------------------------------------

def periodic_zero_fn(dz: np.ndarray) -> np.ndarray:
    """E(z) = exp(2 pi z) - 1: t-periodic, holomorphic, simple zero at 0."""
    return np.exp(TWO_PI * dz) - 1.0


@dataclass
class SingularBackground:
    """Closed-form background u0 with its exactly-known smooth defect.

    u0 = sum_j m_j ln(|E_j|^2 / (lam^2 + |E_j|^2)) keeps the log poles and
    the decay for any core width lam >= 1, and

    defect = -Lap u0 + 4 pi sum_j m_j delta_{z_j}
           = sum_j 4 m_j lam^2 |E'|^2 / (lam^2 + |E|^2)^2

    integrates to exactly 4 pi N.  lam = 1 is the plain choice; the
    solver widens it so the defect bump stays resolved on coarse grids.
    """

    vortices: VortexSet
    grid: KWGrid
    u0: np.ndarray        # (n_s, n_t), -inf at exact vortex hits
    exp_u0: np.ndarray    # e^{u0}, exactly 0 at vortex hits
    defect: np.ndarray    # smooth source S
    core_width: float = 1.0

    def eval_u0(self, s, t) -> np.ndarray:
        """Closed-form u0 at arbitrary points (vectorized)."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast(s, t).shape)
        lam2 = self.core_width ** 2
        for sj, tj, m in self.vortices.points:
            E = periodic_zero_fn((s - sj) + 1j * (t - tj))
            a2 = np.abs(E) ** 2
            with np.errstate(divide="ignore"):
                out = out + m * (np.log(a2) - np.log(lam2 + a2))
        return out


def singular_background(vortices: VortexSet, grid: KWGrid,
                        core_width: float = 1.0) -> SingularBackground:
    """Assemble u0, e^{u0}, and the smooth defect on the grid."""
    lo, hi = grid.s_min + BOUNDARY_MARGIN, grid.s_max - BOUNDARY_MARGIN
    for s, _, _ in vortices.points:
        if not lo < s < hi:
            raise ValueError(f"vortex at s={s} too close to the truncation boundary")
    S, T = grid.mesh()
    u0 = np.zeros_like(S)
    exp_u0 = np.ones_like(S)
    defect = np.zeros_like(S)
    lam = float(core_width)
    lam2 = lam * lam
    for sj, tj, m in vortices.points:
        E = periodic_zero_fn((S - sj) + 1j * (T - tj))
        a2 = np.abs(E) ** 2
        one_plus = lam2 + a2
        with np.errstate(divide="ignore"):
            u0 += m * (np.log(a2) - np.log(one_plus))
        exp_u0 *= (a2 / one_plus) ** m
        # |E'| = 2 pi |E + 1|; divide before squaring to dodge overflow
        ratio = TWO_PI * lam * np.abs(E + 1.0) / one_plus
        defect += 4.0 * m * ratio ** 2
    return SingularBackground(vortices=vortices, grid=grid, u0=u0, exp_u0=exp_u0,
                              defect=defect, core_width=lam)


# -- scalar field ----------------------------------------------------------

@dataclass
class ScalarFieldW:
    """w = u0 + u: finite regular part u plus the log-polar background.

    Built either by the solver (background attached) or from raw samples
    (`from_samples`, background absent, u holding w itself).
    """

    grid: KWGrid
    vortices: VortexSet
    u: np.ndarray
    background: SingularBackground | None = None
    singular_mask: np.ndarray | None = None   # candidate pole nodes (samples mode)

    @classmethod
    def from_samples(cls, grid: KWGrid, w_values: np.ndarray,
                     singular_mask: np.ndarray | None = None) -> "ScalarFieldW":
        w_values = np.asarray(w_values, dtype=float)
        if singular_mask is None:
            singular_mask = ~np.isfinite(w_values)
        return cls(grid=grid, vortices=VortexSet.empty(), u=w_values,
                   background=None, singular_mask=singular_mask)

    @property
    def w(self) -> np.ndarray:
        if self.background is None:
            return self.u
        return self.u + self.background.u0

    @property
    def exp_w(self) -> np.ndarray:
        if self.background is None:
            out = np.zeros_like(self.u)
            finite = np.isfinite(self.u)
            out[finite] = np.exp(self.u[finite])
            return out
        return _stable_exp_w(self.u, self.background.exp_u0)

    def near_vortex_mask(self, radius_cells: float = 3.0) -> np.ndarray:
        """Nodes within radius_cells grid cells of a recorded vortex (or the
        recorded singular candidates when no vortices are attached)."""
        if not self.vortices.points:
            return self.singular_mask if self.singular_mask is not None \
                else np.zeros_like(self.u, dtype=bool)
        S, T = self.grid.mesh()
        mask = np.zeros_like(self.u, dtype=bool)
        for sj, tj, _ in self.vortices.points:
            dt_ = np.abs((T - tj + 0.5) % 1.0 - 0.5)
            near = ((S - sj) / self.grid.ds) ** 2 + (dt_ / self.grid.dt) ** 2 \
                <= radius_cells ** 2
            mask |= near
        return mask

    def to_csv(self, csv_path, sidecar_path=None, r: float | None = None) -> None:
        csv_path = Path(csv_path)
        s, t = self.grid.s, self.grid.t
        w = self.w
        lines = ["s,t,w"]
        for i in range(self.grid.n_s):
            for j in range(self.grid.n_t):
                lines.append(f"{s[i]:.17g},{t[j]:.17g},{w[i, j]:.17g}")
        csv_path.write_text("\n".join(lines) + "\n")
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        meta = {"grid": self.grid.as_dict(), "vortices": self.vortices.as_dicts()}
        if r is not None:
            meta["r"] = r
        sidecar.write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def from_csv(cls, csv_path, sidecar_path=None) -> "ScalarFieldW":
        csv_path = Path(csv_path)
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        meta = json.loads(sidecar.read_text())
        grid = KWGrid.from_dict(meta["grid"])
        vals = np.array([float(line.split(",")[2])
                         for line in csv_path.read_text().strip().splitlines()[1:]])
        w = vals.reshape(grid.n_s, grid.n_t)
        vortices = VortexSet.from_dicts(meta.get("vortices", []))
        if vortices.points:
            bg = singular_background(vortices, grid)
            u = np.where(np.isfinite(w), w - np.where(np.isfinite(bg.u0), bg.u0, 0.0), 0.0)
            return cls(grid=grid, vortices=vortices, u=u, background=bg)
        return cls.from_samples(grid, w)


def _stable_exp_w(u: np.ndarray, exp_u0: np.ndarray) -> np.ndarray:
    """exp(u) * exp(u0) with exact zeros where exp_u0 vanishes."""
    out = np.zeros_like(u)
    ok = exp_u0 > 0.0
    out[ok] = exp_u0[ok] * np.exp(np.minimum(u[ok], 700.0))
    return out


# -- Newton solver ----------------------------------------------------------

def _laplacian_interior(grid: KWGrid) -> sp.csr_matrix:
    """5-point Laplacian on interior s-rows, periodic in t, Dirichlet
    couplings to the fixed boundary rows excluded (they enter the residual
    through the full array)."""
    ni = grid.n_s - 2
    n_t = grid.n_t
    main = -2.0 * np.ones(ni)
    off = np.ones(ni - 1)
    Ts = sp.diags([off, main, off], [-1, 0, 1], format="csr") / grid.ds ** 2
    main_t = -2.0 * np.ones(n_t)
    off_t = np.ones(n_t - 1)
    Tt = sp.diags([off_t, main_t, off_t], [-1, 0, 1], format="lil")
    Tt[0, -1] = 1.0
    Tt[-1, 0] = 1.0
    Tt = (Tt / grid.dt ** 2).tocsr()
    return (sp.kron(Ts, sp.eye(n_t)) + sp.kron(sp.eye(ni), Tt)).tocsr()


def _lap_full(u_full: np.ndarray, grid: KWGrid) -> np.ndarray:
    """5-point Laplacian of the full array, evaluated on interior rows."""
    d2s = (u_full[2:] - 2.0 * u_full[1:-1] + u_full[:-2]) / grid.ds ** 2
    d2t = (np.roll(u_full, -1, axis=1) - 2.0 * u_full + np.roll(u_full, 1, axis=1))[1:-1] \
        / grid.dt ** 2
    return d2s + d2t


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    converged: bool
    damped_steps: int


def solve_kw(problem: KWProblem, tol: float = 1e-8, max_iter: int = 50,
             u_init: np.ndarray | None = None,
             core_width: float = 4.0) -> ScalarFieldW:
    """Damped Newton solve of the substituted problem for the regular part u.

    Line search is Armijo backtracking on the discrete energy whose
    Euler-Lagrange equation is the r = 1 problem; for r < 1 (no energy:
    the t-average term makes the linearization non-symmetric) the
    backtracking monitors the residual norm instead.  Raises
    KWConvergenceError after `max_iter` damped steps; the returned field
    carries a `newton_info` attribute.

    `core_width` widens the singular background (the solution w is
    independent of it; only the u0/u split changes): at the default
    8-points-per-unit resolution, 4.0 keeps the defect quadrature error
    in the flux below ~1e-4, while the plain width 1.0 background varies
    on the scale 1/(2 pi) and alone costs ~1e-2.
    """
    grid = problem.grid
    if max(grid.ds, grid.dt) > REFINE_SPACING:
        warnings.warn(f"grid spacing ({grid.ds:.3g}, {grid.dt:.3g}) above "
                      f"{REFINE_SPACING}; consider refining near vortices",
                      GridRefinementWarning, stacklevel=2)
    bg = singular_background(problem.vortices, grid, core_width=core_width)
    r = problem.r
    r2 = r * r
    ni, n_t = grid.n_s - 2, grid.n_t
    cell = grid.ds * grid.dt

    u_full = np.zeros((grid.n_s, n_t))
    u_full[0] = -bg.u0[0]
    u_full[-1] = -bg.u0[-1]
    if u_init is not None:
        u_full[1:-1] = np.asarray(u_init, dtype=float)[1:-1]

    S_int = bg.defect[1:-1]
    lap_op = _laplacian_interior(grid)

    def residual(uf):
        ew = _stable_exp_w(uf, bg.exp_u0)
        nonlocal_term = (1.0 - r2) * np.mean(ew, axis=1, keepdims=True)
        F = -_lap_full(uf, grid) + r2 * ew[1:-1] + nonlocal_term[1:-1] - 1.0 + S_int
        return F, ew

    def res_norm(F):
        return float(np.sqrt(np.sum(F ** 2) * cell))

    def energy(uf, ew):
        # discrete Dirichlet energy + potential; gradient = residual * cell
        gs = np.diff(uf, axis=0) / grid.ds
        gt = (np.roll(uf, -1, axis=1) - uf) / grid.dt
        quad = 0.5 * np.sum(gs ** 2) + 0.5 * np.sum(gt[1:-1] ** 2)
        pot = np.sum(ew[1:-1] - (1.0 - S_int) * uf[1:-1])
        return (quad + pot) * cell

    F, ew = residual(u_full)
    rnorm = res_norm(F)
    damped = 0
    it = 0
    stall = 0
    while rnorm > tol:
        if stall >= 3 and rnorm < 1e-6:
            break   # roundoff floor of the factorization, still far below any fixture tolerance
        if it >= max_iter:
            raise KWConvergenceError(
                f"no convergence after {max_iter} Newton iterations "
                f"(r={r}, residual {rnorm:.3e})")
        ew_int = ew[1:-1].ravel()
        J = (-lap_op + sp.diags(r2 * ew_int)).tocsr()
        if r < 1.0:
            # t-average coupling: one rank-one block per interior s-row
            rows = np.repeat(np.arange(ni * n_t), n_t)
            cols = (np.repeat(np.arange(ni) * n_t, n_t * n_t)
                    + np.tile(np.arange(n_t), ni * n_t))
            data = np.repeat(ew[1:-1], n_t, axis=0).ravel() * ((1.0 - r2) / n_t)
            J = (J + sp.csr_matrix((data, (rows, cols)), shape=(ni * n_t, ni * n_t))).tocsr()
        delta = splu(J.tocsc()).solve(-F.ravel()).reshape(ni, n_t)

        lam = 1.0
        if r == 1.0:
            e0 = energy(u_full, ew)
            slope = float(np.sum(F * delta) * cell)   # directional derivative, < 0
        for _ in range(40):
            trial = u_full.copy()
            trial[1:-1] += lam * delta
            F_t, ew_t = residual(trial)
            rn_t = res_norm(F_t)
            if r == 1.0:
                ok = energy(trial, ew_t) <= e0 + 1e-4 * lam * slope
            else:
                ok = rn_t <= (1.0 - 1e-4 * lam) * rnorm
            if ok and np.isfinite(rn_t):
                break
            lam *= 0.5
            damped += 1
        stall = stall + 1 if rn_t > 0.5 * rnorm else 0
        u_full, F, ew, rnorm = trial, F_t, ew_t, rn_t
        it += 1

    field = ScalarFieldW(grid=grid, vortices=problem.vortices, u=u_full, background=bg)
    field.newton_info = NewtonInfo(iterations=it, residual=rnorm, converged=True,
                                   damped_steps=damped)
    w_int = field.w[1:-1]
    finite = np.isfinite(w_int)
    if problem.vortices.total > 0 and np.any(w_int[finite] >= 1e-12):
        warnings.warn("solved w is not strictly negative off the singularities",
                      stacklevel=2)
    return field


# -- diagnostics ------------------------------------------------------------

@dataclass
class KWReport:
    residual: float
    flux: float
    decay: float
    negativity_ok: bool
    max_w_off_singular: float
    max_abs_v: float

    def as_dict(self):
        return {"residual": self.residual, "flux": self.flux, "decay": self.decay,
                "negativity_ok": bool(self.negativity_ok),
                "max_w_off_singular": self.max_w_off_singular,
                "max_abs_v": self.max_abs_v}


def flux_integral(exp_w: np.ndarray, grid: KWGrid) -> float:
    """(1/4 pi) integral of (1 - e^w): equals the total vortex multiplicity
    for decaying solutions (t-direction by the periodic mean, s by
    trapezoid)."""
    row = np.mean(1.0 - exp_w, axis=1)
    return float(np.trapezoid(row, dx=grid.ds) / (4.0 * np.pi))


def verify_kw(field: ScalarFieldW, problem: KWProblem) -> KWReport:
    """Pure diagnostics: PDE residual, flux, boundary decay, negativity."""
    grid = problem.grid
    if field.background is not None:
        bg = field.background
        r2 = problem.r ** 2
        ew = field.exp_w
        nonlocal_term = (1.0 - r2) * np.mean(ew, axis=1, keepdims=True)
        F = (-_lap_full(field.u, grid) + r2 * ew[1:-1] + nonlocal_term[1:-1]
             - 1.0 + bg.defect[1:-1])
        residual = float(np.sqrt(np.sum(F ** 2) * grid.ds * grid.dt))
    else:
        # raw-sample field: 5-point residual of w itself off the poles
        w = field.w
        mask = field.near_vortex_mask(3.0)[1:-1]
        ew = field.exp_w
        r2 = problem.r ** 2
        nonlocal_term = (1.0 - r2) * np.mean(ew, axis=1, keepdims=True)
        F = -_lap_full(w, grid) + r2 * ew[1:-1] + nonlocal_term[1:-1] - 1.0
        F = np.where(mask, 0.0, F)
        residual = float(np.sqrt(np.sum(F ** 2) * grid.ds * grid.dt))
    w = field.w
    decay_rows = np.concatenate([w[0], w[1], w[-2], w[-1]])
    decay = float(np.max(np.abs(decay_rows[np.isfinite(decay_rows)])))
    off = ~field.near_vortex_mask(0.75)
    interior = np.zeros_like(w, dtype=bool)
    interior[1:-1] = True
    sel = off & interior & np.isfinite(w)
    max_w = float(np.max(w[sel])) if np.any(sel) else 0.0
    strict = max_w < 1e-12 if problem.vortices.total > 0 else abs(max_w) < 1e-12
    return KWReport(residual=residual,
                    flux=flux_integral(field.exp_w, grid),
                    decay=decay,
                    negativity_ok=bool(strict),
                    max_w_off_singular=max_w,
                    max_abs_v=float(np.sqrt(np.max(field.exp_w))))


@dataclass
class UniquenessReport:
    trials: int
    max_pairwise_diff: float
    passed: bool
    tol: float

    def as_dict(self):
        return {"trials": self.trials, "max_pairwise_diff": self.max_pairwise_diff,
                "passed": bool(self.passed), "tol": self.tol}


def uniqueness_probe(problem: KWProblem, trials: int = 3, tol: float = 1e-8,
                     seed: int = 0) -> UniquenessReport:
    """Solve from several initial guesses and report the largest pairwise
    sup-difference of the resulting w fields (off the poles)."""
    if trials < 2:
        raise ValueError("need at least two trials")
    grid = problem.grid
    bg = singular_background(problem.vortices, grid)
    rng = np.random.default_rng(seed)
    S, T = grid.mesh()

    def smooth_random():
        out = np.zeros_like(S)
        for _ in range(3):
            s0 = rng.uniform(grid.s_min + 2, grid.s_max - 2)
            k = rng.integers(0, 4)
            phase = rng.uniform(0, TWO_PI)
            amp = rng.uniform(-0.4, 0.4)
            out += amp * np.exp(-(S - s0) ** 2) * np.cos(TWO_PI * k * T + phase)
        return out

    inits = [np.zeros_like(S), smooth_random(),
             -0.5 * np.clip(np.where(np.isfinite(bg.u0), bg.u0, -8.0), -8.0, 0.0)]
    while len(inits) < trials:
        inits.append(smooth_random())
    fields = [solve_kw(problem, tol=tol, u_init=g) for g in inits[:trials]]
    off = ~fields[0].near_vortex_mask(0.75)
    diffs = [0.0]
    for a in range(len(fields)):
        for b in range(a + 1, len(fields)):
            d = np.abs(fields[a].w - fields[b].w)
            diffs.append(float(np.max(d[off & np.isfinite(d)])))
    max_diff = max(diffs)
    return UniquenessReport(trials=trials, max_pairwise_diff=max_diff,
                            passed=max_diff < 10.0 * tol, tol=tol)
