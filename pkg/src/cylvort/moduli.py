"""Maps between cylinder fields, scalar w-fields, and vortex positions.

`T_map` sends a configuration to w = ln|v|^2; `J_map` locates the zeros
of v (equivalently the -infinity poles of w) with multiplicity; and
`reconstruct` inverts the chain: from a solved w-field it rebuilds a
radial-gauge configuration (v, eta) whose flow-equation residual is
reported.  The roundtrip J(reconstruct(solve(P))) = P.vortices is the
computational witness that prescribing pole positions determines the
configuration up to gauge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kw import (
    KWGrid,
    ScalarFieldW,
    VortexSet,
    flux_integral,
    periodic_zero_fn,
    singular_background,
)
from .loops import TWO_PI, CylinderField, spectral_t_derivative

try:
    from scipy.integrate import cumulative_simpson
except ImportError:  # older scipy
    from scipy.integrate import cumulative_trapezoid as cumulative_simpson


class InconsistentFieldError(ValueError):
    """Winding-number total does not match the flux integer."""


class ReconstructionError(RuntimeError):
    """Reconstructed field violates the flow equations beyond tolerance."""


ZERO_MODULUS = 1e-14


def T_map(field: CylinderField) -> ScalarFieldW:
    """w = ln|v|^2 on the grid; nodes with |v| below 1e-14 are marked as
    singular candidates.  Gauge invariant since |hv| = |v|."""
    absv = np.abs(field.v)
    mask = absv < ZERO_MODULUS
    with np.errstate(divide="ignore"):
        w = 2.0 * np.log(absv)
    grid = KWGrid(s_min=field.s_min, s_max=field.s_max, n_s=field.n_s, n_t=field.n_t)
    return ScalarFieldW.from_samples(grid, w, singular_mask=mask)


# -- zero location ---------------------------------------------------------

def _quadratic_refine(q: np.ndarray, i: int, j: int, grid: KWGrid):
    """Sub-cell minimum of a 3x3 patch of q around node (i, j) by a
    least-squares quadratic fit; falls back to the node on degenerate fits."""
    ii = np.clip(np.arange(i - 1, i + 2), 0, grid.n_s - 1)
    jj = np.arange(j - 1, j + 2) % grid.n_t
    X, Y = np.meshgrid((ii - i) * grid.ds, (jj - j) * grid.dt, indexing="ij")
    # jj holds wrapped indices; the coordinates Y use the unwrapped offsets
    vals = q[np.ix_(ii, jj)].ravel()
    x, y = X.ravel(), Y.ravel()
    A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    c, *_ = np.linalg.lstsq(A, vals, rcond=None)
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    g = np.array([c[1], c[2]])
    try:
        delta = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        delta = np.zeros(2)
    if not np.all(np.isfinite(delta)):
        delta = np.zeros(2)
    delta[0] = np.clip(delta[0], -grid.ds, grid.ds)
    delta[1] = np.clip(delta[1], -grid.dt, grid.dt)
    return grid.s[i] + delta[0], (grid.t[j] + delta[1]) % 1.0


def _windings_from_v(v: np.ndarray):
    """Plaquette winding numbers of a complex grid field (t periodic)."""
    a = v[:-1, :]
    b = v[1:, :]
    c = np.roll(v, -1, axis=1)[1:, :]
    d = np.roll(v, -1, axis=1)[:-1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        total = (np.angle(b / a) + np.angle(c / b)
                 + np.angle(d / c) + np.angle(a / d)) / TWO_PI
    return np.rint(np.where(np.isfinite(total), total, 0.0)).astype(int)


def _box_ring_winding(v: np.ndarray, i0: int, i1: int, j0: int, j1: int) -> int:
    """Winding of v along the counterclockwise boundary of the node box
    [i0, i1] x [j0, j1] (t wrapped; inclusive corners)."""
    n_t = v.shape[1]
    path = [(i, j0) for i in range(i0, i1)] \
        + [(i1, j) for j in range(j0, j1)] \
        + [(i, j1) for i in range(i1, i0, -1)] \
        + [(i0, j) for j in range(j1, j0, -1)]
    vals = np.array([v[i, j % n_t] for i, j in path])
    ratios = np.roll(vals, -1) / vals
    return int(np.rint(np.sum(np.angle(ratios)) / TWO_PI))


def _zeros_of_v(field: CylinderField) -> VortexSet:
    """Zeros with multiplicity from phase windings.

    Plaquette windings (computed from phase ratios, so they survive the
    1e-200-deep amplitude of a multi-vortex core) and exact-zero nodes
    only seed candidate sites: a single plaquette aliases once the
    multiplicity times the corner angle step passes pi.  Each cluster of
    seeds gets its multiplicity from the winding along a physically
    round box ring, and a sub-cell position from a quadratic fit of
    |v|^(2/m).  Zeros are assumed isolated at grid resolution.
    """
    grid = KWGrid(s_min=field.s_min, s_max=field.s_max, n_s=field.n_s, n_t=field.n_t)
    n_s, n_t = field.n_s, field.n_t
    v = field.v
    absv = np.abs(v)
    zero_nodes = absv == 0.0

    seeds = {(int(i), int(j)) for i, j in zip(*np.nonzero(zero_nodes)) if 0 < i < n_s - 1}
    vmasked = v
    if np.any(zero_nodes):
        vmasked = v.copy()
        vmasked[zero_nodes] = np.nan   # keep zero-corner plaquettes out of the scan
    wind = _windings_from_v(vmasked)
    seeds.update((int(i), int(j)) for i, j in zip(*np.nonzero(wind)))

    # cluster seeds within the ring-box footprint (t wrapped)
    hi = max(1, int(np.ceil(0.25 / grid.ds)))
    hj = min(max(1, int(np.ceil(0.25 / grid.dt))), n_t // 2 - 1)
    clusters: list = []
    for seed in sorted(seeds):
        for cl in clusters:
            if any(abs(seed[0] - p[0]) <= hi
                   and min(abs(seed[1] - p[1]), n_t - abs(seed[1] - p[1])) <= hj
                   for p in cl):
                cl.append(seed)
                break
        else:
            clusters.append([seed])

    found = []
    for cl in clusters:
        ii = [p[0] for p in cl]
        jj = [p[1] for p in cl]   # clusters are small; the t-seam straddle is benign
        i0, i1 = max(min(ii) - hi, 0), min(max(ii) + hi, n_s - 1)
        j0, j1 = min(jj) - hj, max(jj) + hj
        m = _box_ring_winding(v, i0, i1, j0, j1)
        if m < 0:
            raise InconsistentFieldError(f"negative winding {m} around nodes {cl[0]}")
        if m == 0:
            continue   # aliasing artifact of a nearby core; nothing enclosed
        # position: the deepest |v| node of the cluster footprint
        sub = absv[i0:i1 + 1, np.arange(j0, j1 + 1) % n_t]
        di, dj = np.unravel_index(np.argmin(sub), sub.shape)
        ni, nj = i0 + int(di), (j0 + int(dj)) % n_t
        if absv[ni, nj] == 0.0:
            found.append((grid.s[ni], grid.t[nj], m))
        else:
            found.append((*_quadratic_refine(absv ** (2.0 / m), ni, nj, grid), m))
    return VortexSet.from_points(found, merge_tol=0.5 * min(grid.ds, grid.dt))


def _poles_of_w(field: ScalarFieldW) -> VortexSet:
    """Pole positions and multiplicities from w alone: candidates are deep
    local minima; multiplicity is the disk flux -(1/4pi) sum_D Lap_h w,
    evaluated as a boundary sum so the pole itself is never differenced."""
    grid = field.grid
    w = np.where(np.isfinite(field.w), field.w, -1e6)
    n_s, n_t = grid.n_s, grid.n_t
    is_min = w < -2.0
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        is_min &= w <= np.roll(w, shift, axis=axis)
    diag_ok = np.ones_like(is_min)
    for ss in (1, -1):
        for tt in (1, -1):
            diag_ok &= w <= np.roll(np.roll(w, ss, axis=0), tt, axis=1)
    is_min &= diag_ok
    is_min[:2] = is_min[-2:] = False
    merged: list = []
    for i, j in zip(*np.nonzero(is_min)):
        if any(abs(q[0] - i) <= 2 and min(abs(q[1] - j), n_t - abs(q[1] - j)) <= 2
               for q in merged):
            continue
        merged.append((i, j))
    found = []
    ew = field.exp_w
    cell = grid.ds * grid.dt
    S, T = grid.mesh()
    # squared physical t-wrapped distance of every node to each candidate
    dist2 = []
    for i, j in merged:
        dt_ = np.abs((T - grid.t[j] + 0.5) % 1.0 - 0.5)
        dist2.append((S - grid.s[i]) ** 2 + dt_ ** 2)
    dist2 = np.array(dist2)
    radius = 0.75
    for k, (i, j) in enumerate(merged):
        # Voronoi-truncated physical disk keeps the other poles out; the
        # node-set boundary sum telescopes exactly for any shape
        disk = (dist2[k] <= radius ** 2) & (dist2.min(axis=0) == dist2[k])
        disk[0] = disk[-1] = False
        total = 0.0
        for axis, h in ((0, grid.ds), (1, grid.dt)):
            weight = cell / h ** 2
            for shift in (1, -1):
                # edges from p in the disk to its neighbor p+shift outside
                w_nb = np.roll(w, -shift, axis=axis)
                sel = disk & ~np.roll(disk, -shift, axis=axis)
                total += weight * float(np.sum((w_nb - w)[sel]))
        # Lap w = e^w - 1 + 4 pi sum m delta: remove the smooth part
        smooth = float(np.sum((ew - 1.0)[disk])) * cell
        m = int(np.rint((total - smooth) / (4.0 * np.pi)))
        if m >= 1:
            found.append((*_quadratic_refine(ew ** (1.0 / m), i, j, grid), m))
    return VortexSet.from_points(found, merge_tol=0.5 * min(grid.ds, grid.dt))


def J_map(obj, check_flux: bool = True) -> VortexSet:
    """Zeros of v counted with multiplicity (winding number on grid cells),
    or the poles of a w-field; sub-cell positions by quadratic fit.

    Raises InconsistentFieldError when the winding total disagrees with
    the flux integer.
    """
    if isinstance(obj, CylinderField):
        vortices = _zeros_of_v(obj)
        grid = KWGrid(s_min=obj.s_min, s_max=obj.s_max, n_s=obj.n_s, n_t=obj.n_t)
        exp_w = np.abs(obj.v) ** 2
    elif isinstance(obj, ScalarFieldW):
        vortices = _poles_of_w(obj)
        grid = obj.grid
        exp_w = obj.exp_w
    else:
        raise TypeError("J_map expects a CylinderField or ScalarFieldW")
    if check_flux:
        flux = flux_integral(exp_w, grid)
        if abs(flux - vortices.total) > 0.1:
            raise InconsistentFieldError(
                f"winding total {vortices.total} vs flux {flux:.4f}")
    return vortices


# -- reconstruction ---------------------------------------------------------

def _d_ds(arr: np.ndarray, ds: float) -> np.ndarray:
    """d/ds along axis 0: 6th-order central stencil in the interior,
    falling back to lower order near the ends."""
    out = np.empty_like(arr)
    a = arr
    out[3:-3] = (-a[:-6] + 9 * a[1:-5] - 45 * a[2:-4]
                 + 45 * a[4:-2] - 9 * a[5:-1] + a[6:]) / (60.0 * ds)
    for i in (1, 2):
        out[i] = (a[i + 1] - a[i - 1]) / (2.0 * ds)
        out[-1 - i] = (a[-i] - a[-i - 2]) / (2.0 * ds)
    out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2.0 * ds)
    out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2.0 * ds)
    return out


def core_disk_mask(field_or_grid, vortices: VortexSet, radius: float) -> np.ndarray:
    """Nodes within physical distance `radius` of a vortex (t wrapped)."""
    if isinstance(field_or_grid, CylinderField):
        g = field_or_grid
        S, T = np.meshgrid(g.s, g.t, indexing="ij")
    else:
        S, T = field_or_grid.mesh()
    mask = np.zeros(S.shape, dtype=bool)
    for sj, tj, _ in vortices.points:
        dt_ = np.abs((T - tj + 0.5) % 1.0 - 0.5)
        mask |= (S - sj) ** 2 + dt_ ** 2 <= radius ** 2
    return mask


def flow_residual(field: CylinderField, vortices: VortexSet | None = None,
                  core_radius: float = 1.5):
    """Discrete residuals of the radial-gauge flow system on a cylinder
    field: the v-equation dv/ds + i dv/dt - eta v and the eta-equation
    deta/ds + (1 - |v|^2)/2, both in the grid L^2 norm.

    Within the core the phase of v winds faster than the s-grid can
    difference (gradient ~ 1/r) and the multiplier carries the solver's
    core-scale discretization error, so when `vortices` are given both
    equations are scored outside disks of physical radius `core_radius`;
    the equation content at the cores is carried by the flux instead.
    """
    ds = field.ds
    v, eta = field.v, field.eta
    res_v = _d_ds(v, ds) + 1j * spectral_t_derivative(v) - eta * v
    res_eta = _d_ds(eta, ds) + 0.5 * (1.0 - np.abs(v) ** 2)
    if vortices is not None and vortices.points:
        keep = ~core_disk_mask(field, vortices, core_radius)
        res_v = np.where(keep, res_v, 0.0)
        res_eta = np.where(keep, res_eta, 0.0)
    cell = ds * field.dt
    nv = float(np.sqrt(np.sum(np.abs(res_v) ** 2) * cell))
    ne = float(np.sqrt(np.sum(res_eta ** 2) * cell))
    return {"residual": float(np.sqrt(nv ** 2 + ne ** 2)),
            "residual_v": nv, "residual_eta": ne}


def reconstruct(w_field: ScalarFieldW, vortices: VortexSet,
                residual_tol: float = 1e-3):
    """Radial-gauge configuration with |v| = e^{w/2} and the phase carried
    by the periodic zero function at each pole.

    The multiplier is eta = (1/2) d/ds G with G = u - sum_j m_j
    log(lam^2 + |E_j|^2), lam the background core width (all pole
    singularities cancel in G), the transverse component -(1/2) d/dt G is
    gauged away by an s-cumulative phase, and the flow-equation residual
    of the result is reported.  Returns (CylinderField, report dict);
    raises ReconstructionError above `residual_tol`.
    """
    if w_field.background is None:
        raise ValueError("reconstruct needs a solved field with its background")
    if not w_field.vortices.matches(vortices, 1e-9, 1e-9):
        raise ValueError("vortex set does not match the one the field was solved for")
    grid = w_field.grid
    S, T = grid.mesh()
    lam2 = w_field.background.core_width ** 2
    G = w_field.u.copy()
    dG_s_analytic = np.zeros_like(G)
    dG_t_analytic = np.zeros_like(G)
    theta = np.zeros_like(G)
    for sj, tj, m in vortices.points:
        E = periodic_zero_fn((S - sj) + 1j * (T - tj))
        one_plus = lam2 + np.abs(E) ** 2
        G -= m * np.log(one_plus)
        dG_s_analytic -= m * 2.0 * TWO_PI * (np.abs(E) ** 2 + E.real) / one_plus
        dG_t_analytic -= m * 2.0 * TWO_PI * E.imag / one_plus
        theta += m * np.angle(E)

    w = w_field.w
    absv = np.zeros_like(w)
    finite = np.isfinite(w)
    absv[finite] = np.exp(0.5 * w[finite])
    v_raw = absv * np.exp(1j * theta)

    dG_s = _d_ds(w_field.u, grid.ds) + dG_s_analytic
    dG_t = spectral_t_derivative(w_field.u) + dG_t_analytic
    eta_raw = 0.5 * dG_s
    zeta = -0.5 * dG_t

    psi = cumulative_simpson(zeta, dx=grid.ds, axis=0, initial=0.0)
    v = np.exp(1j * psi) * v_raw
    eta = eta_raw - spectral_t_derivative(psi)

    field = CylinderField(s_min=grid.s_min, s_max=grid.s_max, v=v, eta=eta)
    report = flow_residual(field, vortices=vortices)
    report["flux"] = flux_integral(np.abs(v) ** 2, grid)
    if report["residual"] > residual_tol:
        raise ReconstructionError(
            f"flow-equation residual {report['residual']:.3e} exceeds {residual_tol}")
    return field, report
