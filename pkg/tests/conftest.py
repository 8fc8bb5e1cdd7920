import numpy as np
import pytest

from cylvort import (
    FlowVariant,
    KWProblem,
    VortexSet,
    reconstruct,
    solve_kw,
)
from cylvort.flow import vortex_connection


@pytest.fixture(scope="session")
def n1_solution():
    """Shared single-vortex solve at (0.7, 0.3) on the default grid."""
    problem = KWProblem(vortices=VortexSet.from_points([(0.7, 0.3)]))
    field = solve_kw(problem)
    return problem, field


@pytest.fixture(scope="session")
def n1_reconstruction(n1_solution):
    problem, field = n1_solution
    cyl, report = reconstruct(field, problem.vortices)
    return problem, field, cyl, report


@pytest.fixture(scope="session")
def vortex_trajectories():
    """Cache of shot single-vortex connections keyed by homotopy parameter."""
    cache = {}

    def get(r: float):
        if r not in cache:
            variant = FlowVariant.coulomb_g0() if r == 0.0 else FlowVariant.homotopy_gr(r)
            cache[r] = vortex_connection(variant)
        return cache[r]

    return get


def central_difference_gradient(lp, r, h=1e-6):
    """Coordinate-wise finite differences of `action`: the independent
    oracle for the analytic L^2 gradient (inner product = mean, so the
    coordinate derivatives are rescaled by n)."""
    from cylvort.functionals import action
    from cylvort.loops import LoopConfig

    n = lp.n_t
    gv = np.zeros(n, dtype=complex)
    ge = np.zeros(n)
    for j in range(n):
        for part, delta in (("re", h), ("im", 1j * h)):
            vp, vm = lp.v.copy(), lp.v.copy()
            vp[j] += delta
            vm[j] -= delta
            d = (action(LoopConfig(v=vp, eta=lp.eta), r)
                 - action(LoopConfig(v=vm, eta=lp.eta), r)) / (2 * h)
            gv[j] += d if part == "re" else 1j * d
        ep, em = lp.eta.copy(), lp.eta.copy()
        ep[j] += h
        em[j] -= h
        ge[j] = (action(LoopConfig(v=lp.v, eta=ep), r)
                 - action(LoopConfig(v=lp.v, eta=em), r)) / (2 * h)
    return gv * n, ge * n


def random_vortex_points(rng: np.random.Generator, n: int, s_half: float = 3.0,
                         min_sep: float = 0.6):
    """Random cylinder points with pairwise separation (zeros must stay
    isolated at grid resolution for the position recovery)."""
    pts = []
    while len(pts) < n:
        s = rng.uniform(-s_half, s_half)
        t = rng.uniform(0.0, 1.0)
        ok = True
        for s2, t2 in pts:
            dt = abs((t - t2 + 0.5) % 1.0 - 0.5)
            if np.hypot(s - s2, dt) < min_sep:
                ok = False
                break
        if ok:
            pts.append((s, t))
    return pts
