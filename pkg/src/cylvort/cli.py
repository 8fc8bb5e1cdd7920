"""Scenario runner: every module exposed as reproducible subcommands.

All numerics live in the library modules; this file parses configs,
dispatches, and writes artifacts (CSV/JSON, optionally gnuplot-style
whitespace tables).  Exit codes: 0 ok, 2 config error, 3 solver
failure/instability, 4 probe failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import flow as flowmod
from . import lagrange as lag
from .functionals import action
from .kw import (
    KWConvergenceError,
    KWGrid,
    KWProblem,
    ScalarFieldW,
    VortexSet,
    solve_kw,
    uniqueness_probe,
    verify_kw,
)
from .loops import CriticalLoop, CylinderField, LoopConfig
from .moduli import J_map, T_map, reconstruct

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PROBE = 4


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1,
                                     default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _write_table(path, header, rows):
    """Gnuplot-style whitespace table."""
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append(" ".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _summary(outdir, checks):
    payload = {"passed": all(c["passed"] for c in checks), "checks": checks}
    _write_json(Path(outdir) / "summary.json", payload)
    for c in checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c.get('value')}")
    return payload


# -- solve-kw ----------------------------------------------------------------

def cmd_solve_kw(args) -> int:
    cfg = _load_config(args.config)
    try:
        problem = KWProblem(
            vortices=VortexSet.from_dicts(cfg["vortices"]),
            r=cfg.get("r", 1.0),
            grid=KWGrid.from_dict(cfg.get("grid", KWGrid().as_dict())),
        )
    except (KeyError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "problem.json", problem.as_dict())
    tol = cfg.get("tol", 1e-8)
    try:
        field = solve_kw(problem, tol=tol)
    except KWConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    field.to_csv(outdir / "w.csv", r=problem.r)
    report = verify_kw(field, problem)
    checks = [
        {"name": "flux_quantization", "passed": abs(report.flux - problem.vortices.total) < 1e-3,
         "value": report.flux},
        {"name": "negativity", "passed": report.negativity_ok, "value": report.max_w_off_singular},
    ]
    artifacts = {"verify": report.as_dict()}
    if problem.r == 1.0:
        rec, rec_report = reconstruct(field, problem.vortices)
        rec.to_csv(outdir / "field.csv")
        recovered = J_map(rec)
        artifacts["reconstruction"] = rec_report
        artifacts["recovered_vortices"] = recovered.as_dicts()
        checks.append({"name": "roundtrip_positions",
                       "passed": recovered.matches(problem.vortices,
                                                   problem.grid.ds, problem.grid.dt),
                       "value": recovered.as_dicts()})
    if cfg.get("uniqueness_trials", 0) >= 2:
        uq = uniqueness_probe(problem, trials=cfg["uniqueness_trials"], tol=tol,
                              seed=args.seed)
        artifacts["uniqueness"] = uq.as_dict()
        checks.append({"name": "uniqueness", "passed": uq.passed,
                       "value": uq.max_pairwise_diff})
    _write_json(outdir / "report.json", artifacts)
    if args.format == "table":
        w = field.w
        rows = [(float(field.grid.s[i]), float(field.grid.t[j]), float(w[i, j]))
                for i in range(field.grid.n_s) for j in range(field.grid.n_t)]
        _write_table(outdir / "w.dat", ["s", "t", "w"], rows)
    _summary(outdir, checks)
    return EXIT_OK


# -- flow ----------------------------------------------------------------------

def _build_variant(cfg) -> flowmod.FlowVariant:
    kind = cfg.get("variant", "coulomb_g0")
    r = cfg.get("r", 1.0)
    return flowmod.FlowVariant(kind, r=r)


def _build_init(cfg) -> LoopConfig | None:
    """Initial loop from the config; None selects the shot vortex connection."""
    init = cfg.get("init", {"kind": "vortex"})
    kind = init.get("kind")
    n_t = cfg.get("n_t", 64)
    if kind == "vortex":
        return None
    if kind == "critical":
        return CriticalLoop(init.get("m", 0)).to_loop(n_t)
    if kind == "perturbed_vacuum":
        return flowmod.perturbed_vacuum(mode=init.get("mode", 1),
                                        amplitude=init.get("amplitude", 1e-3), n_t=n_t)
    if kind == "loop":
        return LoopConfig.from_json_dict(init["data"])
    raise ConfigError(f"unknown init kind {kind!r}")


def _zero_slice_position(traj) -> tuple:
    """Flow-time and t coordinates of the deepest |v| dip over the stored
    snapshots (parabolic refinement in t)."""
    best = (np.inf, 0, 0)
    for idx, (s, loop) in enumerate(traj.samples):
        a = np.abs(loop.v)
        j = int(np.argmin(a))
        if a[j] < best[0]:
            best = (float(a[j]), idx, j)
    _, idx, j = best
    s, loop = traj.samples[idx]
    a = np.abs(loop.v)
    n = loop.n_t
    am, a0, ap = a[(j - 1) % n], a[j], a[(j + 1) % n]
    denom = am - 2 * a0 + ap
    shift = 0.0 if denom == 0 else 0.5 * (am - ap) / denom
    return float(s), float((j + np.clip(shift, -1, 1)) / n % 1.0)


def _run_single_flow(cfg, variant, outdir, seed):
    init = _build_init(cfg)
    window = None
    if cfg.get("window") is not None:
        window = flowmod.FourierWindow(*cfg["window"])
    if init is None:
        # a generic seed runs away through the multiplier direction; the
        # vortex trajectory is the saddle connection found by shooting
        traj = flowmod.vortex_connection(variant, n_t=cfg.get("n_t", 64),
                                         ds=cfg.get("ds", 2e-3),
                                         s_max=cfg.get("s_max", 60.0),
                                         stop_tol=cfg.get("stop_tol", 1e-7))
    else:
        traj = flowmod.integrate(init, variant, ds=cfg.get("ds", 1e-3),
                                 s_max=cfg.get("s_max", 60.0),
                                 stop_tol=cfg.get("stop_tol", 1e-8), window=window)
    traj.dump(outdir)
    checks = []
    mp = flowmod.max_principle_check(traj)
    _write_json(Path(outdir) / "max_principle.json", mp.as_dict())
    if cfg.get("checks", {}).get("max_principle", True):
        checks.append({"name": "max_principle", "passed": mp.passed, "value": mp.max_u})
    if cfg.get("checks", {}).get("confinement", False):
        from .loops import dominant_winding
        w0 = dominant_winding(traj.initial)
        w1 = dominant_winding(traj.terminal)
        win = flowmod.FourierWindow(min(w0, w1), max(w0, w1))
        conf = flowmod.check_mode_confinement(traj, win, tol=cfg.get("confinement_tol", 1e-6))
        _write_json(Path(outdir) / "confinement.json", conf.as_dict())
        checks.append({"name": "mode_confinement", "passed": conf.terminal_out_mass < conf.tol,
                       "value": conf.terminal_out_mass})
    checks.append({"name": "converged", "passed": traj.converged,
                   "value": float(traj.diagnostics["grad_norm"][-1])})
    checks.append({"name": "action_monotone",
                   "passed": bool(np.all(np.diff(traj.diagnostics["action"]) <= 1e-9)),
                   "value": float(np.max(np.diff(traj.diagnostics["action"]), initial=-np.inf))})
    return traj, checks


def _sweep_entry(payload):
    cfg, r, outdir, seed = payload
    variant = flowmod.FlowVariant.homotopy_gr(r)
    traj, checks = _run_single_flow(cfg, variant, outdir, seed)
    s_zero, t_zero = _zero_slice_position(traj)
    mp = flowmod.max_principle_check(traj)
    return {"r": r, "zero_s": s_zero, "zero_t": t_zero, "max_u": mp.max_u,
            "max_principle_pass": mp.passed, "checks": checks}


def cmd_flow(args) -> int:
    cfg = _load_config(args.config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        if cfg.get("sweep", False):
            r_values = cfg.get("r_values", [0.0, 0.25, 0.5, 0.75, 1.0])
            payloads = [(cfg, r, str(outdir / f"r_{r:.2f}"), args.seed) for r in r_values]
            if args.workers > 1:
                with ProcessPoolExecutor(max_workers=args.workers) as ex:
                    results = list(ex.map(_sweep_entry, payloads))
            else:
                results = [_sweep_entry(p) for p in payloads]
            rows = [(res["r"], res["zero_s"], res["zero_t"], res["max_u"]) for res in results]
            with open(outdir / "comparison.csv", "w") as fh:
                fh.write("r,zero_s,zero_t,max_u\n")
                for row in rows:
                    fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
            if args.format == "table":
                _write_table(outdir / "comparison.dat",
                             ["r", "zero_s", "zero_t", "max_u"], rows)
            checks = [{"name": f"max_principle_r_{res['r']:.2f}",
                       "passed": res["max_principle_pass"], "value": res["max_u"]}
                      for res in results]
            _summary(outdir, checks)
            return EXIT_OK
        variant = _build_variant(cfg)
        _, checks = _run_single_flow(cfg, variant, outdir, args.seed)
        _summary(outdir, checks)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except flowmod.FlowInstabilityError as exc:
        print(f"instability abort: {exc}", file=sys.stderr)
        return EXIT_SOLVER


# -- morse-lab -------------------------------------------------------------------

def _lab_quadratic(cfg, rng):
    count = cfg.get("count", 100)
    rows = []
    ok_all = True
    for _ in range(count):
        n = int(rng.integers(2, cfg.get("n_max", 10) + 1))
        k = int(rng.integers(1, min(cfg.get("k_max", 3), n - 1) + 1))
        sys_, state, ind_oracle, ker_oracle = lag.make_random_quadratic(rng, n, k)
        rep = lag.hessian_index(sys_, state, 0.0)
        ok = (rep.index == ind_oracle + k) and (rep.kernel_dim == ker_oracle)
        ok_all &= ok
        rows.append({"n": n, "k": k, "ind_F": rep.index, "ind_constrained": ind_oracle,
                     "kernel_F": rep.kernel_dim, "kernel_constrained": ker_oracle, "ok": ok})
    checks = [{"name": "index_relation", "passed": bool(ok_all), "value": count}]
    return {"table": rows}, checks


def _lab_norlag(cfg, rng):
    kappas = cfg.get("kappas", [1.0, 10.0, 100.0])
    span = cfg.get("s_span", 3.0)
    rows = []
    worst = 0.0
    for kappa in kappas:
        sys_ = lag.flat_tube_system(kappa, n_q=1, k=1)
        hom = lag.build_homotopy(sys_, None, 0.0)
        w0, w1 = 0.2, 0.5
        q0 = 1.0
        init = lag.LagrangeState(np.array([q0, w0 + w1]),
                                 np.array([-np.sqrt(kappa) * (w0 - w1)]))
        traj = lag.integrate_flow_line(hom, init, ds=1e-3, s_max=span,
                                       stop_tol=0.0, guard_box=(1e6, 1e6),
                                       adaptive=False)
        s_grid = np.array([p[0] for p in traj.samples])
        closed = lag.normal_form_flow(kappa, np.array([q0]), [w0], [w1],
                                      lambda q: q, s_grid)
        w_num = np.array([p[1].x[1] for p in traj.samples])
        v_num = np.array([p[1].vstar[0] for p in traj.samples])
        err = max(float(np.max(np.abs(w_num - closed["w"][:, 0]))),
                  float(np.max(np.abs(v_num - closed["vstar"][:, 0]))))
        worst = max(worst, err)
        rows.append({"kappa": kappa, "sup_error": err})
    checks = [{"name": "normal_form_agreement", "passed": worst < 1e-6, "value": worst}]
    return {"table": rows}, checks


def _lab_hopf(cfg, rng):
    sys_, ref = lag.hopf_example()
    params = lag.HomotopyParams(delta=cfg.get("delta", 0.2))
    report = {}
    checks = []
    idx_max = lag.hessian_index(sys_, ref["critical_max"], 0.0)
    idx_min = lag.hessian_index(sys_, ref["critical_min"], 0.0)
    report["indices"] = {"max": idx_max.as_dict(), "min": idx_min.as_dict()}
    checks.append({"name": "index_max", "passed": idx_max.index == ref["expected_index"]["max"],
                   "value": idx_max.index})
    checks.append({"name": "index_min", "passed": idx_min.index == ref["expected_index"]["min"],
                   "value": idx_min.index})
    checks.append({"name": "index_gap_is_moduli_dim",
                   "passed": idx_max.index - idx_min.index == 2,
                   "value": idx_max.index - idx_min.index})
    if cfg.get("probe", True):
        probe = lag.palais_smale_probe(sys_, params,
                                       radius_schedule=cfg.get("radii", (1.0, 2.0, 3.0)),
                                       seed=cfg.get("seed", 0))
        report["palais_smale"] = probe.as_dict()
        checks.append({"name": "palais_smale", "passed": probe.passed,
                       "value": probe.epsilon_estimate})
    if cfg.get("moduli", True):
        count = lag.moduli_count_hopf(params, n_starts=cfg.get("n_starts", 6),
                                      seed=cfg.get("seed", 0))
        report["moduli"] = count.as_dict()
        checks.append({"name": "moduli_count", "passed": count.count == 1,
                       "value": count.count})
    return report, checks


def cmd_morse_lab(args) -> int:
    cfg = _load_config(args.config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    fixture = cfg.get("fixture")
    labs = {"quadratic": _lab_quadratic, "norlag": _lab_norlag, "hopf": _lab_hopf}
    if fixture not in labs:
        print(f"config error: unknown fixture {fixture!r}", file=sys.stderr)
        return EXIT_CONFIG
    report, checks = labs[fixture](cfg, rng)
    report["fixture"] = fixture
    _write_json(outdir / "report.json", report)
    summary = _summary(outdir, checks)
    probe_failed = any(c["name"] == "palais_smale" and not c["passed"] for c in checks)
    if probe_failed:
        return EXIT_PROBE
    return EXIT_OK if summary["passed"] else EXIT_SOLVER


# -- verify -----------------------------------------------------------------------

def cmd_verify(args) -> int:
    """Re-run report checks on dumped artifacts (kw solutions, trajectories,
    lab reports) and write verify_summary.json."""
    art = Path(args.artifacts)
    checks = []
    if (art / "w.csv").exists() and (art / "problem.json").exists():
        problem = KWProblem.from_dict(json.loads((art / "problem.json").read_text()))
        field = ScalarFieldW.from_csv(art / "w.csv")
        report = verify_kw(field, problem)
        checks.append({"name": "flux_quantization",
                       "passed": abs(report.flux - problem.vortices.total) < 1e-3,
                       "value": report.flux})
        checks.append({"name": "negativity", "passed": report.negativity_ok,
                       "value": report.max_w_off_singular})
    elif (art / "meta.json").exists() and (art / "diagnostics.csv").exists():
        traj = flowmod.FlowTrajectory.load(art)
        mp = flowmod.max_principle_check(traj)
        checks.append({"name": "max_principle", "passed": mp.passed, "value": mp.max_u})
        checks.append({"name": "action_monotone",
                       "passed": bool(np.all(np.diff(traj.diagnostics["action"]) <= 1e-9)),
                       "value": float(np.max(np.diff(traj.diagnostics["action"]),
                                             initial=-np.inf))})
    elif (art / "report.json").exists() and (art / "summary.json").exists():
        stored = json.loads((art / "summary.json").read_text())
        checks = stored["checks"]
    else:
        print(f"no recognizable artifacts under {art}", file=sys.stderr)
        return EXIT_CONFIG
    payload = {"passed": all(c["passed"] for c in checks), "checks": checks}
    _write_json(art / "verify_summary.json", payload)
    for c in checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c.get('value')}")
    return EXIT_OK if payload["passed"] else 1


# -- entry ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cylvort",
                                 description="vortex flows on the cylinder: scenario runner")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--format", choices=["csv", "json", "table"], default="csv")

    p = sub.add_parser("solve-kw", help="solve a singular Kazdan-Warner problem")
    common(p)
    p.set_defaults(fn=cmd_solve_kw)

    p = sub.add_parser("flow", help="integrate a loop-space gradient flow")
    common(p)
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("morse-lab", help="constrained Morse fixtures and probes")
    common(p)
    p.set_defaults(fn=cmd_morse_lab)

    p = sub.add_parser("verify", help="re-run report checks on dumped artifacts")
    p.add_argument("--artifacts", required=True, help="artifact directory")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
