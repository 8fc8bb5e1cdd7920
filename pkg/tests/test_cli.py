import json
from pathlib import Path

import numpy as np
import pytest

from cylvort.cli import main


def write_config(path: Path, payload: dict) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


SMALL_GRID = {"s_min": -24.0, "s_max": 24.0, "n_s": 385, "n_t": 64}


def test_solve_kw_empty_problem(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "vortices": [], "r": 1.0,
        "grid": {"s_min": -6.0, "s_max": 6.0, "n_s": 97, "n_t": 32},
    })
    out = tmp_path / "out"
    assert main(["solve-kw", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"]
    flux = [c for c in summary["checks"] if c["name"] == "flux_quantization"][0]
    assert abs(flux["value"]) < 1e-12
    assert (out / "w.csv").exists()
    # verify subcommand re-runs the checks on the artifacts
    assert main(["verify", "--artifacts", str(out)]) == 0
    assert json.loads((out / "verify_summary.json").read_text())["passed"]


def test_solve_kw_single_vortex_roundtrip(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "vortices": [{"s": 0.4, "t": 0.7, "m": 1}], "r": 1.0, "grid": SMALL_GRID,
    })
    out = tmp_path / "out"
    assert main(["solve-kw", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"]
    names = {c["name"] for c in summary["checks"]}
    assert {"flux_quantization", "negativity", "roundtrip_positions"} <= names
    assert (out / "field.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert abs(report["verify"]["flux"] - 1.0) < 1e-3


def test_solve_kw_bad_config(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"r": 1.0})   # no vortices key
    assert main(["solve-kw", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "missing.json"
    assert main(["solve-kw", "--config", str(bad), "--out", str(tmp_path / "o2")]) == 2


def test_solve_kw_determinism(tmp_path):
    payload = {"vortices": [{"s": -0.3, "t": 0.2, "m": 1}], "r": 1.0,
               "grid": SMALL_GRID, "uniqueness_trials": 0}
    outs = []
    for tag in ("a", "b"):
        cfg = write_config(tmp_path / f"cfg_{tag}.json", payload)
        out = tmp_path / tag
        assert main(["solve-kw", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
        outs.append(out)
    for name in ("w.csv", "field.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_flow_critical_start(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "variant": "coulomb_g0", "init": {"kind": "critical", "m": 1},
        "ds": 1e-3, "s_max": 1.0,
    })
    out = tmp_path / "out"
    assert main(["flow", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"]
    meta = json.loads((out / "meta.json").read_text())
    assert meta["converged"] and meta["n_steps"] == 0
    assert main(["verify", "--artifacts", str(out)]) == 0


def test_flow_vortex_confinement(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "variant": "coulomb_g0", "init": {"kind": "vortex"},
        "checks": {"confinement": True, "max_principle": True},
    })
    out = tmp_path / "out"
    assert main(["flow", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"]
    conf = json.loads((out / "confinement.json").read_text())
    assert conf["terminal_out_mass"] < 1e-6
    assert conf["label_start"] == 0 and conf["label_end"] == -1


def test_flow_bad_variant(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"variant": "nonsense"})
    assert main(["flow", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_morse_lab_quadratic(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"fixture": "quadratic", "count": 25})
    out = tmp_path / "out"
    assert main(["morse-lab", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(row["ok"] for row in rep["table"])


def test_morse_lab_norlag(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"fixture": "norlag", "kappas": [1.0, 10.0]})
    out = tmp_path / "out"
    assert main(["morse-lab", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert max(row["sup_error"] for row in rep["table"]) < 1e-6


def test_morse_lab_unknown_fixture(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"fixture": "bogus"})
    assert main(["morse-lab", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_table_format_emits_dat(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "vortices": [], "grid": {"s_min": -6.0, "s_max": 6.0, "n_s": 97, "n_t": 32},
    })
    out = tmp_path / "out"
    assert main(["solve-kw", "--config", cfg, "--out", str(out),
                 "--format", "table"]) == 0
    assert (out / "w.dat").read_text().startswith("# s t w")
