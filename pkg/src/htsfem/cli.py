"""Command-line entry point.

Subcommands:

* ``solve``     -- transient run with profile and oscillation outputs.
* ``infsup``    -- stability sweep, report as JSON and CSV.
* ``mesh``      -- emit the scenario mesh in the native format.
* ``eigenmode`` -- export one eigenmode of the inf-sup pencil.

Outputs land in one directory per run: ``config.resolved.json``, data
CSVs and a ``run.json`` summary.  Runs are deterministic: repeated
invocations with the same configuration produce byte-identical files.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .assembly import assemble_coupling_matrix, assemble_norm_matrix
from .diagnostics import (oscillation_metric, sample_bn_profile,
                          sample_tape_current, sign_changes)
from .infsup import build_pairing, export_eigenmode, run_infsup_sweep
from .linalg import infsup_eigenpairs
from .mesh import (Interface, Scenario, build_stacked_bar_mesh, build_tape_mesh,
                   write_native)
from .spaces import build_a_space, build_h_space, build_t_space
from .transient import NonConvergenceError, circuit_post, run_transient, \
    write_history_csv, write_snapshots

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _emit_error(kind, message):
    print(json.dumps({"error": kind, "message": str(message)}, sort_keys=True))


def _worker_cap():
    raw = os.environ.get("MFEM_STAB_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError as err:
        raise cfgmod.ConfigError(f"MFEM_STAB_THREADS must be an integer: {err}")
    if cap < 1:
        raise cfgmod.ConfigError("MFEM_STAB_THREADS must be >= 1")
    return cap


def _build_mesh(cfg):
    params = cfgmod.make_geometry(cfg)
    if params.scenario is Scenario.STACKED_BAR:
        return build_stacked_bar_mesh(params), params
    return build_tape_mesh(params), params


def _build_spaces(cfg, mesh):
    i, j = cfg["pairing"]
    if cfg["formulation"] == "ha":
        drive = cfg["source"]["current"] or 0.0
        v = build_h_space(mesh, i, {0: ("current", drive)})
        q = build_a_space(mesh, j, Interface.GAMMA_M)
    else:
        if cfg["source"]["voltage"] is not None:
            constraint = ("voltage", cfg["source"]["voltage"])
        else:
            constraint = ("current", cfgmod.imposed_current(cfg))
        v = build_t_space(mesh, i, {0: constraint})
        q = build_a_space(mesh, j, Interface.GAMMA_W)
    return v, q


def cmd_solve(cfg, outdir: Path, quiet=False) -> int:
    t0 = _time.perf_counter()
    mesh, _ = _build_mesh(cfg)
    v_space, q_space = _build_spaces(cfg, mesh)
    materials = cfgmod.make_materials(cfg)
    timecfg = cfgmod.make_time(cfg)
    try:
        hist = run_transient(mesh, (v_space, q_space), materials, timecfg,
                             cfg["formulation"])
    except NonConvergenceError as err:
        _emit_error("nonconvergence", err)
        return EXIT_SOLVER

    sol = (hist.v[-1], hist.q[-1])
    jc = cfg["material"]["j_c"]
    samp = cfg["sampling"]
    metrics = {}
    if cfg["formulation"] == "ha":
        for side in ("ABOVE", "BELOW"):
            prof = sample_bn_profile(mesh, v_space, q_space, sol,
                                     offset=samp["offset"], side=side,
                                     n_samples=samp["n_samples"])
            prof.to_csv(outdir / f"profile_bn_{side.lower()}.csv")
            metrics[f"oscillation_bn_{side.lower()}"] = oscillation_metric(prof)
    else:
        prof = sample_tape_current(mesh, v_space, hist.v[-1], j_c=jc)
        prof.to_csv(outdir / "profile_tape_current.csv")
        metrics["oscillation_tape_current"] = oscillation_metric(prof)
        metrics["interior_sign_changes"] = sign_changes(prof.values[3:-3])

    times, vals = circuit_post(hist, (v_space, q_space), 0)
    mode = (v_space.meta["conductors"][0].mode if v_space.family == "H"
            else v_space.meta["tapes"][0].mode)
    name = "voltage" if mode == "current" else "current"
    write_history_csv(hist, name, vals, outdir / f"history_{name}.csv")
    write_history_csv(hist, "newton_iterations", hist.newton_iters,
                      outdir / "history_newton.csv")
    write_snapshots(hist, outdir / "snapshots.txt")
    with open(outdir / "oscillation_metrics.json", "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")

    summary = {
        "command": "solve",
        "steps": hist.n_steps,
        "newton_iterations_total": int(np.sum(hist.newton_iters)),
        "newton_iterations_max": int(np.max(hist.newton_iters)),
        "final_residual": float(hist.final_residuals[-1]),
        "metrics": metrics,
        "wall_seconds": round(_time.perf_counter() - t0, 3),
    }
    _write_summary(outdir, summary)
    if not quiet:
        print(f"solve: {hist.n_steps} steps, metrics {metrics}")
    return EXIT_OK


def cmd_infsup(cfg, outdir: Path, pairings=None, quiet=False) -> int:
    t0 = _time.perf_counter()
    params = cfgmod.make_geometry(cfg)
    if cfg["sweep"]["base_delta"] is not None:
        params = params.with_delta(cfg["sweep"]["base_delta"])
    n_ref = cfg["sweep"]["n_refinements"]
    norms = cfgmod.make_norms(cfg)
    if pairings is None:
        pairings = [tuple(cfg["pairing"])]
    verdicts = {}
    for pair in pairings:
        rep = run_infsup_sweep(params, cfg["formulation"], pair, n_ref,
                               norms=norms, materials=cfgmod.linear_materials(cfg))
        tag = f"{pair[0]}{pair[1]}"
        rep.to_json(outdir / f"infsup_{tag}.json")
        rep.to_csv(outdir / f"infsup_{tag}.csv")
        verdicts[tag] = rep.verdict
        if not quiet:
            print(f"infsup ({pair[0]},{pair[1]}): {rep.verdict} "
                  f"slope={rep.slope:.3f}")
    summary = {
        "command": "infsup",
        "verdicts": verdicts,
        "wall_seconds": round(_time.perf_counter() - t0, 3),
    }
    _write_summary(outdir, summary)
    return EXIT_OK


def cmd_mesh(cfg, outdir: Path, quiet=False) -> int:
    mesh, _ = _build_mesh(cfg)
    write_native(mesh, outdir / "mesh.txt")
    summary = {"command": "mesh", "nodes": mesh.n_nodes,
               "triangles": mesh.n_triangles, "delta": mesh.delta}
    _write_summary(outdir, summary)
    if not quiet:
        print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    return EXIT_OK


def cmd_eigenmode(cfg, outdir: Path, mode_rank=0, quiet=False) -> int:
    mesh, _ = _build_mesh(cfg)
    v_space, q_space = build_pairing(mesh, cfg["formulation"], cfg["pairing"])
    norms = cfgmod.make_norms(cfg)
    B = assemble_coupling_matrix(v_space, q_space)
    N_V = assemble_norm_matrix(v_space, norms)
    N_Q = assemble_norm_matrix(q_space, norms)
    eig = infsup_eigenpairs(B, N_V, N_Q)
    rank = mode_rank if mode_rank >= 0 else len(eig.eigenvalues) + mode_rank
    export_eigenmode(mesh, v_space, q_space, B, N_V, eig, rank,
                     outdir / "eigenmode")
    summary = {"command": "eigenmode", "mode_rank": rank,
               "lambda": float(eig.eigenvalues[rank]),
               "beta": eig.beta, "b_norm": eig.b_norm}
    _write_summary(outdir, summary)
    if not quiet:
        print(f"eigenmode {rank}: lambda={eig.eigenvalues[rank]:.6e}")
    return EXIT_OK


def _write_summary(outdir: Path, summary: dict):
    with open(outdir / "run.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="htsfem", description=__doc__)
    parser.add_argument("command",
                        choices=["solve", "infsup", "mesh", "eigenmode"])
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--pairing", help="space orders i,j or 'all'")
    parser.add_argument("--refinements", type=int,
                        help="number of refinements for infsup")
    parser.add_argument("--mode-rank", type=int, default=0,
                        help="eigenmode rank for the eigenmode command")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        _worker_cap()
        cfg = cfgmod.load_config(args.config)
        pairings = None
        if args.pairing:
            if args.pairing.lower() == "all":
                pairings = [(1, 1), (1, 2), (2, 1), (2, 2)]
            else:
                i, j = (int(p) for p in args.pairing.split(","))
                if {i, j} - {1, 2}:
                    raise cfgmod.ConfigError("pairing orders must be 1 or 2")
                cfg["pairing"] = [i, j]
        if args.refinements is not None:
            cfg["sweep"]["n_refinements"] = args.refinements
        if cfg["sweep"]["n_refinements"] < 3:
            raise cfgmod.ConfigError("n_refinements must be >= 3")
        outdir = Path(args.out or cfg["output_dir"])
        outdir.mkdir(parents=True, exist_ok=True)
        cfgmod.dump_resolved(cfg, outdir / "config.resolved.json")
    except cfgmod.ConfigError as err:
        _emit_error("config", err)
        return EXIT_CONFIG
    except ValueError as err:
        _emit_error("config", err)
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            return cmd_solve(cfg, outdir, quiet=args.quiet)
        if args.command == "infsup":
            return cmd_infsup(cfg, outdir, pairings=pairings, quiet=args.quiet)
        if args.command == "mesh":
            return cmd_mesh(cfg, outdir, quiet=args.quiet)
        return cmd_eigenmode(cfg, outdir, mode_rank=args.mode_rank,
                             quiet=args.quiet)
    except NonConvergenceError as err:
        _emit_error("nonconvergence", err)
        return EXIT_SOLVER
    except ValueError as err:
        _emit_error("config", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
