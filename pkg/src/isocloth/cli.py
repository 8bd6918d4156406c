"""Command-line front end.

Exit codes: 0 when every step converged, 2 when some step was flagged,
1 on I/O or parse errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import experiments as ex
from .analysis import area_metrics, holdout_window, trajectory_error
from .assembly import assemble_bending, assemble_lumped_mass, assemble_metric_tensors, dump_triplets
from .calibration import CalibrationProblem, FitError, fit
from .constraints import ConstraintSystem
from .dynamics import SimulationError, simulate
from .generators import GENERATORS, generate
from .io import TrajectoryFormatError, read_trajectory, write_json, write_reports, write_table, write_trajectory
from .mesh import MeshError, load_mesh, save_mesh
from .scenario import ScenarioError, apply_overrides, dump_resolved, from_dict, parse_override

logger = logging.getLogger("isocloth")

OK, FAILED, FLAGGED = 0, 1, 2
INPUT_ERRORS = (OSError, ScenarioError, MeshError, TrajectoryFormatError, yaml.YAMLError, ValueError, KeyError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="random seed for generated meshes/noise")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario entry, e.g. params.delta=0.37")
    p.add_argument("--dt", type=float, default=None, help="time step (s)")
    p.add_argument("--tol", type=float, default=None, help="relative projection tolerance")
    p.add_argument("-v", "--verbose", action="store_true")


def _overrides(args) -> list:
    out = list(args.overrides)
    if args.dt is not None:
        out.append(f"integrator.dt={args.dt!r}")
    if args.tol is not None:
        out.append(f"integrator.tol={args.tol!r}")
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    return out


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _param_line(params) -> str:
    return "params " + " ".join(f"{k}={v!r}" for k, v in asdict(params).items())


def _write_run(out: Path, sc, traj, reports: bool = True) -> None:
    stem = out / sc.name
    (stem.parent / f"{sc.name}.scenario.yaml").write_text(dump_resolved(sc))
    write_trajectory(f"{stem}.traj", traj, comments=[f"scenario {sc.name}", _param_line(sc.params)])
    if reports:
        write_reports(f"{stem}.reports.json", traj, {"scenario": sc.name, "params": asdict(sc.params)})


def _status(trajs) -> int:
    flagged = [t for t in trajs if t.flagged_steps]
    for t in flagged:
        logger.warning("%d flagged steps (first at %d)", len(t.flagged_steps), t.flagged_steps[0])
    return FLAGGED if flagged else OK


def _dump_constraints(path, sc, traj) -> None:
    system = ConstraintSystem.from_mesh(sc.mesh, handle_nodes=sc.handle_nodes())
    lines = ["# t residual C_1 ... C_nc"]
    for t, phi in zip(traj.times, traj.frames):
        system.targets = sc.handle_targets(t)
        C = system.values(phi)
        lines.append(" ".join([repr(float(t)), repr(system.relative_residual(C))] + [repr(float(c)) for c in C]))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    doc = yaml.safe_load(Path(args.scenario).read_text())
    doc = apply_overrides(doc, _overrides(args))
    sc = from_dict(doc, base=Path(args.scenario).parent)
    out = _outdir(args)
    print(_param_line(sc.params))
    traj = simulate(sc)
    _write_run(out, sc, traj, sc.resolved["outputs"].get("reports", True))
    if args.dump_triplets:
        tensors, _ = assemble_metric_tensors(sc.mesh)
        dump_triplets(out / f"{sc.name}.triplets.txt", tensors, assemble_bending(sc.mesh))
    if args.dump_constraints:
        _dump_constraints(out / f"{sc.name}.constraints.txt", sc, traj)
    return _status([traj])


def _apply(overrides):
    return (lambda doc: apply_overrides(doc, overrides)) if overrides else None


def cmd_locking(args) -> int:
    out = _outdir(args)
    meshes = args.meshes.split(",") if args.meshes else None
    for name in meshes or ():
        if name not in ex.LOCKING_MESHES:
            raise ValueError(f"unknown locking mesh {name!r}; choose from {sorted(ex.LOCKING_MESHES)}")
    res = ex.run_locking(meshes, args.seed or 0, args.duration, _apply(_overrides(args)))
    (out / "locking.txt").write_text(res.table())
    for sc, traj in res.trajectories.values():
        (out / f"{sc.name}.scenario.yaml").write_text(dump_resolved(sc))
        if args.trajectories:
            _write_run(out, sc, traj)
    write_json(out / "locking.json", {
        "meshes": res.names,
        "nodes": [res.trajectories[k][0].mesh.n for k in res.names],
        "corners": res.corners,
        "drops": res.drops,
        "distances_cm": 100.0 * res.distances,
        "max_distance_cm": float(100.0 * res.distances.max()),
    })
    print(res.table(), end="")
    return _status([t for _, t in res.trajectories.values()])


def cmd_cusick(args) -> int:
    out = _outdir(args)
    if args.kappa is not None:
        kappas = {f"{args.kappa:g}": args.kappa}
    elif args.preset == "all":
        kappas = dict(ex.CUSICK_PRESETS)
    else:
        kappas = {args.preset: ex.resolve_kappa(args.preset)}
    sizes = [int(s) for s in args.sweep.split(",")] if args.sweep else [args.nodes]
    rows, trajs, summary = [], [], []
    for label, kappa in kappas.items():
        for nodes in sizes:
            doc = apply_overrides(ex.cusick_doc(kappa, nodes, args.seed or 0, args.duration), _overrides(args))
            sc = from_dict(doc)
            traj = simulate(sc)
            dc = ex.drape_coefficient(sc.mesh, traj.frames[-1], ex.TABLE_RADIUS, ex.CLOTH_RADIUS, args.grid)
            (out / f"{sc.name}.scenario.yaml").write_text(dump_resolved(sc))
            if args.trajectories:
                _write_run(out, sc, traj)
            rows.append(f"{label} {kappa!r} {sc.mesh.n} {dc.DC:.3f}")
            summary.append({"preset": label, "kappa": kappa, "nodes": sc.mesh.n, **asdict(dc)})
            trajs.append(traj)
            print(rows[-1], flush=True)
    (out / "cusick.txt").write_text("# preset kappa nodes DC\n" + "\n".join(rows) + "\n")
    write_json(out / "cusick.json", {"runs": summary})
    return _status(trajs)


def cmd_metrics(args) -> int:
    out = _outdir(args)
    mesh = load_mesh(args.mesh)
    traj = read_trajectory(args.trajectory)
    if traj.n != mesh.n:
        raise ValueError(f"trajectory has {traj.n} nodes, mesh has {mesh.n}")
    am = area_metrics(mesh, traj.frames, traj.times)
    write_table(out / "area.txt", {"t": am.times, "e_t": am.e_t, "e_m": am.e_m, "d_a": am.d_a})
    summary = {"area": am.summary(), "frames": len(traj.times)}
    if args.reference:
        ref = read_trajectory(args.reference)
        if ref.frames.shape != traj.frames.shape:
            raise ValueError(f"reference shape {ref.frames.shape} != trajectory shape {traj.frames.shape}")
        err = trajectory_error(traj.frames, ref.frames, assemble_lumped_mass(mesh), holdout_window(len(traj.times)))
        write_table(out / "error.txt", {"t": traj.times, "e": err.e, "d": err.d})
        summary["error"] = {
            "window": list(err.window),
            "mean_e": err.mean,
            "mean_node_error": err.mean_node,
            "mean_d": err.mean_dispersion,
            "max_e": float(err.e.max()),
        }
    if args.drape:
        dc = ex.drape_coefficient(mesh, traj.frames[-1], args.table_radius, args.outer_radius, args.grid)
        summary["drape"] = asdict(dc)
    write_json(out / "metrics.json", summary)
    print(yaml.safe_dump(summary, sort_keys=True), end="")
    return OK


def cmd_fit(args) -> int:
    path = Path(args.problem)
    problem_doc = yaml.safe_load(path.read_text()) or {}
    extra = set(problem_doc) - {"scenario", "reference", "synthetic", "start"}
    if extra:
        raise ScenarioError(f"fit problem: unknown keys {sorted(extra)}")
    scen = problem_doc.get("scenario")
    if isinstance(scen, str):
        base = (path.parent / scen).parent
        scen = yaml.safe_load((path.parent / scen).read_text())
    else:
        base = path.parent
    if scen is None:
        raise ScenarioError("fit problem needs a 'scenario'")
    scen = apply_overrides(scen, _overrides(args))
    template = from_dict(scen, base=base)
    if "reference" in problem_doc:
        reference = read_trajectory(path.parent / problem_doc["reference"]).frames
    elif "synthetic" in problem_doc:
        delta, alpha = map(float, problem_doc["synthetic"])
        reference = simulate(template.with_params(delta=delta, alpha=alpha)).frames
    else:
        raise ScenarioError("fit problem needs 'reference' or 'synthetic'")
    start = tuple(map(float, problem_doc.get("start", (0.4, 1.5))))
    problem = CalibrationProblem(template, reference)
    result = fit(problem, start)
    out = _outdir(args)
    report = result.to_dict()
    report["start"] = list(start)
    write_json(out / "fit.json", report)
    (out / f"{template.name}.scenario.yaml").write_text(dump_resolved(template))
    print(yaml.safe_dump(report, sort_keys=True), end="")
    return OK


def cmd_gen_mesh(args) -> int:
    spec = {"kind": args.kind}
    for text in args.overrides:
        key, value = parse_override(text)
        spec[".".join(key)] = value
    if args.seed is not None and args.kind == "triangles":
        spec.setdefault("seed", args.seed)
    try:
        mesh = generate(spec)
    except TypeError as exc:
        raise ValueError(f"gen-mesh {args.kind}: {exc}") from exc
    out = _outdir(args)
    path = out / (args.name or f"{args.kind}.mesh")
    save_mesh(mesh, path)
    print(f"{path}: {mesh.n} nodes, {len(mesh.elements)} elements")
    return OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isocloth", description="Inextensible cloth simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--dump-triplets", action="store_true", help="write metric tensor and K triplets")
    p.add_argument("--dump-constraints", action="store_true", help="write C values and residual per frame")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("locking", help="four-mesh locking experiment")
    p.add_argument("--meshes", default=None, help=f"comma list from {','.join(ex.LOCKING_MESHES)}")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--trajectories", action="store_true", help="also write trajectories")
    _common(p)
    p.set_defaults(func=cmd_locking)

    p = sub.add_parser("cusick", help="drape coefficient experiment")
    p.add_argument("--preset", default="all", choices=[*ex.CUSICK_PRESETS, "all"])
    p.add_argument("--kappa", type=float, default=None, help="explicit bending stiffness")
    p.add_argument("--nodes", type=int, default=768)
    p.add_argument("--sweep", default=None, help="comma list of node counts, e.g. 250,700,1300")
    p.add_argument("--duration", type=float, default=0.75)
    p.add_argument("--grid", type=float, default=1e-3, help="raster cell size (m)")
    p.add_argument("--trajectories", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_cusick)

    p = sub.add_parser("metrics", help="area errors, drape and reference error of a trajectory")
    p.add_argument("trajectory")
    p.add_argument("--mesh", required=True)
    p.add_argument("--reference", default=None)
    p.add_argument("--drape", action="store_true", help="also compute the drape coefficient")
    p.add_argument("--table-radius", type=float, default=ex.TABLE_RADIUS)
    p.add_argument("--outer-radius", type=float, default=ex.CLOTH_RADIUS)
    p.add_argument("--grid", type=float, default=1e-3)
    _common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fit", help="fit (delta, alpha) to a reference trajectory")
    p.add_argument("problem", help="YAML with scenario, reference (or synthetic) and start")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gen-mesh", help="write a built-in mesh; generator arguments via --set")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("--name", default=None, help="file name inside --out")
    _common(p)
    p.set_defaults(func=cmd_gen_mesh)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FLAGGED
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FLAGGED
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
