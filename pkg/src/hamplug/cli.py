"""Command line: ``hamplug <command> [--config FILE] [--set section.key=value ...]``.

Reports go to the run directory (``$HAMPLUG_RUN_DIR``, default ``./runs``) as
append-only JSON lines; trajectories as CSV, traverse batches as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .integrate import integrate
from .report import (_clean, append_reports, dumps_reports, export_records,
                     export_trajectory, run_dir)


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)


def _emit(reports, args) -> int:
    for r in reports:
        print(r.line(), flush=True)
    append_reports(run_dir() / "reports.jsonl", reports)
    if getattr(args, "report", None):
        Path(args.report).write_text(dumps_reports(reports) + "\n", encoding="utf-8")
    return 0 if all(r.ok for r in reports) else 1


def cmd_verify(cfg, args) -> int:
    from .suites import run_verify

    def show(r):
        print(r.line(), flush=True)

    reports = run_verify(cfg, args.suite, progress=show)
    append_reports(run_dir() / "reports.jsonl", reports)
    if args.report:
        Path(args.report).write_text(dumps_reports(reports) + "\n", encoding="utf-8")
    bad = [r.suite for r in reports if not r.ok]
    print(f"{len(reports) - len(bad)}/{len(reports)} suites ok" + (f"; failing: {', '.join(bad)}" if bad else ""))
    return 0 if not bad else 1


def _entry_grid(g, n: int) -> np.ndarray:
    """Cartesian grid with ``n`` values per transverse axis over the placed support disc."""
    R = g.placed_extent[0]
    axis = np.linspace(-R, R, n)
    mesh = np.stack(np.meshgrid(*[axis] * (g.dim - 1), indexing="ij"), -1).reshape(-1, g.dim - 1)
    return mesh[np.linalg.norm(mesh, axis=1) <= R]


def cmd_traverse(cfg, args) -> int:
    from .plug import traverse_scan, verify_matching
    from .suites import SUITES, matching_entries

    g = cfg.geometry()
    if args.x:
        xs = np.array([_floats(x) for x in args.x])
    elif args.grid:
        xs = _entry_grid(g, args.grid)
    else:
        rng = np.random.default_rng([cfg["run.seed"], SUITES.index("plug.matching")])
        xs = matching_entries(cfg, rng)
    t_max = cfg["run.t_max"] if args.tmax is None else args.tmax
    recs = traverse_scan(g, xs, t_max, cfg["tolerances.integrator"], workers=cfg["run.workers"],
                         nrec=args.dump_samples if args.dump else 0)
    out = export_records(recs, args.out or run_dir() / "traverse.jsonl")
    print(f"{len(recs)} records -> {out}")
    if args.dump:
        d = Path(args.dump)
        d.mkdir(parents=True, exist_ok=True)
        for i, r in enumerate(recs):
            if getattr(r, "samples", None) is not None:
                export_trajectory(r.samples, d / f"entry_{i:05d}.csv")
        print(f"trajectories -> {d}")
    return _emit([verify_matching(recs, cfg["tolerances.matching"])], args)


def cmd_trap_scan(cfg, args) -> int:
    from .suites import plug_trap

    if args.refine is not None:
        cfg.set("run.trap_refine", args.refine)
    if args.tmax is not None:
        cfg.set("run.t_max", args.tmax)
    region = None
    if args.region:
        v = _floats(args.region)
        if v.size not in (2, 3):
            raise ConfigError("--region: expected 'radius,half_width[,points]'")
        if v.size == 3:
            cfg.set("run.trap_points", int(v[2]))
        region = v[:2]
    cfg.validate()
    rep = plug_trap(cfg, region)
    out = Path(args.out or run_dir() / "trap_scan.json")
    out.write_text(json.dumps(_clean(rep.details), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"diagnostics -> {out}")
    return _emit([rep], args)


def cmd_orbit(cfg, args) -> int:
    g = cfg.geometry()
    if args.even:
        fld = cfg.volume_model().field()
        extra = "u"
    else:
        from .plug import PlugField

        fld = PlugField(g)
        extra = None
    p0 = _floats(args.start)
    if p0.size != fld.dim:
        raise ConfigError(f"--start: expected {fld.dim} coordinates, got {p0.size}")
    ts = np.linspace(0.0, args.T, args.samples + 1)
    tr = integrate(fld, p0, args.T, cfg["tolerances.integrator"], t_eval=ts, max_step=g.eps / 20)
    out = export_trajectory(tr, args.out or run_dir() / "orbit.csv", extra)
    print(f"{len(tr.t)} rows, status {tr.status} -> {out}")
    return 0


def cmd_density_check(cfg, args) -> int:
    from .suites import volume_positivity

    if args.samples:
        cfg.set("run.positivity_samples", args.samples)
    return _emit([volume_positivity(cfg)], args)


def cmd_volume_verify(cfg, args) -> int:
    from .suites import volume_preservation

    if args.T is not None:
        cfg.set("run.volume_T", args.T)
    if args.samples:
        cfg.set("run.volume_samples", args.samples)
    cfg.validate()
    return _emit([volume_preservation(cfg)], args)


def cmd_insert_demo(cfg, args) -> int:
    from .host import periodic_orbit
    from .suites import host_open_orbit

    for key, val in (("host.nearby", args.nearby), ("host.orbit", args.orbit),
                     ("host.chart_delta", args.chart_delta), ("host.chart_eps", args.chart_eps)):
        if val is not None:
            cfg.set(key, val)
    cfg.validate()
    rep = host_open_orbit(cfg)
    if args.csv:
        d = Path(args.csv)
        d.mkdir(parents=True, exist_ok=True)
        ins = cfg.inserted()
        orb = periodic_orbit(ins.host, cfg["host.orbit"])
        p0 = ins.chart.point(np.zeros(2 * ins.host.n - 2), -(ins.chart.eps + 0.1))
        tol = cfg["tolerances.trap"]
        n = args.csv_samples
        pre = integrate(ins.host.field(), p0, orb.period, tol, t_eval=np.linspace(0, orb.period, n + 1))
        T = cfg["host.t_max"]
        post = integrate(ins.field(), p0, T, tol, t_eval=np.linspace(0, T, n + 1),
                         max_step=ins.nu * ins.geom.eps / 20)
        export_trajectory(pre, d / "pre.csv")
        export_trajectory(post, d / "post.csv")
        print(f"pre/post orbits -> {d}")
    return _emit([rep], args)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamplug", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hamplug {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value entries")
    common.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                        help="override one config value (repeatable)")
    common.add_argument("--report", help="also write the reports (no timestamps) to this file")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run verification suites")
    p.add_argument("--suite", action="append", help="restrict to this suite (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("traverse", parents=[common], help="traverse the plug from entry points")
    p.add_argument("--x", action="append", help="transverse entry 'x1,y1,...' (repeatable)")
    p.add_argument("--grid", type=int, metavar="N", help="N values per transverse axis over the trap support")
    p.add_argument("--tmax", type=float, help="time limit per entry (default run.t_max)")
    p.add_argument("--out", help="JSON-lines output")
    p.add_argument("--dump", metavar="DIR", help="write one trajectory CSV per entry")
    p.add_argument("--dump-samples", type=int, default=2000, help="samples kept per dumped trajectory")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("trap-scan", parents=[common], help="search for trapped entries")
    p.add_argument("--region", metavar="R,W[,P]",
                   help="polar entry grid: radius R per plane, half-width W, P points per plane")
    p.add_argument("--refine", type=int, metavar="K", help="refinement levels (default run.trap_refine)")
    p.add_argument("--tmax", type=float, help="time limit (default run.t_max)")
    p.add_argument("--out", help="JSON diagnostics output")
    p.set_defaults(func=cmd_trap_scan)

    p = sub.add_parser("orbit", parents=[common], help="integrate one trajectory to CSV")
    p.add_argument("--start", required=True, help="state 'x1,y1,...,z' (plus ',u' with --even)")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--even", action="store_true", help="use the even-dimensional plug")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("density-check", parents=[common], help="volume density and dz(R_u) positivity")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_density_check)

    p = sub.add_parser("volume-verify", parents=[common], help="volume transport ratio")
    p.add_argument("--T", type=float)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_volume_verify)

    p = sub.add_parser("insert-demo", parents=[common], help="open a periodic orbit of the ellipsoid")
    p.add_argument("--orbit", type=int, help="index j of the periodic orbit to open")
    p.add_argument("--chart-delta", type=float)
    p.add_argument("--chart-eps", type=float)
    p.add_argument("--nearby", type=int)
    p.add_argument("--csv", metavar="DIR", help="write pre/post orbit trajectories as CSV")
    p.add_argument("--csv-samples", type=int, default=5000)
    p.set_defaults(func=cmd_insert_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
