"""Command-line interface: ``lqm validate|run|compare|scaffold|plot``.

Exit codes
----------
0  success
1  invalid input: a bad scenario file or an unusable trace
2  runtime failure (invariant breach, serial/parallel mismatch)
3  usage error (bad flags, unknown template)

``LQM_LOG`` sets the log level (``DEBUG``, ``INFO``, ``WARNING``, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .engine import Engine, InvariantError
from .io import (
    SchemaError,
    TraceSet,
    compare_traces,
    dump_scenario,
    load_scenario,
    load_trace,
    smooth_demand,
    write_trace,
)
from .network import CflWarning, Scenario, validate_scenario
from .scenarios import BUILTINS, builtin

log = logging.getLogger("lqm")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 3

TEMPLATES = ("paper-intersection", "paper-intersection-bottleneck", "paper-corridor", "single-link")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunReport:
    scenario: str
    steps: int
    wall_time: float
    mean_step_time: float
    invariants: str
    outputs: dict[str, str] = field(default_factory=dict)


def _summary(scenario: Scenario, engine: Engine) -> dict:
    k = engine.k
    recs = engine.records
    injected = sum(recs[o].cum_in[k] for o in engine.origins)
    backlog = sum(recs[o].cum_in[k] - recs[o].cum_out[k] for o in engine.origins)
    occupancy = sum(recs[l].cum_in[k] - recs[l].cum_out[k] for l in engine.physical)
    absorbed = sum(recs[s].cum_in[k] for s in engine.sinks)
    links = {}
    for lid in engine.physical:
        r = recs[lid]
        links[lid] = {
            "entered": round(float(r.cum_in[k]), 9),
            "left": round(float(r.cum_out[k]), 9),
            "max_queue_length": round(float(r.queue_length[:k].max()) if k else 0.0, 9),
        }
    return {
        "scenario": scenario.name,
        "dt": scenario.dt,
        "steps": k,
        "links": len(engine.physical),
        "injected": round(float(injected), 9),
        "absorbed": round(float(absorbed), 9),
        "on_links": round(float(occupancy), 9),
        "origin_backlog": round(float(backlog), 9),
        "conservation_gap": round(float(injected - absorbed - occupancy - backlog), 9),
        "per_link": links,
    }


def simulate(scenario: Scenario, *, parallel: bool = False) -> tuple[TraceSet, RunReport, Engine]:
    """Run a scenario and time it; raises :class:`InvariantError` on a breach."""
    engine = Engine(scenario, parallel=parallel)
    start = time.perf_counter()
    trace = engine.run()
    wall = time.perf_counter() - start
    steps = engine.k
    report = RunReport(scenario.name, steps, wall, wall / steps if steps else 0.0, "all checks passed")
    return trace, report, engine


def _prepare(scenario: Scenario, args) -> Scenario:
    if args.dt is not None or args.horizon is not None:
        scenario = scenario.with_overrides(dt=args.dt, horizon_steps=args.horizon)
    if args.smooth_window and args.smooth_window > 1 and args.builtin_source:
        scenario = Scenario(
            scenario.links,
            scenario.nodes,
            {o: smooth_demand(r, args.smooth_window) for o, r in scenario.demand.items()},
            scenario.dt,
            scenario.horizon_steps,
            scenario.segments,
            scenario.name,
        )
    return scenario


def _run_one(job: tuple[str, str, str, dict]) -> tuple[int, str]:
    """Run one scenario into ``out_dir``; returns ``(exit code, message)``."""
    kind, source, out_dir, opts = job
    args = argparse.Namespace(**opts, builtin_source=kind == "builtin")
    try:
        if kind == "builtin":
            scenario = builtin(source)
        else:
            scenario = load_scenario(source, smooth_window=args.smooth_window)
    except SchemaError as exc:
        return EXIT_INPUT, f"{source}: {len(exc.errors)} schema error(s)\n" + str(exc)
    except OSError as exc:
        return EXIT_INPUT, f"{source}: {exc}"
    scenario = _prepare(scenario, args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CflWarning)
        violations = validate_scenario(scenario)
    for w in caught:
        log.info("%s", w.message)
    if violations:
        return EXIT_INPUT, f"{source}: {len(violations)} violation(s)\n" + "\n".join(map(str, violations))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace, report, engine = simulate(scenario)
        if args.parallel or args.check_determinism:
            par_trace, par_report, _ = simulate(scenario, parallel=True)
            if args.check_determinism and par_trace != trace:
                return EXIT_RUNTIME, f"{source}: serial and parallel traces differ"
            if args.parallel:
                report = par_report
    except InvariantError as exc:
        return EXIT_RUNTIME, f"{source}: invariant violated: {exc}"

    write_trace(trace, out / "trace.csv")
    (out / "summary.json").write_text(json.dumps(_summary(scenario, engine), indent=1, sort_keys=True) + "\n")
    report.outputs = {"trace": str(out / "trace.csv"), "summary": str(out / "summary.json")}
    if args.check_determinism:
        report.invariants += "; serial and parallel traces identical"
    if args.plots:
        from .plotting import plot_trace

        plot_trace(trace, out / "plots")
        report.outputs["plots"] = str(out / "plots")
    (out / "run_report.json").write_text(json.dumps(asdict(report), indent=1, sort_keys=True) + "\n")
    print(
        f"{scenario.name or source}: {report.steps} steps in {report.wall_time:.3f} s "
        f"({1000 * report.mean_step_time:.3f} ms/step)",
        file=sys.stderr,
    )
    return EXIT_OK, f"{scenario.name or source}: {report.steps} steps -> {out}"


def cmd_run(args) -> int:
    if args.seedless:
        raise UsageError("--seedless is reserved: the simulation has no randomness to seed")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    sources = [("builtin", b) for b in args.builtin or []] + [("file", s) for s in args.scenario or []]
    if not sources:
        raise UsageError("give at least one --scenario or --builtin")
    opts = {
        k: getattr(args, k)
        for k in ("dt", "horizon", "smooth_window", "parallel", "check_determinism", "plots")
    }
    out = Path(args.out)
    jobs = []
    for kind, src in sources:
        target = out if len(sources) == 1 else out / (src if kind == "builtin" else Path(src).stem)
        jobs.append((kind, src, str(target), opts))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    code = EXIT_OK
    for rc, msg in results:
        print(msg, file=sys.stderr if rc else sys.stdout)
        code = max(code, rc)
    return code


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.path)
    except SchemaError as exc:
        print(f"{len(exc.errors)} schema error(s)")
        print(exc)
        return EXIT_INPUT
    except OSError as exc:
        print(exc)
        return EXIT_INPUT
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CflWarning)
        violations = validate_scenario(scenario)
    for v in violations:
        print(v)
    print(f"{len(violations)} violations")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK if not violations else EXIT_INPUT


def cmd_compare(args) -> int:
    try:
        a, b = load_trace(args.trace_a), load_trace(args.trace_b)
        report = compare_traces(a, b, tuple(q.strip() for q in args.quantities.split(",")))
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_scaffold(args) -> int:
    dump_scenario(BUILTINS[args.template](), args.out)
    print(f"wrote {args.template} to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_trace

    try:
        trace = load_trace(args.trace)
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    links = args.links.split(",") if args.links else None
    unknown = [l for l in links or [] if l not in trace.link_ids]
    if unknown:
        print(f"unknown link id(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_INPUT
    paths = plot_trace(trace, args.out, links)
    print(f"wrote {len(paths)} figure(s) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lqm", description="Link queue model network loading.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate scenarios and write traces")
    r.add_argument("--scenario", action="append", help="scenario JSON file (repeatable)")
    r.add_argument("--builtin", action="append", choices=sorted(BUILTINS), help="built-in scenario (repeatable)")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--dt", type=float, help="override the step size in seconds (inputs are resampled)")
    r.add_argument("--horizon", type=int, help="override the number of steps")
    r.add_argument("--smooth-window", type=int, default=None, help="average demand over blocks of N samples")
    r.add_argument("--parallel", action="store_true", help="use the threaded engine")
    r.add_argument("--check-determinism", action="store_true", help="run serial and parallel and require identical traces")
    r.add_argument("--plots", action="store_true", help="write one SVG figure per link")
    r.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
    r.add_argument("--seedless", action="store_true", help=argparse.SUPPRESS)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="per-link RMS difference of two traces")
    c.add_argument("trace_a")
    c.add_argument("trace_b")
    c.add_argument("--quantities", default="N_in,N_out")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("scaffold", help="write a built-in scenario as JSON")
    s.add_argument("template", choices=TEMPLATES)
    s.add_argument("out")
    s.set_defaults(func=cmd_scaffold)

    pl = sub.add_parser("plot", help="SVG figures from a trace")
    pl.add_argument("trace")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--links", help="comma-separated link ids (default: all)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LQM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"lqm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
