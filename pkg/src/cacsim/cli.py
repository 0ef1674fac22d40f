"""Command-line entry point.

    cacsim run   --scenario FILE [--seed N] [--format table|csv|json] [--trace PATH]
    cacsim sweep --scenario FILE --seeds A:B [--jobs N] [--format ...] [--witness-dir DIR] [--trace-dir DIR]
    cacsim check TRACE [--format ...]

Exit codes: 0 all properties hold, 1 property violation, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .checker import TraceError, check_all, structural_check, violations
from .metrics import FIELDS, aggregate, measure
from .scenario_file import ScenarioError, load_scenario, save_scenario
from .sim import Schedule, Scenario, Trace, run

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


def parse_seeds(text: str) -> range:
    """``A:B`` (B exclusive), ``A-B`` (inclusive) or a count ``N`` (0..N-1)."""
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            return range(int(a), int(b))
        if "-" in text[1:]:
            a, b = text.split("-", 1)
            return range(int(a), int(b) + 1)
        return range(int(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}")


def run_one(scenario: Scenario):
    trace, stats = run(scenario)
    verdicts = check_all(trace, scenario)
    return trace, measure(trace, stats, verdicts, scenario), verdicts


def _sweep_job(args):
    d, seed, trace_dir = args
    sc = Scenario.from_dict(d).with_seed(seed)
    trace, report, _ = run_one(sc)
    if trace_dir:
        trace.save(os.path.join(trace_dir, f"seed{seed}.trace.jsonl"))
    return report


def replay_scenario(scenario: Scenario, trace) -> Scenario:
    """The same scenario with every message delay pinned, so it replays the
    trace regardless of the schedule kind that produced it."""
    delays = [rec["at"] - rec["tick"] for rec in trace if rec["ev"] == "send"]
    d = scenario.to_dict()
    d["schedule"] = Schedule("script", seed=scenario.schedule.seed, delays=delays).to_dict()
    return Scenario.from_dict(d)


# -- output -------------------------------------------------------------------


def _render_reports(reports, fmt, agg=None) -> str:
    if fmt == "json":
        doc = {"runs": [r.to_dict() for r in reports]}
        if agg is not None:
            doc["aggregate"] = agg
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for r in reports:
            w.writerow(["" if x is None else x for x in r.row()])
        return buf.getvalue()
    rows = [FIELDS] + [tuple("-" if x is None else str(x) for x in r.row()) for r in reports]
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(FIELDS))]
    out = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    if agg is not None:
        out.append("")
        out.append(f"runs={agg['runs']} violating_runs={agg['violating_runs']}")
        for f, s in agg.items():
            if isinstance(s, dict):
                out.append(f"{f:>13}: min={s['min']} median={s['median']} max={s['max']}")
    return "\n".join(out) + "\n"


def _render_verdicts(verdicts, fmt) -> str:
    if fmt == "json":
        return json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["property", "holds", "skipped", "witness", "detail"])
        for v in verdicts:
            w.writerow([v.property, v.holds, v.skipped, " ".join(map(str, v.witness)), v.detail])
        return buf.getvalue()
    lines = []
    for v in verdicts:
        mark = "skip" if v.skipped else ("ok" if v.holds else "FAIL")
        extra = f"  {v.detail}" if v.detail and not v.holds else ""
        lines.append(f"{mark:<5}{v.property}{extra}")
    return "\n".join(lines) + "\n"


# -- commands -----------------------------------------------------------------


def cmd_run(args, out) -> int:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    trace, report, verdicts = run_one(sc)
    out.write(_render_reports([report], args.format))
    bad = violations(verdicts)
    path = args.trace
    if bad and path is None:
        path = f"witness-seed{sc.schedule.seed}.trace.jsonl"
    if path:
        trace.save(path)
    if bad:
        out.write(_render_verdicts(bad, "table"))
        out.write(f"witness trace: {path}\n")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    sc = load_scenario(args.scenario)
    seeds = list(args.seeds)
    d = sc.to_dict()
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)
    jobs = [(d, s, args.trace_dir) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_sweep_job, jobs, chunksize=max(1, len(jobs) // (4 * args.jobs))))
    else:
        reports = [_sweep_job(j) for j in jobs]
    out.write(_render_reports(reports, args.format, aggregate(reports)))
    bad = [r for r in reports if r.violations]
    if not bad:
        return EXIT_OK
    first = sc.with_seed(bad[0].seed)
    trace, _, verdicts = run_one(first)
    os.makedirs(args.witness_dir, exist_ok=True)
    stem = os.path.join(args.witness_dir, f"witness-seed{first.schedule.seed}")
    save_scenario(replay_scenario(first, trace), stem + ".scenario.yaml")
    trace.save(stem + ".trace.jsonl")
    out.write(_render_verdicts(violations(verdicts), "table"))
    out.write(f"witness scenario: {stem}.scenario.yaml\nwitness trace: {stem}.trace.jsonl\n")
    return EXIT_VIOLATION


def cmd_check(args, out) -> int:
    try:
        trace = Trace.load(args.trace)
    except (OSError, ValueError) as exc:
        raise TraceError(f"{args.trace}: unreadable trace ({exc})")
    st = structural_check(trace)
    if not st.holds:
        raise TraceError(f"{args.trace}: {st.detail}")
    verdicts = check_all(trace)
    out.write(_render_verdicts(verdicts, args.format))
    return EXIT_VIOLATION if violations(verdicts) else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cacsim", description="Run and check CAC protocol simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = dict(choices=("table", "csv", "json"), default="table")

    r = sub.add_parser("run", help="run one scenario and check it")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, help="override the schedule seed (switches lockstep to random)")
    r.add_argument("--format", **fmt)
    r.add_argument("--trace", help="write the trace here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a seed range")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seeds", type=parse_seeds, required=True, help="A:B, A-B or N")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--format", **fmt)
    s.add_argument("--witness-dir", default=".")
    s.add_argument("--trace-dir", help="write every seed's trace into this directory")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="re-check a saved trace")
    c.add_argument("trace")
    c.add_argument("--format", **fmt)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args, out)
    except (ScenarioError, TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
