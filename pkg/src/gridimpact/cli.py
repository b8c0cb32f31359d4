"""Command-line front end.

Subcommands mirror the library stages: ``load`` prints a case summary,
``screen`` sweeps outage combinations, ``simulate`` runs a switching
scenario, ``pipeline`` runs the full screen-verify-crosscheck chain
into a run directory, and ``report`` prints an artifact from a run
directory. Worker-pool size for screening comes from the
GRIDIMPACT_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dynamics import (
    ScenarioOptions,
    default_machine_models,
    load_schedule,
    run_scenario,
    trace_to_csv,
)
from .model import load_case, summarize
from .pipeline import DynPolicy, PipelineConfig, run_pipeline
from .screening import run_screening, screening_report_csv

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridimpact",
        description="Power-grid contingency screening and dynamic verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_load = sub.add_parser("load", help="load a case file and print its summary")
    p_load.add_argument("case", help="path to a .grid case file")

    p_screen = sub.add_parser("screen", help="steady-state outage screening")
    p_screen.add_argument("case")
    p_screen.add_argument("--k", type=int, default=1, help="maximum outage level")
    p_screen.add_argument("--budget", type=int, default=None,
                          help="cap on power-flow evaluations")
    p_screen.add_argument("--no-prune", action="store_true",
                          help="disable containment pruning")
    p_screen.add_argument("--out", default=None, help="write CSV here (default stdout)")

    p_sim = sub.add_parser("simulate", help="time-domain switching scenario")
    p_sim.add_argument("case")
    p_sim.add_argument("scenario", help="switching schedule file")
    p_sim.add_argument("--dt", type=float, default=0.01, help="time step in seconds")
    p_sim.add_argument("--t-end", type=float, default=None,
                       help="simulation horizon (default: last event + 10 s)")
    p_sim.add_argument("--trace", default=None, help="write the trace CSV here")
    p_sim.add_argument("--decimate", type=int, default=1,
                       help="keep every n-th sample in the trace CSV")

    p_pipe = sub.add_parser("pipeline", help="screen, verify, cross-check")
    p_pipe.add_argument("case")
    p_pipe.add_argument("--k", type=int, default=1)
    p_pipe.add_argument("--seed", type=int, default=0)
    p_pipe.add_argument("--budget", type=int, default=None)
    p_pipe.add_argument("--sample-fraction", type=float, default=0.05,
                        help="non-critical fraction selected for dynamics")
    p_pipe.add_argument("--out", required=True, help="run directory for reports")

    p_rep = sub.add_parser("report", help="print an artifact from a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--format", choices=("csv", "text"), default="text",
                       help="csv prints matrix.csv, text prints summary.txt")

    return parser


def _cmd_load(args: argparse.Namespace) -> int:
    case = load_case(args.case)
    s = summarize(case)
    total_mw = sum(b.load_p for b in case.buses)
    print(f"buses:        {s.buses}")
    print(f"branches:     {s.branches} ({s.lines} lines + {s.transformers} transformers)")
    print(f"generators:   {s.generators}")
    print(f"condensers:   {s.condensers}")
    print(f"load buses:   {s.loads}")
    print(f"total load:   {total_mw:.1f} MW")
    print(f"substations:  {s.substations}")
    return 0


def _cmd_screen(args: argparse.Namespace) -> int:
    case = load_case(args.case)
    run = run_screening(case, args.k, budget=args.budget, prune=not args.no_prune)
    text = screening_report_csv(run)
    if args.out:
        Path(args.out).write_text(text)
        n_crit = sum(len(pl.critical) for pl in run.levels)
        print(f"{run.evaluations} evaluations, {run.pruned} pruned, "
              f"{n_crit} critical -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    case = load_case(args.case)
    schedule = load_schedule(args.scenario)
    models = default_machine_models(case)
    options = ScenarioOptions(dt=args.dt, t_end=args.t_end)
    trace, verdict = run_scenario(case, schedule, models, options)
    print(f"overall: {verdict.overall}")
    if verdict.time_of_first_violation is not None:
        print(f"first violation at t={verdict.time_of_first_violation:.2f} s")
    for key in sorted(verdict.per_island):
        print(f"  island {key}: {verdict.per_island[key]}")
    for ev in trace.events:
        line = f"  t={ev.time:g}s {ev.action}: {ev.status}"
        if ev.cause:
            line += f" ({ev.cause})"
        print(line)
    if args.trace:
        Path(args.trace).write_text(trace_to_csv(trace, decimate=args.decimate))
        print(f"trace -> {args.trace}")
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    case = load_case(args.case)
    config = PipelineConfig(
        k_max=args.k,
        budget=args.budget,
        seed=args.seed,
        policy=DynPolicy(noncritical_fraction=args.sample_fraction),
    )
    report = run_pipeline(case, config, run_dir=args.out)
    print(f"screened {report.matrix.total} combinations, "
          f"{report.matrix.n_critical_steady} critical")
    print(f"dynamically verified {len(report.verified)}, "
          f"{len(report.reevaluations)} disagreements")
    print(f"reports -> {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    name = "matrix.csv" if args.format == "csv" else "summary.txt"
    path = run_dir / name
    if not path.is_file():
        print(f"no {name} under {run_dir}", file=sys.stderr)
        return 1
    sys.stdout.write(path.read_text())
    return 0


_COMMANDS = {
    "load": _cmd_load,
    "screen": _cmd_screen,
    "simulate": _cmd_simulate,
    "pipeline": _cmd_pipeline,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"gridimpact: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
