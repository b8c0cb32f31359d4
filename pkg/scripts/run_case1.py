#!/usr/bin/env python3
"""Five-substation sequential switching scenario on the 118-bus system.

Removes, one branch every 5 seconds, all fourteen in-service branches
incident to substations 13, 14, 17, 21 and 34. The steady-state screen
calls this combination non-critical (the post-outage power flow
converges, albeit with an undervoltage pocket around bus 33), but the
time-domain run loses rotor-angle stability shortly after the 13th
switching action, so the last action is never executed.

Run from the repository root:

    python scripts/run_case1.py [--trace out.csv]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from gridimpact.dynamics import (
    ScenarioOptions,
    default_machine_models,
    load_schedule,
    run_scenario,
    trace_to_csv,
)
from gridimpact.model import load_case

ROOT = Path(__file__).resolve().parent.parent
CASE = ROOT / "src" / "gridimpact" / "data" / "ieee118.grid"
SCHEDULE = ROOT / "scripts" / "case1_schedule.txt"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--case", default=str(CASE))
    parser.add_argument("--schedule", default=str(SCHEDULE))
    parser.add_argument("--dt", type=float, default=0.01)
    parser.add_argument("--trace", default=None, help="write the trace CSV here")
    args = parser.parse_args()

    case = load_case(args.case)
    schedule = load_schedule(args.schedule)
    models = default_machine_models(case)

    start = time.perf_counter()
    trace, verdict = run_scenario(
        case, schedule, models, ScenarioOptions(dt=args.dt)
    )
    wall = time.perf_counter() - start

    print(f"simulated {trace.times[-1]:.2f} s in {wall:.1f} s wall time")
    print(f"overall verdict: {verdict.overall}")
    if verdict.time_of_first_violation is not None:
        print(f"first violation: t = {verdict.time_of_first_violation:.2f} s")
    for key, growing in sorted(verdict.growing_oscillation.items()):
        if growing:
            print(f"growing oscillation flagged in island {key}")
    print("switching log:")
    for ev in trace.events:
        line = f"  t={ev.time:5.1f}s  {ev.action}: {ev.status}"
        if ev.cause:
            line += f" ({ev.cause})"
        if ev.island_count is not None:
            line += f" [islands: {ev.island_count}]"
        print(line)

    # largest angle spread inside the main island at a few checkpoints
    main = trace.machine_island == 1
    ang = np.where(main, trace.angles_deg, np.nan)
    spread = np.nanmax(ang, axis=1) - np.nanmin(ang, axis=1)
    print("main-island rotor angle spread:")
    for t_q in (0.0, 30.0, 55.0, 59.0, trace.times[-1]):
        i = min(np.searchsorted(trace.times, t_q), len(trace.times) - 1)
        print(f"  t={trace.times[i]:6.2f} s  spread={spread[i]:8.2f} deg")

    if args.trace:
        Path(args.trace).write_text(trace_to_csv(trace, decimate=10))
        print(f"trace -> {args.trace}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
