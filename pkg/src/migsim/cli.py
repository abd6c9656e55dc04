"""Command-line entry point: ``migsim simulate|reachability|predict|gen-trace``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

from .catalog import DEFAULT_CONTEXT_BYTES, GiB, resolve_catalog
from .errors import MigsimError, ScenarioError
from .fsm import build_table
from .metrics import metrics_csv
from .predictor import PredictorConfig, StaticOverheads, physical_bytes, run_forecast
from .scenario import SchedulingPolicy, bundled_scenario_names, load_scenario
from .simkernel import simulate
from .traces import gen_trace, read_trace_csv, write_trace_csv

log = logging.getLogger("migsim")


def _write_json(obj, out: Optional[str]):
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _abs_if_file(ref: Optional[str]) -> Optional[str]:
    if ref is not None and Path(ref).is_file():
        return str(Path(ref).resolve())
    return ref


def trace_path(ref: str) -> Path:
    """A trace CSV on disk, or a bundled trace by name (``qwen2``)."""
    p = Path(ref)
    if p.is_file():
        return p
    stem = p.name[:-4] if p.name.endswith(".csv") else p.name
    bundled = resources.files("migsim").joinpath("data").joinpath("traces").joinpath(f"{stem}.csv")
    if bundled.is_file():
        return Path(str(bundled))
    return p  # let the reader report it


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario, seed=args.seed, catalog=_abs_if_file(args.catalog))
    policy = sc.policy
    if args.policy is not None:
        policy = SchedulingPolicy.parse(args.policy, policy.prediction_enabled)
    if args.predict is not None:
        policy = SchedulingPolicy(policy.kind, args.predict)
    t0 = time.perf_counter()
    report = simulate(sc, policy)
    log.info("simulated %s in %.3fs", sc.name, time.perf_counter() - t0)

    out = args.out or f"{sc.name}.report.json"
    _write_json(report.to_json(), out)
    if args.csv:
        rows = {report.policy: report.metrics}
        if report.baseline is not None:
            rows["baseline"] = report.baseline
        Path(args.csv).write_text(metrics_csv(rows))
    if args.events:
        with open(args.events, "w") as fh:
            for ev in report.events:
                fh.write(json.dumps(ev, allow_nan=False) + "\n")

    m = report.metrics
    summary = sys.stderr if out == "-" else sys.stdout
    label = report.policy + (" +prediction" if report.prediction else "")
    print(f"{sc.name}: {label}, {m.completed_jobs} jobs", file=summary)
    print(f"  makespan {m.makespan_s:.3f} s, throughput {m.throughput_jobs_per_s:.4f} jobs/s", file=summary)
    print(f"  energy {m.energy_j:.1f} J, memory utilization {m.mean_memory_utilization:.3f}", file=summary)
    print(f"  reconfigurations {m.reconfigurations}, wasted iterations {m.wasted_iterations}", file=summary)
    parts = [f"{k} {v:.3f}" for k, v in (report.normalized or {}).items() if v is not None]
    if parts:
        print("  vs baseline: " + ", ".join(parts), file=summary)
    return 0


def cmd_reachability(args) -> int:
    catalog = resolve_catalog(args.catalog)
    table = build_table(catalog)
    _write_json(table.to_json(), args.out)
    log.info("%d states, %d finals, %d edges", len(table.states), len(table.finals), table.edge_count)
    return 0


def cmd_predict(args) -> int:
    samples = read_trace_csv(trace_path(args.trace))
    if not samples:
        raise MigsimError(f"{args.trace}: empty trace")
    max_iter = args.max_iter if args.max_iter is not None else len(samples)
    cfg = PredictorConfig(args.z, args.epsilon, args.k, args.n_min, max_iter)
    ctx = args.context_bytes
    overheads = StaticOverheads(args.workspace_bytes, ctx)
    forecasts = run_forecast(samples, max_iter, cfg, overheads)
    final = forecasts[-1]
    converged_at = next((f.iteration for f in forecasts if f.converged), None)
    out = {
        "trace": str(args.trace),
        "iterations": len(samples),
        "converged_at": converged_at,
        "final": final.to_json(),
        "peak_prediction_bytes": final.peak_prediction_bytes,
        "realized_peak_bytes": max(physical_bytes(s, args.workspace_bytes) for s in samples) + ctx,
        "per_iteration": [
            {"iteration": f.iteration, "peak_prediction_bytes": f.peak_prediction_bytes,
             "converged": f.converged}
            for f in forecasts
        ],
    }
    if args.capacity_gb is not None:
        cap = args.capacity_gb * GiB
        out["capacity_bytes"] = cap
        out["predicted_crossing_at"] = next(
            (f.iteration for f in forecasts if f.converged and f.peak_prediction_bytes > cap), None
        )
        out["oom_at"] = next(
            (s.iteration for s in samples if physical_bytes(s, args.workspace_bytes) + ctx > cap), None
        )
    _write_json(out, args.out)
    return 0


def cmd_gen_trace(args) -> int:
    reuse = None
    if args.inv_a is not None or args.inv_b is not None:
        reuse = (args.inv_a or 0.0, 1.0 if args.inv_b is None else args.inv_b)
    samples = gen_trace(
        args.a_gb * GiB, args.b_gb * GiB, args.sigma_gb * GiB, reuse, args.n, args.seed
    )
    write_trace_csv(samples, args.out if args.out != "-" else sys.stdout)
    return 0


def cmd_scenarios(args) -> int:
    for name in bundled_scenario_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="migsim", description="MIG partition scheduling simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write its report")
    s.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    s.add_argument("--policy", choices=["baseline", "a", "b"])
    s.add_argument("--predict", action=argparse.BooleanOptionalAction, default=None,
                   help="toggle early restart from memory forecasts")
    s.add_argument("--seed", type=int)
    s.add_argument("--catalog", help="placement catalog path or bundled name")
    s.add_argument("-o", "--out", help="report JSON path ('-' for stdout)")
    s.add_argument("--csv", metavar="PATH", help="also write the aggregate table as CSV")
    s.add_argument("--events", metavar="PATH", help="write the event log as JSON Lines")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reachability", help="dump states, finals, fcr and alloc edges")
    r.add_argument("--catalog", default="a100-40gb")
    r.add_argument("-o", "--out")
    r.set_defaults(func=cmd_reachability)

    f = sub.add_parser("predict", help="stream a trace CSV through the peak predictor")
    f.add_argument("trace", help="trace CSV path or bundled trace name")
    f.add_argument("--max-iter", type=int)
    f.add_argument("--z", type=float, default=PredictorConfig.z)
    f.add_argument("--epsilon", type=float, default=PredictorConfig.epsilon)
    f.add_argument("--k", type=int, default=PredictorConfig.k)
    f.add_argument("--n-min", type=int, default=PredictorConfig.n_min)
    f.add_argument("--workspace-bytes", type=int, default=0)
    f.add_argument("--context-bytes", type=int, default=DEFAULT_CONTEXT_BYTES)
    f.add_argument("--capacity-gb", type=float, help="report when the forecast crosses this size")
    f.add_argument("-o", "--out")
    f.set_defaults(func=cmd_predict)

    g = sub.add_parser("gen-trace", help="write a synthetic linear trace CSV")
    g.add_argument("--a-gb", type=float, required=True, help="growth per iteration")
    g.add_argument("--b-gb", type=float, required=True, help="intercept")
    g.add_argument("--sigma-gb", type=float, default=0.0)
    g.add_argument("--inv-a", type=float)
    g.add_argument("--inv-b", type=float)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", default="-")
    g.set_defaults(func=cmd_gen_trace)

    ls = sub.add_parser("scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_scenarios)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("MIGSIM_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"migsim: scenario error: {exc}", file=sys.stderr)
        return 2
    except (MigsimError, ValueError, OSError) as exc:
        print(f"migsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
