"""Deterministic discrete-event execution of a scenario under one policy.

Jobs progress through iterations at a rate set by their instance (warp
folding) and, with contention on, by how many jobs share PCIe: each job's
transfer share of an iteration is stretched by the number of concurrently
transferring jobs. Progress is tracked as a fluid quantity and the end of a
run (completion, OOM or early-restart preemption) is an event rescheduled
whenever the rates change.

Events at the same instant are ordered completion < OOM < preempt <
reconfig-done < arrival, then by job id (arrivals by queue position), so
capacity is freed before the policy dispatches.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .catalog import PlacementCatalog, slowdown
from .errors import MigsimError, ScenarioError, UnsatisfiableJob
from .fsm import Instance, ReachabilityTable, build_table
from .metrics import JobRecord, Metrics, RunRecord, compute_metrics, normalized
from .predictor import MemoryForecast, StaticOverheads, run_forecast
from .scenario import JobSpec, Scenario, SchedulingPolicy
from .scheduler import (
    POLICIES,
    Launch,
    Policy,
    Preempt,
    QueueEntry,
    apply_preempt,
    early_restart_check,
    handle_oom,
)

log = logging.getLogger(__name__)

COMPLETE, OOM, PREEMPT, READY, ARRIVAL = range(5)
KIND_NAMES = {COMPLETE: "complete", OOM: "oom", PREEMPT: "preempt", READY: "ready", ARRIVAL: "arrival"}


@lru_cache(maxsize=16)
def _table(catalog: PlacementCatalog) -> ReachabilityTable:
    return build_table(catalog)


def apply_contention(active_jobs: list[JobSpec]) -> dict[str, float]:
    """Iteration-time factor per job when PCIe is shared equally.

    Transfer time is multiplied by the number of jobs transferring at once;
    kernel time is untouched.
    """
    m = sum(1 for j in active_jobs if j.transfer_fraction > 0)
    return {
        j.id: (1.0 - j.transfer_fraction) + j.transfer_fraction * max(m, 1)
        for j in active_jobs
    }


class _JobModel:
    """Per-job caches: physical memory profile and predictor replay."""

    def __init__(self, job: JobSpec, scenario: Scenario):
        self.job = job
        self.phys = job.physical_profile()
        self.cum = np.concatenate(([0.0], np.cumsum(self.phys)))
        self._scenario = scenario
        self._forecasts: Optional[list[MemoryForecast]] = None

    def forecasts(self) -> list[MemoryForecast]:
        if self._forecasts is None:
            sc = self._scenario
            horizon = self.job.declared_iterations
            self._forecasts = run_forecast(
                self.job.trace[: self.job.iterations],
                horizon,
                sc.predictor,
                StaticOverheads(self.job.workspace_bytes, 0),
            )
        return self._forecasts

    def oom_iteration(self, capacity: int, context: int) -> Optional[int]:
        over = np.nonzero(self.phys + context > capacity)[0]
        return int(over[0]) + 1 if len(over) else None

    def preempt_iteration(self, entry, profile, context, catalog) -> Optional[tuple[int, Preempt]]:
        for fc in self.forecasts():
            d = early_restart_check(entry, fc, profile, context, catalog)
            if isinstance(d, Preempt):
                return fc.iteration, d
        return None

    def mem_integral(self, p0: float, p1: float) -> float:
        """Integral over progress [p0, p1] of the bytes held in that iteration."""
        return self._F(p1) - self._F(p0)

    def _F(self, p: float) -> float:
        k = min(int(np.floor(p)), len(self.phys))
        frac = p - k
        val = self.cum[k]
        if frac > 0 and k < len(self.phys):
            val += frac * self.phys[k]
        return float(val)


@dataclass
class _Run:
    entry: QueueEntry
    instance: Instance
    launch_t: float
    ready_t: float
    end_iteration: int
    outcome: str
    preempt: Optional[Preempt] = None
    iterating: bool = False
    progress: float = 0.0
    rate: float = 0.0
    last_t: float = 0.0
    version: int = 0
    mem_byte_seconds: float = 0.0


@dataclass
class SimReport:
    scenario: str
    policy: str
    prediction: bool
    seed: int
    jobs: list[JobRecord]
    metrics: Metrics
    runs: list[RunRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    baseline: Optional[Metrics] = None
    normalized: Optional[dict] = None

    def job(self, job_id: str) -> JobRecord:
        for j in self.jobs:
            if j.id == job_id:
                return j
        raise KeyError(job_id)

    def to_json(self, include_events: bool = False) -> dict:
        out = {
            "scenario": self.scenario,
            "policy": self.policy,
            "prediction": self.prediction,
            "seed": self.seed,
            "metrics": self.metrics.to_json(),
            "jobs": [j.to_json() for j in self.jobs],
            "runs": [asdict(r) for r in self.runs],
            "baseline": None if self.baseline is None else self.baseline.to_json(),
            "normalized": self.normalized,
        }
        if include_events:
            out["events"] = self.events
        return out


class Simulation:
    def __init__(self, scenario: Scenario, policy: SchedulingPolicy):
        self.sc = scenario
        self.catalog = scenario.catalog
        self.table = _table(scenario.catalog)
        self.policy_spec = policy
        self.prediction = policy.prediction_enabled and policy.kind != "baseline"
        latency = 0.0 if policy.kind == "baseline" else scenario.power.reconfig_latency_s
        self.policy: Policy = POLICIES[policy.kind](self.table, scenario.sms, latency)
        self.models = {j.id: _JobModel(j, scenario) for j in scenario.jobs}
        self.heap: list = []
        self.seq = itertools.count()
        self.running: dict[str, _Run] = {}
        self.runs: list[RunRecord] = []
        self.events: list[dict] = []
        self.first_start: dict[str, float] = {}
        self.completed: dict[str, float] = {}
        self.restarts: dict[str, int] = {j.id: 0 for j in scenario.jobs}
        self.wasted: dict[str, int] = {j.id: 0 for j in scenario.jobs}
        self.final_profile: dict[str, str] = {}
        self.now = 0.0

    # -- bookkeeping ----------------------------------------------------------

    def _push(self, t, kind, job_id, version=0, order=None):
        # same-instant arrivals keep queue order; other kinds tie-break on id
        key = job_id if order is None else order
        heapq.heappush(self.heap, (t, kind, key, next(self.seq), version, job_id))

    def _log(self, kind, job=None, instance=None, detail=None):
        self.events.append(
            {"t": self.now, "kind": kind, "job": job,
             "instance": None if instance is None else repr(instance), "detail": detail}
        )

    def _iter_time(self, run: _Run, m: int) -> float:
        job = run.entry.job
        fold = slowdown(self.catalog, job.warp_demand, run.instance.profile, self.sc.sms)
        f = job.transfer_fraction
        return job.iter_duration_s * ((1.0 - f) * fold + f * m)

    def _advance(self, t: float):
        for run in self.running.values():
            if run.iterating and t > run.last_t:
                p1 = run.progress + run.rate * (t - run.last_t)
                p1 = min(p1, float(run.end_iteration))
                model = self.models[run.entry.job.id]
                if run.rate > 0:
                    run.mem_byte_seconds += model.mem_integral(run.progress, p1) / run.rate
                run.progress = p1
            run.last_t = t

    def _retime(self):
        """Recompute rates of iterating runs and reschedule their end events."""
        iterating = [r for r in self.running.values() if r.iterating]
        m = 1
        if self.sc.contention:
            m = max(1, sum(1 for r in iterating if r.entry.job.transfer_fraction > 0))
        for run in sorted(iterating, key=lambda r: r.entry.job.id):
            it = self._iter_time(run, m)
            rate = float("inf") if it == 0 else 1.0 / it
            if rate == run.rate:
                continue
            run.rate = rate
            run.version += 1
            remaining = run.end_iteration - run.progress
            dt = 0.0 if rate == float("inf") else remaining / rate
            kind = {"complete": COMPLETE, "oom": OOM, "preempt": PREEMPT}[run.outcome]
            self._push(self.now + dt, kind, run.entry.job.id, run.version)

    # -- lifecycle ------------------------------------------------------------

    def _launch(self, launch: Launch):
        entry, inst = launch.entry, launch.instance
        job = entry.job
        model = self.models[job.id]
        ctx = self.catalog.reserved_context_bytes
        end_it, outcome, pre = job.iterations, "complete", None
        oom_it = model.oom_iteration(inst.profile.memory_bytes, ctx)
        if oom_it is not None:
            end_it, outcome = oom_it, "oom"
        if self.prediction and job.is_dynamic:
            hit = model.preempt_iteration(entry, inst.profile, ctx, self.catalog)
            if hit is not None and hit[0] < end_it:
                end_it, outcome, pre = hit[0], "preempt", hit[1]
        ready = launch.ready_at + job.startup_overhead_s
        run = _Run(entry, inst, self.now, launch.ready_at, end_it, outcome, pre, last_t=self.now)
        self.running[job.id] = run
        self.first_start.setdefault(job.id, self.now)
        self._log("start", job.id, inst, {"profile": inst.profile.name, "ready_at": ready})
        self._push(ready, READY, job.id, run.version)

    def _end(self, run: _Run):
        job = run.entry.job
        del self.running[job.id]
        self.policy.finished(run.instance, self.now)
        self.runs.append(
            RunRecord(
                job_id=job.id,
                profile=run.instance.profile.name,
                compute_slices=run.instance.profile.compute_slices,
                start_slot=run.instance.start_slot,
                launch_s=run.launch_t,
                active_from_s=run.ready_t,
                end_s=self.now,
                iterations=run.end_iteration,
                outcome=run.outcome,
                mem_byte_seconds=run.mem_byte_seconds,
            )
        )
        detail = {"iteration": run.end_iteration, "profile": run.instance.profile.name}
        try:
            if run.outcome == "complete":
                self.completed[job.id] = self.now
                self.final_profile[job.id] = run.instance.profile.name
                self._log("complete", job.id, run.instance, detail)
                return
            self.wasted[job.id] += run.end_iteration
            self.restarts[job.id] += 1
            if run.outcome == "oom":
                self._log("oom", job.id, run.instance, detail)
                nxt = handle_oom(run.entry, run.instance.profile, self.catalog)
            else:
                detail["new_requirement"] = run.preempt.new_requirement
                self._log("preempt", job.id, run.instance, detail)
                nxt = apply_preempt(run.entry, run.preempt, self.catalog)
            self.policy.submit(nxt, self.now)
        except UnsatisfiableJob as exc:
            raise ScenarioError(str(exc)) from exc

    def _process(self, kind, job_id, version):
        if kind == ARRIVAL:
            job = self.models[job_id].job
            self._log("arrival", job_id)
            try:
                self.policy.submit(QueueEntry.for_job(job), self.now)
            except UnsatisfiableJob as exc:
                raise ScenarioError(str(exc)) from exc
            return
        run = self.running.get(job_id)
        if run is None or version != run.version:
            return
        if kind == READY:
            run.iterating = True
            run.last_t = self.now
            self._log("ready", job_id, run.instance)
            return
        self._end(run)

    def run(self) -> SimReport:
        for pos, job in enumerate(self.sc.jobs):
            self._push(job.arrival_s, ARRIVAL, job.id, order=pos)
        n_reconf = 0
        while self.heap:
            t = self.heap[0][0]
            self._advance(t)
            self.now = t
            while self.heap and self.heap[0][0] == t:
                _, kind, _, _, version, job_id = heapq.heappop(self.heap)
                self._process(kind, job_id, version)
            for launch in self.policy.dispatch(self.now):
                self._launch(launch)
            for rc in self.policy.reconfigs[n_reconf:]:
                self._log("reconfig", detail=rc.detail)
            n_reconf = len(self.policy.reconfigs)
            self._retime()
        if self.policy.pending() or self.running:
            raise ScenarioError("simulation stalled with jobs still queued")
        return self._report()

    def _report(self) -> SimReport:
        jobs = [
            JobRecord(
                id=j.id,
                arrival_s=j.arrival_s,
                start_s=self.first_start.get(j.id, 0.0),
                end_s=self.completed.get(j.id, 0.0),
                restarts=self.restarts[j.id],
                wasted_iterations=self.wasted[j.id],
                final_profile=self.final_profile.get(j.id),
            )
            for j in self.sc.jobs
        ]
        metrics = compute_metrics(
            jobs, self.runs, len(self.policy.reconfigs), self.sc.power,
            self.catalog.total_memory_bytes,
            0.0 if self.policy_spec.kind == "baseline" else self.sc.power.reconfig_latency_s,
        )
        return SimReport(
            scenario=self.sc.name,
            policy=self.policy_spec.kind,
            prediction=self.prediction,
            seed=self.sc.seed,
            jobs=jobs,
            metrics=metrics,
            runs=self.runs,
            events=self.events,
        )


def run_scenario(scenario: Scenario, policy: Optional[SchedulingPolicy] = None) -> SimReport:
    """Execute one policy. The scenario seed has already fixed every random
    input (traces, shuffles), so the run itself is deterministic."""
    policy = policy or scenario.policy
    try:
        return Simulation(scenario, policy).run()
    except MigsimError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def simulate(scenario: Scenario, policy: Optional[SchedulingPolicy] = None) -> SimReport:
    """Run the policy and, when the scenario asks for it, the paired baseline."""
    report = run_scenario(scenario, policy)
    if scenario.paired_baseline and report.policy != "baseline":
        base = run_scenario(scenario, SchedulingPolicy("baseline"))
        report.baseline = base.metrics
        report.normalized = normalized(report.metrics, base.metrics)
    return report


def forecast_error(job: JobSpec, scenario: Scenario, fraction: float = 0.1) -> Optional[float]:
    """Relative error of the peak forecast made after ``fraction`` of the
    job's iterations, against the realized peak (context included on both
    sides). None for jobs without a trace."""
    if not job.is_dynamic:
        return None
    model = _JobModel(job, scenario)
    at = max(1, round(fraction * job.iterations))
    ctx = scenario.catalog.reserved_context_bytes
    predicted = model.forecasts()[at - 1].peak_prediction_bytes + ctx
    realized = float(model.phys.max()) + ctx
    return abs(predicted - realized) / realized
