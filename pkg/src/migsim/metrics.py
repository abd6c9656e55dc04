"""Run records and the aggregate metrics reported for a simulation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Optional

from .scenario import PowerModel


@dataclass(frozen=True)
class RunRecord:
    """One attempt of a job on one instance."""

    job_id: str
    profile: str
    compute_slices: int
    start_slot: int
    launch_s: float
    active_from_s: float
    end_s: float
    iterations: int
    outcome: str  # complete, oom or preempt
    mem_byte_seconds: float


@dataclass(frozen=True)
class JobRecord:
    id: str
    arrival_s: float
    start_s: float
    end_s: float
    restarts: int
    wasted_iterations: int
    final_profile: Optional[str]

    @property
    def turnaround_s(self) -> float:
        return self.end_s - self.arrival_s

    def to_json(self) -> dict:
        d = asdict(self)
        d["turnaround_s"] = self.turnaround_s
        return d


@dataclass(frozen=True)
class Metrics:
    completed_jobs: int
    makespan_s: float
    throughput_jobs_per_s: float
    energy_j: float
    mean_memory_utilization: float
    mean_turnaround_s: float
    reconfigurations: int
    wasted_iterations: int

    def to_json(self) -> dict:
        return asdict(self)


def compute_metrics(
    jobs: list[JobRecord],
    runs: list[RunRecord],
    reconfigurations: int,
    power: PowerModel,
    total_memory_bytes: int,
    reconfig_latency_s: float,
) -> Metrics:
    """Aggregate a finished simulation.

    Energy integrates idle power over the makespan, per-slice power over every
    run's active window and reconfiguration power over each reconfiguration.
    """
    if not jobs:
        return Metrics(0, 0.0, 0.0, 0.0, 0.0, 0.0, reconfigurations, 0)
    t0 = min(j.arrival_s for j in jobs)
    makespan = max(j.end_s for j in jobs) - t0
    energy = power.idle_watts * makespan
    energy += sum(
        power.watts_per_compute_slice * r.compute_slices * max(r.end_s - r.active_from_s, 0.0)
        for r in runs
    )
    energy += reconfigurations * reconfig_latency_s * power.reconfig_watts
    if makespan > 0:
        throughput = len(jobs) / makespan
        util = sum(r.mem_byte_seconds for r in runs) / (total_memory_bytes * makespan)
    else:
        throughput = util = 0.0
    turnaround = sum(j.turnaround_s for j in jobs) / len(jobs)
    return Metrics(
        completed_jobs=len(jobs),
        makespan_s=makespan,
        throughput_jobs_per_s=throughput,
        energy_j=energy,
        mean_memory_utilization=util,
        mean_turnaround_s=turnaround,
        reconfigurations=reconfigurations,
        wasted_iterations=sum(j.wasted_iterations for j in jobs),
    )


def _ratio(a: float, b: float) -> Optional[float]:
    return a / b if b else None


def normalized(m: Metrics, base: Metrics) -> dict:
    """Policy value divided by baseline value, per metric."""
    return {
        "throughput": _ratio(m.throughput_jobs_per_s, base.throughput_jobs_per_s),
        "energy": _ratio(m.energy_j, base.energy_j),
        "energy_saving": _ratio(base.energy_j, m.energy_j),
        "memory_utilization": _ratio(m.mean_memory_utilization, base.mean_memory_utilization),
        "turnaround": _ratio(m.mean_turnaround_s, base.mean_turnaround_s),
    }


CSV_FIELDS = ("run",) + tuple(Metrics.__dataclass_fields__)


def metrics_csv(rows: dict[str, Metrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for name, m in rows.items():
        d = m.to_json()
        w.writerow([name] + [d[k] for k in CSV_FIELDS[1:]])
    return buf.getvalue()
