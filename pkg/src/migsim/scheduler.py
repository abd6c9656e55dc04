"""Scheduling policies: sequential baseline, Scheme A and Scheme B.

Scheme A sorts jobs into memory-size groups and runs one group at a time on a
homogeneous layout, reconfiguring only between groups. Scheme B serves jobs
strictly in arrival order, reusing idle instances, allocating new ones at the
fcr-maximising placement, or merging/splitting idle instances, and otherwise
waits for a running job to finish.

The policy objects below are driven by the simulation kernel: ``submit``
enqueues, ``dispatch`` returns launches for the current instant, ``finished``
hands an instance back.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional, Union

from .catalog import PlacementCatalog, Profile, tight_fit_profile, wave_count
from .errors import NoFit, UnsatisfiableJob
from .fsm import (
    Instance,
    PartitionManager,
    PartitionState,
    ReachabilityTable,
    homogeneous_configuration,
)
from .predictor import MemoryForecast
from .scenario import JobSpec

log = logging.getLogger(__name__)


@dataclass
class QueueEntry:
    job: JobSpec
    current_mem_requirement: int
    restarts: int = 0
    group: Optional[int] = None  # memory bytes of the Scheme A size group

    @classmethod
    def for_job(cls, job: JobSpec) -> "QueueEntry":
        return cls(job, job.declared_mem_bytes)


def fit(entry: QueueEntry, catalog: PlacementCatalog, total_sms: Optional[int]) -> Profile:
    try:
        return tight_fit_profile(
            catalog, entry.current_mem_requirement, entry.job.warp_demand, total_sms
        )
    except NoFit as exc:
        raise UnsatisfiableJob(f"job {entry.job.id}: {exc}") from exc


def handle_oom(
    entry: QueueEntry, failed_profile: Profile, catalog: PlacementCatalog
) -> QueueEntry:
    """Requeue on the next memory size up the profile ladder.

    The stored requirement excludes the CUDA context, since tight-fit adds it.
    """
    larger = [m for m in catalog.memory_ladder() if m > failed_profile.memory_bytes]
    if not larger:
        raise UnsatisfiableJob(
            f"job {entry.job.id} ran out of memory on the full GPU ({failed_profile.name})"
        )
    need = larger[0] - catalog.reserved_context_bytes
    return replace(
        entry,
        current_mem_requirement=max(entry.current_mem_requirement + 1, need),
        restarts=entry.restarts + 1,
    )


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Preempt:
    new_requirement: int  # bytes the next instance must hold, context included


Decision = Union[Continue, Preempt]


def early_restart_check(
    entry: QueueEntry,
    forecast: MemoryForecast,
    slice_profile: Profile,
    context_bytes: int,
    catalog: Optional[PlacementCatalog] = None,
) -> Decision:
    """Preempt when a converged forecast says the slice will overflow.

    ``forecast`` must exclude the context (it is added here). With a catalog,
    a preemption that no larger profile could absorb is suppressed.
    """
    if not forecast.converged:
        return Continue()
    need = forecast.peak_prediction_bytes + context_bytes
    if need <= slice_profile.memory_bytes:
        return Continue()
    if catalog is not None and slice_profile.memory_bytes >= catalog.full_profile.memory_bytes:
        return Continue()
    return Preempt(math.ceil(need))


def apply_preempt(entry: QueueEntry, decision: Preempt, catalog: PlacementCatalog) -> QueueEntry:
    need = min(
        decision.new_requirement - catalog.reserved_context_bytes,
        catalog.full_profile.memory_bytes - catalog.reserved_context_bytes,
    )
    return replace(
        entry,
        current_mem_requirement=max(entry.current_mem_requirement, need),
        restarts=entry.restarts + 1,
    )


# -- baseline ---------------------------------------------------------------


@dataclass(frozen=True)
class PlannedRun:
    entry: QueueEntry
    profile: Profile
    start_s: float
    end_s: float


def baseline_schedule(queue: list[QueueEntry], catalog: PlacementCatalog) -> list[PlannedRun]:
    """Queue order, one job at a time on the whole GPU, nominal durations."""
    full = catalog.full_profile
    plan = []
    t = 0.0
    for entry in queue:
        if entry.current_mem_requirement + catalog.reserved_context_bytes > full.memory_bytes:
            raise UnsatisfiableJob(f"job {entry.job.id} exceeds {full.name}")
        t = max(t, entry.job.arrival_s)
        dur = entry.job.startup_overhead_s + entry.job.iterations * entry.job.iter_duration_s
        plan.append(PlannedRun(entry, full, t, t + dur))
        t += dur
    return plan


# -- Scheme A -----------------------------------------------------------------


@dataclass(frozen=True)
class GroupRound:
    memory_bytes: int
    configuration: PartitionState
    lanes: tuple[tuple[Instance, tuple[QueueEntry, ...]], ...]


def schedule_by_group(
    queue: list[QueueEntry], table: ReachabilityTable, total_sms: Optional[int] = None
) -> list[GroupRound]:
    """Static plan: ascending size groups, jobs dealt round-robin to slices."""
    catalog = table.catalog
    groups: dict[int, list[QueueEntry]] = {}
    for entry in queue:
        mem = fit(entry, catalog, total_sms).memory_bytes
        groups.setdefault(mem, []).append(entry)
    plan = []
    for mem in sorted(groups):
        config = homogeneous_configuration(table, mem)
        slices = config.instances
        lanes = [[] for _ in slices]
        for i, entry in enumerate(groups[mem]):
            lanes[i % len(slices)].append(replace(entry, group=mem))
        plan.append(
            GroupRound(mem, config, tuple((s, tuple(l)) for s, l in zip(slices, lanes)))
        )
    return plan


# -- Scheme B -----------------------------------------------------------------


@dataclass(frozen=True)
class Placement:
    instance: Instance
    how: str  # "idle", "alloc" or "merge"
    released: tuple[int, ...] = ()


def acceptable_profiles(
    entry: QueueEntry, catalog: PlacementCatalog, total_sms: Optional[int]
) -> list[Profile]:
    """The tight-fit profile first, then same-memory profiles that keep the
    job's wave count (they cost nothing in runtime)."""
    tight = fit(entry, catalog, total_sms)
    out = [tight]
    w = entry.job.warp_demand
    for p in catalog.profiles:
        if p is tight or p.memory_bytes != tight.memory_bytes:
            continue
        if w > 0:
            sms = total_sms if total_sms is not None else catalog.total_sms
            target = wave_count(catalog, w, catalog.full_profile, sms)
            if wave_count(catalog, w, p, sms) != target:
                continue
        out.append(p)
    return out


def place_head(
    entry: QueueEntry, manager: PartitionManager, total_sms: Optional[int] = None
) -> Optional[Placement]:
    """One attempt to seat the queue head; None means wait."""
    catalog = manager.catalog
    profiles = acceptable_profiles(entry, catalog, total_sms)
    idle = manager.idle_instances()
    for p in profiles:
        matches = [i for i in idle if i.profile == p]
        if matches:
            return Placement(max(matches, key=lambda i: i.start_slot), "idle")
    for p in profiles:
        inst = manager.allocate(p)
        if inst is not None:
            return Placement(inst, "alloc")
    for p in profiles:
        merged = manager.merge(p)
        if merged is not None:
            return Placement(merged[0], "merge", merged[1])
    return None


def schedule_dyn_reconfig(
    queue: deque, manager: PartitionManager, total_sms: Optional[int] = None
) -> list[tuple[QueueEntry, Placement]]:
    """Seat queue heads in order until one has to wait. Mutates ``queue``."""
    out = []
    while queue:
        placement = place_head(queue[0], manager, total_sms)
        if placement is None:
            break
        entry = queue.popleft()
        manager.mark_busy(placement.instance)
        out.append((entry, placement))
    return out


# -- policies driven by the simulation kernel ------------------------------------


@dataclass
class Launch:
    entry: QueueEntry
    instance: Instance
    ready_at: float  # when the instance finishes (re)configuration


@dataclass
class Reconfig:
    t: float
    detail: str


class Policy:
    name = "policy"

    def __init__(self, table: ReachabilityTable, total_sms: Optional[int], reconfig_latency: float):
        self.table = table
        self.catalog = table.catalog
        self.total_sms = total_sms
        self.latency = reconfig_latency
        self.manager = PartitionManager(table)
        self.ready_at: dict[int, float] = {}
        self.reconfigs: list[Reconfig] = []

    def submit(self, entry: QueueEntry, now: float) -> None:
        raise NotImplementedError

    def dispatch(self, now: float) -> list[Launch]:
        raise NotImplementedError

    def finished(self, instance: Instance, now: float) -> None:
        self.manager.mark_idle(instance)

    def pending(self) -> int:
        raise NotImplementedError


class BaselinePolicy(Policy):
    name = "baseline"

    def __init__(self, table, total_sms=None, reconfig_latency=0.0):
        super().__init__(table, total_sms, reconfig_latency)
        full = self.catalog.full_profile
        # unpartitioned GPU: no reconfiguration is charged
        self.manager.configure(self.manager.state.with_instance(full, full.allowed_starts[0]))
        self.queue: deque[QueueEntry] = deque()

    def submit(self, entry, now):
        full = self.catalog.full_profile
        if entry.current_mem_requirement + self.catalog.reserved_context_bytes > full.memory_bytes:
            raise UnsatisfiableJob(f"job {entry.job.id} exceeds {full.name}")
        self.queue.append(entry)

    def dispatch(self, now):
        inst = self.manager.state.instances[0]
        if not self.queue or inst.start_slot in self.manager.busy:
            return []
        self.manager.mark_busy(inst)
        return [Launch(self.queue.popleft(), inst, now)]

    def pending(self):
        return len(self.queue)


class SchemeAPolicy(Policy):
    name = "scheme_a"

    def __init__(self, table, total_sms=None, reconfig_latency=0.0):
        super().__init__(table, total_sms, reconfig_latency)
        self.groups: dict[int, list[QueueEntry]] = {}
        self.lanes: list[tuple[Instance, deque]] = []

    def submit(self, entry, now):
        mem = fit(entry, self.catalog, self.total_sms).memory_bytes
        self.groups.setdefault(mem, []).append(replace(entry, group=mem))

    def _round_done(self) -> bool:
        return not self.manager.busy and all(not q for _, q in self.lanes)

    def dispatch(self, now):
        if self._round_done():
            if not self.groups:
                return []
            mem = min(self.groups)
            entries = self.groups.pop(mem)
            (rnd,) = schedule_by_group(entries, self.table, self.total_sms)
            if rnd.configuration != self.manager.state:
                self.manager.configure(rnd.configuration)
                self.reconfigs.append(Reconfig(now, f"homogeneous {rnd.configuration!r}"))
                for inst in rnd.configuration.instances:
                    self.ready_at[inst.start_slot] = now + self.latency
            self.lanes = [(inst, deque(jobs)) for inst, jobs in rnd.lanes]
        out = []
        for inst, q in self.lanes:
            if q and inst.start_slot not in self.manager.busy:
                self.manager.mark_busy(inst)
                out.append(Launch(q.popleft(), inst, max(now, self.ready_at.get(inst.start_slot, now))))
        return out

    def pending(self):
        return sum(len(v) for v in self.groups.values()) + sum(len(q) for _, q in self.lanes)


class SchemeBPolicy(Policy):
    name = "scheme_b"

    def __init__(self, table, total_sms=None, reconfig_latency=0.0):
        super().__init__(table, total_sms, reconfig_latency)
        self.queue: deque[QueueEntry] = deque()

    def submit(self, entry, now):
        fit(entry, self.catalog, self.total_sms)
        self.queue.append(entry)

    def dispatch(self, now):
        out = []
        for entry, placement in schedule_dyn_reconfig(self.queue, self.manager, self.total_sms):
            inst = placement.instance
            if placement.how != "idle":
                self.reconfigs.append(Reconfig(now, f"{placement.how} {inst!r}"))
                self.ready_at[inst.start_slot] = now + self.latency
            out.append(Launch(entry, inst, max(now, self.ready_at.get(inst.start_slot, now))))
        return out

    def pending(self):
        return len(self.queue)


POLICIES = {"baseline": BaselinePolicy, "scheme_a": SchemeAPolicy, "scheme_b": SchemeBPolicy}
