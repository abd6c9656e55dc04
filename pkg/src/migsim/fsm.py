"""Partition state machine over a placement catalog.

States are sets of placed instances; the alphabet is ``Alloc(profile, start)``
and ``Free(start)``. Every valid state is reachable from the empty GPU by
allocations only, and allocation strictly grows the instance count, so the
allocation graph is a DAG. Future-configuration reachability (fcr) of a state
is the number of distinct maximal states reachable from it through that DAG.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

from .catalog import PlacementCatalog, Profile
from .errors import CapacityError, IllegalTransition

DEFAULT_STATE_CAP = 10**6


@dataclass(frozen=True)
class Instance:
    start_slot: int
    profile: Profile

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.profile.memory_slices

    def __repr__(self):
        return f"{self.profile.name}@{self.start_slot}"


@dataclass(frozen=True)
class Alloc:
    profile: Profile
    start: int


@dataclass(frozen=True)
class Free:
    start: int


Action = Union[Alloc, Free]


@dataclass(frozen=True, eq=False)
class PartitionState:
    catalog: PlacementCatalog = field(repr=False)
    instances: tuple[Instance, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "instances", tuple(sorted(self.instances, key=lambda i: i.start_slot))
        )

    @property
    def canonical_key(self) -> tuple[tuple[int, str], ...]:
        return tuple((i.start_slot, i.profile.name) for i in self.instances)

    def __eq__(self, other):
        if not isinstance(other, PartitionState):
            return NotImplemented
        return self.canonical_key == other.canonical_key

    def __hash__(self):
        return hash(self.canonical_key)

    def __len__(self):
        return len(self.instances)

    def __repr__(self):
        return "(" + ", ".join(map(repr, self.instances)) + ")"

    @property
    def used_compute(self) -> int:
        return sum(i.profile.compute_slices for i in self.instances)

    def occupied_slots(self) -> set[int]:
        out: set[int] = set()
        for inst in self.instances:
            out.update(range(inst.start_slot, inst.end_slot))
        return out

    def instance_at(self, start: int) -> Optional[Instance]:
        for inst in self.instances:
            if inst.start_slot == start:
                return inst
        return None

    def check_alloc(self, profile: Profile, start: int) -> Optional[str]:
        """Name of the violated rule, or None when the placement is legal."""
        if start not in profile.allowed_starts:
            return "start-not-allowed"
        occupied = self.occupied_slots()
        if any(s in occupied for s in profile.slots(start)):
            return "memory-overlap"
        if self.used_compute + profile.compute_slices > self.catalog.total_compute_slices:
            return "compute-exceeded"
        return None

    def placements(self, profile: Profile) -> list[int]:
        return [s for s in profile.allowed_starts if self.check_alloc(profile, s) is None]

    def with_instance(self, profile: Profile, start: int) -> "PartitionState":
        return PartitionState(self.catalog, self.instances + (Instance(start, profile),))

    def without(self, starts: Iterable[int]) -> "PartitionState":
        drop = set(starts)
        return PartitionState(
            self.catalog, tuple(i for i in self.instances if i.start_slot not in drop)
        )

    def to_json(self) -> list[dict]:
        return [{"profile": i.profile.name, "start": i.start_slot} for i in self.instances]


def empty_state(catalog: PlacementCatalog) -> PartitionState:
    return PartitionState(catalog)


def transition(state: PartitionState, action: Action) -> PartitionState:
    if isinstance(action, Alloc):
        rule = state.check_alloc(action.profile, action.start)
        if rule is not None:
            raise IllegalTransition(
                rule, f"alloc {action.profile.name}@{action.start} on {state!r}"
            )
        return state.with_instance(action.profile, action.start)
    if isinstance(action, Free):
        if state.instance_at(action.start) is None:
            raise IllegalTransition("no-instance", f"free @{action.start} on {state!r}")
        return state.without([action.start])
    raise TypeError(f"unknown action {action!r}")


def free_partition(state: PartitionState, start: int) -> PartitionState:
    return transition(state, Free(start))


@dataclass(frozen=True)
class ReachabilityTable:
    catalog: PlacementCatalog
    states: tuple[PartitionState, ...]
    index: dict = field(repr=False)
    # per state: list of (profile, start, successor index)
    alloc_edges: tuple[tuple[tuple[Profile, int, int], ...], ...] = field(repr=False)
    finals: frozenset[int] = frozenset()
    fcr: Optional[tuple[int, ...]] = None

    def index_of(self, state: PartitionState) -> int:
        return self.index[state.canonical_key]

    def fcr_of(self, state: PartitionState) -> int:
        if self.fcr is None:
            raise RuntimeError("reachability not precomputed")
        return self.fcr[self.index_of(state)]

    @property
    def edge_count(self) -> int:
        return sum(len(e) for e in self.alloc_edges)

    def to_json(self) -> dict:
        return {
            "gpu_name": self.catalog.gpu_name,
            "state_count": len(self.states),
            "final_count": len(self.finals),
            "states": [
                {
                    "index": i,
                    "instances": s.to_json(),
                    "final": i in self.finals,
                    "fcr": None if self.fcr is None else self.fcr[i],
                }
                for i, s in enumerate(self.states)
            ],
            "finals": sorted(self.finals),
            "edges": [
                {"from": i, "profile": p.name, "start": start, "to": j}
                for i, edges in enumerate(self.alloc_edges)
                for p, start, j in edges
            ],
        }


def enumerate_states(
    catalog: PlacementCatalog, max_states: int = DEFAULT_STATE_CAP
) -> ReachabilityTable:
    """Breadth-first enumeration of every valid state and alloc edge."""
    s0 = empty_state(catalog)
    states = [s0]
    index = {s0.canonical_key: 0}
    edges: list[list[tuple[Profile, int, int]]] = []
    todo = deque([0])
    while todo:
        i = todo.popleft()
        s = states[i]
        out = []
        for p in catalog.profiles:
            for start in s.placements(p):
                t = s.with_instance(p, start)
                j = index.get(t.canonical_key)
                if j is None:
                    if len(states) >= max_states:
                        raise CapacityError(
                            f"{catalog.gpu_name}: more than {max_states} partition states"
                        )
                    j = len(states)
                    index[t.canonical_key] = j
                    states.append(t)
                    todo.append(j)
                out.append((p, start, j))
        while len(edges) <= i:
            edges.append([])
        edges[i] = out
    finals = frozenset(i for i, e in enumerate(edges) if not e)
    return ReachabilityTable(
        catalog=catalog,
        states=tuple(states),
        index=index,
        alloc_edges=tuple(tuple(e) for e in edges),
        finals=finals,
    )


def precompute_reachability(table: ReachabilityTable) -> ReachabilityTable:
    """Fill fcr by OR-ing reachable-final bitsets in reverse topological order."""
    final_bit = {f: k for k, f in enumerate(sorted(table.finals))}
    n = len(table.states)
    reach = [0] * n
    # alloc edges add one instance, so deeper states come first
    for i in sorted(range(n), key=lambda i: -len(table.states[i])):
        if i in final_bit:
            reach[i] = 1 << final_bit[i]
            continue
        bits = 0
        for _, _, j in table.alloc_edges[i]:
            bits |= reach[j]
        reach[i] = bits
    return replace(table, fcr=tuple(b.bit_count() for b in reach))


def build_table(catalog: PlacementCatalog, max_states: int = DEFAULT_STATE_CAP) -> ReachabilityTable:
    return precompute_reachability(enumerate_states(catalog, max_states))


def allocate_partition(
    state: PartitionState, profile: Profile, table: ReachabilityTable
) -> Optional[PartitionState]:
    """Place ``profile`` where the successor keeps the most finals reachable.

    Returns None (FAIL) when there is no legal placement. Equal fcr goes to
    the highest start slot.
    """
    best = None
    best_key = None
    for start in state.placements(profile):
        succ = state.with_instance(profile, start)
        key = (table.fcr_of(succ), start)
        if best_key is None or key > best_key:
            best, best_key = succ, key
    return best


@dataclass(frozen=True)
class MergeCandidate:
    release: tuple[int, ...]
    start: int
    fcr: int
    result: PartitionState


def merge_candidates(
    state: PartitionState,
    target: Profile,
    table: ReachabilityTable,
    idle: Iterable[int],
) -> list[MergeCandidate]:
    """Ways to release idle instances so that ``target`` becomes placeable.

    Each candidate releases a minimal set: every idle instance overlapping the
    placement, plus the fewest extra idle instances needed to free compute.
    Candidates that need no release at all are left to ``allocate_partition``.
    """
    idle = set(idle)
    found: dict[tuple, MergeCandidate] = {}
    total_compute = state.catalog.total_compute_slices
    for start in target.allowed_starts:
        span = set(target.slots(start))
        overlapping = [i for i in state.instances if span & set(range(i.start_slot, i.end_slot))]
        if any(i.start_slot not in idle for i in overlapping):
            continue
        base = state.without(i.start_slot for i in overlapping)
        spare = [i for i in base.instances if i.start_slot in idle]
        deficit = base.used_compute + target.compute_slices - total_compute
        extra_sets: list[tuple[Instance, ...]] = []
        if deficit <= 0:
            extra_sets = [()]
        else:
            for r in range(1, len(spare) + 1):
                extra_sets = [
                    c
                    for c in itertools.combinations(spare, r)
                    if sum(i.profile.compute_slices for i in c) >= deficit
                ]
                if extra_sets:
                    break
        for extra in extra_sets:
            release = tuple(sorted(i.start_slot for i in overlapping + list(extra)))
            if not release:
                continue
            after = base.without(i.start_slot for i in extra)
            if after.check_alloc(target, start) is not None:
                continue
            result = after.with_instance(target, start)
            cand = MergeCandidate(release, start, table.fcr_of(result), result)
            found[(release, start)] = cand
    return sorted(found.values(), key=lambda c: (-c.fcr, len(c.release), -c.start, c.release))


class PartitionManager:
    """Owns the live GPU layout and which instances are running a job."""

    def __init__(self, table: ReachabilityTable):
        self.table = table
        self.catalog = table.catalog
        self.state = empty_state(self.catalog)
        self.busy: set[int] = set()

    def idle_instances(self) -> list[Instance]:
        return [i for i in self.state.instances if i.start_slot not in self.busy]

    def allocate(self, profile: Profile) -> Optional[Instance]:
        nxt = allocate_partition(self.state, profile, self.table)
        if nxt is None:
            return None
        new = (set(nxt.instances) - set(self.state.instances)).pop()
        self.state = nxt
        return new

    def release(self, starts: Iterable[int]) -> None:
        for s in starts:
            if s in self.busy:
                raise IllegalTransition("instance-busy", f"cannot free busy @{s}")
            self.state = free_partition(self.state, s)

    def merge(self, target: Profile) -> Optional[tuple[Instance, tuple[int, ...]]]:
        """Apply the best merge/split candidate; returns the new instance and
        the starts of the released idle instances."""
        idle = {i.start_slot for i in self.idle_instances()}
        cands = merge_candidates(self.state, target, self.table, idle)
        if not cands:
            return None
        best = cands[0]
        self.release(best.release)
        self.state = transition(self.state, Alloc(target, best.start))
        return self.state.instance_at(best.start), best.release

    def configure(self, state: PartitionState) -> None:
        if self.busy:
            raise IllegalTransition("instance-busy", "reconfigure with running jobs")
        self.table.index_of(state)
        self.state = state

    def mark_busy(self, inst: Instance) -> None:
        self.busy.add(inst.start_slot)

    def mark_idle(self, inst: Instance) -> None:
        self.busy.discard(inst.start_slot)


def homogeneous_configuration(table: ReachabilityTable, memory_bytes: int) -> PartitionState:
    """Layout packing the most instances of one memory size, then most compute.

    On an A100 this gives 7x5GB, 3x10GB, 4g+3g for 20GB and 1x40GB.
    """
    def key(i):
        s = table.states[i]
        if any(inst.profile.memory_bytes != memory_bytes for inst in s.instances):
            return None
        return (len(s), s.used_compute)

    best_i, best_k = None, None
    for i in range(len(table.states)):
        k = key(i)
        if k is not None and (best_k is None or k > best_k):
            best_i, best_k = i, k
    if best_i is None or best_k[0] == 0:
        raise ValueError(f"no profile with {memory_bytes} bytes")
    return table.states[best_i]
