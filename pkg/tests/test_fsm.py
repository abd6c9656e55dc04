import pytest

from migsim.catalog import GiB
from migsim.errors import CapacityError, IllegalTransition
from migsim.fsm import (
    Alloc,
    Free,
    PartitionManager,
    allocate_partition,
    build_table,
    empty_state,
    enumerate_states,
    free_partition,
    homogeneous_configuration,
    merge_candidates,
    transition,
)

from conftest import make_catalog
from oracles import PlacementOracle, fsm_walk_violations, state_key

# derived once from the exhaustive DFS oracle over the bundled A100 table
A100_STATES = 298
A100_FINALS = 19
A100_EDGES = 1005
A100_SMALL_CHILD_FCR = {0: 6, 1: 6, 6: 12}


@pytest.fixture(scope="module")
def oracle(a100):
    return PlacementOracle(a100.to_dict())


def build(catalog, *placements):
    s = empty_state(catalog)
    for name, start in placements:
        s = transition(s, Alloc(catalog.profile(name), start))
    return s


def test_oracle_state_space_matches(a100_table, oracle):
    states, edges = oracle.all_states()
    assert len(a100_table.states) == len(states) == A100_STATES
    assert a100_table.edge_count == edges == A100_EDGES
    oracle_finals = {s for s in states if not list(oracle.children(s))}
    assert len(a100_table.finals) == len(oracle_finals) == A100_FINALS
    assert {state_key(a100_table.states[i]) for i in a100_table.finals} == oracle_finals
    assert {state_key(s) for s in a100_table.states} == states


def test_fcr_matches_oracle_everywhere(a100_table, oracle):
    for s, f in zip(a100_table.states, a100_table.fcr):
        assert f == oracle.fcr(state_key(s)), s


def test_fcr_of_empty_is_final_count(a100, a100_table):
    assert a100_table.fcr_of(empty_state(a100)) == len(a100_table.finals)


def test_small_slice_children(a100, a100_table):
    p = a100.profile("1g.5gb")
    got = {x: a100_table.fcr_of(build(a100, ("1g.5gb", x))) for x in (0, 1, 6)}
    assert got == A100_SMALL_CHILD_FCR
    # the last slot is the strict maximum over all seven placements
    all_fcr = {x: a100_table.fcr_of(build(a100, ("1g.5gb", x))) for x in p.allowed_starts}
    assert max(all_fcr, key=lambda x: (all_fcr[x], x)) == 6
    assert sorted(all_fcr.values()).count(all_fcr[6]) == 1


def test_finals_have_fcr_one_and_no_placement(a100, a100_table):
    for i in a100_table.finals:
        s = a100_table.states[i]
        assert a100_table.fcr[i] == 1
        assert all(not s.placements(p) for p in a100.profiles)
    assert all(f >= 1 for f in a100_table.fcr)


def test_fcr_non_increasing_along_edges(a100_table):
    for i, edges in enumerate(a100_table.alloc_edges):
        for _, _, j in edges:
            assert a100_table.fcr[j] <= a100_table.fcr[i]


def test_canonical_keys_unique(a100_table):
    keys = [s.canonical_key for s in a100_table.states]
    assert len(set(keys)) == len(keys)


def test_single_profile_catalog_two_states():
    c = make_catalog([{"name": "all", "compute_slices": 7, "memory_slices": 8, "allowed_starts": [0]}])
    t = build_table(c)
    assert len(t.states) == 2 and t.edge_count == 1
    assert t.fcr == (1, 1)


def test_empty_profile_list():
    t = build_table(make_catalog([]))
    assert len(t.states) == 1 and t.edge_count == 0
    assert t.finals == frozenset({0}) and t.fcr == (1,)


def test_state_cap(a100):
    with pytest.raises(CapacityError):
        enumerate_states(a100, max_states=50)


def test_transitions(a100):
    full = build(a100, ("7g.40gb", 0))
    assert [(i.profile.name, i.start_slot) for i in full.instances] == [("7g.40gb", 0)]
    one = build(a100, ("1g.5gb", 0))
    assert transition(one, Free(0)) == empty_state(a100)
    assert free_partition(one, 0) == empty_state(a100)
    with pytest.raises(IllegalTransition) as ei:
        free_partition(one, 3)
    assert ei.value.rule == "no-instance"
    two = build(a100, ("1g.5gb", 0), ("1g.5gb", 1))
    left = free_partition(two, 0)
    assert [(i.profile.name, i.start_slot) for i in left.instances] == [("1g.5gb", 1)]


def test_placement_legality_example(a100):
    # two 5GB, unallocated 10GB, then a 20GB at slot 4: legal
    build(a100, ("1g.5gb", 0), ("1g.5gb", 1), ("3g.20gb", 4))
    # a 20GB right after the two 5GB slices is not
    s = build(a100, ("1g.5gb", 0), ("1g.5gb", 1))
    with pytest.raises(IllegalTransition) as ei:
        transition(s, Alloc(a100.profile("3g.20gb"), 2))
    assert ei.value.rule == "start-not-allowed"
    with pytest.raises(IllegalTransition) as ei:
        transition(s, Alloc(a100.profile("2g.10gb"), 0))
    assert ei.value.rule == "memory-overlap"


def test_compute_budget_rule():
    c = make_catalog(
        [{"name": "unit", "compute_slices": 1, "memory_slices": 1, "allowed_starts": [0, 1, 2, 3]}],
        compute=2, slots=4,
    )
    s = build(c, ("unit", 0), ("unit", 1))
    with pytest.raises(IllegalTransition) as ei:
        transition(s, Alloc(c.profile("unit"), 2))
    assert ei.value.rule == "compute-exceeded"
    assert len(build_table(c).finals) == 6


def test_allocate_partition(a100, a100_table):
    s0 = empty_state(a100)
    got = allocate_partition(s0, a100.profile("1g.5gb"), a100_table)
    assert [i.start_slot for i in got.instances] == [6]
    # exactly one legal 20GB placement left
    s = build(a100, ("3g.20gb", 0))
    got = allocate_partition(s, a100.profile("3g.20gb"), a100_table)
    assert [i.start_slot for i in got.instances] == [0, 4]
    final = build(a100, ("7g.40gb", 0))
    for p in a100.profiles:
        assert allocate_partition(final, p, a100_table) is None


@pytest.mark.parametrize("seed", range(3))
def test_random_walks_small(a100_table, oracle, seed):
    assert fsm_walk_violations(a100_table, oracle, seed, walks=100) == []


def test_merge_two_small_into_ten(a100, a100_table):
    s = build(a100, ("1g.5gb", 0), ("1g.5gb", 1))
    cands = merge_candidates(s, a100.profile("2g.10gb"), a100_table, idle={0, 1})
    # releasing both small slices and reusing slot 0 is the only option that
    # actually merges; placements elsewhere need no release
    assert [(c.release, c.start) for c in cands] == [((0, 1), 0)]


def test_split_full_gpu(a100, a100_table):
    s = build(a100, ("7g.40gb", 0))
    cands = merge_candidates(s, a100.profile("1g.5gb"), a100_table, idle={0})
    assert cands[0].release == (0,)
    assert cands[0].start == 6
    assert [c.fcr for c in cands] == sorted((c.fcr for c in cands), reverse=True)


def test_busy_never_released(a100, a100_table):
    s = build(a100, ("3g.20gb", 4))
    assert merge_candidates(s, a100.profile("7g.40gb"), a100_table, idle=set()) == []


def test_merge_candidates_minimal(a100, a100_table):
    # 4g@0 busy, 5GB idle at 4, 5, 6: a 10GB at 4 needs only slots 4 and 5
    s = build(a100, ("4g.20gb", 0), ("1g.5gb", 4), ("1g.5gb", 5), ("1g.5gb", 6))
    cands = merge_candidates(s, a100.profile("2g.10gb"), a100_table, idle={4, 5, 6})
    assert cands and all(c.release == (4, 5) for c in cands)


def test_partition_manager(a100, a100_table):
    m = PartitionManager(a100_table)
    inst = m.allocate(a100.profile("1g.5gb"))
    assert inst.start_slot == 6
    m.mark_busy(inst)
    with pytest.raises(IllegalTransition):
        m.release([6])
    with pytest.raises(IllegalTransition):
        m.configure(empty_state(a100))
    m.mark_idle(inst)
    new, released = m.merge(a100.profile("7g.40gb"))
    assert released == (6,) and new.profile.name == "7g.40gb"
    assert m.allocate(a100.profile("1g.5gb")) is None


@pytest.mark.parametrize(
    "gb, layout",
    [
        (5, [("1g.5gb", x) for x in range(7)]),
        (10, [("2g.10gb", 0), ("2g.10gb", 2), ("2g.10gb", 4)]),
        (20, [("4g.20gb", 0), ("3g.20gb", 4)]),
        (40, [("7g.40gb", 0)]),
    ],
)
def test_homogeneous_configuration(a100_table, gb, layout):
    s = homogeneous_configuration(a100_table, gb * GiB)
    assert [(i.profile.name, i.start_slot) for i in s.instances] == layout


def test_a30_table_matches_oracle():
    from migsim.catalog import bundled_catalog

    c = bundled_catalog("a30-24gb")
    t = build_table(c)
    o = PlacementOracle(c.to_dict())
    states, edges = o.all_states()
    assert len(t.states) == len(states) and t.edge_count == edges
    for s, f in zip(t.states, t.fcr):
        assert f == o.fcr(state_key(s))
