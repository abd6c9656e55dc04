"""Walk the A100 placement graph.

Builds the reachability table, prints its size, then shows how the
fcr score (how many final configurations stay reachable) picks a start
slot for a single small instance.
"""

from migsim.catalog import bundled_catalog
from migsim.fsm import Alloc, allocate_partition, build_table, empty_state, transition

catalog = bundled_catalog()
table = build_table(catalog)
print(f"{len(table.states)} states, {len(table.finals)} finals, {table.edge_count} edges")

# %% fcr of the empty GPU: every final is reachable from it
root = empty_state(catalog)
print("fcr(empty) =", table.fcr_of(root))

# %% one 1g.5gb instance, every legal start
small = catalog.profile("1g.5gb")
for start in small.allowed_starts:
    child = transition(root, Alloc(small, start))
    print(f"  1g.5gb at slot {start}: fcr {table.fcr_of(child)}")

# %% the allocator takes the argmax and breaks ties on the highest start
state = allocate_partition(root, small, table)
print("allocator picks", [(i.profile.name, i.start_slot) for i in state.instances])

# %% keep allocating small instances until nothing fits (None means FAIL)
while (nxt := allocate_partition(state, small, table)) is not None:
    new = set(nxt.instances) - set(state.instances)
    state = nxt
    print(f"  placed at {new.pop().start_slot}, fcr now {table.fcr_of(state)}")
print("full:", len(state.instances), "instances")
