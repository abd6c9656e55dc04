"""Compare the three policies on every bundled scenario.

Throughput and energy are reported relative to the single full-GPU
baseline, so 1.0 means no gain.
"""

from migsim.scenario import SchedulingPolicy, bundled_scenario_names, load_scenario
from migsim.simkernel import simulate

print(f"{'scenario':<16}{'A thr':>8}{'B thr':>8}{'A energy':>10}{'B energy':>10}")
for name in bundled_scenario_names():
    sc = load_scenario(name)
    if not sc.jobs:
        continue
    row = {}
    for kind in ("scheme_a", "scheme_b"):
        rep = simulate(sc, SchedulingPolicy(kind, sc.policy.prediction_enabled))
        row[kind] = rep.normalized
    print(f"{name:<16}{row['scheme_a']['throughput']:8.3f}{row['scheme_b']['throughput']:8.3f}"
          f"{row['scheme_a']['energy']:10.3f}{row['scheme_b']['energy']:10.3f}")
