"""Early restart on a growing memory trace.

The qwen2 scenario declares 8 GB, so it lands on a 2g.10gb slice, but its
footprint grows linearly and overruns the slice late in the run.  Without
forecasts the job dies from OOM; with them it is moved to a bigger slice
after a handful of iterations.
"""

import numpy as np

from migsim.predictor import PredictorConfig, StaticOverheads, run_forecast
from migsim.scenario import SchedulingPolicy, load_scenario
from migsim.simkernel import run_scenario

sc = load_scenario("qwen2")
job = sc.jobs[0]
ctx = sc.catalog.reserved_context_bytes
cap = sc.catalog.profile("2g.10gb").memory_bytes

# %% the realized footprint, context included
phys = job.physical_profile() + ctx
oom = int(np.argmax(phys > cap)) + 1
print(f"physical peak {phys.max() / 2**30:.2f} GiB, crosses 10 GiB at iteration {oom}")

# %% the forecast stream
fcs = run_forecast(job.trace, job.iterations, PredictorConfig(), StaticOverheads(0, ctx))
first = next(f for f in fcs if f.converged and f.peak_prediction_bytes > cap)
print(f"converged forecast exceeds the slice at iteration {first.iteration}: "
      f"{first.peak_prediction_bytes / 2**30:.2f} GiB")

# %% both policies end to end
for pred in (False, True):
    r = run_scenario(sc, SchedulingPolicy("scheme_a", pred))
    print(f"prediction={pred}: wasted iterations {r.metrics.wasted_iterations}, "
          f"makespan {r.metrics.makespan_s:.1f} s")
    for run in r.runs:
        print(f"    {run.profile:<8} {run.outcome:<8} after {run.iterations} iterations")
