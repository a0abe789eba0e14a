"""Watch the undetected-target mass fall as a static sensor looks at the region.

Before the first scan the filter believes about 50 targets exist that it has
never seen. Each scan with detection probability 0.3 removes 30% of that
belief, while births add a little back, so the mass settles where the two
balance. The fixed-intensity filters never update it.

    python3 demos/undetected_mass.py
"""

import numpy as np

from hybridpmb import experiments as ex

table = ex.run_experiment(ex.ExperimentSpec("fig1", runs=3, seed=1))
print(f"{'t':>4} " + " ".join(f"{v:>14}" for v in table.variants))
for t in (0, 1, 2, 5, 10, 20, 40, 70, 100):
    row = [table.summary(v)["undetected_mass"][t] for v in table.variants]
    print(f"{t:>4} " + " ".join(f"{m:14.4f}" for m in row))

print("\nmean OSPA over the first 30 scans:")
for v in table.variants:
    print(f"  {v:>14}: {table.summary(v)['mospa_mean'][1:31].mean():.3f}")
