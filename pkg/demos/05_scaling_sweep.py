"""A miniature sample-complexity sweep and its CSV.

The full sweeps behind the scaling acceptance check take several minutes; this
one uses a coarse grid so it finishes quickly.
"""

import sys

from rhmlab.experiments import SweepConfig, csv_text, median_accuracy, run_sweep, threshold_budget

cfg = SweepConfig(L=(1, 2), s=(2,), V=(8,), m=(2,), N_grid=(32, 64, 128, 256, 512), trials=3, seed=0,
                  test_size=500, shallow=True)
result = run_sweep(cfg, jobs=1)

med = median_accuracy(result)
sh = median_accuracy(result, "shallow")
print("L   N     deep   shallow")
for (L, s, V, m, n), acc in sorted(med.items()):
    print(f"{L}  {n:4d}   {acc:.3f}  {sh[(L, s, V, m, n)]:.3f}")
print("budget for 95% median accuracy:", {cell[0]: n for cell, n in threshold_budget(result).items()})

if "--csv" in sys.argv:
    sys.stdout.write(csv_text(result))
