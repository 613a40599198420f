"""Layerwise recovery of a deep quadratic boolean function.

The target has an 8-leaf tree on x_1..x_8 and a 4-leaf tree on x_9..x_12; the
learner finds the pairs level by level from correlations with the residual.
"""

from rhmlab.deepquad import compare, iid_sampler, learn_layerwise, two_tree_target
from rhmlab.rng import make_rng

target = two_tree_target(0.5, make_rng(0))
print("target:")
for k, sets in enumerate(target.levels, start=1):
    print(f"  level {k}: " + ", ".join(f"{sorted(i + 1 for i in S)}:{target.coef[S]:+.3f}" for S in sets))

for refit in (False, True):
    model = learn_layerwise(iid_sampler(target), 12, 0.5, 10_000, make_rng(1), refit=refit)
    rec = compare(model, target)
    print(f"\nrefit={refit}: exact support {rec.support_exact}, max coefficient error {rec.max_coef_error:.2e}")
    for k, (lv, sets) in enumerate(zip(model.levels, model.support()), start=1):
        print(f"  level {k}: " + ", ".join(f"{sorted(i + 1 for i in S)}:{c:+.3f}" for S, c in zip(sets, lv.coef)))
