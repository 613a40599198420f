"""A small grammar, its sentences, and the exact statistics behind them.

We sample an RHM instance, generate a few sentences, decode them back, and
compare the exact conditional label vectors of the first patch with Monte
Carlo frequencies.
"""

import numpy as np

from rhmlab.grammar import RhmParams, decode_batch, encode_patches, generate, sample_instance, validate
from rhmlab.oracle import audit_assumptions, compute_stats
from rhmlab.rng import make_rng

params = RhmParams(L=2, s=2, V=3, m=2, seed=0)
inst = sample_instance(params)
print("validation:", "ok" if validate(inst).ok else validate(inst).failures())

for l, level_rules in enumerate(inst.rules):
    print(f"rules producing level {l + 1}:")
    for nu, patches in enumerate(level_rules):
        print(f"  {nu} -> {' | '.join(' '.join(map(str, p)) for p in patches)}")

data = generate(inst, 5, make_rng(1), keep_intermediates=True)
for i in range(5):
    s = data.sample(i)
    print(f"label {s.label}  levels {s.intermediates[1:]}  tokens {s.tokens}")
print("decoded:", decode_batch(inst, data.tokens).tolist())

# exact q for the first level-2 patch versus frequencies over a large sample
stats = compute_stats(inst)
big = generate(inst, 200_000, make_rng(2))
codes = encode_patches(big.tokens[:, :2], params.V)
print("\nfirst patch   exact q             empirical")
for nu in range(params.V):
    for i in range(params.m):
        patch = inst.rule_array[1][nu, i]
        sel = codes == int(encode_patches(patch, params.V))
        emp = np.bincount(big.labels[sel], minlength=params.V) / sel.sum()
        print(f"  {tuple(int(t) for t in patch)}      {np.round(stats.q[1][nu, i], 3)}   {np.round(emp, 3)}")

print()
print(audit_assumptions(inst, stats).table())
