"""Train the layerwise learner on a three-level grammar and look inside each stage."""

from rhmlab.experiments import shallow_baseline
from rhmlab.grammar import RhmParams, generate, sample_instance
from rhmlab.learner import accuracy, default_schedule, train_layerwise
from rhmlab.oracle import compute_stats
from rhmlab.rng import make_rng

inst = sample_instance(RhmParams(L=3, s=2, V=8, m=2, seed=1))
stats = compute_stats(inst)
print(f"kappa = {stats.kappa}, signal per level = {[round(r, 3) for r in stats.rho_emp]}, K_rho = {stats.K_rho_emp:.3f}")

configs = default_schedule(inst.params, stats.K_rho_emp, stats.kappa)
for lvl, c in zip(range(3, 0, -1), configs):
    print(f"level {lvl}: N={c.N} T={c.T} M={c.M} sigma={c.sigma:.3f}")

model = train_layerwise(inst, configs, make_rng(0), stats=stats)
print("\nstage diagnostics (oracle-aided, not used in training):")
for d in model.diagnostics:
    print(f"  level {d['level']}: {d['n_unique']} distinct subtrees, output spread within a parent "
          f"{d['out_intra']:.3f}, gap between parents {d['out_inter']:.3f}, max distance to exact q {d['q_err']:.3f}")

test = generate(inst, 1000, make_rng(1))
print(f"\ntest accuracy: {accuracy(model, test):.3f}")
n = sum(c.N for c in configs)
shallow = shallow_baseline(generate(inst, n, make_rng(2)), test, 8, 1 / 16, make_rng(3))
print(f"one-shot kernel regression on the whole sentence with the same {n} samples: {shallow:.3f}")
