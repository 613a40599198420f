"""Hand-built networks that the layerwise learner is meant to approximate.

1. exact parent decoding with one-hot patch embeddings,
2. outputs equal to the conditional label vectors q,
3. the same with random Fourier patch embeddings.
"""

import numpy as np

from rhmlab.grammar import RhmParams, decode_batch, generate, sample_instance
from rhmlab.learner import accuracy, build_construction_model, predict_scores
from rhmlab.oracle import compute_stats
from rhmlab.rng import make_rng

inst = sample_instance(RhmParams(L=3, s=2, V=8, m=2, seed=3))
stats = compute_stats(inst)
test = generate(inst, 1000, make_rng(0))

for variant in (1, 2, 3):
    model = build_construction_model(inst, stats, variant, rng=make_rng(variant))
    print(f"construction {variant}: accuracy {accuracy(model, test):.3f}")

# construction 2's label scores are the exact posterior of the label given the first patch chain
scores = predict_scores(build_construction_model(inst, stats, 2), test.tokens[:3])
print("\nconstruction-2 scores for three sentences:")
print(np.round(scores, 3))
print("decoded labels:", decode_batch(inst, test.tokens[:3]).tolist())
