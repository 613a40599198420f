"""Random Fourier features: unit norm, kernel approximation, and patch separation."""

import math

import numpy as np

from rhmlab.features import apply, bandwidth_for, measure_diagnostics, onehot_patch_inputs, rbf_kernel, sample_feature_map
from rhmlab.rng import make_rng

sigma = 1.0
h = np.zeros(4)
for r in (0.0, 0.5, 1.0, 2.0):
    h2 = np.array([r, 0.0, 0.0, 0.0])
    approx = [float(apply(fm, h) @ apply(fm, h2)) for fm in (sample_feature_map(4, M, sigma, make_rng(M)) for M in (16, 256, 4096))]
    print(f"|h - h'| = {r:.1f}  kernel {rbf_kernel(sigma, h, h2):.4f}  features (M=16, 256, 4096) "
          + " ".join(f"{a:.4f}" for a in approx))

# one-hot patches are sqrt(2) apart; pick sigma so their kernel overlap is 1e-3 / 2
V, s, eps_O = 6, 2, 1e-3
sigma = bandwidth_for(math.sqrt(2), eps_O)
H = onehot_patch_inputs(V, s)
print(f"\nbandwidth for eps_O={eps_O}: sigma = {sigma:.4f}")
for M in (256, 2048, 16384):
    d = measure_diagnostics(sample_feature_map(s * V, M, sigma, make_rng(7)), [x[None, :] for x in H])
    print(f"M = {M:5d}: max cross-patch |<x, x'>| = {d.eps_O:.4f}, kernel error {d.eps_rf:.4f}")
