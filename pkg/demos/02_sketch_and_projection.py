"""Gradient sketching: top-k sparsification, then random projection.

Raw gradients are too wide to cluster directly. The sketch keeps the
top 10% of entries by magnitude and compresses the result with a seeded
sign-matrix projection that approximately preserves pairwise distances.
"""

import numpy as np

from domainmix import choose_target_dim, make_projection, project, topk_sparsify

rng = np.random.default_rng(0)

# --- top-k sparsification -------------------------------------------------
g = rng.normal(size=20)
sparse = topk_sparsify(g, keep_ratio=0.25)
print("kept entries:", np.flatnonzero(sparse).tolist())
print("largest magnitudes:", np.argsort(-np.abs(g))[:5].tolist())
print("norm before/after:", round(float(np.linalg.norm(g)), 3),
      round(float(np.linalg.norm(sparse)), 3))

# --- choosing the target dimension -----------------------------------------
for m, eps in [(100, 0.5), (1000, 0.3), (50, 0.5)]:
    print(f"m={m:5d} eps={eps}: target dim {choose_target_dim(m, eps)}")

# --- distance preservation --------------------------------------------------
# Project 40 points from dimension 2000 down to 256 and look at how far
# pairwise squared distances drift.
h, s, n = 2000, 256, 40
points = rng.normal(size=(n, h))
proj = make_projection(h, s, seed=123)
low = project(proj, points)

ratios = []
for i in range(n):
    d_orig = np.sum((points[i + 1:] - points[i]) ** 2, axis=1)
    d_proj = np.sum((low[i + 1:] - low[i]) ** 2, axis=1)
    ratios.extend(d_proj / d_orig)
ratios = np.array(ratios)

print(f"\nprojected {n} points from R^{h} to R^{s}")
print(f"pairwise squared-distance ratios: "
      f"min {ratios.min():.3f}, median {np.median(ratios):.3f}, "
      f"max {ratios.max():.3f}")
print(f"fraction within 15% of 1.0: {np.mean(np.abs(ratios - 1) < 0.15):.2%}")
