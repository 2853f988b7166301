"""
Embedding with t-SNE
====================

The optimizer starts from a scaled PCA projection, runs 250 iterations of
early exaggeration and 750 normal ones. Barnes-Hut approximates the
repulsive forces with a quadtree; ``theta=0`` computes them exactly.
"""

# %%
import sys
from pathlib import Path

import numpy as np

from perpscale.affinity import build_affinities
from perpscale.metrics import neighborhood_recall, silhouette
from perpscale.optimizer import OptimizerConfig, bh_gradient, exact_gradient, pca_init, run_tsne
from perpscale.svg import scatter_grid
from perpscale.synthetic import gaussian_mixture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)
ds = gaussian_mixture(1500, seed=3)

# %%
# How far the tree approximation is from the exact gradient at the start.
aff = build_affinities(ds, 30.0, mode="sparse")
init = pca_init(ds, scale=None)
exact = exact_gradient(aff, init)
for theta in (0.8, 0.5, 0.2, 0.0):
    err = np.linalg.norm(bh_gradient(aff, init, theta) - exact, axis=1) / np.linalg.norm(exact, axis=1)
    print(f"theta={theta}: mean relative error {err.mean():.2e}")

# %%
emb, trace = run_tsne(ds, 30.0, OptimizerConfig(theta=0.5))
print(f"KL {trace.initial_cost:.3f} -> {trace.final_cost:.3f} over {len(trace)} iterations")
print("silhouette by cluster:", round(silhouette(emb, ds.labels), 3))
print("10-NN recall:", round(neighborhood_recall(ds, emb), 3))
trace.to_csv(out / "trace.csv")
scatter_grid([{"title": "perplexity 30", "coords": emb.coords, "labels": ds.labels}], out / "embedding.svg")
print("wrote", out / "embedding.svg")
