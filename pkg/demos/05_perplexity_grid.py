"""
Exploring perplexities on a small sample
========================================

Embedding a 10% sample at several perplexities is cheap and shows which
values give a meaningful picture. Every cell starts from the same rows of
the full data's PCA projection, so differences come from perplexity alone.
"""

# %%
import sys
from pathlib import Path

from perpscale.metrics import silhouette
from perpscale.optimizer import OptimizerConfig
from perpscale.pipeline import Budget, GridSpec, explore_grid
from perpscale.svg import scatter_grid
from perpscale.synthetic import gaussian_mixture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)
ds = gaussian_mixture(5000, seed=1)

# %%
# A memory ceiling marks the largest perplexity as infeasible.
spec = GridSpec(rate=0.1, perplexities=[3, 10, 30, 100], optimizer=OptimizerConfig(), seed=0)
budget = Budget(max_bytes=12 * 500 * 3 * 30 * 2, bytes_per_entry=12)
cells = explore_grid(ds, spec, budget)

panels = []
for cell in cells:
    title = f"perplexity {cell.perplexity:g}"
    if not cell.feasible:
        print(title, "infeasible under the budget")
        panels.append({"title": title, "coords": None})
        continue
    labels = ds.labels[ds.positions(cell.embedding.ids)]
    print(title, "silhouette", round(silhouette(cell.embedding, labels), 3))
    panels.append({"title": title, "coords": cell.embedding.coords, "labels": labels})

scatter_grid(panels, out / "grid.svg", n_cols=2)
print("wrote", out / "grid.svg")
