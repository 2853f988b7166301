"""
Loading data and drawing nested samples
=======================================

Data sets are matrices with stable integer ids. Samples are chains of
subsets: each smaller sample is drawn from the one above it, so the points
of a 10% sample also appear in the 40% and 70% samples.
"""

# %%
import sys
from pathlib import Path

import numpy as np

from perpscale.dataset import draw_nested_samples, load_matrix, materialize_sample, save_matrix
from perpscale.synthetic import gaussian_mixture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

# %%
# A 5-cluster Gaussian mixture in 10 dimensions, labelled by cluster.
ds = gaussian_mixture(2000, d=10, seed=0)
print(ds.n, "points in", ds.d, "dimensions; checksum", ds.checksum()[:12])

# %%
# CSV keeps full float64 precision; the binary format stores float32.
save_matrix(ds, out / "mixture.csv")
save_matrix(ds, out / "mixture.bin")
again = load_matrix(out / "mixture.csv")
print("csv round trip exact:", np.array_equal(again.points, ds.points))
print("binary max abs error:", np.abs(load_matrix(out / "mixture.bin").points - ds.points).max())

# %%
# Nested samples at 70%, 40% and 10%.
plan = draw_nested_samples(ds, [0.7, 0.4, 0.1], seed=42)
for rate, level in zip(plan.rates, plan.levels):
    print(f"rho={rate}: {level.size} ids, first few {level[:5]}")
small = materialize_sample(ds, plan, 0.1)
mid = materialize_sample(ds, plan, 0.4)
print("10% sample inside 40% sample:", np.isin(small.ids, mid.ids).all())
print("labels travel with the rows:", np.array_equal(small.labels, ds.labels[small.ids]))
