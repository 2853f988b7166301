"""
Bandwidths and affinities
=========================

Each point gets a Gaussian bandwidth chosen so that its neighbor
distribution has the requested perplexity. The conditional rows are then
symmetrised into one joint distribution over pairs.
"""

# %%
import numpy as np

from perpscale.affinity import (
    DistanceRow, build_affinities, conditional_probabilities, find_bandwidth, row_perplexity,
)
from perpscale.synthetic import gaussian_blob

# %%
# One row of squared distances. Perplexity can never exceed the number of
# neighbors, so asking for more is reported as a clamp, not an error.
row = DistanceRow(0, [1, 2, 3, 4], [1.0, 2.0, 4.0, 9.0])
for target in (1.5, 3.0, 4.5):
    res = find_bandwidth(row, target)
    p = conditional_probabilities(row.sq_dists, res.sigma)
    print(f"target {target}: sigma={res.sigma:.4g} achieved={row_perplexity(p):.6f} "
          f"iterations={res.iterations} flags={sorted(res.flags)}")

# %%
# Dense affinities use every pair; sparse ones keep floor(3 * perplexity)
# neighbors per row. On small data the two agree closely.
ds = gaussian_blob(400, d=8, seed=1)
dense = build_affinities(ds, 20.0, mode="dense")
sparse = build_affinities(ds, 20.0, mode="sparse")
S = sparse.csr().tocoo()
D = dense.toarray()
print("sparse neighbors per row:", sparse.k)
print("sums:", D.sum(), S.data.sum())
print("largest difference on the sparse support:", np.abs(S.data - D[S.row, S.col]).max())
print("mass of dense P outside the sparse support:", D.sum() - D[S.row, S.col].sum())
