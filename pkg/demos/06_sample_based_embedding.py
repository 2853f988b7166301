"""
Sample-based embedding
======================

Embed a sample, place each remaining point at the mean embedding position
of its nearest sampled neighbors (measured in the original space), then
refine everything together. The sample perplexity is scaled from the
perplexity one would pick for the whole set.
"""

# %%
from perpscale.metrics import knn_overlap, silhouette
from perpscale.optimizer import run_tsne
from perpscale.pipeline import PipelinePlan, sample_based_embed
from perpscale.synthetic import separated_blobs

ds = separated_blobs(3000, d=10, n_clusters=3, seed=0)

# %%
plan = PipelinePlan.from_target(ds.n, rate=0.1, target_perplexity=60, per_full=30, prolong_k=10)
print("sample perplexity scaled from 60:", plan.per_sample)
emb, report = sample_based_embed(ds, plan)
for stage in report.stages:
    print(stage)

# %%
print("silhouette:", round(silhouette(emb, ds.labels[ds.positions(emb.ids)]), 3))
direct, _ = run_tsne(ds, 30.0)
print("10-NN agreement with a direct run:", round(knn_overlap(emb, direct).knn_overlap, 3))
