"""
Planning under a memory budget
==============================

Large perplexities on large data need a lot of memory for affinities. The
planner walks the sampling rate down in steps of 0.01, scaling the
perplexity with it, until the affinities fit.
"""

# %%
from perpscale.pipeline import Budget, budget_plan

# %%
# Dense storage grows with the square of the sample size.
plan = budget_plan(10_000, 40.0, Budget(8 * 5000**2, bytes_per_entry=8, mode="dense"))
print("dense:", plan)

# %%
# Sparse storage grows with sample size times perplexity.
for per in (200, 1000, 2000, 5000):
    plan = budget_plan(327_457, per, Budget(32e9, bytes_per_entry=12, mode="sparse"))
    print(f"perplexity {per}: feasible={plan.feasible} rho={plan.rate} "
          f"perplexity'={plan.scaled_perplexity:g} cost={plan.cost_bytes / 1e9:.1f} GB")

# %%
# When even the smallest sample does not fit, the plan says so.
print(budget_plan(10_000, 30.0, Budget(1e3)))
