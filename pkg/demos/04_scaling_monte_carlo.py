"""
Perplexity scaling and its Monte Carlo check
============================================

Rule: a sample with a fraction ``rho`` of the points should be embedded at
``rho`` times the full perplexity. The check keeps each point's full-data
bandwidth, looks only at sampled neighbors, and measures the perplexity that
remains. Its median should grow linearly with ``rho``.
"""

# %%
import sys
from fractions import Fraction
from pathlib import Path

from perpscale.scaling import ScalingRule, mc_report, scale_perplexity
from perpscale.svg import monte_carlo_plot
from perpscale.synthetic import gaussian_mixture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

# %%
# Perplexities chosen on a 7,000-point sample of a 70,000-point set, carried
# up to larger samples.
for base in (7, 21, 144):
    rule = ScalingRule(Fraction(base), 7_000)
    print(base, "->", [scale_perplexity(rule, m) for m in (28_000, 49_000, 70_000)])

# %%
ds = gaussian_mixture(3000, seed=0)
rates = [0.1, 0.3, 0.5, 0.7, 0.9]
report = mc_report(ds, rates, repeats=3, perplexity=30.0, seed=0)
for r in rates:
    print(f"rho={r}: median sample perplexity {report.medians[r]:.2f} (rule says {30 * r:.1f})")
print(f"fit through (1, 30): slope {report.fit_slope:.2f}, R2 {report.fit_r2:.4f}")

report.to_csv(out / "mc.csv")
report.to_json(out / "mc_summary.json")
monte_carlo_plot(report, out / "mc.svg")
print("wrote", out / "mc.svg")
