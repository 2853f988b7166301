"""Linear perplexity scaling across sample sizes and its Monte Carlo check.

The rule: a sample holding a fraction ``rho`` of the points should be
embedded at ``rho`` times the full-set perplexity. The Monte Carlo estimator
fixes every point's bandwidth on the full data, restricts the Gaussian to a
random sample, and records the perplexity that restricted row actually has.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .affinity import DEFAULT_MAX_ITER, DEFAULT_TOL
from .dataset import Dataset, draw_uniform_sample, sample_size, _check_rates
from .exceptions import DataError, PerplexityUnderflow

ROUNDING = ("nearest", "ceil", "none")


@dataclass(frozen=True)
class ScalingRule:
    """A perplexity chosen for a data set of ``base_n`` points.

    ``base_perplexity`` is kept as an exact fraction so chained rescaling
    does not accumulate rounding error.
    """

    base_perplexity: Fraction
    base_n: int
    rounding: str = "nearest"

    def __post_init__(self):
        base = Fraction(self.base_perplexity)
        if self.base_n < 2:
            raise DataError(f"base_n must be >= 2, got {self.base_n}")
        if not 1 <= base < self.base_n:
            raise DataError(f"base perplexity {float(base)} must lie in [1, {self.base_n})")
        if self.rounding not in ROUNDING:
            raise DataError(f"rounding must be one of {ROUNDING}, got {self.rounding!r}")
        object.__setattr__(self, "base_perplexity", base)

    def exact(self, target_n: int) -> Fraction:
        return self.base_perplexity * target_n / self.base_n

    def rescaled(self, target_n: int) -> "ScalingRule":
        """The same rule re-anchored at ``target_n`` points, without rounding."""
        return ScalingRule(self.exact(target_n), target_n, self.rounding)


def _round(value: Fraction, rounding: str):
    if rounding == "nearest":
        return float(math.floor(value + Fraction(1, 2)))
    if rounding == "ceil":
        return float(math.ceil(value))
    return float(value)


def scale_perplexity(rule: ScalingRule, target_n: int) -> float:
    """Perplexity for ``target_n`` points: ``base * target_n / base_n``, then rounded.

    Raises
    ------
    PerplexityUnderflow
        If the result is 1 or less.
    """
    if target_n < 2:
        raise DataError(f"target_n must be >= 2, got {target_n}")
    value = _round(rule.exact(target_n), rule.rounding)
    if value <= 1.0:
        raise PerplexityUnderflow(
            f"perplexity {float(rule.base_perplexity)} at n={rule.base_n} scales to {value} "
            f"at n={target_n}; at or below 1 no neighborhood remains"
        )
    return value


def scale_by_rate(perplexity: float, rate: float, n: int, rounding: str = "none") -> float:
    """Convenience wrapper: scale a full-set perplexity to a ``rate`` sample of ``n`` points."""
    return scale_perplexity(ScalingRule(Fraction(perplexity), n, rounding), sample_size(n, rate))


# -- Monte Carlo estimation ------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePerplexities:
    """Per-point sample perplexities, aligned with ``ids``."""

    ids: np.ndarray
    values: np.ndarray
    clamped: np.ndarray

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.values.tolist()))

    def __len__(self):
        return self.ids.shape[0]


@dataclass(frozen=True, eq=False)
class FullBandwidths:
    """Bandwidths solved once on the full data set, reused for every sample."""

    ids: np.ndarray
    sigma: np.ndarray
    achieved: np.ndarray
    flags: np.ndarray
    perplexity: float


def full_bandwidths(full: Dataset, perplexity: float, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> FullBandwidths:
    """Dense-mode bandwidths for every point of ``full``."""
    if not 1.0 < perplexity < full.n:
        raise DataError(f"perplexity {perplexity} must lie in (1, n={full.n})")
    sigma, achieved, flags = _kernels.solve_bandwidths_streaming(
        np.ascontiguousarray(full.points), float(perplexity), tol, max_iter)
    return FullBandwidths(full.ids, sigma, achieved, flags, float(perplexity))


def monte_carlo_perplexities(full: Dataset, sample: Dataset, perplexity: float,
                             bandwidths: Optional[FullBandwidths] = None) -> SamplePerplexities:
    """Perplexity each sampled point's full-set Gaussian has when restricted to the sample.

    Parameters
    ----------
    full : Dataset
        The whole data set; bandwidths are solved here at ``perplexity``.
    sample : Dataset
        Subset of ``full`` (matched by id).
    perplexity : float
    bandwidths : FullBandwidths, optional
        Reuse bandwidths from an earlier call on the same ``full``.
    """
    if sample.n < 2:
        raise DataError("a sample needs at least 2 points")
    try:
        rows = full.positions(sample.ids)
    except DataError:
        raise DataError("sample is not a subset of the full data set") from None
    if bandwidths is None:
        bandwidths = full_bandwidths(full, perplexity)
    elif bandwidths.perplexity != float(perplexity) or not np.array_equal(bandwidths.ids, full.ids):
        raise DataError("bandwidths were solved for a different data set or perplexity")
    X = np.ascontiguousarray(full.points[rows])
    values = _kernels.restricted_perplexities(X, bandwidths.sigma[rows])
    clamped = bandwidths.flags[rows] != _kernels.FLAG_OK
    return SamplePerplexities(sample.ids.copy(), values, clamped)


def _cell_seed(seed: int, rate_index: int, repeat: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), rate_index, repeat])


def anchored_fit(rates: Sequence[float], medians: Sequence[float], anchor: float):
    """Least-squares slope of ``median - anchor = slope * (rate - 1)`` and its R^2.

    The anchor point ``(1, anchor)`` is included unless rate 1 is already
    present. With no spread in the rates the slope is taken as ``anchor``.
    """
    x = [float(r) for r in rates]
    y = [float(m) for m in medians]
    if not any(math.isclose(r, 1.0) for r in x):
        x.append(1.0)
        y.append(float(anchor))
    x = np.asarray(x)
    y = np.asarray(y)
    dx = x - 1.0
    dy = y - anchor
    sxx = float(np.dot(dx, dx))
    slope = float(np.dot(dx, dy) / sxx) if sxx > 0 else float(anchor)
    resid = dy - slope * dx
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    scale = max(1.0, float(np.max(np.abs(y))))
    if ss_tot <= 1e-18 * scale * scale:
        r2 = 1.0 if ss_res <= 1e-12 * scale * scale else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return slope, r2


@dataclass(eq=False)
class MonteCarloReport:
    perplexity: float
    rates: list
    repeats: int
    seed: int
    n: int
    per_point: dict = field(repr=False)
    medians: dict = field(default_factory=dict)
    clamp_counts: dict = field(default_factory=dict)
    fit_slope: float = float("nan")
    fit_r2: float = float("nan")

    def values(self, rate) -> np.ndarray:
        """Unclamped per-point values pooled over repeats for ``rate``."""
        chunks = [v.values[~v.clamped] for (r, _), v in self.per_point.items() if math.isclose(r, rate)]
        return np.concatenate(chunks) if chunks else np.empty(0)

    def summary(self) -> dict:
        return {
            "perplexity": self.perplexity,
            "n": self.n,
            "seed": self.seed,
            "repeats": self.repeats,
            "rates": [float(r) for r in self.rates],
            "medians": {repr(float(r)): float(m) for r, m in self.medians.items()},
            "clamp_counts": {repr(float(r)): int(c) for r, c in self.clamp_counts.items()},
            "slope": self.fit_slope,
            "r2": self.fit_r2,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "repeat", "id", "perplexity_prime"])
            for (rate, rep), cell in self.per_point.items():
                for i, v in cell:
                    w.writerow([repr(float(rate)), rep, i, repr(float(v))])
        return path


def mc_report(full: Dataset, rates: Sequence[float], repeats: int, perplexity: float,
              seed: int, bandwidths: Optional[FullBandwidths] = None) -> MonteCarloReport:
    """Run the Monte Carlo estimator over independent samples per (rate, repeat).

    Samples are drawn independently for every cell (not nested). Points
    whose full-set bandwidth search was clamped are left out of the
    medians and the fit and counted in ``clamp_counts``.
    """
    if repeats < 1:
        raise DataError("repeats must be >= 1")
    rates = [float(r) for r in rates]
    for r in rates:
        _check_rates([r], full.n)
    if bandwidths is None:
        bandwidths = full_bandwidths(full, perplexity)

    per_point = {}
    medians = {}
    clamps = {}
    for ri, rate in enumerate(rates):
        pooled = []
        clamped = 0
        for rep in range(repeats):
            rng = np.random.default_rng(_cell_seed(seed, ri, rep))
            ids = draw_uniform_sample(full, rate, rng)
            cell = monte_carlo_perplexities(full, full.subset(ids), perplexity, bandwidths)
            per_point[(rate, rep)] = cell
            pooled.append(cell.values[~cell.clamped])
            clamped += int(cell.clamped.sum())
        pooled = np.concatenate(pooled)
        medians[rate] = float(np.median(pooled)) if pooled.size else float("nan")
        clamps[rate] = clamped

    ok = [r for r in rates if np.isfinite(medians[r])]
    slope, r2 = anchored_fit(ok, [medians[r] for r in ok], float(perplexity))
    return MonteCarloReport(float(perplexity), rates, repeats, int(seed), full.n,
                            per_point, medians, clamps, slope, r2)
