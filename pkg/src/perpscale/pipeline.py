"""End-to-end workflows built on perplexity scaling.

* ``explore_grid``: embed one small sample at several perplexities.
* ``sample_based_embed``: embed a sample, place the remaining points next to
  their nearest sampled neighbors, then refine on the full data.
* ``budget_plan``: the largest sample (and matching perplexity) that fits a
  memory ceiling.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .dataset import Dataset, draw_nested_samples, materialize_sample, sample_size
from .exceptions import DataError
from .optimizer import Embedding, OptimizationTrace, OptimizerConfig, pca_init, run_tsne
from .scaling import ScalingRule, scale_perplexity

RATE_STEPS = 100


@dataclass(frozen=True)
class Budget:
    """Memory ceiling for storing affinities."""

    max_bytes: float
    bytes_per_entry: float = 12.0
    mode: str = "sparse"

    def __post_init__(self):
        if not (self.max_bytes > 0 and self.bytes_per_entry > 0):
            raise DataError("budget values must be positive")
        if self.mode not in ("dense", "sparse"):
            raise DataError(f"unknown budget mode {self.mode!r}")

    def cost(self, m: int, perplexity: float) -> float:
        """Bytes needed for affinities of ``m`` points at ``perplexity``."""
        if self.mode == "dense":
            return self.bytes_per_entry * m * m
        # kNN rows of 3 * perplexity entries, doubled by symmetrisation
        return self.bytes_per_entry * m * 3.0 * perplexity * 2.0


@dataclass(frozen=True)
class BudgetPlan:
    feasible: bool
    rate: float
    scaled_perplexity: float
    cost_bytes: float

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "rate": self.rate,
                "scaled_perplexity": self.scaled_perplexity, "cost_bytes": self.cost_bytes}


def budget_plan(n: int, desired_perplexity: float, budget: Budget) -> BudgetPlan:
    """Largest sampling rate on a 0.01 grid whose affinities fit ``budget``.

    The perplexity is scaled with the rate. When nothing fits, or the scaled
    perplexity would drop to 1 or below, the plan is infeasible and reports
    rate 1.0 at the desired perplexity.
    """
    for step in range(RATE_STEPS, 0, -1):
        rate = step / RATE_STEPS
        m = -(-n * step // RATE_STEPS)
        per = desired_perplexity * step / RATE_STEPS
        if per <= 1.0:
            break
        cost = budget.cost(m, per)
        if cost <= budget.max_bytes:
            return BudgetPlan(True, rate, per, cost)
    return BudgetPlan(False, 1.0, float(desired_perplexity), budget.cost(n, desired_perplexity))


# -- perplexity exploration ------------------------------------------------


@dataclass
class GridSpec:
    rate: float
    perplexities: Sequence[float]
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0


@dataclass(eq=False)
class GridCell:
    perplexity: float
    embedding: Optional[Embedding]
    trace: Optional[OptimizationTrace]
    feasible: bool = True

    def __iter__(self):
        return iter((self.perplexity, self.embedding, self.trace))


def sampled_init(dataset: Dataset, ids, n_components: int = 2) -> Embedding:
    """Rows of the full data set's scaled PCA embedding for ``ids``."""
    return pca_init(dataset, n_components).subset(np.sort(np.asarray(ids)))


def explore_grid(dataset: Dataset, spec: GridSpec, budget: Optional[Budget] = None) -> list:
    """Embed one sample at each perplexity in ``spec``, all from the same start.

    Cells whose affinities would not fit ``budget`` are returned with
    ``feasible=False`` and no embedding.
    """
    plan = draw_nested_samples(dataset, [spec.rate], spec.seed)
    sample = materialize_sample(dataset, plan, spec.rate)
    perplexities = sorted(float(p) for p in spec.perplexities)
    for p in perplexities:
        if not 1.0 < p < sample.n:
            raise DataError(f"perplexity {p} is out of range for a sample of {sample.n} points")
    init = sampled_init(dataset, sample.ids, spec.optimizer.n_components)

    cells = []
    for p in perplexities:
        if budget is not None and budget.cost(sample.n, p) > budget.max_bytes:
            cells.append(GridCell(p, None, None, feasible=False))
            continue
        emb, trace = run_tsne(sample, p, spec.optimizer, init=init)
        cells.append(GridCell(p, emb, trace))
    return cells


# -- sample-based embedding ------------------------------------------------


@dataclass
class PipelinePlan:
    rate: float
    per_sample: float
    per_full: float = 30.0
    prolong_k: int = 10
    sample_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    full_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    # full-set perplexity the sample perplexity was scaled from, if any
    scaled_from: Optional[float] = None

    @classmethod
    def from_target(cls, n: int, rate: float, target_perplexity: float, **kwargs) -> "PipelinePlan":
        """Plan whose sample perplexity is ``target_perplexity`` scaled to the sample size."""
        rule = ScalingRule(Fraction(target_perplexity), n, "nearest")
        per_sample = scale_perplexity(rule, sample_size(n, rate))
        return cls(rate, per_sample, scaled_from=float(target_perplexity), **kwargs)

    def to_dict(self) -> dict:
        return {
            "rate": self.rate, "per_sample": self.per_sample, "per_full": self.per_full,
            "prolong_k": self.prolong_k, "seed": self.seed, "scaled_from": self.scaled_from,
            "sample_optimizer": self.sample_optimizer.to_dict(),
            "full_optimizer": self.full_optimizer.to_dict(),
        }


@dataclass(eq=False)
class Prolongation:
    """Where each non-sampled point was placed and which sampled points it averaged."""

    ids: np.ndarray
    anchor_ids: np.ndarray
    coords: np.ndarray


@dataclass(eq=False)
class PipelineReport:
    stages: list
    plan: dict
    prolongation: Prolongation = field(repr=False)
    sample_embedding: Embedding = field(repr=False)
    scores: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"plan": self.plan, "stages": self.stages, "scores": self.scores}

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def _stage(name, rho, perplexity, n, seconds, trace=None):
    return {
        "stage": name, "rho": float(rho), "perplexity": None if perplexity is None else float(perplexity),
        "n": int(n), "seconds": float(seconds),
        "kl_initial": None if trace is None else float(trace.initial_cost),
        "kl_final": None if trace is None else float(trace.final_cost),
    }


def prolong(dataset: Dataset, sample_embedding: Embedding, k: int) -> Prolongation:
    """Place every point missing from ``sample_embedding`` at the mean of its k nearest sampled points.

    Neighbors are measured in the original high-dimensional space.
    """
    sample_ids = np.sort(sample_embedding.ids)
    if k > sample_ids.size:
        raise DataError(f"prolong_k={k} exceeds the sample size {sample_ids.size}")
    if k < 1:
        raise DataError("prolong_k must be >= 1")
    rest_ids = np.setdiff1d(dataset.ids, sample_ids)
    dim = sample_embedding.dim
    if rest_ids.size == 0:
        return Prolongation(rest_ids, np.empty((0, k), dtype=np.int64), np.empty((0, dim)))
    S = np.ascontiguousarray(dataset.points[dataset.positions(sample_ids)])
    R = np.ascontiguousarray(dataset.points[dataset.positions(rest_ids)])
    idx, _ = _kernels.knn(R, S, k, False)
    anchor_coords = sample_embedding.subset(sample_ids).coords
    coords = anchor_coords[idx].mean(axis=1)
    return Prolongation(rest_ids, sample_ids[idx], coords)


def sample_based_embed(dataset: Dataset, plan: PipelinePlan):
    """Sample, embed the sample, prolong to all points, then refine on the full set.

    Returns
    -------
    (Embedding, PipelineReport)
    """
    stages = []
    t0 = time.perf_counter()
    samples = draw_nested_samples(dataset, [plan.rate], plan.seed)
    sample = materialize_sample(dataset, samples, plan.rate)
    if not 1.0 < plan.per_sample < sample.n:
        raise DataError(f"per_sample={plan.per_sample} is out of range for {sample.n} sampled points")
    if not 1.0 < plan.per_full < dataset.n:
        raise DataError(f"per_full={plan.per_full} is out of range for {dataset.n} points")
    if plan.prolong_k > sample.n:
        raise DataError(f"prolong_k={plan.prolong_k} exceeds the sample size {sample.n}")
    stages.append(_stage("sample", plan.rate, None, sample.n, time.perf_counter() - t0))

    t0 = time.perf_counter()
    init = sampled_init(dataset, sample.ids, plan.sample_optimizer.n_components)
    sample_emb, sample_trace = run_tsne(sample, plan.per_sample, plan.sample_optimizer, init=init)
    stages.append(_stage("embed_sample", plan.rate, plan.per_sample, sample.n,
                         time.perf_counter() - t0, sample_trace))

    t0 = time.perf_counter()
    placed = prolong(dataset, sample_emb, plan.prolong_k)
    all_ids = np.concatenate([sample_emb.ids, placed.ids])
    all_coords = np.vstack([sample_emb.coords, placed.coords])
    full_init = Embedding(all_coords, all_ids).subset(dataset.ids).rescaled()
    stages.append(_stage("prolong", plan.rate, None, placed.ids.size, time.perf_counter() - t0))

    t0 = time.perf_counter()
    emb, trace = run_tsne(dataset, plan.per_full, plan.full_optimizer, init=full_init)
    stages.append(_stage("embed_full", 1.0, plan.per_full, dataset.n, time.perf_counter() - t0, trace))

    report = PipelineReport(stages, plan.to_dict(), placed, sample_emb)
    return emb, report
