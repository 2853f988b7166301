"""Gradient descent on KL(P || Q) with a Student-t kernel in the embedding.

The schedule has two phases: an early-exaggeration phase where P is scaled
up and momentum is low, then the main phase. Updates use momentum plus
per-coordinate adaptive gains.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _kernels
from .affinity import Affinities, build_affinities
from .dataset import Dataset
from .exceptions import DataError, DivergenceError

log = logging.getLogger(__name__)

INIT_STD = 1e-4
# above this size the reported initial/final costs use the tree estimate
EXACT_COST_LIMIT = 20_000


@dataclass(eq=False)
class Embedding:
    """Low-dimensional coordinates keyed by the ids of a source dataset."""

    coords: np.ndarray
    ids: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.array(self.coords, dtype=np.float64, copy=True)
        if self.coords.ndim != 2:
            raise DataError(f"coords must be 2-D, got shape {self.coords.shape}")
        self.ids = np.array(self.ids, dtype=np.int64, copy=True).reshape(-1)
        if self.ids.shape[0] != self.coords.shape[0]:
            raise DataError("coords and ids differ in length")
        if not np.isfinite(self.coords).all():
            raise DataError("embedding coordinates must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def subset(self, ids) -> "Embedding":
        """Rows for ``ids`` in the given order."""
        ids = np.asarray(ids, dtype=np.int64)
        lookup = {int(v): i for i, v in enumerate(self.ids)}
        try:
            rows = np.fromiter((lookup[int(v)] for v in ids), dtype=np.int64, count=ids.size)
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]} not in embedding") from None
        return Embedding(self.coords[rows], ids)

    def rescaled(self, std: float = INIT_STD) -> "Embedding":
        """Copy scaled so the first coordinate has standard deviation ``std``."""
        s = np.std(self.coords[:, 0])
        coords = self.coords * (std / s) if s > 0 else self.coords.copy()
        return Embedding(coords, self.ids, dict(self.meta))


@dataclass
class OptimizerConfig:
    ee_iters: int = 250
    ee_factor: float = 12.0
    main_iters: int = 750
    momentum_early: float = 0.5
    momentum_main: float = 0.8
    learning_rate: Union[str, float] = "auto"
    theta: float = 0.5
    gain_floor: float = 0.01
    seed: int = 0
    n_components: int = 2
    # "auto" picks dense P for exact gradients and sparse P for Barnes-Hut
    affinity_mode: str = "auto"

    def __post_init__(self):
        if self.ee_iters < 0 or self.main_iters < 0:
            raise DataError("iteration counts must be non-negative")
        if self.ee_factor < 1:
            raise DataError("ee_factor must be >= 1")
        for m in (self.momentum_early, self.momentum_main):
            if not 0 <= m < 1:
                raise DataError(f"momentum {m} outside [0, 1)")
        if not 0 <= self.theta <= 1:
            raise DataError(f"theta {self.theta} outside [0, 1]")
        if self.learning_rate != "auto" and not float(self.learning_rate) > 0:
            raise DataError("learning_rate must be 'auto' or positive")
        if self.affinity_mode not in ("auto", "dense", "sparse"):
            raise DataError(f"unknown affinity mode {self.affinity_mode!r}")

    def resolved_learning_rate(self, n: int) -> float:
        if self.learning_rate == "auto":
            return max(n / 12.0, 50.0)
        return float(self.learning_rate)

    def resolved_affinity_mode(self) -> str:
        if self.affinity_mode != "auto":
            return self.affinity_mode
        return "dense" if self.theta == 0 else "sparse"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class OptimizationTrace:
    """Per-iteration unexaggerated cost, gradient norm and phase.

    With Barnes-Hut gradients the per-iteration cost uses the tree's estimate
    of the normalisation; ``initial_cost`` and ``final_cost`` are exact for
    ``n <= EXACT_COST_LIMIT``.
    """

    cost: np.ndarray
    grad_norm: np.ndarray
    phase: list
    initial_cost: float = float("nan")
    final_cost: float = float("nan")

    def __len__(self):
        return len(self.phase)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "phase", "cost", "grad_norm"])
            for i, (c, g, p) in enumerate(zip(self.cost, self.grad_norm, self.phase)):
                w.writerow([i, p, repr(float(c)), repr(float(g))])
        return path


# -- initialisation --------------------------------------------------------


def pca_init(dataset: Dataset, n_components: int = 2, scale: Optional[float] = INIT_STD) -> Embedding:
    """Project centred data onto its top principal components.

    Each component is oriented so its largest-magnitude loading is positive.
    With ``scale`` set, the result is rescaled so the first coordinate has
    that standard deviation. Rank-deficient inputs get zero columns for the
    missing components and ``meta["rank_deficient"] = True``.
    """
    if n_components > dataset.d:
        raise DataError(f"cannot take {n_components} components of {dataset.d}-D data")
    X = dataset.points
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(Xc.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0

    components = np.zeros((n_components, dataset.d))
    keep = min(rank, n_components)
    for c in range(keep):
        v = vt[c]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[c] = v
    coords = Xc @ components.T

    meta = {"rank": rank, "rank_deficient": rank < n_components}
    if meta["rank_deficient"]:
        log.warning("data has rank %d < %d components; padding with zeros", rank, n_components)
    emb = Embedding(coords, dataset.ids, meta)
    if scale is not None:
        emb = emb.rescaled(scale)
    return emb


# -- cost and gradients ----------------------------------------------------


def _check_ids(affinities: Affinities, embedding: Embedding):
    if affinities.ids.shape != embedding.ids.shape or not np.array_equal(affinities.ids, embedding.ids):
        raise DataError("embedding ids do not match affinity ids")


def _attraction(Y, P):
    kernel = _kernels.attraction_2d if Y.shape[1] == 2 else _kernels.attraction
    return kernel(Y, P.indptr, P.indices, P.data)


def _repulsion(Y, theta):
    if theta > 0:
        if Y.shape[1] != 2:
            raise DataError("Barnes-Hut gradients support 2-D embeddings only; use theta=0")
        geo, topo, leaf_of = _kernels.build_quadtree(Y)
        return _kernels.bh_repulsion(Y, geo, topo, leaf_of, float(theta))
    return _kernels.exact_repulsion(Y)


def _gradient_and_cost(P, plogp, Y, exaggeration, theta):
    attr, plogw = _attraction(Y, P)
    rep, zrow = _repulsion(Y, theta)
    Z = np.sum(zrow)
    # a diverging layout drives Z to 0; the optimizer reports that as DivergenceError
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        grad = 4.0 * (exaggeration * attr - rep / Z)
        cost = plogp - np.sum(plogw) + np.sum(P.data) * np.log(Z)
    return grad, float(cost)


def kl_cost(affinities: Affinities, embedding: Embedding) -> float:
    """``sum p_ij log(p_ij / q_ij)`` over the support of P, with Q over all pairs."""
    _check_ids(affinities, embedding)
    P = affinities.csr()
    Y = np.ascontiguousarray(embedding.coords)
    _, plogw = _attraction(Y, P)
    _, zrow = _kernels.exact_repulsion(Y)
    return float(affinities.p_log_p() - np.sum(plogw) + np.sum(P.data) * np.log(np.sum(zrow)))


def exact_gradient(affinities: Affinities, embedding: Embedding, exaggeration: float = 1.0) -> np.ndarray:
    """Gradient of the KL cost with respect to every coordinate, O(n^2)."""
    _check_ids(affinities, embedding)
    Y = np.ascontiguousarray(embedding.coords)
    grad, _ = _gradient_and_cost(affinities.csr(), affinities.p_log_p(), Y, exaggeration, 0.0)
    return grad


def bh_gradient(affinities: Affinities, embedding: Embedding, theta: float = 0.5,
                exaggeration: float = 1.0) -> np.ndarray:
    """Gradient with the repulsive term approximated by a quadtree.

    Attraction is exact over the nonzeros of P. ``theta=0`` opens every cell
    and reproduces the exact gradient up to summation order.
    """
    if not 0 <= theta <= 1:
        raise DataError(f"theta {theta} outside [0, 1]")
    _check_ids(affinities, embedding)
    Y = np.ascontiguousarray(embedding.coords)
    if Y.shape[1] != 2:
        raise DataError("Barnes-Hut gradients support 2-D embeddings only; use exact_gradient")
    P = affinities.csr()
    attr, _ = _attraction(Y, P)
    geo, topo, leaf_of = _kernels.build_quadtree(Y)
    rep, zrow = _kernels.bh_repulsion(Y, geo, topo, leaf_of, float(theta))
    return 4.0 * (exaggeration * attr - rep / np.sum(zrow))


# -- optimisation ----------------------------------------------------------


def _align_init(init: Embedding, dataset: Dataset) -> np.ndarray:
    if init.n != dataset.n:
        raise DataError(f"init has {init.n} points, dataset has {dataset.n}")
    if np.array_equal(init.ids, dataset.ids):
        return init.coords.copy()
    if not np.array_equal(np.sort(init.ids), np.sort(dataset.ids)):
        raise DataError("init ids do not match dataset ids")
    return init.subset(dataset.ids).coords


def optimize(affinities: Affinities, init: Embedding, config: OptimizerConfig):
    """Run the two-phase schedule from ``init`` on prepared affinities."""
    _check_ids(affinities, init)
    P = affinities.csr()
    plogp = affinities.p_log_p()
    n = affinities.n
    Y = np.ascontiguousarray(init.coords, dtype=np.float64).copy()
    theta = config.theta
    if Y.shape[1] != 2 and theta > 0:
        raise DataError("Barnes-Hut needs a 2-D embedding; set theta=0 for other dimensions")
    lr = config.resolved_learning_rate(n)
    total = config.ee_iters + config.main_iters

    def cost_of(coords):
        if n <= EXACT_COST_LIMIT:
            return kl_cost(affinities, Embedding(coords, affinities.ids))
        return _gradient_and_cost(P, plogp, coords, 1.0, theta)[1]

    initial_cost = cost_of(Y)
    costs = np.empty(total)
    norms = np.empty(total)
    phases = []
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)

    for it in range(total):
        early = it < config.ee_iters
        exag = config.ee_factor if early else 1.0
        momentum = config.momentum_early if early else config.momentum_main
        grad, cost = _gradient_and_cost(P, plogp, Y, exag, theta)
        costs[it] = cost
        norms[it] = np.linalg.norm(grad)
        phases.append("early" if early else "main")

        flip = (grad > 0) != (velocity > 0)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.maximum(gains, config.gain_floor, out=gains)
        # overflow shows up as non-finite coordinates, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            velocity = momentum * velocity - lr * gains * grad
            Y += velocity
            Y -= Y.mean(axis=0)
        if not np.isfinite(Y).all():
            raise DivergenceError(it)

    final_cost = cost_of(Y) if total else initial_cost
    trace = OptimizationTrace(costs, norms, phases, initial_cost, final_cost)
    emb = Embedding(Y, affinities.ids, {"perplexity": affinities.target_perplexity})
    return emb, trace


def run_tsne(dataset: Dataset, perplexity: float, config: Optional[OptimizerConfig] = None,
             init: Optional[Embedding] = None, affinities: Optional[Affinities] = None):
    """Embed ``dataset`` with t-SNE.

    Parameters
    ----------
    dataset : Dataset
    perplexity : float
    config : OptimizerConfig, optional
    init : Embedding, optional
        Starting coordinates; defaults to the scaled PCA projection.
    affinities : Affinities, optional
        Precomputed P for ``dataset`` at ``perplexity``; built when omitted.

    Returns
    -------
    (Embedding, OptimizationTrace)
    """
    config = config or OptimizerConfig()
    if affinities is None:
        affinities = build_affinities(dataset, perplexity, config.resolved_affinity_mode())
    elif not np.array_equal(affinities.ids, dataset.ids):
        raise DataError("affinities were built for a different dataset")
    if init is None:
        init = pca_init(dataset, config.n_components)
        coords = init.coords
    else:
        coords = _align_init(init, dataset)
    return optimize(affinities, Embedding(coords, dataset.ids), config)
