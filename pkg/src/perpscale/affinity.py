"""Gaussian bandwidths, conditional neighbor probabilities and the joint matrix P.

``p_{j|i}`` is a Gaussian over squared distances with a per-point bandwidth
chosen so the row's perplexity (``2**entropy`` in bits) equals the target.
The joint matrix is ``(p_{j|i} + p_{i|j}) / (2n)`` and sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .dataset import Dataset
from .exceptions import BudgetError, DataError

DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 64
# dense mode keeps a few n x n float64 matrices alive at once
DENSE_MATRICES = 3
DEFAULT_DENSE_BYTES = 2 * 1024**3

_FLAG_NAMES = {
    _kernels.FLAG_CLAMPED_HIGH: "clamped_high",
    _kernels.FLAG_CLAMPED_LOW: "clamped_low",
    _kernels.FLAG_DEGENERATE: "degenerate_row",
}


@dataclass(frozen=True, eq=False)
class DistanceRow:
    """Squared distances from one point to a set of neighbors (self excluded)."""

    center_id: int
    neighbor_ids: np.ndarray
    sq_dists: np.ndarray

    def __post_init__(self):
        nb = np.asarray(self.neighbor_ids, dtype=np.int64).reshape(-1)
        d = np.asarray(self.sq_dists, dtype=np.float64).reshape(-1)
        if nb.shape != d.shape:
            raise DataError("neighbor_ids and sq_dists differ in length")
        if nb.size == 0:
            raise DataError("a distance row needs at least one neighbor")
        if (nb == self.center_id).any():
            raise DataError(f"point {self.center_id} lists itself as a neighbor")
        if not np.isfinite(d).all() or (d < 0).any():
            raise DataError("squared distances must be finite and non-negative")
        object.__setattr__(self, "neighbor_ids", nb)
        object.__setattr__(self, "sq_dists", d)

    @property
    def radius(self) -> float:
        """Squared distance to the farthest listed neighbor."""
        return float(self.sq_dists.max())


@dataclass(frozen=True)
class BandwidthResult:
    sigma: float
    achieved: float
    iterations: int
    flags: frozenset = field(default_factory=frozenset)

    @property
    def clamped_high(self) -> bool:
        return "clamped_high" in self.flags

    @property
    def clamped_low(self) -> bool:
        return "clamped_low" in self.flags

    @property
    def degenerate_row(self) -> bool:
        return "degenerate_row" in self.flags

    @property
    def clamped(self) -> bool:
        return bool(self.flags)


def flag_names(code: int) -> frozenset:
    name = _FLAG_NAMES.get(int(code))
    return frozenset([name]) if name else frozenset()


def row_perplexity(probabilities, atol: float = 1e-9) -> float:
    """``2**H`` of a discrete distribution, with H in bits and ``0 log 0 = 0``.

    >>> row_perplexity([0.25, 0.25, 0.25, 0.25])
    4.0
    """
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DataError("empty distribution")
    if (p < 0).any():
        raise DataError("probabilities must be non-negative")
    total = p.sum()
    if abs(total - 1.0) > atol:
        raise DataError(f"probabilities sum to {total!r}, not 1")
    nz = p[p > 0]
    entropy = -np.sum(nz * np.log2(nz))
    return float(2.0**entropy)


def find_bandwidth(row: DistanceRow, target: float, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> BandwidthResult:
    """Solve for the Gaussian bandwidth whose conditional row has perplexity ``target``.

    Unreachable targets do not raise: the result carries ``clamped_high``
    (target above the support size), ``clamped_low`` (below the number of
    tied nearest neighbors) or ``degenerate_row`` (all distances equal).
    """
    if not target > 1.0:
        raise DataError(f"target perplexity must exceed 1, got {target}")
    sigma, achieved, iters, flag = _kernels.solve_row(row.sq_dists, float(target), float(tol), int(max_iter))
    return BandwidthResult(float(sigma), float(achieved), int(iters), flag_names(flag))


def conditional_probabilities(sq_dists, sigma: float) -> np.ndarray:
    """Normalised ``exp(-d / 2 sigma^2)`` over one row of squared distances."""
    d = np.asarray(sq_dists, dtype=np.float64)
    out = np.empty_like(d)
    _kernels._row_probabilities(d, float(sigma), out)
    return out


def neighborhood_size(perplexity: float, n: int) -> int:
    """``min(n - 1, floor(3 * perplexity))`` neighbors for sparse affinities."""
    return int(max(1, min(n - 1, np.floor(3.0 * perplexity))))


def knn_arrays(points: np.ndarray, ids: np.ndarray, k: int):
    """Exact kNN as (positions, squared distances), ties broken by smaller id."""
    n = points.shape[0]
    if not 1 <= k <= n - 1:
        raise DataError(f"k must lie in [1, {n - 1}], got {k}")
    order = np.argsort(ids, kind="stable")
    X = np.ascontiguousarray(points[order])
    idx_sorted, dist = _kernels.knn(X, X, k, True)
    idx = np.empty_like(idx_sorted)
    sq = np.empty_like(dist)
    idx[order] = order[idx_sorted]
    sq[order] = dist
    return idx, sq


def knn_graph(dataset: Dataset, k: int) -> list:
    """Exact k-nearest-neighbor rows for every point, in dataset order."""
    idx, sq = knn_arrays(dataset.points, dataset.ids, k)
    return [DistanceRow(int(dataset.ids[i]), dataset.ids[idx[i]], sq[i]) for i in range(dataset.n)]


@dataclass(frozen=True, eq=False)
class Affinities:
    """Symmetric joint probabilities over points of one dataset.

    ``joint`` is a dense ndarray in dense mode and a CSR matrix in sparse
    mode; rows and columns follow ``ids``.
    """

    mode: str
    joint: object
    bandwidths: np.ndarray
    target_perplexity: float
    ids: np.ndarray
    achieved: np.ndarray
    flags: np.ndarray
    conditional: object = field(repr=False, default=None)
    k: Optional[int] = None

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def csr(self) -> sp.csr_matrix:
        if sp.issparse(self.joint):
            return self.joint
        cached = self.__dict__.get("_csr")
        if cached is None:
            cached = sp.csr_matrix(self.joint)
            cached.eliminate_zeros()
            cached.sort_indices()
            object.__setattr__(self, "_csr", cached)
        return cached

    def toarray(self) -> np.ndarray:
        return self.joint.toarray() if sp.issparse(self.joint) else np.asarray(self.joint)

    def p_log_p(self) -> float:
        cached = self.__dict__.get("_plogp")
        if cached is None:
            data = self.csr().data
            data = data[data > 0]
            cached = float(np.sum(data * np.log(data)))
            object.__setattr__(self, "_plogp", cached)
        return cached

    @property
    def clamped(self) -> np.ndarray:
        return self.flags != _kernels.FLAG_OK

    def with_ids(self, ids) -> "Affinities":
        return Affinities(self.mode, self.joint, self.bandwidths, self.target_perplexity,
                          np.asarray(ids, dtype=np.int64), self.achieved, self.flags,
                          self.conditional, self.k)


def dense_bytes(n: int) -> int:
    return DENSE_MATRICES * 8 * n * n


def _check_duplicates(sq_rows, ids, neighbor_pos=None):
    dead = np.flatnonzero(sq_rows.max(axis=1) == 0.0)
    if dead.size:
        i = dead[0]
        if neighbor_pos is None:
            dup = np.delete(ids, i)
        else:
            dup = ids[neighbor_pos[i]]
        shown = ", ".join(str(int(v)) for v in dup[:10])
        more = "..." if dup.size > 10 else ""
        raise DataError(f"point {int(ids[i])} coincides with all of its neighbors (ids {shown}{more})")


def build_affinities(dataset: Dataset, perplexity: float, mode: str = "dense",
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     max_dense_bytes: Optional[int] = DEFAULT_DENSE_BYTES) -> Affinities:
    """Solve bandwidths for every point and symmetrise into a joint matrix.

    Parameters
    ----------
    dataset : Dataset
    perplexity : float
        Target perplexity, ``1 < perplexity < n``.
    mode : {"dense", "sparse"}
        Sparse restricts each conditional row to its
        ``min(n - 1, floor(3 * perplexity))`` nearest neighbors.
    max_dense_bytes : int or None
        Memory ceiling for dense mode; ``None`` disables the check.
    """
    n = dataset.n
    if not 1.0 < perplexity < n:
        raise DataError(f"perplexity {perplexity} must lie in (1, n={n})")
    if mode not in ("dense", "sparse"):
        raise DataError(f"unknown affinity mode {mode!r}")
    X = dataset.points

    if mode == "dense":
        if max_dense_bytes is not None and dense_bytes(n) > max_dense_bytes:
            raise BudgetError(
                f"dense affinities for n={n} need ~{dense_bytes(n) / 1e9:.2f} GB, "
                f"above the {max_dense_bytes / 1e9:.2f} GB ceiling"
            )
        D = _kernels.sq_dists(X, X)
        # the zero diagonal never raises a row maximum
        _check_duplicates(D, dataset.ids)
        sigma, achieved, _, flags, P = _kernels.solve_rows_dense(D, float(perplexity), tol, max_iter)
        joint = (P + P.T) / (2.0 * n)
        np.fill_diagonal(joint, 0.0)
        return Affinities("dense", joint, sigma, float(perplexity), dataset.ids, achieved, flags, P)

    k = neighborhood_size(perplexity, n)
    idx, sq = knn_arrays(X, dataset.ids, k)
    _check_duplicates(sq, dataset.ids, idx)
    sigma, achieved, _, flags, Pk = _kernels.solve_rows(sq, float(perplexity), tol, max_iter)
    rows = np.repeat(np.arange(n), k)
    cond = sp.csr_matrix((Pk.ravel(), (rows, idx.ravel())), shape=(n, n))
    joint = ((cond + cond.T) / (2.0 * n)).tocsr()
    joint.eliminate_zeros()
    joint.sort_indices()
    return Affinities("sparse", joint, sigma, float(perplexity), dataset.ids, achieved, flags, cond, k)
