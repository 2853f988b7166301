"""Embedding quality scores and cross-embedding neighborhood agreement.

All neighbor queries are exact, and distance ties go to the smaller id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .affinity import knn_arrays
from .dataset import Dataset
from .exceptions import DataError
from .optimizer import Embedding

DEFAULT_K = 10


@dataclass(frozen=True)
class ConsistencyScore:
    knn_overlap: float
    k: int
    n_shared: int


def _mean_overlap(nbrs_a: np.ndarray, nbrs_b: np.ndarray, k: int) -> float:
    hits = 0
    for ra, rb in zip(nbrs_a, nbrs_b):
        hits += np.intersect1d(ra, rb, assume_unique=True).size
    return hits / (k * nbrs_a.shape[0])


def knn_overlap(a: Embedding, b: Embedding, k: int = DEFAULT_K) -> ConsistencyScore:
    """Mean fraction of shared k-nearest neighbors, over ids present in both embeddings."""
    shared = np.intersect1d(a.ids, b.ids)
    if shared.size <= k:
        raise DataError(f"need more than k={k} shared ids, found {shared.size}")
    ca = np.ascontiguousarray(a.subset(shared).coords)
    cb = np.ascontiguousarray(b.subset(shared).coords)
    na, _ = knn_arrays(ca, shared, k)
    nb, _ = knn_arrays(cb, shared, k)
    return ConsistencyScore(_mean_overlap(na, nb, k), k, int(shared.size))


def neighborhood_recall(dataset: Dataset, embedding: Embedding, k: int = DEFAULT_K) -> float:
    """Mean fraction of each point's high-dimensional kNN kept among its embedding kNN."""
    if not 1 <= k < dataset.n:
        raise DataError(f"k must lie in [1, {dataset.n - 1}], got {k}")
    if embedding.n != dataset.n:
        raise DataError("embedding and dataset differ in size")
    emb = embedding.subset(dataset.ids)
    nh, _ = knn_arrays(dataset.points, dataset.ids, k)
    nl, _ = knn_arrays(np.ascontiguousarray(emb.coords), dataset.ids, k)
    return _mean_overlap(nh, nl, k)


def silhouette(embedding: Embedding, labels, chunk: int = 1024) -> float:
    """Mean silhouette width with Euclidean distances in the embedding."""
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != embedding.n:
        raise DataError("one label per embedded point is required")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise DataError("silhouette needs at least 2 distinct labels")
    if counts.min() < 2:
        raise DataError(f"label {classes[np.argmin(counts)]} has a single member")

    Y = np.ascontiguousarray(embedding.coords)
    n = Y.shape[0]
    onehot = np.zeros((n, classes.size))
    onehot[np.arange(n), inverse] = 1.0
    scores = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        dist = np.sqrt(_kernels.sq_dists(Y[lo:hi], Y))
        sums = dist @ onehot
        own = inverse[lo:hi]
        rows = np.arange(hi - lo)
        a = sums[rows, own] / (counts[own] - 1)
        means = sums / counts
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        scores[lo:hi] = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(scores.mean())
