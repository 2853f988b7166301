"""Seeded synthetic point clouds used by the tests, demos and CLI."""

import numpy as np

from .dataset import Dataset


def gaussian_mixture(n, d=10, n_clusters=5, cluster_std=1.0, radius=10.0, seed=0, name="mixture"):
    """Equal-sized spherical clusters with centres drawn uniformly in a ball.

    Points are assigned to clusters round-robin, so cluster sizes differ by
    at most one. Labels are the cluster index.
    """
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_clusters, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n_clusters) ** (1.0 / d)
    centers = directions * radii[:, None]
    labels = np.arange(n) % n_clusters
    points = centers[labels] + cluster_std * rng.normal(size=(n, d))
    return Dataset(points, labels=labels, name=name)


def separated_blobs(n, d=10, n_clusters=3, cluster_std=0.1, spacing=10.0, seed=0, name="blobs"):
    """Tight clusters whose centres sit ``spacing`` apart along the coordinate axes.

    Centre ``c`` is ``spacing * e_c`` for ``c >= 1`` and the origin for
    ``c = 0``, so every pair of centres is at least ``spacing`` apart.
    """
    if n_clusters > d + 1:
        raise ValueError("need d >= n_clusters - 1 for axis-aligned centres")
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_clusters, d))
    for c in range(1, n_clusters):
        centers[c, c - 1] = spacing
    labels = np.arange(n) % n_clusters
    points = centers[labels] + cluster_std * rng.normal(size=(n, d))
    return Dataset(points, labels=labels, name=name)


def gaussian_blob(n, d=10, seed=0, name="blob"):
    """Isotropic standard normal cloud."""
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), name=name)
