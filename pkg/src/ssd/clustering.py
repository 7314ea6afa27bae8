"""Seeded k-means (k-means++ init, Lloyd refinement)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix

MAX_ITER = 100
SHIFT_TOL = 1e-6


@dataclass(frozen=True)
class KMeansModel:
    m: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # explicit differences rather than the expanded dot-product form: exact zeros stay zero
    out = np.empty((points.shape[0], centroids.shape[0]))
    step = max(1, 2**22 // max(1, centroids.size))
    for start in range(0, points.shape[0], step):
        diff = points[start : start + step, None, :] - centroids[None, :, :]
        out[start : start + step] = np.einsum("nmd,nmd->nm", diff, diff)
    return out


def _kmeanspp(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, m):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a centre; pick any unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(unused[rng.integers(unused.size)])
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return x[chosen].copy()


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, m: int) -> None:
    """Give every empty cluster the point farthest from its own centroid."""
    for j in range(m):
        counts = np.bincount(labels, minlength=m)
        if counts[j] > 0:
            continue
        dist = np.sum((x - centroids[labels]) ** 2, axis=1)
        dist[counts[labels] <= 1] = -1.0  # never empty another cluster
        idx = int(np.argmax(dist))
        labels[idx] = j
        centroids[j] = x[idx]


def _inertia(x, centroids, labels) -> float:
    return float(np.sum((x - centroids[labels]) ** 2))


def kmeans_fit(features, m: int, seed: int, *, debug: bool = False) -> KMeansModel:
    """Partition rows of ``features`` into ``m`` clusters.

    Deterministic for a fixed ``(features, m, seed)``. On return each
    non-empty centroid is the mean of the points assigned to it. With
    ``debug`` set, inertia is checked to be non-increasing every iteration.
    """
    x = as_matrix(features, "features")
    n = x.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"cluster count must satisfy 1 <= m <= n ({n}), got {m}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, m, rng)
    labels = np.zeros(n, dtype=np.int64)
    prev = np.inf
    it = 0
    for it in range(1, MAX_ITER + 1):
        labels = assign_nearest_centroids(centroids, x)
        _repair_empty(x, labels, centroids, m)
        if debug:
            current = _inertia(x, centroids, labels)
            assert current <= prev * (1 + 1e-12) + 1e-12, f"inertia rose at iteration {it}"
        new = np.empty_like(centroids)
        for j in range(m):
            new[j] = x[labels == j].mean(axis=0)
        if debug:
            refined = _inertia(x, new, labels)
            assert refined <= current * (1 + 1e-12) + 1e-12, f"inertia rose at iteration {it}"
            prev = refined
        shift = float(np.max(np.sqrt(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        if shift < SHIFT_TOL:
            break
    return KMeansModel(
        m=m,
        centroids=centroids,
        assignments=labels,
        inertia=_inertia(x, centroids, labels),
        iterations_run=it,
        seed=seed,
    )


def assign_nearest_centroids(centroids: np.ndarray, points: np.ndarray) -> np.ndarray:
    # np.argmin returns the first minimum, which is the lowest-index tie rule
    return np.argmin(_sq_dists(points, centroids), axis=1)


def assign_nearest(model: KMeansModel, points) -> np.ndarray:
    """Index of the closest centroid (squared euclidean) for each row."""
    p = as_matrix(points, "points")
    d = model.centroids.shape[1]
    if p.shape[1] != d:
        raise ValueError(f"dimension mismatch: model has d={d}, points have d={p.shape[1]}")
    return assign_nearest_centroids(model.centroids, p)
