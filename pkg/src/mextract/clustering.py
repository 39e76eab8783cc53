"""Lloyd's k-means with k-means++ seeding, used over gradient embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances
    diff = points[:, np.newaxis, :] - centers[np.newaxis, :, :]
    return (diff * diff).sum(axis=2)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[j] = points[idx]
        closest = np.minimum(closest, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(points, k: int, max_iters: int = 100, tol: float = 1e-6, seed: int = 0) -> ClusterResult:
    """Cluster ``points`` (n x d) into ``k`` centers.

    k-means++ initialization (deterministic in ``seed``), Lloyd iterations
    until every center moves less than ``tol`` or ``max_iters`` is hit.
    An emptied cluster is reseeded from the point farthest from its
    current center, so exactly k centers always come back.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")

    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k, rng)

    prev_inertia = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = _sq_distances(points, centers)
        assignments = d2.argmin(axis=1)
        min_d2 = d2[np.arange(n), assignments]

        inertia = float(min_d2.sum())
        assert inertia <= prev_inertia + 1e-9, "inertia increased across a Lloyd iteration"
        prev_inertia = inertia

        new_centers = centers.copy()
        for j in range(k):
            mask = assignments == j
            if mask.any():
                new_centers[j] = points[mask].mean(axis=0)
            else:
                far = int(min_d2.argmax())
                new_centers[j] = points[far]
                min_d2[far] = 0.0
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if movement < tol:
            break

    d2 = _sq_distances(points, centers)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    return ClusterResult(
        centers=centers,
        assignments=assignments.astype(np.int64),
        inertia=inertia,
        iterations_run=iterations,
    )
