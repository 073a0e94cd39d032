"""k-means with k-means++ seeding, restarts, and elbow-based k selection."""
from __future__ import annotations

import warnings

import numpy as np


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i:] = centers[0]
            return centers
        probs = d2 / total
        centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, iters: int = 100):
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the worst-covered point.
                far = d2.min(axis=1).argmax()
                new_centers[j] = points[far]
        if np.allclose(new_centers, centers, rtol=0.0, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    sse = float(d2[np.arange(points.shape[0]), labels].sum())
    return centers, labels, sse


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           restarts: int = 10):
    """Best-of-`restarts` k-means; returns (centers, labels, sse)."""
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp_init(points, k, rng)
        result = _lloyd(points, centers)
        if best is None or result[2] < best[2]:
            best = result
    return best


def choose_k_elbow(points: np.ndarray, k_max: int, rng: np.random.Generator,
                   restarts: int = 10, improvement_threshold: float = 0.15):
    """Pick the cluster count by the elbow rule.

    Runs k-means for k = 1..k_max and picks the smallest k whose relative
    SSE improvement going to k+1 falls below the threshold (a zero SSE
    counts as a full stop). Returns (k, centers, labels, sse_curve).
    """
    n = points.shape[0]
    if n < k_max:
        warnings.warn(f"only {n} points; lowering k_max from {k_max} to {n}")
        k_max = max(1, n)
    runs = [kmeans(points, k, rng, restarts=restarts) for k in range(1, k_max + 1)]
    sse = [r[2] for r in runs]
    chosen = k_max
    for k in range(1, k_max):
        cur, nxt = sse[k - 1], sse[k]
        if cur <= 0.0 or (cur - nxt) / cur < improvement_threshold:
            chosen = k
            break
    centers, labels, _ = runs[chosen - 1]
    return chosen, centers, labels, np.array(sse)
