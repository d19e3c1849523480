"""Identity-level k-means: average each identity's descriptors, then cluster."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

from .core import SourcePool
from .errors import ConfigError
from .rng import SplitMix64

DEFAULT_CLUSTERS = 50
MAX_ITER = 300


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    J: int
    assignment: dict[int, int]
    centroids: np.ndarray
    seed: int
    iterations: int = 0
    inertia_history: list[float] = field(default_factory=list)

    def members(self) -> list[list[int]]:
        """Identity ids per cluster, in assignment order."""
        out: list[list[int]] = [[] for _ in range(self.J)]
        for ident, c in self.assignment.items():
            out[c].append(ident)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["identity", "cluster"])
            for ident, c in self.assignment.items():
                w.writerow([ident, c])


def id_average(pool: SourcePool) -> dict[int, np.ndarray]:
    """Mean descriptor (float64) of every identity, keyed in ascending identity order."""
    if len(pool) == 0:
        raise ConfigError("pool is empty")
    ids, order, bounds = pool._grouping
    x = pool.descriptors.astype(np.float64)[order]
    sums = np.add.reduceat(x, bounds[:-1], axis=0)
    counts = np.diff(bounds)[:, None]
    means = sums / counts
    return {int(ids[k]): means[k] for k in range(len(ids))}


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return cdist(x, centroids, "sqeuclidean")


def _kmeans_pp(x: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = len(x)
    chosen = [rng.below(n)]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            # every remaining point coincides with a centre; take the lowest unused index
            used = set(chosen)
            idx = next(i for i in range(n) if i not in used)
        else:
            r = rng.random() * total
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, r, side="right"))
            idx = min(idx, n - 1)
            while closest[idx] == 0.0 and idx > 0:
                idx -= 1
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _repair_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> tuple[np.ndarray, list[int]]:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    own = d2[np.arange(len(labels)), labels].copy()
    moved: list[int] = []
    for c in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[c]:
            continue
        movable = counts[labels] > 1
        cand = np.where(movable, own, -1.0)
        i = int(np.argmax(cand))
        labels[i] = c
        own[i] = 0.0
        moved.append(i)
    return labels, moved


def _centroids(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k)[:, None]
    return sums / counts


def kmeans(points: Mapping[int, np.ndarray], J: int, seed: int) -> ClusterPartition:
    """Lloyd's algorithm with k-means++ seeding (squared Euclidean, deterministic)."""
    if J < 1:
        raise ConfigError(f"cluster count must be >= 1, got {J}")
    if len(points) < J:
        raise ConfigError(f"cannot form {J} clusters from {len(points)} identities")
    keys = list(points.keys())
    x = np.stack([np.asarray(points[k], dtype=np.float64) for k in keys])
    rng = SplitMix64(seed)
    centroids = _kmeans_pp(x, J, rng)
    labels = None
    history: list[float] = []
    it = 0
    for it in range(1, MAX_ITER + 1):
        d2 = _sq_dists(x, centroids)
        new = np.argmin(d2, axis=1)
        new, _ = _repair_empty(new, d2, J)
        changed = labels is None or not np.array_equal(new, labels)
        labels = new
        centroids = _centroids(x, labels, J)
        history.append(float(_sq_dists(x, centroids)[np.arange(len(x)), labels].sum()))
        if not changed:
            break
    assignment = {k: int(c) for k, c in zip(keys, labels)}
    return ClusterPartition(J, assignment, centroids, seed, it, history)
