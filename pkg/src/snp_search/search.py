"""Target-specific subset search.

Clusters are ranked by their FID to the target; the candidate set grows by
adding clusters in that order, and the prefix with the lowest FID wins.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterPartition, id_average
from .core import SourcePool, TargetSet
from .errors import DataFormatError, NumericError
from .stats import GaussianStats, fid, merge_stats

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SearchResult:
    selected_clusters: list[int]
    best_fid: float
    trace: list[tuple[int, float]]
    identity_ids: list[int]
    cluster_fids: list[tuple[int, float]] = field(default_factory=list)
    partition: ClusterPartition | None = None
    merged_clusters: list[tuple[int, int]] = field(default_factory=list)


def record_clusters(pool: SourcePool, partition: ClusterPartition) -> np.ndarray:
    """Cluster label of every pool record."""
    ids = pool.identities
    try:
        labels = np.array([partition.assignment[int(i)] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise DataFormatError(f"identity {exc.args[0]} missing from the cluster partition") from None
    return labels[np.searchsorted(ids, pool.identity_ids)]


def cluster_image_counts(pool: SourcePool, partition: ClusterPartition) -> np.ndarray:
    return np.bincount(record_clusters(pool, partition), minlength=partition.J)


def merge_small_clusters(pool: SourcePool, partition: ClusterPartition) -> tuple[ClusterPartition, list[tuple[int, int]]]:
    """Fold clusters with fewer than 2 images into the nearest cluster (by centroid).

    Surviving clusters are renumbered in their original order. Returns the
    new partition and ``(old_small, old_target)`` pairs.
    """
    counts = cluster_image_counts(pool, partition)
    if counts.sum() < 2:
        raise NumericError("pool has fewer than 2 images; covariance undefined")
    target_of = list(range(partition.J))
    alive = counts.copy()
    merges: list[tuple[int, int]] = []
    cents = partition.centroids
    for c in range(partition.J):
        if alive[c] == 0 or alive[c] >= 2:
            continue
        others = [o for o in range(partition.J) if o != c and alive[o] > 0]
        valid = [o for o in others if alive[o] >= 2] or others
        d2 = [float(((cents[o] - cents[c]) ** 2).sum()) for o in valid]
        dest = valid[int(np.argmin(d2))]
        log.warning("cluster %d has %d image(s); merged into cluster %d", c, int(alive[c]), dest)
        merges.append((c, dest))
        alive[dest] += alive[c]
        alive[c] = 0
        for k in range(partition.J):
            if target_of[k] == c:
                target_of[k] = dest
    if not merges:
        return partition, []
    survivors = [c for c in range(partition.J) if alive[c] > 0]
    renum = {c: i for i, c in enumerate(survivors)}
    assignment = {ident: renum[target_of[c]] for ident, c in partition.assignment.items()}
    points = id_average(pool)
    x = np.stack([points[i] for i in assignment])
    labels = np.array(list(assignment.values()))
    cents = np.zeros((len(survivors), x.shape[1]))
    np.add.at(cents, labels, x)
    cents /= np.bincount(labels, minlength=len(survivors))[:, None]
    repaired = ClusterPartition(len(survivors), assignment, cents, partition.seed,
                                partition.iterations, partition.inertia_history)
    return repaired, merges


def cluster_stats(pool: SourcePool, partition: ClusterPartition, threads: int = 1) -> list[GaussianStats]:
    labels = record_clusters(pool, partition)
    desc = pool.descriptors

    def one(c: int) -> GaussianStats:
        return GaussianStats.from_array(desc[np.flatnonzero(labels == c)])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(partition.J)))
    return [one(c) for c in range(partition.J)]


def _target_stats(target: TargetSet | GaussianStats) -> GaussianStats:
    if isinstance(target, GaussianStats):
        return target
    return GaussianStats.from_array(target.descriptors)


def _rank(stats: list[GaussianStats], tstats: GaussianStats) -> list[tuple[int, float]]:
    if tstats.n < 2:
        raise NumericError("target needs at least 2 images")
    scored = []
    for c, s in enumerate(stats):
        if s.n < 2:
            raise NumericError(f"cluster {c} has {s.n} image(s); covariance undefined")
        scored.append((c, fid(s, tstats)))
    return sorted(scored, key=lambda cf: (cf[1], cf[0]))


def cluster_fids(pool: SourcePool, partition: ClusterPartition, target: TargetSet | GaussianStats,
                 threads: int = 1) -> list[tuple[int, float]]:
    """(cluster, FID-to-target) sorted ascending; ties by cluster index."""
    if pool.dimension != _target_stats(target).dimension:
        raise DataFormatError("pool and target dimensions differ")
    return _rank(cluster_stats(pool, partition, threads), _target_stats(target))


def best_prefix(values: list[float]) -> tuple[int, float]:
    """Length and value of the first strictly-lowest prefix, starting from epsilon = inf."""
    best, length = math.inf, 0
    for k, v in enumerate(values, start=1):
        if v < best:
            best, length = v, k
    return length, best


def greedy_search(pool: SourcePool, partition: ClusterPartition, target: TargetSet | GaussianStats,
                  threads: int = 1) -> SearchResult:
    tstats = _target_stats(target)
    if pool.dimension != tstats.dimension:
        raise DataFormatError(f"pool dimension {pool.dimension} != target dimension {tstats.dimension}")
    partition, merges = merge_small_clusters(pool, partition)
    stats = cluster_stats(pool, partition, threads)
    ranked = _rank(stats, tstats)

    running = GaussianStats.empty(pool.dimension)
    trace: list[tuple[int, float]] = []
    for c, _ in ranked:
        running = merge_stats(running, stats[c])
        trace.append((c, fid(running, tstats)))
    best_len, best = best_prefix([f for _, f in trace])
    selected = [c for c, _ in ranked[:best_len]]
    chosen = set(selected)
    ids = sorted(i for i, c in partition.assignment.items() if c in chosen)
    return SearchResult(selected, best, trace, ids, ranked, partition, merges)
