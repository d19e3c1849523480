"""Budgeted pruning: sample identities, seed one image each, then farthest-point sampling.

FPS keeps, for every candidate, its distance to the nearest already-selected
image. Adding a point only requires one pass over the candidates to refresh
that cache, so selecting ``m`` images out of ``|ŝ|`` costs O(m·|ŝ|·d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import SourcePool
from .errors import ConfigError
from .rng import SplitMix64
from .search import SearchResult

# (step, nearest-distance cache over ŝ, positions in ŝ selected so far)
StepHook = Callable[[int, np.ndarray, list[int]], None]


@dataclass(frozen=True, eq=False)
class PruneResult:
    selected: list[int]
    id_sample: list[int]
    seed_images: dict[int, int]
    fps_order: list[int]
    seed: int
    universe: list[int] = field(default_factory=list)


def sample_identities(result: SearchResult | Iterable[int], n: int, seed: int) -> list[int]:
    """Uniform sample of ``n`` identities without replacement, returned ascending."""
    if n < 1:
        raise ConfigError(f"identity budget must be >= 1, got {n}")
    ids = sorted(int(i) for i in (result.identity_ids if isinstance(result, SearchResult) else result))
    if n >= len(ids):
        return ids
    return sorted(SplitMix64(seed).sample(ids, n))


def _dist(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    diff = x - p
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def farthest_point_order(x: np.ndarray, initial: Sequence[int], count: int,
                         on_step: StepHook | None = None) -> list[int]:
    """Greedy FPS over rows of ``x`` starting from ``initial``; returns ``count`` new rows.

    Ties in the argmax go to the lowest row index.
    """
    x = np.asarray(x, dtype=np.float64)
    chosen = list(initial)
    taken = np.zeros(len(x), dtype=bool)
    nearest = np.full(len(x), np.inf)
    for p in chosen:
        taken[p] = True
        np.minimum(nearest, _dist(x, x[p]), out=nearest)
    if count > len(x) - len(chosen):
        raise ValueError("cannot pick more points than remain")
    order: list[int] = []
    for step in range(count):
        if on_step is not None:
            on_step(step, nearest.copy(), list(chosen))
        z = int(np.argmax(np.where(taken, -1.0, nearest)))
        order.append(z)
        chosen.append(z)
        taken[z] = True
        np.minimum(nearest, _dist(x, x[z]), out=nearest)
    if on_step is not None:
        on_step(count, nearest.copy(), list(chosen))
    return order


def fps_prune(pool: SourcePool, ids: Sequence[int], m: int, seed: int,
              on_step: StepHook | None = None) -> PruneResult:
    ids = sorted(int(i) for i in ids)
    if not ids:
        raise ConfigError("no identities to prune from")
    if m < len(ids):
        raise ConfigError(f"image budget m={m} cannot cover one seed image for each of {len(ids)} identities")
    universe = pool.images_of(ids)
    rng = SplitMix64(seed)
    seeds: dict[int, int] = {}
    for ident in ids:
        imgs = pool.id_index[ident]
        seeds[ident] = int(imgs[rng.below(len(imgs))])
    if len(universe) <= m:
        selected = universe.tolist()
        return PruneResult(selected, ids, seeds, [], seed, selected)

    pos = {int(r): i for i, r in enumerate(universe)}
    initial = [pos[seeds[i]] for i in ids]
    x = pool.descriptors[universe]
    order = farthest_point_order(x, initial, m - len(initial), on_step)
    fps = [int(universe[p]) for p in order]
    return PruneResult([seeds[i] for i in ids] + fps, ids, seeds, fps, seed, universe.tolist())


def cover_radius(points: np.ndarray, centers: np.ndarray, chunk: int = 2048) -> float:
    """max over ``points`` of the Euclidean distance to the nearest row of ``centers``."""
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if len(points) == 0 or len(centers) == 0:
        raise ValueError("cover radius needs non-empty point and center sets")
    radius = 0.0
    for lo in range(0, len(points), chunk):
        radius = max(radius, float(cdist(points[lo : lo + chunk], centers).min(axis=1).max()))
    return radius


def kcenter_radius(pool: SourcePool, selected: Sequence[int], universe: Sequence[int]) -> float:
    """Achieved cover radius of ``selected`` over ``universe`` (record indices)."""
    if len(selected) == 0 or len(universe) == 0:
        raise ValueError("kcenter_radius needs non-empty selected and universe")
    desc = pool.descriptors
    return cover_radius(desc[np.asarray(universe)], desc[np.asarray(selected)])
