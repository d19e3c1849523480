import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snp_search.core import pool_from_arrays
from snp_search.errors import ConfigError
from snp_search.pruning import (
    cover_radius,
    farthest_point_order,
    fps_prune,
    kcenter_radius,
    sample_identities,
)
from snp_search.search import SearchResult


def brute_fps(x, initial, count):
    """Recompute every min-distance from scratch at each step."""
    chosen = list(initial)
    order = []
    for _ in range(count):
        best, best_i = -1.0, None
        for i in range(len(x)):
            if i in chosen:
                continue
            dmin = min(math.dist(x[i], x[j]) for j in chosen)
            if dmin > best:
                best, best_i = dmin, i
        order.append(best_i)
        chosen.append(best_i)
    return order


def exhaustive_kcenter(x, k):
    best = math.inf
    for centers in itertools.combinations(range(len(x)), k):
        r = max(min(math.dist(p, x[c]) for c in centers) for p in x)
        best = min(best, r)
    return best


def seed_picking(pool, ident, record):
    """A seed for which fps_prune picks ``record`` as ``ident``'s seed image."""
    for s in range(1000):
        if fps_prune(pool, [ident], len(pool.id_index[ident]), s).seed_images[ident] == record:
            return s
    raise AssertionError("no seed found")


# -- identity sampling ---------------------------------------------------------


def test_sample_saturates():
    assert sample_identities([5, 3, 9], 3, seed=1) == [3, 5, 9]
    assert sample_identities([5, 3, 9], 10, seed=1) == [3, 5, 9]


def test_sample_accepts_search_result():
    res = SearchResult([0], 1.0, [(0, 1.0)], [4, 2, 8])
    assert sample_identities(res, 5, seed=0) == [2, 4, 8]


def test_sample_uniform_frequency():
    counts = {"A": 0, "B": 0, "C": 0}
    ids = {0: "A", 1: "B", 2: "C"}
    trials = 10_000
    for seed in range(trials):
        (pick,) = sample_identities([0, 1, 2], 1, seed)
        counts[ids[pick]] += 1
    sigma = math.sqrt(trials * (1 / 3) * (2 / 3))
    for c in counts.values():
        assert abs(c - trials / 3) <= 3 * sigma


def test_sample_deterministic_and_validated():
    ids = list(range(100))
    assert sample_identities(ids, 10, 42) == sample_identities(ids, 10, 42)
    assert sample_identities(ids, 10, 42) != sample_identities(ids, 10, 43)
    with pytest.raises(ConfigError):
        sample_identities(ids, 0, 1)


# -- farthest point sampling ---------------------------------------------------


def test_fps_1d_example():
    pool = pool_from_arrays(np.array([0.0, 1.0, 2.0, 10.0]), [0, 0, 0, 0])
    x = pool.descriptors.astype(float)
    order = farthest_point_order(x, [0], 3)
    assert [x[i, 0] for i in order] == [10.0, 2.0, 1.0]
    assert brute_fps(x, [0], 3) == order
    # through the pruning entry point: m=3 runs the loop, m=4 covers all of ŝ
    seed = seed_picking(pool, 0, 0)
    assert [x[r, 0] for r in fps_prune(pool, [0], 3, seed).fps_order] == [10.0, 2.0]
    full = fps_prune(pool, [0], 4, seed)
    assert full.fps_order == [] and full.selected == [0, 1, 2, 3]


def test_fps_else_branch_returns_universe(rng):
    pool = pool_from_arrays(rng.normal(size=(12, 3)), [0] * 5 + [1] * 4 + [2] * 3)
    res = fps_prune(pool, [0, 2], 8, seed=3)
    assert res.selected == sorted(pool.images_of([0, 2]).tolist())
    assert res.fps_order == []


def test_fps_identical_points_index_tiebreak():
    pool = pool_from_arrays(np.ones((6, 2)), [0] * 6)
    res = fps_prune(pool, [0], 4, seed=0)
    seed_img = res.seed_images[0]
    assert res.fps_order == [i for i in range(6) if i != seed_img][:3]


def test_fps_exact_seed_budget(rng):
    pool = pool_from_arrays(rng.normal(size=(10, 2)), [0, 0, 1, 1, 1, 2, 2, 2, 2, 2])
    res = fps_prune(pool, [0, 1, 2], 3, seed=9)
    assert res.fps_order == []
    assert res.selected == [res.seed_images[i] for i in (0, 1, 2)]


def test_fps_budget_below_identities(rng):
    pool = pool_from_arrays(rng.normal(size=(4, 2)), [0, 1, 2, 3])
    with pytest.raises(ConfigError, match="cannot cover"):
        fps_prune(pool, [0, 1, 2], 2, seed=0)


@pytest.mark.parametrize("seed", range(8))
def test_fps_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 3))
    init = sorted(rng.choice(30, 3, replace=False).tolist())
    assert farthest_point_order(x, init, 10) == brute_fps(x, init, 10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 200))
def test_fps_cache_equals_naive(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    k = int(rng.integers(1, min(n, 6)))
    init = sorted(rng.choice(n, k, replace=False).tolist())
    count = int(rng.integers(0, n - k + 1))

    def check(step, cache, chosen):
        naive = np.sqrt(((x[:, None, :] - x[chosen][None, :, :]) ** 2).sum(-1)).min(axis=1)
        np.testing.assert_allclose(cache, naive, rtol=1e-12, atol=1e-12)

    farthest_point_order(x, init, count, on_step=check)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_prune_contract(seed):
    rng = np.random.default_rng(seed)
    n_ids = int(rng.integers(1, 8))
    per = rng.integers(1, 6, n_ids)
    pool = pool_from_arrays(rng.normal(size=(int(per.sum()), 2)), np.repeat(np.arange(n_ids), per))
    ids = sample_identities(list(range(n_ids)), int(rng.integers(1, n_ids + 1)), seed)
    universe = pool.images_of(ids)
    m = int(rng.integers(len(ids), len(universe) + 3))
    res = fps_prune(pool, ids, m, seed)
    assert len(res.selected) == min(m, len(universe))
    assert len(set(res.selected)) == len(res.selected)
    covered = {int(pool.identity_ids[r]) for r in res.selected}
    assert covered == set(ids)
    assert fps_prune(pool, ids, m, seed).selected == res.selected


def test_radius_monotone_along_fps(rng):
    pool = pool_from_arrays(rng.normal(size=(60, 3)), [0] * 60)
    res = fps_prune(pool, [0], 20, seed=1)
    radii = [kcenter_radius(pool, res.selected[:k], res.universe) for k in range(1, 21)]
    assert all(b <= a for a, b in zip(radii, radii[1:]))


# -- cover radius ----------------------------------------------------------------


def test_radius_zero_when_selected_is_universe(rng):
    pool = pool_from_arrays(rng.normal(size=(7, 3)), [0] * 7)
    assert kcenter_radius(pool, range(7), range(7)) == 0.0


def test_radius_two_points():
    pool = pool_from_arrays(np.array([0.0, 10.0]), [0, 0])
    assert kcenter_radius(pool, [0], [0, 1]) == 10.0


def test_radius_rejects_empty(rng):
    pool = pool_from_arrays(rng.normal(size=(3, 2)), [0] * 3)
    with pytest.raises(ValueError):
        kcenter_radius(pool, [], [0])
    with pytest.raises(ValueError):
        cover_radius(np.zeros((0, 2)), np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_fps_two_approximation_small(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 2))
    pool = pool_from_arrays(x, [0] * 12)
    res = fps_prune(pool, [0], 3, seed)
    r = kcenter_radius(pool, res.selected, res.universe)
    assert r <= 2 * exhaustive_kcenter(pool.descriptors.astype(float), 3)
