import mpmath as mp
import numpy as np
import pytest

from snp_search.core import SourcePool, merge_pools, pool_from_arrays, write_pool


def identity_blob(rng, center, n_ids, per_id, id_spread=0.5, img_spread=0.3, start=0):
    """Images of ``n_ids`` identities whose means scatter around ``center``."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    means = rng.normal(center, id_spread, (n_ids, d))
    counts = per_id if np.ndim(per_id) else np.full(n_ids, per_id)
    x = np.concatenate([rng.normal(means[i], img_spread, (counts[i], d)) for i in range(n_ids)])
    ids = np.repeat(np.arange(start, start + n_ids), counts)
    return x, ids


def blob_pool(rng, centers, n_ids=20, per_id=5, names=None, **kw) -> SourcePool:
    """One dataset per center."""
    names = names or [f"ds{k}" for k in range(len(centers))]
    parts = []
    for name, c in zip(names, centers):
        x, ids = identity_blob(rng, c, n_ids, per_id, **kw)
        parts.append(pool_from_arrays(x, ids, name))
    return merge_pools(parts)


def write_arrays(path, x, ids=None, name="ds"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    ids = np.zeros(len(x), dtype=int) if ids is None else ids
    write_pool(pool_from_arrays(x, ids, name), path)
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    w = np.exp(rng.uniform(0, np.log(cond), d))
    return (q * w) @ q.T


def mp_trace_sqrt(a, b, dps=40):
    """Oracle: eigenvalues of the (non-symmetric) product Σ_s Σ_t in high precision."""
    with mp.workdps(dps):
        if a.shape == (1, 1):
            return float(mp.sqrt(mp.mpf(a[0, 0]) * mp.mpf(b[0, 0])))
        ev = mp.eig(mp.matrix(a.tolist()) * mp.matrix(b.tolist()), left=False, right=False)
        return float(mp.fsum(mp.sqrt(max(mp.re(e), 0)) for e in ev))
