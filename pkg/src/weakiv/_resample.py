"""Deterministic resampling streams shared by every bootstrap in the package.

Replicate ``r`` always draws from ``SeedSequence(seed, spawn_key=(r,))`` so
results do not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

MAX_DROP_SHARE = 0.10


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))


def resample_indices(n, clusters, seed, r):
    """Row indices for replicate ``r`` and the cluster labels of the resample.

    With ``clusters`` given, whole clusters are drawn with replacement and a
    cluster drawn twice enters the replicate as two distinct clusters.
    """
    rng = replicate_rng(seed, r)
    if clusters is None:
        return rng.integers(0, n, size=n), None
    labels, inverse = np.unique(clusters, return_inverse=True)
    G = len(labels)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(G + 1))
    picks = rng.integers(0, G, size=G)
    rows = [order[bounds[g]:bounds[g + 1]] for g in picks]
    new_ids = np.concatenate([np.full(len(b), i) for i, b in enumerate(rows)])
    return np.concatenate(rows), new_ids


def map_replicates(fn, B, n_jobs=1):
    """Evaluate ``fn(r)`` for ``r = 0..B-1``; results come back in index order."""
    if n_jobs is None or n_jobs <= 1:
        return [fn(r) for r in range(B)]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, range(B)))
