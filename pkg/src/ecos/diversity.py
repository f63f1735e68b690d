"""Greedy farthest-first (K-Center) selection and the uniform random baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import FeatureDataset
from .errors import ValidationError


@dataclass(eq=False)
class DiverseSample:
    """Selected row indices in pick order plus the covering radius after each pick.

    radii[k] is the maximum over the candidate pool of the minimum squared
    distance to the first k+1 picks; it is non-increasing.
    """

    indices: np.ndarray  # int64
    radii: np.ndarray  # float64


def kcenter_select(
    pool: FeatureDataset,
    budget: int,
    seed: int,
    subset=None,
) -> DiverseSample:
    """Farthest-first traversal over the pool (or a row subset of it).

    The first pick is drawn uniformly from the candidates with the given seed;
    every later pick maximizes the minimum squared distance to the selected
    set, ties broken to the lowest row index. Distances to the selected set
    are maintained incrementally, which is O(budget * pool) total and exactly
    matches recomputation from scratch. With budget >= pool size the whole
    pool is returned in pick order.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if subset is None:
        cand = np.arange(pool.n, dtype=np.int64)
    else:
        cand = np.unique(np.asarray(subset, dtype=np.int64))
        if cand.size and (cand[0] < 0 or cand[-1] >= pool.n):
            raise ValidationError("subset indices out of range")
    if cand.size == 0:
        raise ValidationError("selection pool is empty")

    x = pool.data[cand].astype(np.float64)
    m = cand.size
    take = min(int(budget), m)

    rng = np.random.default_rng(seed)
    first = int(rng.integers(m))

    picked = np.empty(take, dtype=np.int64)
    picked[0] = first
    dist = cdist(x, x[first : first + 1], metric="sqeuclidean")[:, 0]
    dist[first] = 0.0
    selected = np.zeros(m, dtype=bool)
    selected[first] = True
    radii = np.empty(take, dtype=np.float64)
    radii[0] = float(dist.max())

    for k in range(1, take):
        # selected rows are masked below 0 so ties go to the lowest unselected index
        nxt = int(np.argmax(np.where(selected, -1.0, dist)))
        picked[k] = nxt
        selected[nxt] = True
        nd = cdist(x, x[nxt : nxt + 1], metric="sqeuclidean")[:, 0]
        np.minimum(dist, nd, out=dist)
        dist[nxt] = 0.0
        radii[k] = float(dist.max())

    return DiverseSample(indices=cand[picked], radii=radii)


def random_select(pool_size: int, budget: int, seed: int) -> np.ndarray:
    """Uniform sample of row indices without replacement, deterministic per seed."""
    if budget > pool_size:
        raise ValidationError(f"budget {budget} exceeds pool size {pool_size}")
    if budget < 0:
        raise ValidationError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    return rng.choice(pool_size, size=int(budget), replace=False).astype(np.int64)
