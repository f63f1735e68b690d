"""Seeded KMeans compression of the cloud dataset into R centroids plus the cluster partition.

Lloyd's algorithm from k-means++ seeding. Centroids are stored as float32 like
the features they summarize; means are accumulated in float64 and rounded once
per update, and every assignment uses the stored float32 centroids, so a saved
codebook reproduces its own partition exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureDataset, min_sq_dists
from .errors import DataFormatError, ValidationError

DEFAULT_R = 100
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6

# assignments larger than this move to a binary sidecar next to the codebook JSON
_INLINE_ASSIGNMENT_LIMIT = 10_000


@dataclass(eq=False)
class Codebook:
    """R float32 centroids, the cloud-side partition, and the run provenance."""

    centroids: np.ndarray  # (r, dim) float32
    assignment: np.ndarray  # (n,) int32
    cluster_sizes: np.ndarray  # (r,) int64
    seed: int
    iters_run: int

    @property
    def r(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def check_consistent(self, cloud: FeatureDataset) -> None:
        """Re-derive the partition from the stored centroids and compare."""
        fresh = assign(self, cloud)
        if not np.array_equal(fresh, self.assignment):
            raise ValidationError("stored assignment is not the nearest-centroid partition")
        sizes = np.bincount(self.assignment, minlength=self.r)
        if not np.array_equal(sizes, self.cluster_sizes):
            raise ValidationError("cluster_sizes do not match the stored assignment")
        if (sizes == 0).any():
            raise ValidationError("codebook contains an empty cluster")


def assign(codebook: Codebook, ds: FeatureDataset) -> np.ndarray:
    """Nearest-centroid index per row, ties broken to the lowest centroid index."""
    if ds.dim != codebook.dim:
        raise ValidationError(
            f"dimension mismatch: dataset dim={ds.dim}, codebook dim={codebook.dim}"
        )
    _, idx = min_sq_dists(ds.data, codebook.centroids)
    return idx.astype(np.int32)


def kmeans_compress(
    cloud: FeatureDataset,
    r: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> Codebook:
    """Compress the cloud features into r centroids with Lloyd's algorithm.

    Stops when the largest squared centroid shift falls below tol times the
    mean squared feature norm, or after max_iters updates. Empty clusters are
    reseeded to the point farthest from its assigned centroid. The within-
    cluster SSE is checked to be non-increasing after every assignment.
    """
    if r < 1:
        raise ValidationError("r must be >= 1")
    if r > cloud.n:
        raise ValidationError(f"r={r} exceeds dataset size n={cloud.n}")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if tol < 0:
        raise ValidationError("tol must be >= 0")

    x = cloud.data
    x64 = x.astype(np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, r, rng)

    d2, labels = min_sq_dists(x, centroids)
    centroids, labels, d2 = _repair_empty(x, centroids, labels, d2)
    sse = float(d2.sum())
    mean_norm2 = float(np.mean(np.einsum("ij,ij->i", x64, x64)))
    threshold = tol * mean_norm2

    iters_run = 0
    for _ in range(max_iters):
        new_centroids = _cluster_means(x64, labels, r).astype(np.float32)
        shift = float(
            np.max(np.sum((new_centroids.astype(np.float64) - centroids.astype(np.float64)) ** 2, axis=1))
        )
        centroids = new_centroids
        d2, labels = min_sq_dists(x, centroids)
        centroids, labels, d2 = _repair_empty(x, centroids, labels, d2)
        new_sse = float(d2.sum())
        # non-increasing up to float32 centroid rounding at convergence
        assert new_sse <= sse * (1 + 1e-9) + 1e-12, "SSE increased during Lloyd iteration"
        sse = new_sse
        iters_run += 1
        if shift <= threshold:
            break

    sizes = np.bincount(labels, minlength=r).astype(np.int64)
    return Codebook(
        centroids=centroids,
        assignment=labels.astype(np.int32),
        cluster_sizes=sizes,
        seed=int(seed),
        iters_run=iters_run,
    )


def _kmeanspp_init(x: np.ndarray, r: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding; centroids are copies of data rows, so exactly float32.

    Per step, several candidates are drawn with probability proportional to the
    squared distance to the chosen set and the one minimizing the total
    potential wins (first on ties). Deterministic per generator state.
    """
    n = x.shape[0]
    n_trials = 2 + int(math.log(r)) if r > 1 else 1
    chosen = np.empty(r, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2, _ = min_sq_dists(x, x[chosen[:1]])
    for j in range(1, r):
        total = float(d2.sum())
        if total <= 0.0:
            # every row coincides with a chosen centroid; fall back to uniform
            chosen[j] = rng.integers(n)
            continue
        candidates = rng.choice(n, size=n_trials, p=d2 / total)
        best_idx, best_pot, best_d2 = -1, np.inf, None
        for c in candidates:
            nd, _ = min_sq_dists(x, x[int(c) : int(c) + 1])
            cand_d2 = np.minimum(d2, nd)
            pot = float(cand_d2.sum())
            if pot < best_pot:
                best_idx, best_pot, best_d2 = int(c), pot, cand_d2
        chosen[j] = best_idx
        d2 = best_d2
    return x[chosen].copy()


def _cluster_means(x64: np.ndarray, labels: np.ndarray, r: int) -> np.ndarray:
    """Per-cluster means accumulated in float64, rows visited in index order."""
    dim = x64.shape[1]
    sums = np.empty((r, dim), dtype=np.float64)
    for j in range(dim):
        sums[:, j] = np.bincount(labels, weights=x64[:, j], minlength=r)
    counts = np.bincount(labels, minlength=r).astype(np.float64)
    counts[counts == 0] = 1.0  # empty clusters are repaired afterwards
    return sums / counts[:, None]


def _repair_empty(x, centroids, labels, d2):
    """Reseed each empty cluster to the row farthest from its assigned centroid."""
    r = centroids.shape[0]
    while True:
        sizes = np.bincount(labels, minlength=r)
        empties = np.flatnonzero(sizes == 0)
        if empties.size == 0:
            return centroids, labels, d2
        far = int(np.argmax(d2))
        if d2[far] <= 0.0:
            raise ValidationError(
                "cannot repair empty cluster: every row coincides with an existing "
                "centroid (r exceeds the number of distinct rows)"
            )
        centroids = centroids.copy()
        centroids[empties[0]] = x[far]
        d2, labels = min_sq_dists(x, centroids)


def save_codebook(codebook: Codebook, path, params: dict | None = None) -> None:
    """Codebook as JSON; large assignments go to a raw int32 sidecar file.

    params, when given, is embedded verbatim for run provenance.
    """
    path = Path(path)
    doc = {
        "r": codebook.r,
        "dim": codebook.dim,
        "seed": codebook.seed,
        "iters_run": codebook.iters_run,
        "centroids": [[float(v) for v in row] for row in codebook.centroids],
        "cluster_sizes": [int(v) for v in codebook.cluster_sizes],
    }
    if codebook.assignment.shape[0] <= _INLINE_ASSIGNMENT_LIMIT:
        doc["assignment"] = [int(v) for v in codebook.assignment]
    else:
        sidecar = path.with_suffix(path.suffix + ".assign.i32")
        sidecar.write_bytes(codebook.assignment.astype("<i4").tobytes())
        doc["assignment_file"] = sidecar.name
    if params is not None:
        doc["params"] = params
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_codebook(path) -> Codebook:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    try:
        centroids = np.array(doc["centroids"], dtype=np.float32).reshape(doc["r"], doc["dim"])
        sizes = np.array(doc["cluster_sizes"], dtype=np.int64)
        if "assignment" in doc:
            assignment = np.array(doc["assignment"], dtype=np.int32)
        else:
            sidecar = path.parent / doc["assignment_file"]
            assignment = np.frombuffer(sidecar.read_bytes(), dtype="<i4").copy()
        cb = Codebook(
            centroids=centroids,
            assignment=assignment,
            cluster_sizes=sizes,
            seed=int(doc["seed"]),
            iters_run=int(doc["iters_run"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"malformed codebook file {path}: {exc}") from None
    if int(sizes.sum()) != assignment.shape[0] or (assignment >= cb.r).any():
        raise DataFormatError(f"inconsistent codebook file {path}")
    return cb
