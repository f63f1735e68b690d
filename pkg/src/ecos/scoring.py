"""Client end of the protocol: centroid-coverage scores, subsampling, noising, scaling.

Noise is always added to count-valued scores before the power scaling is
applied. Scaling a noised count is post-processing, so it never changes the
privacy accounting; noising the scaled value instead would give unbounded
sensitivity for exponents above 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import Codebook
from .data import FeatureDataset, min_sq_dists
from .errors import ValidationError

DEFAULT_SENSITIVITY = 2.0
DEFAULT_KEEP_FRACTION = 0.7
SUBSAMPLE_MODES = ("poisson", "with_replacement")


@dataclass(eq=False)
class ScoreReport:
    """The uplink payload: noisy scaled coverage scores plus the mechanism parameters."""

    r: int
    scores: np.ndarray  # (r,) float64, >= 0
    sigma: float
    gamma: float
    scale_s: float
    sensitivity: float
    confidence_mode: bool = False
    seed: int | None = None  # client-local provenance, never sent on the wire

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (self.r,):
            raise ValidationError(f"scores must have length r={self.r}")
        if self.scores.size and self.scores.min() < 0:
            raise ValidationError("scores must be non-negative (clamp before scaling)")
        _check_mechanism_params(self.sigma, self.gamma, self.scale_s, self.sensitivity)


def _check_mechanism_params(sigma, gamma, scale_s, sensitivity):
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if not 0 < gamma <= 1:
        raise ValidationError("gamma must be in (0, 1]")
    if scale_s <= 0:
        raise ValidationError("scale_s must be > 0")
    if sensitivity <= 0:
        raise ValidationError("sensitivity must be > 0")


def _centroid_matrix(codebook) -> np.ndarray:
    """Accept a Codebook or a raw (r, dim) centroid matrix."""
    if isinstance(codebook, Codebook):
        return codebook.centroids
    cents = np.asarray(codebook, dtype=np.float32)
    if cents.ndim != 2:
        raise ValidationError("centroids must be a 2-d matrix")
    return cents


def nearest_centroids(client: FeatureDataset, codebook) -> np.ndarray:
    """Per-row nearest centroid index, ties to the lowest index."""
    cents = _centroid_matrix(codebook)
    if client.dim != cents.shape[1]:
        raise ValidationError(
            f"dimension mismatch: client dim={client.dim}, centroids dim={cents.shape[1]}"
        )
    if client.n == 0:
        return np.empty(0, dtype=np.int64)
    _, idx = min_sq_dists(client.data, cents)
    return idx


def coverage_scores(client: FeatureDataset, codebook) -> np.ndarray:
    """Raw centroid-coverage counts: v[r] = number of client rows nearest to centroid r."""
    cents = _centroid_matrix(codebook)
    idx = nearest_centroids(client, codebook)
    return np.bincount(idx, minlength=cents.shape[0]).astype(np.int64)


def privatize_scores(
    v,
    sigma: float,
    gamma: float,
    seed: int,
    row_clusters=None,
    subsample_mode: str = "poisson",
) -> np.ndarray:
    """Subsample (when gamma < 1), add Gaussian noise, and clamp at zero.

    With gamma < 1 the counts are recomputed over a subsampled client set, so
    the per-row cluster indices are required: "poisson" keeps each row
    independently with probability gamma, "with_replacement" draws
    ceil(gamma * n) rows with replacement. sigma == 0 and gamma == 1 return
    the input counts unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError("scores must be a 1-d vector")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if not 0 < gamma <= 1:
        raise ValidationError("gamma must be in (0, 1]")
    if subsample_mode not in SUBSAMPLE_MODES:
        raise ValidationError(f"subsample_mode must be one of {SUBSAMPLE_MODES}")

    rng = np.random.default_rng(seed)
    if gamma < 1:
        if row_clusters is None:
            raise ValidationError("gamma < 1 requires row_clusters to recount scores")
        row_clusters = np.asarray(row_clusters, dtype=np.int64)
        kept = _subsample_rows(row_clusters.shape[0], gamma, subsample_mode, rng)
        base = np.bincount(row_clusters[kept], minlength=v.shape[0]).astype(np.float64)
    else:
        base = v
    if sigma > 0:
        base = base + rng.normal(0.0, sigma, size=v.shape[0])
    return np.maximum(base, 0.0)


def _subsample_rows(n: int, gamma: float, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "poisson":
        return np.flatnonzero(rng.random(n) < gamma)
    m = math.ceil(gamma * n)
    return rng.integers(0, n, size=m) if n else np.empty(0, dtype=np.int64)


def scale_scores(v, s: float) -> np.ndarray:
    """Elementwise power x**s; strictly increasing, so cluster ranking is preserved."""
    v = np.asarray(v, dtype=np.float64)
    if s <= 0:
        raise ValidationError("scale exponent s must be > 0")
    if v.size and v.min() < 0:
        raise ValidationError("negative score passed to scale_scores; clamp first")
    return np.power(v, s)


def confidence_scores(
    client: FeatureDataset, codebook, keep_fraction: float = DEFAULT_KEEP_FRACTION
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster label confidence plus the per-class top-fraction row filter.

    Confidence of a cluster is the vote count of its most frequent class minus
    that of the second most frequent (an absent second class counts as zero).
    The filter keeps, per class, the top keep_fraction of that class's rows
    ranked by their cluster's confidence; ranking ties keep the earliest rows.
    Returns (confidence per cluster, boolean keep mask over client rows).
    """
    if client.labels is None:
        raise ValidationError("confidence scoring requires a labeled client dataset")
    if not 0 < keep_fraction <= 1:
        raise ValidationError("keep_fraction must be in (0, 1]")
    cents = _centroid_matrix(codebook)
    idx = nearest_centroids(client, codebook)
    v_conf = _cluster_confidence(client.labels, idx, cents.shape[0])
    row_conf = v_conf[idx] if client.n else np.empty(0)
    keep = _keep_mask(client.labels, row_conf, keep_fraction)
    return v_conf, keep


def _cluster_confidence(labels, row_clusters, r) -> np.ndarray:
    v_conf = np.zeros(r, dtype=np.float64)
    for cluster in range(r):
        members = labels[row_clusters == cluster]
        if members.size == 0:
            continue
        counts = np.sort(np.bincount(members))[::-1]
        second = counts[1] if counts.size > 1 else 0
        v_conf[cluster] = float(counts[0] - second)
    return v_conf


def client_report(
    client: FeatureDataset,
    codebook,
    *,
    sigma: float,
    gamma: float,
    scale_s: float,
    seed: int,
    sensitivity: float = DEFAULT_SENSITIVITY,
    confidence_mode: bool = False,
    keep_fraction: float = DEFAULT_KEEP_FRACTION,
    subsample_mode: str = "poisson",
) -> ScoreReport:
    """Full client pipeline: partition, score, subsample, noise, clamp, scale.

    In confidence mode the noised quantity is (v_conf + v) / 2 recomputed over
    the subsampled and confidence-filtered rows; otherwise it is the plain
    coverage count vector. Deterministic per seed.
    """
    _check_mechanism_params(sigma, gamma, scale_s, sensitivity)
    cents = _centroid_matrix(codebook)
    r = cents.shape[0]
    idx = nearest_centroids(client, codebook)
    rng = np.random.default_rng(seed)

    if not confidence_mode:
        # same draw sequence as privatize_scores(seed): subsample mask, then noise
        noisy = privatize_scores(
            np.bincount(idx, minlength=r).astype(np.float64),
            sigma,
            gamma,
            seed,
            row_clusters=idx,
            subsample_mode=subsample_mode,
        )
    else:
        if client.labels is None:
            raise ValidationError("confidence_mode requires a labeled client dataset")
        if gamma < 1:
            rows = _subsample_rows(client.n, gamma, subsample_mode, rng)
        else:
            rows = np.arange(client.n)
        sub_labels = client.labels[rows]
        sub_idx = idx[rows]
        v_conf = _cluster_confidence(sub_labels, sub_idx, r)
        keep = _keep_mask(sub_labels, v_conf[sub_idx] if rows.size else np.empty(0), keep_fraction)
        counts = np.bincount(sub_idx[keep], minlength=r).astype(np.float64)
        combined = (v_conf + counts) / 2.0
        if sigma > 0:
            combined = combined + rng.normal(0.0, sigma, size=r)
        noisy = np.maximum(combined, 0.0)

    return ScoreReport(
        r=r,
        scores=scale_scores(noisy, scale_s),
        sigma=float(sigma),
        gamma=float(gamma),
        scale_s=float(scale_s),
        sensitivity=float(sensitivity),
        confidence_mode=bool(confidence_mode),
        seed=int(seed),
    )


def _keep_mask(labels, row_conf, keep_fraction) -> np.ndarray:
    keep = np.zeros(labels.shape[0], dtype=bool)
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        k = math.ceil(keep_fraction * rows.size - 1e-9)
        order = rows[np.argsort(-row_conf[rows], kind="stable")]
        keep[order[:k]] = True
    return keep


def client_cost_estimate(client_n: int, r: int, d_e: int, c_phi: float):
    """Client-side MAC estimate: feature extraction plus nearest-centroid search.

    c_phi * client_n covers extraction; (d_e + 1) * r * client_n covers the
    pairwise distances to r centroids and the per-row argmin.
    """
    if min(client_n, r, d_e) < 0 or c_phi < 0:
        raise ValidationError("cost inputs must be >= 0")
    return c_phi * client_n + (d_e + 1) * r * client_n
