"""Evaluation oracles, synthetic multi-domain benchmarks, and baseline sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .cluster import Codebook
from .data import FeatureDataset, min_sq_dists
from .diversity import kcenter_select, random_select
from .errors import ValidationError
from .protocol import RunConfig, Selection, run_protocol

CSV_COLUMNS = (
    "method",
    "seed",
    "budget",
    "proximity",
    "diversity",
    "id_tpr",
    "effective_samples",
    "epsilon",
    "bytes_down",
    "bytes_up",
)


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale stand-in for a multi-domain cloud/client split.

    Domain means are drawn at random directions and rescaled so the minimum
    pairwise mean distance equals `separation`; every domain is an isotropic
    Gaussian blob of standard deviation blob_std. The client draws from
    client_domains, as fresh rows (disjoint from the cloud) unless
    client_from_cloud is set.
    """

    domains: int = 5
    dim: int = 8
    cloud_per_domain: int = 2000
    client_size: int = 500
    client_domains: tuple = (0,)
    separation: float = 10.0
    blob_std: float = 1.0
    classes: int = 0
    seed: int = 0
    client_from_cloud: bool = False


@dataclass
class EvalReport:
    """One (method, seed) evaluation row."""

    method: str
    seed: int
    budget: int
    proximity: float
    diversity: float
    id_tpr: float | None
    effective_samples: int
    epsilon: float | None
    bytes_down: int
    bytes_up: int
    centroid_proximity: float | None = None


def proximity_metric(selection: FeatureDataset, client: FeatureDataset) -> float:
    """Mean over client rows of the min squared distance to the selection (lower is closer)."""
    if selection.n == 0:
        raise ValidationError("selection is empty")
    if client.n == 0:
        raise ValidationError("client dataset is empty")
    d2, _ = min_sq_dists(client.data, selection.data)
    return float(d2.mean())


def diversity_metric(selection: FeatureDataset, pool: FeatureDataset) -> float:
    """Covering radius: max over pool rows of the min squared distance to the selection.

    Lower means the selection covers the pool more evenly.
    """
    if selection.n == 0:
        raise ValidationError("selection is empty")
    if pool.n == 0:
        raise ValidationError("pool dataset is empty")
    d2, _ = min_sq_dists(pool.data, selection.data)
    return float(d2.max())


def centroid_selection_proximity(
    codebook: Codebook, selection: Selection, cloud: FeatureDataset
) -> float | None:
    """Mean over budgeted centroids of the min squared distance to the selected rows."""
    clusters = sorted(selection.per_cluster)
    if not clusters or selection.indices.size == 0:
        return None
    cents = codebook.centroids[np.asarray(clusters, dtype=np.int64)]
    d2, _ = min_sq_dists(cents, cloud.data[selection.indices])
    return float(d2.mean())


def id_tpr(selection, cloud: FeatureDataset, client_domains) -> float:
    """Fraction of selected rows whose domain tag is one of the client's domains."""
    if cloud.domains is None:
        raise ValidationError("cloud dataset has no domain tags")
    indices = selection.indices if isinstance(selection, Selection) else np.asarray(selection, dtype=np.int64)
    if indices.size == 0:
        raise ValidationError("selection is empty")
    wanted = np.isin(cloud.domains[indices], np.asarray(tuple(client_domains), dtype=np.int32))
    return float(wanted.mean())


def generate_synthetic(spec: SynthSpec) -> tuple[FeatureDataset, FeatureDataset]:
    """Seeded (cloud, client) pair of Gaussian domain blobs with domain tags.

    Draw order is fixed (means, cloud rows per domain, cloud labels, client
    rows, client labels) so a spec maps to exactly one dataset pair.
    """
    if spec.domains < 1:
        raise ValidationError("at least one domain is required")
    if any(d < 0 or d >= spec.domains for d in spec.client_domains):
        raise ValidationError("client_domains out of range")
    if spec.cloud_per_domain < 1 or spec.client_size < 0:
        raise ValidationError("infeasible sizes")
    rng = np.random.default_rng(spec.seed)

    means = rng.normal(size=(spec.domains, spec.dim))
    if spec.domains > 1:
        d2 = ((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        dmin = math.sqrt(d2[np.triu_indices(spec.domains, k=1)].min())
        if dmin == 0:
            raise ValidationError("degenerate domain means; change the seed")
        means = means * (spec.separation / dmin)

    blocks, tags = [], []
    for d in range(spec.domains):
        blocks.append(means[d] + rng.normal(0.0, spec.blob_std, size=(spec.cloud_per_domain, spec.dim)))
        tags.append(np.full(spec.cloud_per_domain, d, dtype=np.int32))
    cloud_data = np.concatenate(blocks).astype(np.float32)
    cloud_domains = np.concatenate(tags)
    cloud_labels = (
        rng.integers(0, spec.classes, size=cloud_data.shape[0]).astype(np.int32)
        if spec.classes > 0
        else None
    )
    cloud = FeatureDataset(data=cloud_data, labels=cloud_labels, domains=cloud_domains)

    # split the client size as evenly as possible across its domains
    k = len(spec.client_domains)
    counts = [spec.client_size // k + (1 if i < spec.client_size % k else 0) for i in range(k)]

    if spec.client_from_cloud:
        pools = [np.flatnonzero(cloud_domains == d) for d in spec.client_domains]
        if any(c > p.size for c, p in zip(counts, pools)):
            raise ValidationError("client_size exceeds available cloud rows in its domain")
        picked = np.concatenate(
            [np.sort(rng.choice(p, size=c, replace=False)) for c, p in zip(counts, pools)]
        )
        client = cloud.take(picked)
    else:
        rows, dom_tags = [], []
        for c, d in zip(counts, spec.client_domains):
            rows.append(means[d] + rng.normal(0.0, spec.blob_std, size=(c, spec.dim)))
            dom_tags.append(np.full(c, d, dtype=np.int32))
        client_data = np.concatenate(rows).astype(np.float32) if rows else np.empty((0, spec.dim), np.float32)
        client_labels = (
            rng.integers(0, spec.classes, size=client_data.shape[0]).astype(np.int32)
            if spec.classes > 0
            else None
        )
        client = FeatureDataset(
            data=client_data, labels=client_labels, domains=np.concatenate(dom_tags)
        )
    return cloud, client


def compare_methods(
    cloud: FeatureDataset,
    client: FeatureDataset,
    budget: int,
    seeds,
    methods=("ecos", "random", "kcenter"),
    config: RunConfig | None = None,
    client_domains=None,
) -> list[EvalReport]:
    """One EvalReport per (method, seed); baselines are client-blind and cost zero privacy."""
    base = config if config is not None else RunConfig()
    reports = []
    for seed in seeds:
        for method in methods:
            centroid_prox = None
            if method == "ecos":
                cfg = replace(base, seed=int(seed), budget=int(budget))
                result = run_protocol(cloud, client, cfg)
                indices = result.selection.indices
                eps, _ = result.ledger.epsilon(cfg.delta)
                bytes_down, bytes_up = result.wire.bytes_down, result.wire.bytes_up
                centroid_prox = centroid_selection_proximity(result.codebook, result.selection, cloud)
            elif method == "random":
                indices = random_select(cloud.n, budget, int(seed))
                eps, bytes_down, bytes_up = 0.0, 0, 0
            elif method == "kcenter":
                indices = kcenter_select(cloud, budget, int(seed)).indices
                eps, bytes_down, bytes_up = 0.0, 0, 0
            else:
                raise ValidationError(f"unknown method {method!r}")
            picked = cloud.take(indices)
            reports.append(
                EvalReport(
                    method=method,
                    seed=int(seed),
                    budget=int(budget),
                    proximity=proximity_metric(picked, client),
                    diversity=diversity_metric(picked, cloud),
                    id_tpr=(
                        id_tpr(indices, cloud, client_domains)
                        if client_domains is not None and cloud.domains is not None
                        else None
                    ),
                    effective_samples=int(indices.size),
                    epsilon=eps,
                    bytes_down=bytes_down,
                    bytes_up=bytes_up,
                    centroid_proximity=centroid_prox,
                )
            )
    return reports


def aggregate_reports(reports) -> dict:
    """Per-method mean/std of each numeric metric over seeds."""
    out: dict[str, dict] = {}
    for method in sorted({rep.method for rep in reports}):
        rows = [rep for rep in reports if rep.method == method]
        stats = {}
        for name in ("proximity", "diversity", "id_tpr", "effective_samples", "epsilon"):
            vals = [getattr(rep, name) for rep in rows if getattr(rep, name) is not None]
            if vals:
                stats[name] = {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                }
        out[method] = stats
    return out


def write_csv(reports, path) -> None:
    """Sweep rows in the published column order; missing metrics are empty fields."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            writer.writerow(
                [
                    rep.method,
                    rep.seed,
                    rep.budget,
                    repr(rep.proximity),
                    repr(rep.diversity),
                    "" if rep.id_tpr is None else repr(rep.id_tpr),
                    rep.effective_samples,
                    "" if rep.epsilon is None else repr(rep.epsilon),
                    rep.bytes_down,
                    rep.bytes_up,
                ]
            )
