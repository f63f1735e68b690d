"""Cloud end of the protocol: budgets, decompression, wire formats, byte accounting.

Protocol messages are JSON documents with a fixed field order and compact
separators so that identical runs serialize byte-identically. The uplink is
the only client-to-cloud message and carries nothing but the R noised scores
and the mechanism parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .accountant import DEFAULT_DELTA, PrivacyLedger, ledger_for_query
from .cluster import Codebook, kmeans_compress, save_codebook
from .data import FeatureDataset
from .diversity import kcenter_select
from .errors import DataFormatError, ValidationError
from .scoring import ScoreReport, client_report

PROTOCOL_ID = "ecos/1"
QUANT_BITS_CHOICES = (8, 32)

# stage tags for deriving per-stage RNG seeds from the run seed
STAGE_COMPRESS = 1
STAGE_CLIENT = 2
STAGE_DECOMPRESS = 3

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_subseed(seed: int, tag: int) -> int:
    """64-bit sub-seed: splitmix64(splitmix64(seed) xor tag).

    Used for per-stage and per-cluster seeds so results do not depend on
    iteration order.
    """
    return _splitmix64(_splitmix64(int(seed) & _MASK64) ^ (int(tag) & _MASK64))


def stage_seed(seed: int, stage: int) -> int:
    return derive_subseed(seed, stage)


@dataclass(frozen=True)
class RunConfig:
    """Full parameter set of one protocol run; embedded in outputs for provenance."""

    r: int = 100
    budget: int = 1000
    scale_s: float = 1.0
    sigma: float = 25.0
    gamma: float = 1.0
    sensitivity: float = 2.0
    seed: int = 0
    quant_bits: int = 32
    confidence_mode: bool = False
    subsample_mode: str = "poisson"
    keep_fraction: float = 0.7
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    delta: float = DEFAULT_DELTA

    def validate(self) -> None:
        if self.r < 1:
            raise ValidationError("r must be >= 1")
        if self.budget < 0:
            raise ValidationError("budget must be >= 0")
        if self.quant_bits not in QUANT_BITS_CHOICES:
            raise ValidationError(f"quant_bits must be one of {QUANT_BITS_CHOICES}")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must be in (0, 1]")
        if self.scale_s <= 0:
            raise ValidationError("scale_s must be > 0")
        if self.sensitivity <= 0:
            raise ValidationError("sensitivity must be > 0")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must be in (0, 1)")

    def sampling_params(self) -> dict:
        """The cloud-side resolved parameters embedded in the selection output."""
        return {
            "seed": self.seed,
            "r": self.r,
            "budget": self.budget,
            "scale_s": self.scale_s,
            "sigma": self.sigma,
            "gamma": self.gamma,
            "sensitivity": self.sensitivity,
            "confidence_mode": self.confidence_mode,
            "quant_bits": self.quant_bits,
            "delta": self.delta,
        }

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(eq=False)
class BudgetPlan:
    """Integer per-cluster budgets derived from min(size share, score share) * B."""

    budgets: np.ndarray  # (r,) int64
    pre_round: np.ndarray  # (r,) float64
    total: int
    fallback_used: bool


@dataclass(eq=False)
class WireStats:
    """Analytic payload sizes; JSON envelope overhead is reported separately."""

    bytes_down: int
    bytes_up: int
    quant_bits: int
    header_down: int = 0
    header_up: int = 0


@dataclass(eq=False)
class Selection:
    """Final sampled cloud row indices with per-cluster provenance."""

    indices: np.ndarray  # int64, concatenated in cluster order, pick order within
    per_cluster: dict  # cluster id -> list of row indices in pick order
    params: dict = field(default_factory=dict)
    bytes_down: int = 0
    bytes_up: int = 0


def allocate_budgets(cluster_sizes, scores, budget: int) -> BudgetPlan:
    """Per-cluster budgets b_r = min(size_r/sum sizes, score_r/sum scores) * B.

    Integerized by floor plus largest-fractional-remainder, then capped at the
    cluster capacity; capacity-freed units are handed to uncapped clusters in
    descending score order. All scores zero falls back to size-proportional
    shares and sets fallback_used.
    """
    sizes = np.asarray(cluster_sizes, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if sizes.shape != scores.shape or sizes.ndim != 1:
        raise ValidationError("cluster_sizes and scores must be 1-d of equal length")
    if sizes.size == 0:
        raise ValidationError("at least one cluster is required")
    if (sizes < 1).any():
        raise ValidationError("every cluster must contain at least one row")
    if (scores < 0).any():
        raise ValidationError("scores must be >= 0")
    if budget < 0:
        raise ValidationError("budget must be >= 0")

    size_share = sizes / sizes.sum()
    score_sum = scores.sum()
    fallback = score_sum <= 0
    share = size_share if fallback else np.minimum(size_share, scores / score_sum)
    pre_round = share * float(budget)

    # floor + largest remainder against the floored real-valued total
    target = int(math.floor(pre_round.sum() + 1e-9))
    base = np.floor(pre_round + 1e-9).astype(np.int64)
    leftover = target - int(base.sum())
    if leftover > 0:
        frac = pre_round - base
        order = np.lexsort((np.arange(sizes.size), -frac))
        base[order[:leftover]] += 1

    # capacity cap, then hand freed units to uncapped clusters by score
    freed = int(np.maximum(base - sizes, 0).sum())
    base = np.minimum(base, sizes)
    if freed > 0:
        for i in np.lexsort((np.arange(sizes.size), -scores)):
            room = int(sizes[i] - base[i])
            if room <= 0:
                continue
            give = min(room, freed)
            base[i] += give
            freed -= give
            if freed == 0:
                break

    return BudgetPlan(
        budgets=base,
        pre_round=pre_round,
        total=int(base.sum()),
        fallback_used=bool(fallback),
    )


def decompress(cloud: FeatureDataset, codebook: Codebook, plan: BudgetPlan, seed: int) -> Selection:
    """Budgeted per-cluster farthest-first expansion of the selected centroids.

    Each cluster runs kcenter_select over its own rows with the sub-seed
    derive_subseed(seed, cluster), so clusters are independent and the merge
    order is fixed to ascending cluster index.
    """
    if plan.budgets.shape[0] != codebook.r:
        raise ValidationError("budget plan length does not match codebook")
    if codebook.assignment.shape[0] != cloud.n:
        raise ValidationError("codebook assignment does not cover the cloud dataset")
    if (plan.budgets > codebook.cluster_sizes).any():
        raise ValidationError("budget exceeds cluster capacity")

    per_cluster: dict[int, list[int]] = {}
    chunks = []
    for r in range(codebook.r):
        b = int(plan.budgets[r])
        if b < 1:
            continue
        members = np.flatnonzero(codebook.assignment == r)
        picked = kcenter_select(cloud, budget=b, seed=derive_subseed(seed, r), subset=members)
        per_cluster[r] = [int(i) for i in picked.indices]
        chunks.append(picked.indices)
    indices = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return Selection(indices=indices, per_cluster=per_cluster)


def wire_stats(r: int, d_e: int, quant_bits: int) -> WireStats:
    """Analytic payload accounting: downlink R*d_e scalars, uplink R scalars."""
    if quant_bits not in QUANT_BITS_CHOICES:
        raise ValidationError(f"quant_bits must be one of {QUANT_BITS_CHOICES}")
    if r < 0 or d_e < 0:
        raise ValidationError("r and d_e must be >= 0")
    bytes_per = quant_bits // 8
    return WireStats(
        bytes_down=r * d_e * bytes_per,
        bytes_up=r * bytes_per,
        quant_bits=quant_bits,
    )


def _quantize_columns(cents: np.ndarray) -> tuple[np.ndarray, list, list]:
    """Per-dimension affine min-max quantization to 8-bit levels."""
    lo = cents.min(axis=0).astype(np.float64)
    hi = cents.max(axis=0).astype(np.float64)
    scale = (hi - lo) / 255.0
    q = np.zeros(cents.shape, dtype=np.int64)
    nz = scale > 0
    q[:, nz] = np.clip(np.rint((cents[:, nz] - lo[nz]) / scale[nz]), 0, 255).astype(np.int64)
    return q, [float(v) for v in lo], [float(v) for v in scale]


def downlink_message(codebook: Codebook, quant_bits: int) -> dict:
    """Centroid query message; 8-bit mode sends quantization parameters in-header."""
    if quant_bits not in QUANT_BITS_CHOICES:
        raise ValidationError(f"quant_bits must be one of {QUANT_BITS_CHOICES}")
    doc = {
        "protocol": PROTOCOL_ID,
        "stage": "centroids",
        "r": codebook.r,
        "dim": codebook.dim,
        "quant_bits": quant_bits,
    }
    if quant_bits == 8:
        q, lo, scale = _quantize_columns(codebook.centroids)
        doc["quant_params"] = {"min": lo, "scale": scale}
        doc["centroids"] = [[int(v) for v in row] for row in q]
    else:
        doc["centroids"] = [[float(v) for v in row] for row in codebook.centroids]
    return doc


def parse_downlink(doc: dict) -> np.ndarray:
    """Client-side view of the downlink: the (dequantized) float32 centroid matrix."""
    _expect_stage(doc, "centroids")
    try:
        r, dim, quant_bits = doc["r"], doc["dim"], doc["quant_bits"]
        raw = np.asarray(doc["centroids"], dtype=np.float64)
        if raw.shape != (r, dim):
            raise DataFormatError(
                f"centroid matrix shape {raw.shape} does not match r={r}, dim={dim}"
            )
        if quant_bits == 8:
            params = doc["quant_params"]
            lo = np.asarray(params["min"], dtype=np.float64)
            scale = np.asarray(params["scale"], dtype=np.float64)
            raw = lo[None, :] + raw * scale[None, :]
        elif quant_bits != 32:
            raise DataFormatError(f"unsupported quant_bits {quant_bits}")
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed downlink message: {exc}") from None
    return raw.astype(np.float32)


def uplink_message(report: ScoreReport) -> dict:
    """Score report message; carries only the R noised scores and mechanism params."""
    return {
        "protocol": PROTOCOL_ID,
        "stage": "scores",
        "r": report.r,
        "scores": [float(v) for v in report.scores],
        "sigma": report.sigma,
        "gamma": report.gamma,
        "scale_s": report.scale_s,
        "sensitivity": report.sensitivity,
        "confidence_mode": report.confidence_mode,
    }


def parse_uplink(doc: dict) -> ScoreReport:
    _expect_stage(doc, "scores")
    try:
        return ScoreReport(
            r=int(doc["r"]),
            scores=np.asarray(doc["scores"], dtype=np.float64),
            sigma=float(doc["sigma"]),
            gamma=float(doc["gamma"]),
            scale_s=float(doc["scale_s"]),
            sensitivity=float(doc["sensitivity"]),
            confidence_mode=bool(doc["confidence_mode"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed uplink message: {exc}") from None


def selection_message(
    selection: Selection,
    config: RunConfig,
    ledger: PrivacyLedger,
    wire: WireStats,
) -> dict:
    return {
        "protocol": PROTOCOL_ID,
        "stage": "selection",
        "budget": config.budget,
        "indices": [int(i) for i in selection.indices],
        "per_cluster": {str(k): v for k, v in sorted(selection.per_cluster.items())},
        "bytes_down": wire.bytes_down,
        "bytes_up": wire.bytes_up,
        "ledger": ledger.to_dict(config.delta),
        "params": config.sampling_params(),
    }


def _expect_stage(doc, stage: str) -> None:
    if not isinstance(doc, dict):
        raise DataFormatError("message must be a JSON object")
    if doc.get("protocol") != PROTOCOL_ID:
        raise DataFormatError(f"unknown protocol {doc.get('protocol')!r}")
    if doc.get("stage") != stage:
        raise DataFormatError(f"expected stage {stage!r}, got {doc.get('stage')!r}")


def dumps_message(doc: dict) -> str:
    """Canonical transcript encoding: compact separators, insertion field order."""
    return json.dumps(doc, separators=(",", ":")) + "\n"


def write_message(doc: dict, path) -> None:
    Path(path).write_text(dumps_message(doc), encoding="utf-8")


def read_message(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON in {path}: {exc}") from None


def _envelope_overhead(doc: dict, payload_key: str) -> int:
    """Transcript bytes that are not the payload array itself."""
    full = len(dumps_message(doc).encode("utf-8"))
    payload = len(json.dumps(doc[payload_key], separators=(",", ":")).encode("utf-8"))
    return full - payload


@dataclass(eq=False)
class ProtocolResult:
    """Everything produced by one end-to-end run, including the wire transcript."""

    codebook: Codebook
    downlink: dict
    report: ScoreReport
    uplink: dict
    plan: BudgetPlan
    selection: Selection
    ledger: PrivacyLedger
    wire: WireStats
    selection_doc: dict


def run_protocol(cloud: FeatureDataset, client: FeatureDataset, config: RunConfig) -> ProtocolResult:
    """Run compress -> downlink -> score -> uplink -> allocate -> decompress.

    The client stage consumes the parsed downlink message and the cloud stage
    consumes the parsed uplink message, so the single-process run exercises
    exactly the same message boundary as the split-process pipeline and the
    transcript replays byte-identically.
    """
    config.validate()
    if cloud.dim != client.dim:
        raise ValidationError(
            f"dimension mismatch: cloud dim={cloud.dim}, client dim={client.dim}"
        )
    try:
        codebook = kmeans_compress(
            cloud,
            config.r,
            seed=stage_seed(config.seed, STAGE_COMPRESS),
            max_iters=config.kmeans_max_iters,
            tol=config.kmeans_tol,
        )
        downlink = downlink_message(codebook, config.quant_bits)
    except ValidationError as exc:
        raise ValidationError(f"compress stage: {exc}") from None

    try:
        client_view = parse_downlink(downlink)
        report = client_report(
            client,
            client_view,
            sigma=config.sigma,
            gamma=config.gamma,
            scale_s=config.scale_s,
            sensitivity=config.sensitivity,
            seed=stage_seed(config.seed, STAGE_CLIENT),
            confidence_mode=config.confidence_mode,
            keep_fraction=config.keep_fraction,
            subsample_mode=config.subsample_mode,
        )
        uplink = uplink_message(report)
    except ValidationError as exc:
        raise ValidationError(f"client stage: {exc}") from None

    try:
        parsed = parse_uplink(uplink)
        plan = allocate_budgets(codebook.cluster_sizes, parsed.scores, config.budget)
        selection = decompress(cloud, codebook, plan, seed=stage_seed(config.seed, STAGE_DECOMPRESS))
    except ValidationError as exc:
        raise ValidationError(f"sample stage: {exc}") from None

    ledger = ledger_for_query(
        config.sigma, config.gamma, config.sensitivity, config.subsample_mode
    )
    wire = wire_stats(config.r, cloud.dim, config.quant_bits)
    wire.header_down = _envelope_overhead(downlink, "centroids")
    wire.header_up = _envelope_overhead(uplink, "scores")
    selection.params = config.sampling_params()
    selection.bytes_down = wire.bytes_down
    selection.bytes_up = wire.bytes_up
    doc = selection_message(selection, config, ledger, wire)
    return ProtocolResult(
        codebook=codebook,
        downlink=downlink,
        report=report,
        uplink=uplink,
        plan=plan,
        selection=selection,
        ledger=ledger,
        wire=wire,
        selection_doc=doc,
    )


def write_transcript(result: ProtocolResult, outdir, compress_params: dict | None = None) -> dict:
    """Write codebook + the three protocol messages; returns the file paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "codebook": outdir / "codebook.json",
        "downlink": outdir / "downlink.json",
        "uplink": outdir / "uplink.json",
        "selection": outdir / "selection.json",
    }
    save_codebook(result.codebook, paths["codebook"], params=compress_params)
    write_message(result.downlink, paths["downlink"])
    write_message(result.uplink, paths["uplink"])
    write_message(result.selection_doc, paths["selection"])
    return paths
