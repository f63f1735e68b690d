"""Feature datasets, squared-L2 nearest-reference search, and the .ecf on-disk format.

All distances in this package are squared L2; square roots are taken only when
a report explicitly asks for metric radii. Feature storage is float32,
accumulation is float64.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataFormatError, ValidationError

ECF_MAGIC = b"ECOS"
ECF_VERSION = 1
_FLAG_LABELS = 0x1
_FLAG_DOMAINS = 0x2
# magic, version u16 LE, flags u16 LE, n u64 LE, dim u32 LE
_HEADER = struct.Struct("<4sHHQI")

# cap on the (query rows x ref rows) float64 scratch used per chunk
_CHUNK_BYTES = 1 << 25


class DistanceKind(enum.Enum):
    """Distance used throughout; only squared L2 is defined in version 1."""

    SQUARED_L2 = "squared_l2"


@dataclass(eq=False)
class FeatureDataset:
    """n rows of dim-dimensional float32 features with optional int32 labels and domain tags."""

    data: np.ndarray
    labels: np.ndarray | None = None
    domains: np.ndarray | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-d, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValidationError("feature dimension must be >= 1")
        bad = ~np.isfinite(data)
        if bad.any():
            row = int(np.flatnonzero(bad.any(axis=1))[0])
            raise DataFormatError(f"non-finite at row {row}")
        self.data = data
        for name in ("labels", "domains"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.ascontiguousarray(arr, dtype=np.int32)
            if arr.shape != (data.shape[0],):
                raise ValidationError(
                    f"{name} must have length {data.shape[0]}, got shape {arr.shape}"
                )
            if arr.size and arr.min() < 0:
                raise ValidationError(f"{name} must be non-negative ids")
            setattr(self, name, arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def take(self, indices) -> "FeatureDataset":
        """Row subset as a new dataset, keeping labels/domains when present."""
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(
            data=self.data[idx],
            labels=None if self.labels is None else self.labels[idx],
            domains=None if self.domains is None else self.domains[idx],
        )

    def equals(self, other: "FeatureDataset") -> bool:
        """Bit-exact equality on all fields, including label/domain presence."""
        if self.data.shape != other.data.shape:
            return False
        if self.data.tobytes() != other.data.tobytes():
            return False
        for a, b in ((self.labels, other.labels), (self.domains, other.domains)):
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def save_dataset(ds: FeatureDataset, path) -> None:
    """Write a dataset as .ecf; load_dataset(save_dataset(ds)) is the identity."""
    flags = 0
    if ds.labels is not None:
        flags |= _FLAG_LABELS
    if ds.domains is not None:
        flags |= _FLAG_DOMAINS
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ECF_MAGIC, ECF_VERSION, flags, ds.n, ds.dim))
        fh.write(ds.data.tobytes(order="C"))
        if ds.labels is not None:
            fh.write(ds.labels.tobytes())
        if ds.domains is not None:
            fh.write(ds.domains.tobytes())


def load_dataset(path, fmt: str = "binary", csv_labels: bool = False) -> FeatureDataset:
    """Load a dataset from .ecf ("binary") or comma-separated text ("csv").

    csv_labels selects an integer label column as the trailing CSV field.
    Malformed input raises DataFormatError naming the offending byte offset or row.
    """
    if fmt == "binary":
        return _load_ecf(path)
    if fmt == "csv":
        return _load_csv(path, csv_labels)
    raise ValidationError(f"unknown dataset format {fmt!r}")


def _load_ecf(path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(
            f"truncated header: need {_HEADER.size} bytes, found {len(raw)}"
        )
    magic, version, flags, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != ECF_MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at byte 0")
    if version != ECF_VERSION:
        raise DataFormatError(f"unsupported version {version} at byte 4")
    if flags & ~(_FLAG_LABELS | _FLAG_DOMAINS):
        raise DataFormatError(f"unknown flag bits 0x{flags:x} at byte 6")
    if dim < 1:
        raise DataFormatError("dim must be >= 1 (byte 16)")

    offset = _HEADER.size
    feat_bytes = n * dim * 4
    int_blocks = bool(flags & _FLAG_LABELS) + bool(flags & _FLAG_DOMAINS)
    expected = offset + feat_bytes + int_blocks * n * 4
    if len(raw) != expected:
        raise DataFormatError(
            f"size mismatch for n={n}, dim={dim}: expected {expected} bytes, found {len(raw)}"
            f" (feature block starts at offset {offset})"
        )
    data = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
    offset += feat_bytes
    labels = domains = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=offset)
        offset += n * 4
    if flags & _FLAG_DOMAINS:
        domains = np.frombuffer(raw, dtype="<i4", count=n, offset=offset)
    return FeatureDataset(data=data.copy(), labels=labels, domains=domains)


def _load_csv(path, csv_labels: bool) -> FeatureDataset:
    rows, labels = [], []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if csv_labels:
                if len(parts) < 2:
                    raise DataFormatError(f"row {lineno} has no label column")
                *parts, label = parts
                try:
                    labels.append(int(label))
                except ValueError:
                    raise DataFormatError(f"bad label {label!r} at row {lineno}") from None
            if dim is None:
                dim = len(parts)
            elif len(parts) != dim:
                raise DataFormatError(
                    f"row {lineno} has {len(parts)} values, expected {dim}"
                )
            try:
                rows.append([float(tok) for tok in parts])
            except ValueError as exc:
                raise DataFormatError(f"bad value at row {lineno}: {exc}") from None
    if dim is None:
        raise DataFormatError("csv file contains no rows")
    data = np.array(rows, dtype=np.float32)
    return FeatureDataset(data=data, labels=np.array(labels, np.int32) if csv_labels else None)


def min_sq_dists(queries: np.ndarray, refs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per query row: (min squared L2 distance over refs, lowest argmin index).

    Pure function over raw matrices; computed in float64 in query chunks.
    Each query row is independent, so the chunking cannot change any result.
    """
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ValidationError(
            f"dimension mismatch: queries {q.shape} vs refs {r.shape}"
        )
    if r.shape[0] < 1:
        raise ValidationError("refs must contain at least one row")
    nq = q.shape[0]
    best = np.empty(nq, dtype=np.float64)
    argmin = np.empty(nq, dtype=np.int64)
    chunk = max(1, _CHUNK_BYTES // (8 * r.shape[0])) if r.shape[0] else nq
    for start in range(0, nq, chunk):
        stop = min(start + chunk, nq)
        d = cdist(q[start:stop], r, metric="sqeuclidean")
        # np.argmin returns the first occurrence: ties break to the lowest index
        idx = np.argmin(d, axis=1)
        argmin[start:stop] = idx
        best[start:stop] = d[np.arange(stop - start), idx]
    return best, argmin


def pairwise_min_dist(
    queries: FeatureDataset, refs: FeatureDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Dataset-level wrapper around min_sq_dists."""
    if queries.dim != refs.dim:
        raise ValidationError(
            f"dimension mismatch: queries dim={queries.dim}, refs dim={refs.dim}"
        )
    return min_sq_dists(queries.data, refs.data)
