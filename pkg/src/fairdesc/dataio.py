"""Descriptor dataset handling.

A DescriptorSet is a matrix of single-precision feature rows plus an integer
identity label per row and any number of named categorical attribute columns.
This module covers the bit-exact binary file format, a CSV import path, a
synthetic generator with a controllable attribute-leakage dial, row splits,
and attribute regrouping.

Binary descriptor format (all little-endian)::

    bytes  "PASSDESC"
    u32    version (currently 1)
    u32    D                 feature dimension
    u64    N                 row count
    u32    attr_count
    per attribute:
        u16    name length in bytes
        bytes  name (utf-8)
        u32    category count
    f32[N*D]   features, row-major
    u32[N]     identity labels
    u16[N]     labels, once per attribute in header order
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .binio import ByteReader
from .errors import (
    BadMagicError,
    FormatError,
    IoError,
    LabelCountError,
    LabelError,
    MappingError,
    SpecError,
    SplitError,
    VersionError,
)

DESCRIPTOR_MAGIC = b"PASSDESC"
DESCRIPTOR_VERSION = 1


@dataclass
class AttributeColumn:
    labels: np.ndarray  # [N] category indices
    n_categories: int


@dataclass
class DescriptorSet:
    features: np.ndarray  # [N, D] float32
    identity_labels: np.ndarray  # [N] nonnegative ints
    attributes: dict[str, AttributeColumn] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.identity_labels = np.ascontiguousarray(self.identity_labels, dtype=np.int64)
        for name, col in self.attributes.items():
            self.attributes[name] = AttributeColumn(
                np.ascontiguousarray(col.labels, dtype=np.int64), int(col.n_categories)
            )
        self.validate()

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise LabelError(f"features must be 2-D, got shape {self.features.shape}")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise LabelError("descriptor set needs at least one row and one column")
        if not np.all(np.isfinite(self.features)):
            raise LabelError("features contain NaN or Inf")
        if self.identity_labels.shape != (n,):
            raise LabelError("identity label count does not match row count")
        if np.any(self.identity_labels < 0):
            raise LabelError("identity labels must be nonnegative")
        for name, col in self.attributes.items():
            if col.labels.shape != (n,):
                raise LabelCountError(
                    f"attribute {name!r} has {col.labels.shape[0]} labels for {n} rows"
                )
            if col.n_categories < 1:
                raise LabelError(f"attribute {name!r} must have at least one category")
            if np.any(col.labels < 0) or np.any(col.labels >= col.n_categories):
                raise LabelCountError(
                    f"attribute {name!r} has labels outside [0, {col.n_categories})"
                )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_identities(self) -> int:
        return int(self.identity_labels.max()) + 1

    def attribute(self, name: str) -> AttributeColumn:
        if name not in self.attributes:
            available = ", ".join(self.attributes) or "none"
            raise LabelError(f"no attribute named {name!r} (available: {available})")
        return self.attributes[name]

    def take(self, indices: np.ndarray) -> "DescriptorSet":
        """Row subset preserving attribute declarations."""
        idx = np.asarray(indices, dtype=np.int64)
        return DescriptorSet(
            self.features[idx],
            self.identity_labels[idx],
            {
                name: AttributeColumn(col.labels[idx], col.n_categories)
                for name, col in self.attributes.items()
            },
        )

    def with_features(self, features: np.ndarray) -> "DescriptorSet":
        """Same rows and labels, different feature matrix (e.g. transformed)."""
        return DescriptorSet(
            features,
            self.identity_labels.copy(),
            {
                name: AttributeColumn(col.labels.copy(), col.n_categories)
                for name, col in self.attributes.items()
            },
        )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass
class AttributeSpec:
    """One synthetic attribute: category count, leak dial, optional mapping."""

    name: str
    n_categories: int
    leak_strength: float
    assignment: np.ndarray | None = None  # per-identity category, [n_identities]


@dataclass
class SynthSpec:
    n_identities: int
    samples_per_identity: int
    dim: int
    attributes: list[AttributeSpec] = field(default_factory=list)
    cluster_spread: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_identities < 1 or self.samples_per_identity < 1 or self.dim < 1:
            raise SpecError("identity count, samples per identity and dim must be >= 1")
        if not self.cluster_spread > 0:
            raise SpecError("cluster_spread must be positive")
        names = set()
        for attr in self.attributes:
            if attr.name in names:
                raise SpecError(f"duplicate attribute name {attr.name!r}")
            names.add(attr.name)
            if attr.n_categories < 2:
                raise SpecError(f"attribute {attr.name!r} needs at least 2 categories")
            if attr.leak_strength < 0:
                raise SpecError(f"attribute {attr.name!r} has negative leak_strength")
            if attr.assignment is not None:
                a = np.asarray(attr.assignment)
                if a.shape != (self.n_identities,):
                    raise SpecError(
                        f"attribute {attr.name!r} assignment must map every identity"
                    )
                if np.any(a < 0) or np.any(a >= attr.n_categories):
                    raise SpecError(f"attribute {attr.name!r} assignment out of range")
        total_dirs = sum(a.n_categories for a in self.attributes)
        if total_dirs and total_dirs >= self.dim:
            raise SpecError(
                f"dim {self.dim} too small to host {total_dirs} orthogonal "
                "attribute directions plus identity structure"
            )


def _balanced_assignment(
    n_identities: int, n_categories: int, rng: np.random.Generator
) -> np.ndarray:
    reps = math.ceil(n_identities / n_categories)
    cats = np.tile(np.arange(n_categories, dtype=np.int64), reps)[:n_identities]
    rng.shuffle(cats)
    return cats


def generate_synthetic(spec: SynthSpec) -> DescriptorSet:
    """Clustered unit-norm identities plus per-category offsets along fixed
    orthonormal directions.

    Identity cluster centers are confined to the orthogonal complement of the
    attribute-direction subspace, so with leak_strength 0 the features carry
    no attribute signal at all, and the signal grows linearly with the dial.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5D1]))
    n_id, spi, dim = spec.n_identities, spec.samples_per_identity, spec.dim
    n_rows = n_id * spi

    total_dirs = sum(a.n_categories for a in spec.attributes)
    if total_dirs:
        q, _ = np.linalg.qr(rng.standard_normal((dim, total_dirs)))
    else:
        q = np.zeros((dim, 0))

    assignments: dict[str, np.ndarray] = {}
    for attr in spec.attributes:
        if attr.assignment is not None:
            assignments[attr.name] = np.asarray(attr.assignment, dtype=np.int64)
        else:
            assignments[attr.name] = _balanced_assignment(n_id, attr.n_categories, rng)

    centers = rng.standard_normal((n_id, dim))
    if total_dirs:
        centers = centers - (centers @ q) @ q.T
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise SpecError("degenerate identity center drawn; use another seed")
    centers /= norms

    identity = np.repeat(np.arange(n_id, dtype=np.int64), spi)
    features = centers[identity] + spec.cluster_spread * rng.standard_normal(
        (n_rows, dim)
    )

    offset = 0
    attributes: dict[str, AttributeColumn] = {}
    for attr in spec.attributes:
        per_id = assignments[attr.name]
        dirs = q[:, offset : offset + attr.n_categories].T  # [n_cat, dim]
        offset += attr.n_categories
        labels = per_id[identity]
        features += attr.leak_strength * dirs[labels]
        attributes[attr.name] = AttributeColumn(labels, attr.n_categories)

    return DescriptorSet(features.astype(np.float32), identity, attributes)


# ---------------------------------------------------------------------------
# Binary format
# ---------------------------------------------------------------------------


def write_descriptors(ds: DescriptorSet, path: str) -> None:
    if np.any(ds.identity_labels >= 2**32):
        raise FormatError("identity labels exceed u32 range")
    parts = [DESCRIPTOR_MAGIC]
    parts.append(
        struct.pack(
            "<IIQI", DESCRIPTOR_VERSION, ds.dim, ds.n_rows, len(ds.attributes)
        )
    )
    for name, col in ds.attributes.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"attribute name {name!r} too long")
        if col.n_categories > 0x10000:
            raise FormatError(f"attribute {name!r} exceeds u16 label range")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", col.n_categories))
    parts.append(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    parts.append(ds.identity_labels.astype("<u4").tobytes())
    for col in ds.attributes.values():
        parts.append(col.labels.astype("<u2").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_descriptors(path: str) -> DescriptorSet:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    r = ByteReader(data)
    magic = r.read(len(DESCRIPTOR_MAGIC))
    if magic != DESCRIPTOR_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {DESCRIPTOR_MAGIC!r}")
    version, dim, n_rows, attr_count = r.unpack("<IIQI")
    if version != DESCRIPTOR_VERSION:
        raise VersionError(f"unsupported descriptor version {version}")
    if n_rows < 1 or dim < 1:
        raise FormatError("descriptor file declares an empty matrix")
    headers: list[tuple[str, int]] = []
    for _ in range(attr_count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (n_att,) = r.unpack("<I")
        headers.append((name, n_att))
    features = np.frombuffer(r.read(4 * n_rows * dim), dtype="<f4").reshape(n_rows, dim)
    ids = np.frombuffer(r.read(4 * n_rows), dtype="<u4").astype(np.int64)
    attributes: dict[str, AttributeColumn] = {}
    for name, n_att in headers:
        labels = np.frombuffer(r.read(2 * n_rows), dtype="<u2").astype(np.int64)
        if np.any(labels >= n_att):
            raise LabelCountError(
                f"attribute {name!r} has labels >= declared count {n_att}"
            )
        attributes[name] = AttributeColumn(labels, n_att)
    if not r.done():
        raise FormatError(f"trailing bytes after payload (offset {r.pos})")
    return DescriptorSet(features.copy(), ids, attributes)


def read_descriptors_csv(path: str) -> DescriptorSet:
    """Import path for external descriptors.

    Expects a header row ``id,a1,...,aD,<attr>,...`` where every column after
    the features is a categorical attribute with integer labels.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FormatError("empty CSV")
    header = rows[0]
    if not header or header[0] != "id":
        raise FormatError("CSV header must start with 'id'")
    dim = 0
    while dim + 1 < len(header) and header[dim + 1] == f"a{dim + 1}":
        dim += 1
    if dim == 0:
        raise FormatError("CSV header declares no feature columns a1..aD")
    attr_names = header[dim + 1 :]
    body = rows[1:]
    if not body:
        raise FormatError("CSV has no data rows")
    try:
        ids = np.array([int(row[0]) for row in body], dtype=np.int64)
        features = np.array(
            [[float(v) for v in row[1 : dim + 1]] for row in body], dtype=np.float32
        )
        attr_cols = {
            name: np.array(
                [int(row[dim + 1 + k]) for row in body], dtype=np.int64
            )
            for k, name in enumerate(attr_names)
        }
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed CSV row: {exc}") from exc
    attributes = {
        name: AttributeColumn(labels, int(labels.max()) + 1)
        for name, labels in attr_cols.items()
    }
    return DescriptorSet(features, ids, attributes)


# ---------------------------------------------------------------------------
# Splits and regrouping
# ---------------------------------------------------------------------------


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float]  # train, val, test; sums to 1
    stratify_by: str = "identity"  # "identity" or an attribute name
    seed: int = 0

    def validate(self) -> None:
        if len(self.fractions) != 3:
            raise SplitError("exactly three split fractions required")
        for f in self.fractions:
            if not 0.0 < f < 1.0:
                raise SplitError(f"split fraction {f} outside (0, 1)")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SplitError(f"split fractions sum to {sum(self.fractions)}, not 1")


def _allocate(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Largest-remainder integer allocation; counts are within 1 of exact."""
    exact = [f * n for f in fractions]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(
        range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _grouped_split_indices(
    group_of_row: np.ndarray,
    fractions: tuple[float, ...],
    rng: np.random.Generator,
    by_group: bool,
) -> list[np.ndarray]:
    """Assign rows to splits.

    With by_group=True whole groups land in one split (identity split); with
    by_group=False each group's rows are spread proportionally (stratified).
    """
    n_splits = len(fractions)
    buckets: list[list[np.ndarray]] = [[] for _ in range(n_splits)]
    groups = np.unique(group_of_row)
    if by_group:
        perm = rng.permutation(groups)
        counts = _allocate(len(groups), fractions)
        start = 0
        for s, count in enumerate(counts):
            chosen = perm[start : start + count]
            start += count
            buckets[s].append(np.flatnonzero(np.isin(group_of_row, chosen)))
    else:
        for g in groups:
            rows = np.flatnonzero(group_of_row == g)
            rows = rng.permutation(rows)
            counts = _allocate(len(rows), fractions)
            start = 0
            for s, count in enumerate(counts):
                buckets[s].append(rows[start : start + count])
                start += count
    out = []
    for s in range(n_splits):
        idx = np.sort(np.concatenate(buckets[s])) if buckets[s] else np.array([], int)
        out.append(idx)
    return out


def split(
    ds: DescriptorSet, spec: SplitSpec
) -> tuple[DescriptorSet, DescriptorSet, DescriptorSet]:
    """Partition rows into train/val/test, deterministically for a seed.

    Identity stratification keeps every identity wholly inside one split, so
    the identity sets of train and test are disjoint.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5B117]))
    if spec.stratify_by == "identity":
        keys = ds.identity_labels
        parts = _grouped_split_indices(keys, spec.fractions, rng, by_group=True)
    else:
        col = ds.attribute(spec.stratify_by)
        parts = _grouped_split_indices(col.labels, spec.fractions, rng, by_group=False)
    names = ("train", "val", "test")
    for name, idx in zip(names, parts):
        if len(idx) == 0:
            raise SplitError(f"fractions {spec.fractions} leave the {name} split empty")
    train, val, test = (ds.take(idx) for idx in parts)
    return train, val, test


def regroup_attribute(
    ds: DescriptorSet, name: str, mapping: dict[int, int]
) -> DescriptorSet:
    """Remap an attribute's categories (e.g. merge six groups into three)."""
    col = ds.attribute(name)
    present = np.unique(col.labels)
    missing = [int(c) for c in present if int(c) not in mapping]
    if missing:
        raise MappingError(f"mapping misses categories {missing} of attribute {name!r}")
    for old, new in mapping.items():
        if not 0 <= old < col.n_categories:
            raise MappingError(f"mapping key {old} outside [0, {col.n_categories})")
        if new < 0:
            raise MappingError(f"mapping value {new} is negative")
    lut = np.zeros(col.n_categories, dtype=np.int64)
    for old, new in mapping.items():
        lut[old] = new
    new_labels = lut[col.labels]
    new_n = max(mapping.values()) + 1
    attributes = {
        n: (
            AttributeColumn(new_labels, new_n)
            if n == name
            else AttributeColumn(c.labels.copy(), c.n_categories)
        )
        for n, c in ds.attributes.items()
    }
    return DescriptorSet(ds.features.copy(), ds.identity_labels.copy(), attributes)
