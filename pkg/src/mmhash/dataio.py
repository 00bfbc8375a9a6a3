"""Binary embedding/label files, split manifests and synthetic data.

All binary files share one header prefix: the 4-byte magic ``b"MMH1"``
followed by a one-byte ASCII kind tag. Integers and floats are little-endian.

``.emb``  kind ``E``: u64 count, u32 dim, then count*dim f32, row-major.
``.lbl``  kind ``L``: u64 count, u32 categories, then each row as a
          little-endian-bit-order bitset padded to whole bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fileutil import atomic_write
from .exceptions import (
    BadMagic,
    DataError,
    EmptyLabelRow,
    IdOutOfRange,
    NonFiniteValue,
    OverlapQueryRetrieval,
    TruncatedFile,
)

MAGIC = b"MMH1"
KIND_EMBEDDING = b"E"
KIND_LABELS = b"L"
KIND_PARAMS = b"P"
KIND_CODES = b"C"

_SHAPE = struct.Struct("<QI")
SPLITS = ("train", "retrieval", "query")


def check_header(buf: bytes, kind: bytes, path="<buffer>") -> None:
    if len(buf) < 5:
        raise TruncatedFile(f"{path}: {len(buf)} bytes is too short for a header")
    if buf[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {buf[:4]!r}")
    if buf[4:5] != kind:
        raise BadMagic(f"{path}: expected kind {kind!r}, found {buf[4:5]!r}")


def _read_shape(buf: bytes, path) -> tuple[int, int]:
    if len(buf) < 5 + _SHAPE.size:
        raise TruncatedFile(f"{path}: header truncated")
    return _SHAPE.unpack_from(buf, 5)


def embeddings_to_bytes(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {m.shape}")
    m = m.astype("<f4", copy=False)
    if not np.isfinite(m).all():
        raise NonFiniteValue("embedding matrix contains NaN or Inf")
    return MAGIC + KIND_EMBEDDING + _SHAPE.pack(*m.shape) + np.ascontiguousarray(m).tobytes()


def embeddings_from_bytes(buf: bytes, path="<buffer>") -> np.ndarray:
    check_header(buf, KIND_EMBEDDING, path)
    count, dim = _read_shape(buf, path)
    start = 5 + _SHAPE.size
    expected = start + 4 * count * dim
    if len(buf) < expected:
        raise TruncatedFile(f"{path}: header declares {count}x{dim} but file holds {len(buf)} bytes")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} trailing bytes after {count}x{dim} payload")
    values = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=start)
    values = values.reshape(count, dim).astype(np.float32)
    if not np.isfinite(values).all():
        raise NonFiniteValue(f"{path}: NaN or Inf in embeddings")
    return values


def write_embeddings(matrix, path) -> None:
    """Write an N x D float matrix to ``path`` as float32."""
    data = embeddings_to_bytes(matrix)
    with atomic_write(path) as fh:
        fh.write(data)


def read_embeddings(path) -> np.ndarray:
    """Read an ``.emb`` file into a ``(count, dim)`` float32 array."""
    return embeddings_from_bytes(Path(path).read_bytes(), path)


def labels_to_bytes(labels) -> bytes:
    y = np.asarray(labels)
    if y.ndim != 2:
        raise DataError(f"label matrix must be 2-D, got shape {y.shape}")
    y = y.astype(bool)
    empty = np.flatnonzero(~y.any(axis=1))
    if empty.size:
        raise EmptyLabelRow(f"row {empty[0]} has no category set")
    packed = np.packbits(y, axis=1, bitorder="little")
    return MAGIC + KIND_LABELS + _SHAPE.pack(*y.shape) + packed.tobytes()


def labels_from_bytes(buf: bytes, path="<buffer>") -> np.ndarray:
    check_header(buf, KIND_LABELS, path)
    count, categories = _read_shape(buf, path)
    row_bytes = (categories + 7) // 8
    start = 5 + _SHAPE.size
    expected = start + count * row_bytes
    if len(buf) < expected:
        raise TruncatedFile(f"{path}: header declares {count} rows of {row_bytes} bytes, file holds {len(buf)}")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} trailing bytes")
    packed = np.frombuffer(buf, dtype=np.uint8, count=count * row_bytes, offset=start)
    bits = np.unpackbits(packed.reshape(count, row_bytes), axis=1, bitorder="little")
    if bits[:, categories:].any():
        raise DataError(f"{path}: padding bits set beyond {categories} categories")
    y = bits[:, :categories].astype(bool)
    empty = np.flatnonzero(~y.any(axis=1))
    if empty.size:
        raise EmptyLabelRow(f"{path}: row {empty[0]} has no category set")
    return y


def write_labels(labels, path) -> None:
    """Write an N x C multi-hot matrix as packed bitsets."""
    data = labels_to_bytes(labels)
    with atomic_write(path) as fh:
        fh.write(data)


def read_labels(path) -> np.ndarray:
    """Read a ``.lbl`` file into a ``(count, categories)`` bool array."""
    return labels_from_bytes(Path(path).read_bytes(), path)


@dataclass
class SplitManifest:
    """Train / retrieval / query id lists. Query and retrieval are disjoint."""

    train_ids: np.ndarray
    retrieval_ids: np.ndarray
    query_ids: np.ndarray

    def __post_init__(self):
        for name in ("train_ids", "retrieval_ids", "query_ids"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_ids), len(self.retrieval_ids), len(self.query_ids)

    def validate(self, count: int | None = None) -> None:
        overlap = np.intersect1d(self.query_ids, self.retrieval_ids)
        if overlap.size:
            raise OverlapQueryRetrieval(f"id {overlap[0]} is in both query and retrieval splits")
        for name in SPLITS:
            ids = getattr(self, f"{name}_ids")
            if ids.size and ids.min() < 0:
                raise IdOutOfRange(f"negative id {ids.min()} in {name}")
            if count is not None and ids.size and ids.max() >= count:
                raise IdOutOfRange(f"id {ids.max()} in {name} exceeds item count {count}")

    def to_text(self) -> str:
        return "".join(
            f"{name}: {' '.join(map(str, getattr(self, name + '_ids').tolist()))}\n" for name in SPLITS
        )


def parse_manifest(text: str, count: int | None = None) -> SplitManifest:
    sections: dict[str, list[int]] = {}
    current = None
    for token in text.split():
        head = token.rstrip(":")
        if token.endswith(":"):
            if head not in SPLITS:
                raise DataError(f"unknown manifest section {head!r}")
            if head in sections:
                raise DataError(f"manifest section {head!r} repeated")
            current = sections.setdefault(head, [])
            continue
        if current is None:
            raise DataError(f"id {token!r} before any section header")
        if not token.isdigit():
            raise DataError(f"bad id {token!r} in manifest")
        current.append(int(token))
    missing = [s for s in SPLITS if s not in sections]
    if missing:
        raise DataError(f"manifest lacks section(s): {', '.join(missing)}")
    manifest = SplitManifest(sections["train"], sections["retrieval"], sections["query"])
    manifest.validate(count)
    return manifest


def load_manifest(path, count: int | None = None) -> SplitManifest:
    """Parse a manifest file; ``count`` bounds the ids when given."""
    return parse_manifest(Path(path).read_text(encoding="ascii"), count)


def write_manifest(manifest: SplitManifest, path) -> None:
    manifest.validate()
    with atomic_write(path, "w") as fh:
        fh.write(manifest.to_text())


@dataclass
class EmbeddingDataset:
    """Per-item vision/text vectors, multi-hot labels and the split."""

    vision: np.ndarray
    text: np.ndarray
    labels: np.ndarray
    manifest: SplitManifest = field(default=None)

    def __post_init__(self):
        n = len(self.vision)
        if len(self.text) != n or len(self.labels) != n:
            raise DataError(
                f"row counts disagree: vision={len(self.vision)}, text={len(self.text)}, labels={len(self.labels)}"
            )
        if self.manifest is not None:
            self.manifest.validate(n)

    def __len__(self):
        return len(self.vision)

    @classmethod
    def load(cls, vision_path, text_path, labels_path, manifest_path) -> "EmbeddingDataset":
        vision = read_embeddings(vision_path)
        text = read_embeddings(text_path)
        labels = read_labels(labels_path)
        manifest = load_manifest(manifest_path)
        return cls(vision, text, labels, manifest)

    def save(self, directory) -> None:
        directory = Path(directory)
        write_embeddings(self.vision, directory / "vision.emb")
        write_embeddings(self.text, directory / "text.emb")
        write_labels(self.labels, directory / "labels.lbl")
        write_manifest(self.manifest, directory / "manifest.txt")


def split_counts(per_cluster: int) -> tuple[int, int, int]:
    """(train, retrieval, query) counts for one cluster: 60/30/10, each >= 1."""
    n_query = max(1, int(round(0.1 * per_cluster)))
    n_retrieval = max(1, int(round(0.3 * per_cluster)))
    return per_cluster - n_retrieval - n_query, n_retrieval, n_query


def generate_synthetic(clusters: int, per_cluster: int, dim: int, noise: float, seed: int = 0) -> EmbeddingDataset:
    """Gaussian blobs around random unit-norm centres, one per cluster and modality.

    Items are stored cluster-major (item ``c * per_cluster + i`` belongs to
    cluster ``c``) and each carries a one-hot label of its cluster.
    """
    if clusters < 2:
        raise ValueError(f"clusters must be >= 2, got {clusters}")
    if per_cluster < 4:
        raise ValueError(f"per_cluster must be >= 4, got {per_cluster}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not noise >= 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    n = clusters * per_cluster
    member = np.repeat(np.arange(clusters), per_cluster)

    modalities = []
    for _ in range(2):
        centres = rng.standard_normal((clusters, dim))
        centres /= np.linalg.norm(centres, axis=1, keepdims=True)
        items = centres[member] + noise * rng.standard_normal((n, dim))
        modalities.append(items.astype(np.float32))

    labels = np.zeros((n, clusters), dtype=bool)
    labels[np.arange(n), member] = True

    n_train, n_ret, _ = split_counts(per_cluster)
    train, retrieval, query = [], [], []
    for c in range(clusters):
        ids = c * per_cluster + rng.permutation(per_cluster)
        train.append(np.sort(ids[:n_train]))
        retrieval.append(np.sort(ids[n_train:n_train + n_ret]))
        query.append(np.sort(ids[n_train + n_ret:]))
    manifest = SplitManifest(np.concatenate(train), np.concatenate(retrieval), np.concatenate(query))
    return EmbeddingDataset(modalities[0], modalities[1], labels, manifest)
