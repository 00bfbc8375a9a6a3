"""Binary codes: sign binarization, bit packing and exact Hamming ranking.

A k-bit code is stored as ``ceil(k / 64)`` uint64 words; bit ``j`` lives in
word ``j // 64`` at bit position ``j % 64``. Bits past ``k - 1`` are zero.

Code files (kind ``C``): u64 count, u32 k, then per item a u64 id followed
by the code words, all little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fileutil import atomic_write
from .dataio import KIND_CODES, MAGIC, check_header
from .exceptions import DataError, DuplicateId, TruncatedFile, WidthMismatch


def n_words(k: int) -> int:
    return (k + 63) // 64


@dataclass(frozen=True, eq=False)
class PackedCode:
    k: int
    words: np.ndarray

    def __eq__(self, other):
        return isinstance(other, PackedCode) and self.k == other.k and np.array_equal(self.words, other.words)

    def __hash__(self):
        return hash((self.k, self.words.tobytes()))

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words[None, :], self.k)[0]


def pack_bits(bits) -> np.ndarray:
    """Pack an ``(n, k)`` 0/1 array into ``(n, ceil(k/64))`` uint64 words."""
    bits = np.atleast_2d(np.asarray(bits, dtype=bool))
    n, k = bits.shape
    w = n_words(k)
    packed = np.packbits(bits, axis=1, bitorder="little")
    buf = np.zeros((n, 8 * w), dtype=np.uint8)
    buf[:, :packed.shape[1]] = packed
    return buf.view("<u8").astype(np.uint64)


def unpack_bits(words, k: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`: ``(n, W)`` uint64 -> ``(n, k)`` uint8."""
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64)).astype("<u8")
    as_bytes = words.view(np.uint8).reshape(len(words), -1)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :k]


def binarize_rows(h) -> np.ndarray:
    """Sign-binarize relaxed codes row-wise (``h >= 0`` -> 1) and pack them."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if not np.isfinite(h).all():
        raise ValueError("cannot binarize non-finite codes")
    return pack_bits(h >= 0)


def binarize(h) -> PackedCode:
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    return PackedCode(len(h), binarize_rows(h)[0])


def popcount_rows(words) -> np.ndarray:
    return np.bitwise_count(np.asarray(words, dtype=np.uint64)).sum(axis=-1, dtype=np.int64)


def hamming_distance(a: PackedCode, b: PackedCode) -> int:
    """Number of differing bits between two codes of equal width."""
    if a.k != b.k:
        raise WidthMismatch(f"code widths differ: {a.k} vs {b.k}")
    return int(popcount_rows(a.words ^ b.words))


class CodeIndex:
    """Immutable list of ``(id, code)`` pairs backed by one word matrix."""

    def __init__(self, item_ids, codes, k: int):
        self.item_ids = np.asarray(item_ids, dtype=np.uint64).reshape(-1)
        self.codes = np.asarray(codes, dtype=np.uint64).reshape(len(self.item_ids), n_words(k))
        self.k = int(k)
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise DuplicateId("duplicate item id in index")
        self.item_ids.flags.writeable = False
        self.codes.flags.writeable = False

    def __len__(self):
        return len(self.item_ids)

    def __iter__(self):
        for i, words in zip(self.item_ids.tolist(), self.codes):
            yield i, PackedCode(self.k, words)

    def __getitem__(self, pos: int) -> PackedCode:
        return PackedCode(self.k, self.codes[pos])

    def position_of(self, item_id: int) -> int:
        hits = np.flatnonzero(self.item_ids == np.uint64(item_id))
        if not hits.size:
            raise KeyError(item_id)
        return int(hits[0])

    def distances(self, query: PackedCode) -> np.ndarray:
        if query.k != self.k:
            raise WidthMismatch(f"query has {query.k} bits, index has {self.k}")
        return popcount_rows(self.codes ^ query.words)

    def ranking(self, query: PackedCode) -> tuple[np.ndarray, np.ndarray]:
        """Index positions sorted by (distance, id), and the sorted distances."""
        dist = self.distances(query)
        order = np.lexsort((self.item_ids, dist))
        return order, dist[order]


def build_index(items, k: int | None = None) -> CodeIndex:
    """Build a :class:`CodeIndex` from an iterable of ``(id, PackedCode)``."""
    items = list(items)
    if not items:
        return CodeIndex([], np.zeros((0, n_words(k or 64)), dtype=np.uint64), k or 64)
    width = items[0][1].k if k is None else k
    seen = set()
    for item_id, code in items:
        if code.k != width:
            raise WidthMismatch(f"item {item_id} has {code.k} bits, expected {width}")
        if item_id in seen:
            raise DuplicateId(f"duplicate id {item_id}")
        seen.add(item_id)
    return CodeIndex([i for i, _ in items], np.stack([c.words for _, c in items]), width)


def search(index: CodeIndex, query: PackedCode) -> list[tuple[int, int]]:
    """Full Hamming ranking of ``index`` against ``query``, ties by ascending id."""
    order, dist = index.ranking(query)
    return list(zip(index.item_ids[order].tolist(), dist.tolist()))


_CODE_HEADER = struct.Struct("<QI")


def codes_to_bytes(index: CodeIndex) -> bytes:
    w = n_words(index.k)
    rec = np.zeros((len(index), 1 + w), dtype="<u8")
    rec[:, 0] = index.item_ids
    rec[:, 1:] = index.codes
    return MAGIC + KIND_CODES + _CODE_HEADER.pack(len(index), index.k) + rec.tobytes()


def codes_from_bytes(buf: bytes, path="<buffer>") -> CodeIndex:
    check_header(buf, KIND_CODES, path)
    if len(buf) < 5 + _CODE_HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    count, k = _CODE_HEADER.unpack_from(buf, 5)
    if k < 1:
        raise DataError(f"{path}: code width {k}")
    w = n_words(k)
    start = 5 + _CODE_HEADER.size
    expected = start + 8 * count * (1 + w)
    if len(buf) < expected:
        raise TruncatedFile(f"{path}: {count} codes declared, file holds {len(buf)} bytes")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} trailing bytes")
    rec = np.frombuffer(buf, dtype="<u8", count=count * (1 + w), offset=start).reshape(count, 1 + w)
    codes = rec[:, 1:].astype(np.uint64)
    if k % 64 and (codes[:, -1] >> np.uint64(k % 64)).any():
        raise DataError(f"{path}: bits set above position {k - 1}")
    return CodeIndex(rec[:, 0].astype(np.uint64), codes, k)


def write_codes(index: CodeIndex, path) -> None:
    data = codes_to_bytes(index)
    with atomic_write(path) as fh:
        fh.write(data)


def read_codes(path) -> CodeIndex:
    return codes_from_bytes(Path(path).read_bytes(), path)
