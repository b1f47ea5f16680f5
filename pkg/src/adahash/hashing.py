"""Binarization, bit-packed code storage, Hamming search, retrieval metrics.

Codes are d bits packed into ceil(d/64) little-endian 64-bit words, bit j
living at position j % 64 of word j // 64; unused high bits of the last word
are always zero. Bit j is set iff embedding coordinate j is >= 0, so the
{-1, +1} sign convention maps to {0, 1}.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .fileio import FormatError, atomic_write_bytes

CODES_MAGIC = b"HASH"
CODES_VERSION = 1


def words_per_code(d: int) -> int:
    return (d + 63) // 64


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an (n, d) array of {0, 1} into (n, ceil(d/64)) uint64 words."""
    bits = np.asarray(bits)
    n, d = bits.shape
    w = words_per_code(d)
    padded = np.zeros((n, w * 64), dtype=np.uint64)
    padded[:, :d] = bits.astype(np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    return (padded.reshape(n, w, 64) << shifts).sum(axis=2, dtype=np.uint64)


def unpack_bits(packed: np.ndarray, d: int) -> np.ndarray:
    """Inverse of pack_bits; returns an (n, d) uint8 array of {0, 1}."""
    packed = np.asarray(packed, dtype=np.uint64)
    n, w = packed.shape
    if w != words_per_code(d):
        raise ValueError(f"{w} words cannot hold {d} bits")
    shifts = np.arange(64, dtype=np.uint64)
    bits = (packed[:, :, None] >> shifts) & np.uint64(1)
    return bits.reshape(n, w * 64)[:, :d].astype(np.uint8)


def binarize(u: np.ndarray) -> np.ndarray:
    """Embeddings -> packed codes; bit j set iff u[:, j] >= 0 (sign(0) = +1)."""
    u = np.asarray(u)
    return pack_bits(u >= 0)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two packed codes (1-D word arrays)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"code lengths differ: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum(dtype=np.int64))


def hamming_to_all(query: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Distances from one packed query to every row of a packed code matrix."""
    query = np.asarray(query, dtype=np.uint64)
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.shape[1] != query.shape[0]:
        raise ValueError(f"code lengths differ: {codes.shape[1]} vs {query.shape[0]}")
    return np.bitwise_count(codes ^ query[None, :]).sum(axis=1, dtype=np.int64)


@dataclass
class RetrievalIndex:
    """Immutable packed-code store with labels and stable ids."""

    d: int
    codes: np.ndarray   # uint64 (n, words_per_code(d))
    labels: np.ndarray  # int64 (n,); -1 marks unlabeled items
    ids: np.ndarray     # uint64 (n,)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        n = len(self.codes)
        if len(self.labels) != n or len(self.ids) != n:
            raise ValueError(
                f"parallel arrays differ in length: {n} codes, "
                f"{len(self.labels)} labels, {len(self.ids)} ids")
        if self.codes.shape[1] != words_per_code(self.d):
            raise ValueError(
                f"codes have {self.codes.shape[1]} words, expected "
                f"{words_per_code(self.d)} for d={self.d}")

    def __len__(self) -> int:
        return len(self.codes)


def _ranked_order(index: RetrievalIndex, query: np.ndarray,
                  exclude_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Total deterministic ranking: ascending distance, ties by ascending id."""
    dists = hamming_to_all(query, index.codes)
    keep = slice(None)
    if exclude_id is not None:
        keep = index.ids != np.uint64(exclude_id)
    dists = dists[keep]
    ids = index.ids[keep]
    order = np.lexsort((ids, dists))
    return order, dists


def knn(index: RetrievalIndex, query: np.ndarray, k: int) -> list[tuple[int, int]]:
    """k nearest stored codes as (id, distance), best first."""
    if len(index) == 0:
        raise ValueError("knn: index is empty")
    if k < 1:
        raise ValueError(f"knn: k must be >= 1, got {k}")
    order, dists = _ranked_order(index, query)
    top = order[:k]
    return [(int(index.ids[i]), int(dists[i])) for i in top]


def _average_precision(rel: np.ndarray, total_relevant: int,
                       cutoff: int | None) -> float:
    if cutoff is not None:
        rel = rel[:cutoff]
        denom = min(total_relevant, cutoff)
    else:
        denom = total_relevant
    if denom == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float((hits[ranks - 1] / ranks).sum() / denom)


def mean_average_precision(index: RetrievalIndex, query_codes: np.ndarray,
                           query_labels: np.ndarray,
                           query_ids: np.ndarray | None = None,
                           exclude_self: bool = True,
                           cutoff: int | None = None) -> float:
    """Mean over queries of average precision against the full ranked index.

    Relevance means label equality. A query's own index entry (matched by id,
    when query_ids are supplied) is excluded from its ranking by default.
    With a cutoff only the top-cutoff ranks count and the AP denominator is
    min(#relevant, cutoff); queries with nothing relevant score 0.
    """
    if len(index) == 0:
        raise ValueError("mean_average_precision: index is empty")
    query_codes = np.asarray(query_codes, dtype=np.uint64)
    if len(query_codes) == 0:
        raise ValueError("mean_average_precision: need at least one query")
    query_labels = np.asarray(query_labels, dtype=np.int64)
    ap_sum = 0.0
    for q in range(len(query_codes)):
        exclude = int(query_ids[q]) if (exclude_self and query_ids is not None) else None
        order, _ = _ranked_order(index, query_codes[q], exclude)
        labels = index.labels if exclude is None else index.labels[index.ids != np.uint64(exclude)]
        rel = (labels[order] == query_labels[q]).astype(np.int64)
        ap_sum += _average_precision(rel, int(rel.sum()), cutoff)
    return ap_sum / len(query_codes)


def precision_at_k(index: RetrievalIndex, query_codes: np.ndarray,
                   query_labels: np.ndarray, k: int,
                   query_ids: np.ndarray | None = None,
                   exclude_self: bool = True) -> float:
    """Mean over queries of (relevant within the top k) / k."""
    if len(index) == 0:
        raise ValueError("precision_at_k: index is empty")
    if k < 1:
        raise ValueError(f"precision_at_k: k must be >= 1, got {k}")
    query_codes = np.asarray(query_codes, dtype=np.uint64)
    query_labels = np.asarray(query_labels, dtype=np.int64)
    total = 0.0
    for q in range(len(query_codes)):
        exclude = int(query_ids[q]) if (exclude_self and query_ids is not None) else None
        order, _ = _ranked_order(index, query_codes[q], exclude)
        labels = index.labels if exclude is None else index.labels[index.ids != np.uint64(exclude)]
        top = labels[order[:k]]
        total += float((top == query_labels[q]).sum()) / k
    return total / len(query_codes)


def save_codes(path: str, index: RetrievalIndex) -> None:
    """Binary code file: magic "HASH", u32 version, u32 d, u64 count, then per
    item (u64 id, little-endian u64 code words, i32 label)."""
    w = words_per_code(index.d)
    header = CODES_MAGIC + struct.pack("<IIQ", CODES_VERSION, index.d, len(index))
    item = np.dtype([("id", "<u8"), ("words", "<u8", (w,)), ("label", "<i4")])
    body = np.empty(len(index), dtype=item)
    body["id"] = index.ids
    body["words"] = index.codes
    body["label"] = index.labels.astype(np.int32)
    atomic_write_bytes(path, header + body.tobytes())


def load_codes(path: str) -> RetrievalIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FormatError("truncated code file: missing header")
    if blob[:4] != CODES_MAGIC:
        raise FormatError(
            f"bad code-file magic: expected {CODES_MAGIC!r}, got {blob[:4]!r}")
    version, d, count = struct.unpack("<IIQ", blob[4:20])
    if version != CODES_VERSION:
        raise FormatError(f"unsupported code-file version {version}")
    if d < 1:
        raise FormatError(f"invalid code length {d}")
    w = words_per_code(d)
    item = np.dtype([("id", "<u8"), ("words", "<u8", (w,)), ("label", "<i4")])
    expected = 20 + count * item.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"code file size {len(blob)} does not match header "
            f"(expected {expected} bytes for {count} items)")
    body = np.frombuffer(blob, dtype=item, count=count, offset=20)
    return RetrievalIndex(
        d=d,
        codes=body["words"].reshape(count, w).copy(),
        labels=body["label"].astype(np.int64),
        ids=body["id"].copy(),
    )
