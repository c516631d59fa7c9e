"""Bit-packed binary codes, Hamming search and MAP evaluation.

Bit ``b`` of a code lives in word ``b // 64`` at position ``b % 64``; a set
bit means the coordinate is +1.  Unused high bits of the last word stay 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, FormatError
from .objective import as_label_set

CODE_MAGIC = b"MBHC"
CODE_VERSION = 1


def words_per_code(bits: int) -> int:
    return (bits + 63) // 64


@dataclass(frozen=True, eq=False)
class PackedCodes:
    bits: int
    words: np.ndarray  # (N, words_per_code(bits)) uint64
    labels: tuple = field(default=())

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != words_per_code(self.bits):
            raise ContractError(f"packed codes: words {words.shape} do not fit {self.bits}-bit codes")
        spare = 64 * words.shape[1] - self.bits
        if spare and words.size and (words[:, -1] >> np.uint64(64 - spare)).any():
            raise ContractError("packed codes: unused high bits of the last word must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        labels = tuple(as_label_set(lab) for lab in self.labels)
        if labels and len(labels) != words.shape[0]:
            raise ContractError(f"packed codes: {len(labels)} label sets for {words.shape[0]} codes")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.words.shape[0]

    def __getitem__(self, i: int) -> "PackedCodes":
        labels = (self.labels[i],) if self.labels else ()
        return PackedCodes(self.bits, self.words[i : i + 1] if i >= 0 else self.words[[i]], labels)

    def unpack(self) -> np.ndarray:
        """(N, K) array of +-1 values."""
        return unpack(self)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PackedCodes)
            and self.bits == other.bits
            and np.array_equal(self.words, other.words)
            and self.labels == other.labels
        )


def binarize_pack(h, labels: Sequence = ()) -> PackedCodes:
    """Sign-binarize continuous codes (sign(0) = +1) and pack them."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if not np.isfinite(h).all():
        raise ContractError("binarize_pack: codes must be finite")
    n, k = h.shape
    bits = (h >= 0).astype(np.uint64)
    nw = words_per_code(k)
    padded = np.zeros((n, nw * 64), dtype=np.uint64)
    padded[:, :k] = bits
    shifts = np.arange(64, dtype=np.uint64)
    words = (padded.reshape(n, nw, 64) << shifts).sum(axis=2, dtype=np.uint64)
    return PackedCodes(k, words, tuple(labels))


def unpack(codes: PackedCodes) -> np.ndarray:
    n, nw = codes.words.shape
    shifts = np.arange(64, dtype=np.uint64)
    bits = (codes.words[:, :, None] >> shifts) & np.uint64(1)
    bits = bits.reshape(n, nw * 64)[:, : codes.bits]
    return np.where(bits == 1, 1.0, -1.0)


def hamming_matrix(a: PackedCodes, b: PackedCodes) -> np.ndarray:
    """(len(a), len(b)) matrix of Hamming distances by XOR + popcount."""
    if a.bits != b.bits:
        raise ContractError(f"hamming: code lengths differ ({a.bits} vs {b.bits})")
    x = a.words[:, None, :] ^ b.words[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64)


def hamming_distance(a: PackedCodes, b: PackedCodes) -> int:
    """Distance between two single codes."""
    if len(a) != 1 or len(b) != 1:
        raise ContractError("hamming_distance compares single codes; use hamming_matrix for sets")
    return int(hamming_matrix(a, b)[0, 0])


@dataclass(frozen=True)
class RankedResult:
    indices: np.ndarray
    distances: np.ndarray
    truncated: bool = False  # True when topk exceeded the database size

    def __len__(self) -> int:
        return len(self.indices)


def rank_database(query: PackedCodes, db: PackedCodes) -> tuple[np.ndarray, np.ndarray]:
    dist = hamming_matrix(query, db)[0]
    order = np.argsort(dist, kind="stable")  # stable sort: ties by ascending index
    return order, dist[order]


def search_topk(query: PackedCodes, db: PackedCodes, topk: int) -> RankedResult:
    if topk < 1:
        raise ContractError(f"search_topk: topk must be >= 1, got {topk}")
    if len(query) != 1:
        raise ContractError("search_topk: expects a single query code")
    order, dist = rank_database(query, db)
    return RankedResult(order[:topk], dist[:topk], truncated=topk > len(db))


def _label_matrix(*sets_lists) -> list[np.ndarray]:
    universe = sorted(set().union(*[s for sets in sets_lists for s in sets]), key=repr)
    col = {lab: j for j, lab in enumerate(universe)}
    out = []
    for sets in sets_lists:
        m = np.zeros((len(sets), len(universe)), dtype=np.float64)
        for i, s in enumerate(sets):
            m[i, [col[x] for x in s]] = 1.0
        out.append(m)
    return out


def relevance_matrix(queries: PackedCodes, db: PackedCodes) -> np.ndarray:
    if not queries.labels or not db.labels:
        raise ContractError("relevance needs labels on both query and database codes")
    q, d = _label_matrix(queries.labels, db.labels)
    return (q @ d.T) > 0


def average_precisions(queries: PackedCodes, db: PackedCodes, topk: int | None = None) -> np.ndarray:
    """Per-query AP over the top-k ranking (NaN for queries with no relevant item in ``db``).

    AP is normalized by the number of relevant items found within the top-k.
    ``topk`` of ``None`` or ``0`` means the whole database.
    """
    if len(queries) == 0:
        raise ContractError("mean_average_precision: empty query set")
    k = len(db) if not topk else min(topk, len(db))
    rel = relevance_matrix(queries, db)
    dist = hamming_matrix(queries, db)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(rel, order, axis=1).astype(np.float64)
    found = hits.sum(axis=1)
    precision = np.cumsum(hits, axis=1) / np.arange(1, k + 1)
    ap = np.zeros(len(queries))
    nz = found > 0
    ap[nz] = (precision[nz] * hits[nz]).sum(axis=1) / found[nz]
    ap[~rel.any(axis=1)] = np.nan
    return ap


def mean_average_precision(queries: PackedCodes, db: PackedCodes, topk: int | None = None) -> float:
    """MAP@topk; queries without any relevant database item are left out of the mean."""
    ap = average_precisions(queries, db, topk)
    valid = ~np.isnan(ap)
    if not valid.any():
        raise ContractError("mean_average_precision: no query has a relevant database item")
    return float(ap[valid].mean())


def precision_at_k(queries: PackedCodes, db: PackedCodes, k: int) -> float:
    """Mean fraction of relevant items among each query's top-k."""
    if len(queries) == 0:
        raise ContractError("precision_at_k: empty query set")
    k = min(k, len(db))
    rel = relevance_matrix(queries, db)
    order = np.argsort(hamming_matrix(queries, db), axis=1, kind="stable")[:, :k]
    return float(np.take_along_axis(rel, order, axis=1).mean())


# ---------------------------------------------------------------------------
# .mbhc code files
# ---------------------------------------------------------------------------


def write_codes(path, codes: PackedCodes) -> None:
    """Layout: magic, u32 version, u32 K, u64 N, per-code labels (u16 count + u32 ids), u64 words."""
    labels = codes.labels or tuple(frozenset() for _ in range(len(codes)))
    parts = [CODE_MAGIC, struct.pack("<IIQ", CODE_VERSION, codes.bits, len(codes))]
    for s in labels:
        ids = sorted(s)
        if any(not isinstance(x, (int, np.integer)) or not 0 <= x < 2**32 for x in ids):
            raise ContractError("code files store labels as unsigned 32-bit integers")
        if len(ids) >= 2**16:
            raise ContractError("code files store at most 65535 labels per code")
        parts.append(struct.pack(f"<H{len(ids)}I", len(ids), *ids))
    parts.append(codes.words.astype("<u8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_codes(path) -> PackedCodes:
    buf = Path(path).read_bytes()
    if buf[:4] != CODE_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at offset 0 (expected {CODE_MAGIC!r})")
    if len(buf) < 20:
        raise FormatError(f"{path}: truncated header at offset {len(buf)}")
    version, bits, n = struct.unpack_from("<IIQ", buf, 4)
    if version != CODE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    off = 20
    labels = []
    try:
        for _ in range(n):
            (count,) = struct.unpack_from("<H", buf, off)
            ids = struct.unpack_from(f"<{count}I", buf, off + 2)
            labels.append(frozenset(ids))
            off += 2 + 4 * count
    except struct.error as exc:
        raise FormatError(f"{path}: truncated label block at offset {off}") from exc
    nw = words_per_code(bits)
    need = n * nw * 8
    if len(buf) - off != need:
        raise FormatError(f"{path}: word block at offset {off} has {len(buf) - off} bytes, expected {need}")
    words = np.frombuffer(buf, dtype="<u8", count=n * nw, offset=off).reshape(n, nw)
    if all(not s for s in labels):
        labels = []
    return PackedCodes(bits, words.astype(np.uint64), tuple(labels))
