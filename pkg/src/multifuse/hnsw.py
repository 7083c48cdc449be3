"""Hierarchical navigable small world index with cosine similarity.

Vectors are unit-normalized on insert and stored as float32, so cosine
similarity reduces to an inner product. Items are identified by
non-negative integer labels; results are ordered by similarity descending,
then label ascending.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from ._rng import keyed_uniform
from .errors import (
    ChecksumError,
    ConfigError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyIndexError,
    FormatError,
    InvalidKError,
    VersionError,
    ZeroVectorError,
)
from .fusion import as_vector

FORMAT_MAGIC = b"MFHNSW\x00\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    M0: int | None = None
    ef_construction: int = 200
    ef_search: int = 100
    level_multiplier: float | None = None
    rng_seed: int = 0
    heuristic: bool = True
    keep_pruned: bool = False

    def __post_init__(self):
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.M0 is None:
            object.__setattr__(self, "M0", 2 * self.M)
        if self.level_multiplier is None:
            object.__setattr__(self, "level_multiplier", 1.0 / math.log(self.M))
        if self.M0 < self.M:
            raise ConfigError("M0 must be >= M")
        if self.ef_construction < self.M:
            raise ConfigError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ConfigError("ef_search must be >= 1")
        if not (self.level_multiplier >= 0 and math.isfinite(self.level_multiplier)):
            raise ConfigError("level_multiplier must be finite and >= 0")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ConfigError("rng_seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return asdict(self)


class SearchHit(NamedTuple):
    id: object
    similarity: float


def unit_float32(v, *, name: str = "vector") -> np.ndarray:
    """Normalize in float64, then round to float32 for storage."""
    arr = as_vector(v, name=name)
    norm = math.sqrt(float(np.dot(arr, arr)))
    if norm == 0.0:
        raise ZeroVectorError(f"{name} is zero")
    return (arr / norm).astype(np.float32)


def _rank(dists: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best (distance asc, label asc)."""
    order = np.lexsort((labels, dists))
    return order[:k]


def _clamp(sim: float) -> float:
    return min(1.0, max(-1.0, sim))


@dataclass
class BuildStats:
    nodes: int = 0
    level_histogram: dict[int, int] = field(default_factory=dict)
    seconds: float = 0.0


class HnswIndex:
    """Single-writer HNSW graph; searches are safe to run concurrently once built."""

    def __init__(self, dim: int, params: HnswParams | None = None, mode: str = "", capacity: int = 1024):
        if dim < 1:
            raise ConfigError("dim must be >= 1")
        self.dim = int(dim)
        self.params = params or HnswParams()
        self.mode = mode
        self._n = 0
        self._n_up = 0
        self._entry = -1
        self._max_level = -1
        self._label_to_node: dict[int, int] = {}
        self._alloc(max(int(capacity), 1), 16)

    # storage -------------------------------------------------------------

    def _alloc(self, cap: int, up_cap: int) -> None:
        p = self.params
        self._vecs = np.zeros((cap, self.dim), dtype=np.float32)
        self._labels = np.zeros(cap, dtype=np.int64)
        self._levels = np.zeros(cap, dtype=np.int32)
        self._links0 = np.full((cap, p.M0), -1, dtype=np.int32)
        self._count0 = np.zeros(cap, dtype=np.int32)
        self._up_start = np.full(cap, -1, dtype=np.int64)
        self._up_links = np.full((up_cap, p.M), -1, dtype=np.int32)
        self._up_count = np.zeros(up_cap, dtype=np.int32)

    def _grow(self, need_nodes: int, need_up: int) -> None:
        cap = self._vecs.shape[0]
        if need_nodes > cap:
            new = max(need_nodes, 2 * cap)
            for name, fill in (("_vecs", 0), ("_labels", 0), ("_levels", 0), ("_links0", -1),
                               ("_count0", 0), ("_up_start", -1)):
                old = getattr(self, name)
                arr = np.full((new,) + old.shape[1:], fill, dtype=old.dtype)
                arr[:cap] = old
                setattr(self, name, arr)
        up_cap = self._up_links.shape[0]
        if need_up > up_cap:
            new = max(need_up, 2 * up_cap)
            links = np.full((new, self.params.M), -1, dtype=np.int32)
            links[:up_cap] = self._up_links
            counts = np.zeros(new, dtype=np.int32)
            counts[:up_cap] = self._up_count
            self._up_links, self._up_count = links, counts

    def _graph_arrays(self):
        return (self._vecs, self._labels, self._links0, self._count0,
                self._up_start, self._up_links, self._up_count, self._n)

    # public API ----------------------------------------------------------

    def __len__(self) -> int:
        return self._n

    def __contains__(self, label) -> bool:
        return int(label) in self._label_to_node

    @property
    def entry_point(self) -> int | None:
        return int(self._labels[self._entry]) if self._n else None

    @property
    def max_level(self) -> int:
        return self._max_level

    def labels(self) -> np.ndarray:
        return self._labels[: self._n].copy()

    def levels(self) -> np.ndarray:
        return self._levels[: self._n].copy()

    def vectors(self) -> np.ndarray:
        """Stored unit vectors in insertion order (read-only view)."""
        view = self._vecs[: self._n]
        view.flags.writeable = False
        return view

    def level_histogram(self) -> dict[int, int]:
        levels, counts = np.unique(self._levels[: self._n], return_counts=True)
        return {int(l): int(c) for l, c in zip(levels, counts)}

    def _draw_level(self, counter: int) -> int:
        u = keyed_uniform(self.params.rng_seed, counter)
        return int(math.floor(-math.log(u) * self.params.level_multiplier))

    def add(self, label: int, vector) -> None:
        label = int(label)
        if label < 0:
            raise ConfigError("labels must be non-negative integers")
        if label in self._label_to_node:
            raise DuplicateIdError(label)
        arr = as_vector(vector)
        if arr.shape[0] != self.dim:
            raise DimensionMismatchError(f"vector dim {arr.shape[0]} != index dim {self.dim}")
        unit = unit_float32(arr)

        node = self._n
        level = self._draw_level(node)
        self._grow(node + 1, self._n_up + level)
        self._vecs[node] = unit
        self._labels[node] = label
        self._levels[node] = level
        if level > 0:
            self._up_start[node] = self._n_up
            self._n_up += level
        self._n = node + 1
        self._label_to_node[label] = node

        if self._entry < 0:
            self._entry, self._max_level = node, level
            return
        p = self.params
        _kernels.insert(node, level, unit.astype(np.float64), self._entry, self._max_level,
                        p.ef_construction, p.M, p.M0, p.heuristic, p.keep_pruned, *self._graph_arrays())
        if level > self._max_level:
            self._entry, self._max_level = node, level

    def add_items(self, labels: Sequence[int], vectors) -> None:
        for label, vec in zip(labels, vectors):
            self.add(label, vec)

    def _prepare_query(self, query, k: int) -> np.ndarray:
        if self._n == 0:
            raise EmptyIndexError("index is empty")
        if int(k) < 1:
            raise InvalidKError(f"k must be >= 1, got {k}")
        arr = as_vector(query, name="query")
        if arr.shape[0] != self.dim:
            raise DimensionMismatchError(f"query dim {arr.shape[0]} != index dim {self.dim}")
        return unit_float32(arr, name="query").astype(np.float64)

    def search(self, query, k: int, ef: int | None = None) -> list[SearchHit]:
        q = self._prepare_query(query, k)
        k = min(int(k), self._n)
        ef = self.params.ef_search if ef is None else int(ef)
        if ef < 1:
            raise ConfigError("ef must be >= 1")
        dists, nodes = _kernels.knn(q, k, ef, self._entry, self._max_level, *self._graph_arrays())
        return [SearchHit(int(self._labels[n]), _clamp(-d)) for d, n in zip(dists, nodes)]

    def brute_force(self, query, k: int) -> list[SearchHit]:
        """Exact top-k over the stored vectors."""
        q = self._prepare_query(query, k)
        dists = _kernels.exhaustive_dists(q, self._vecs, self._n)
        top = _rank(dists, self._labels[: self._n], int(k))
        return [SearchHit(int(self._labels[i]), _clamp(-dists[i])) for i in top]

    def neighbors(self, label: int, layer: int = 0) -> list[int]:
        node = self._label_to_node[int(label)]
        if layer > self._levels[node]:
            return []
        if layer == 0:
            row = self._links0[node, : self._count0[node]]
        else:
            r = self._up_start[node] + layer - 1
            row = self._up_links[r, : self._up_count[r]]
        return [int(self._labels[i]) for i in row]

    def check_integrity(self) -> None:
        """Raise AssertionError if degree caps or references are violated."""
        p = self.params
        n = self._n
        for node in range(n):
            c0 = self._count0[node]
            assert 0 <= c0 <= p.M0
            row = self._links0[node, :c0]
            assert np.all((row >= 0) & (row < n)) and node not in row
            assert len(set(row.tolist())) == c0
            for layer in range(1, self._levels[node] + 1):
                r = self._up_start[node] + layer - 1
                cu = self._up_count[r]
                assert 0 <= cu <= p.M
                row = self._up_links[r, :cu]
                assert np.all((row >= 0) & (row < n)) and node not in row
                assert np.all(self._levels[row] >= layer)
        if n:
            assert self._levels[self._entry] == self._levels[:n].max() == self._max_level

    # persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        p = self.params
        n, n_up = self._n, self._n_up
        mode = self.mode.encode("utf-8")
        buf = io.BytesIO()
        buf.write(FORMAT_MAGIC)
        buf.write(struct.pack("<H", FORMAT_VERSION))
        buf.write(struct.pack("<H", len(mode)))
        buf.write(mode)
        buf.write(struct.pack("<IQQ", self.dim, n, n_up))
        buf.write(struct.pack("<IIIIdQB", p.M, p.M0, p.ef_construction, p.ef_search,
                              p.level_multiplier, p.rng_seed,
                              int(p.heuristic) | int(p.keep_pruned) << 1))
        buf.write(struct.pack("<qi", self._entry, self._max_level))
        for arr, dtype in (
            (self._vecs[:n], "<f4"),
            (self._labels[:n], "<i8"),
            (self._levels[:n], "<i4"),
            (self._count0[:n], "<i4"),
            (self._links0[:n], "<i4"),
            (self._up_start[:n], "<i8"),
            (self._up_count[:n_up], "<i4"),
            (self._up_links[:n_up], "<i4"),
        ):
            buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        body = buf.getvalue()
        return body + hashlib.blake2b(body, digest_size=8).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HnswIndex":
        data = bytes(data)
        head = len(FORMAT_MAGIC)
        if data[:head] != FORMAT_MAGIC[: len(data)]:
            raise FormatError("not an index file (bad magic bytes)")
        if len(data) < head + 2:
            raise ChecksumError("index stream is truncated")
        (version,) = struct.unpack_from("<H", data, head)
        if version != FORMAT_VERSION:
            raise VersionError(version, FORMAT_VERSION)
        if len(data) < head + 10:
            raise ChecksumError("index stream is truncated")
        body, digest = data[:-8], data[-8:]
        if hashlib.blake2b(body, digest_size=8).digest() != digest:
            raise ChecksumError("index checksum mismatch (truncated or corrupt stream)")

        off = head + 2
        try:
            (mlen,) = struct.unpack_from("<H", body, off)
            off += 2
            mode = body[off : off + mlen].decode("utf-8")
            off += mlen
            dim, n, n_up = struct.unpack_from("<IQQ", body, off)
            off += struct.calcsize("<IQQ")
            M, M0, efc, efs, mult, seed, flags = struct.unpack_from("<IIIIdQB", body, off)
            off += struct.calcsize("<IIIIdQB")
            entry, max_level = struct.unpack_from("<qi", body, off)
            off += struct.calcsize("<qi")
        except struct.error as exc:
            raise FormatError(f"malformed index header: {exc}") from None

        params = HnswParams(M=M, M0=M0, ef_construction=efc, ef_search=efs,
                            level_multiplier=mult, rng_seed=seed, heuristic=bool(flags & 1),
                            keep_pruned=bool(flags & 2))
        index = cls(dim, params, mode=mode, capacity=max(n, 1))
        index._grow(max(n, 1), max(n_up, 1))

        def take(dtype, count, shape=None):
            nonlocal off
            size = np.dtype(dtype).itemsize * count
            if off + size > len(body):
                raise FormatError("index body shorter than its header declares")
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=off)
            off += size
            return arr.reshape(shape) if shape else arr

        index._vecs[:n] = take("<f4", n * dim, (n, dim))
        index._labels[:n] = take("<i8", n)
        index._levels[:n] = take("<i4", n)
        index._count0[:n] = take("<i4", n)
        index._links0[:n] = take("<i4", n * M0, (n, M0))
        index._up_start[:n] = take("<i8", n)
        index._up_count[:n_up] = take("<i4", n_up)
        index._up_links[:n_up] = take("<i4", n_up * M, (n_up, M))
        if off != len(body):
            raise FormatError("trailing bytes after index body")
        index._n, index._n_up = n, n_up
        index._entry, index._max_level = entry, max_level
        index._label_to_node = {int(l): i for i, l in enumerate(index._labels[:n])}
        return index

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "HnswIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def brute_force_knn(items: Sequence[tuple[int, object]], query, k: int) -> list[SearchHit]:
    """Exact cosine top-k over ``(label, vector)`` pairs.

    Vectors are rounded to float32 unit vectors exactly as the index stores
    them, so the results are directly comparable with :meth:`HnswIndex.search`.
    """
    if not items:
        raise EmptyIndexError("no items to search")
    if int(k) < 1:
        raise InvalidKError(f"k must be >= 1, got {k}")
    labels = np.array([int(i) for i, _ in items], dtype=np.int64)
    vecs = np.vstack([unit_float32(v) for _, v in items])
    q = as_vector(query, name="query")
    if q.shape[0] != vecs.shape[1]:
        raise DimensionMismatchError(f"query dim {q.shape[0]} != item dim {vecs.shape[1]}")
    q = unit_float32(q, name="query").astype(np.float64)
    dists = _kernels.exhaustive_dists(q, vecs, vecs.shape[0])
    top = _rank(dists, labels, int(k))
    return [SearchHit(int(labels[i]), _clamp(-dists[i])) for i in top]
