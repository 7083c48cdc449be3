"""Catalog ingestion, fused-vector construction and bundle persistence.

Catalog files are JSONL, one item per line::

    {"id": "sku-1", "image_vector": [...], "title": "...",
     "category_path": "a>b", "description": "...", "class_label": "ring"}

``description`` and ``class_label`` are optional.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import (
    BundleError,
    ChecksumError,
    ConfigError,
    DuplicateIdError,
    EmptyCatalogError,
    MissingLabelError,
    ValidationError,
    VersionError,
)
from .fusion import (
    ClassLabelSpace,
    FusedVector,
    FusionMode,
    as_vector,
    check_weight,
    fuse_concat,
    image_only,
    one_hot_encode,
)
from .hnsw import BuildStats, HnswIndex, HnswParams
from .text import (
    PRENORM,
    SubwordEmbedder,
    SubwordEmbedderConfig,
    TextEncoder,
    concat_fields,
    load_embedding_table,
    load_stopwords,
)

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
BUNDLE_MEMBERS = ("config", "ids", "index.bin")


@dataclass(frozen=True)
class ItemRecord:
    id: str
    image_vector: np.ndarray
    title: str = ""
    category_path: str = ""
    description: str | None = None
    class_label: str | None = None

    def text(self, include_description: bool = False) -> str:
        return concat_fields(self.title, self.category_path,
                             self.description if include_description else None)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "image_vector": [float(x) for x in self.image_vector],
            "title": self.title,
            "category_path": self.category_path,
        }
        if self.description is not None:
            out["description"] = self.description
        if self.class_label is not None:
            out["class_label"] = self.class_label
        return out


@dataclass(frozen=True)
class CatalogConfig:
    image_dim: int
    mode: FusionMode = FusionMode.IMAGE_ONLY
    weight: float = 1.0
    composer: str = PRENORM
    embedder: SubwordEmbedderConfig | None = field(default_factory=SubwordEmbedderConfig)
    table_path: str | None = None
    stopwords_path: str | None = None
    labels: tuple[str, ...] | None = None
    hnsw: HnswParams = field(default_factory=HnswParams)
    include_description: bool = False
    strict_labels: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", FusionMode(self.mode))
        object.__setattr__(self, "weight", check_weight(self.weight))
        if self.image_dim < 1:
            raise ConfigError("image_dim must be >= 1")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        if self.mode is FusionMode.ONEHOT and not self.labels:
            raise ConfigError("onehot-fused mode requires a label space")
        if self.mode is FusionMode.TEXTVEC and self.embedder is None and self.table_path is None:
            raise ConfigError("textvec-fused mode requires a subword embedder or an embedding table")

    def to_dict(self) -> dict:
        return {
            "image_dim": self.image_dim,
            "mode": self.mode.value,
            "weight": self.weight,
            "composer": self.composer,
            "embedder": None if self.embedder is None else vars(self.embedder).copy(),
            "table_path": self.table_path,
            "stopwords_path": self.stopwords_path,
            "labels": None if self.labels is None else list(self.labels),
            "hnsw": self.hnsw.to_dict(),
            "include_description": self.include_description,
            "strict_labels": self.strict_labels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CatalogConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if data.get("embedder") is not None:
            data["embedder"] = SubwordEmbedderConfig(**data["embedder"])
        if "hnsw" in data:
            data["hnsw"] = HnswParams(**data["hnsw"])
        return cls(**data)

    @property
    def aux_dim(self) -> int:
        if self.mode is FusionMode.IMAGE_ONLY:
            return 0
        if self.mode is FusionMode.ONEHOT:
            return len(self.labels) + 1
        if self.embedder is not None:
            return self.embedder.dim
        return load_embedding_table(self.table_path).dim

    @property
    def fused_dim(self) -> int:
        return self.image_dim + self.aux_dim


class Fuser:
    """Builds fused vectors with one fixed recipe, used for both items and queries."""

    def __init__(self, cfg: CatalogConfig):
        self.cfg = cfg
        self.label_space = ClassLabelSpace(cfg.labels) if cfg.labels else None
        self.text_encoder: TextEncoder | None = None
        if cfg.mode is FusionMode.TEXTVEC:
            table = load_embedding_table(cfg.table_path) if cfg.table_path else None
            subword = SubwordEmbedder(cfg.embedder) if cfg.embedder is not None else None
            stop = load_stopwords(cfg.stopwords_path) if cfg.stopwords_path else None
            self.text_encoder = TextEncoder(subword, table, cfg.composer, stop)

    @property
    def aux_dim(self) -> int:
        mode = self.cfg.mode
        if mode is FusionMode.IMAGE_ONLY:
            return 0
        if mode is FusionMode.ONEHOT:
            return self.label_space.encoded_dim
        return self.text_encoder.dim

    def fuse(self, image_vector, *, text: str | None = None, label=None,
             weight: float | None = None) -> FusedVector:
        cfg = self.cfg
        w = cfg.weight if weight is None else check_weight(weight)
        if cfg.mode is FusionMode.IMAGE_ONLY:
            return image_only(image_vector)
        if cfg.mode is FusionMode.ONEHOT:
            aux = one_hot_encode(label, self.label_space)
            return fuse_concat(image_vector, aux, w, FusionMode.ONEHOT)
        aux = self.text_encoder.encode(text or "")
        return fuse_concat(image_vector, aux, w, FusionMode.TEXTVEC)

    def fuse_item(self, item: ItemRecord) -> FusedVector:
        if self.cfg.mode is FusionMode.ONEHOT and self.cfg.strict_labels:
            if item.class_label is None or self.label_space.slot(item.class_label) == 0:
                raise MissingLabelError(f"item {item.id!r} has no label in the label space")
        return self.fuse(item.image_vector, text=item.text(self.cfg.include_description),
                         label=item.class_label)


class IngestResult(NamedTuple):
    records: list[ItemRecord]
    problems: list[tuple[int, str]]


def _parse_record(obj, image_dim: int) -> ItemRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    item_id = obj.get("id")
    if not isinstance(item_id, str) or not item_id:
        raise ValueError("record needs a non-empty string 'id'")
    if "\n" in item_id or "\r" in item_id:
        raise ValueError("record id must not contain line breaks")
    if "image_vector" not in obj:
        raise ValueError(f"record {item_id!r} has no image_vector")
    vec = as_vector(obj["image_vector"], name="image_vector")
    if vec.shape[0] != image_dim:
        raise ValueError(f"record {item_id!r}: image_vector has dim {vec.shape[0]}, expected {image_dim}")
    if not np.any(vec):
        raise ValueError(f"record {item_id!r}: image_vector is zero")
    text_fields = {}
    for key in ("title", "category_path", "description", "class_label"):
        value = obj.get(key)
        if value is not None and not isinstance(value, str):
            raise ValueError(f"record {item_id!r}: {key} must be a string")
        text_fields[key] = value
    return ItemRecord(
        id=item_id,
        image_vector=vec,
        title=text_fields["title"] or "",
        category_path=text_fields["category_path"] or "",
        description=text_fields["description"],
        class_label=text_fields["class_label"],
    )


def ingest_items(path: str | Path, image_dim: int, strict: bool = False) -> IngestResult:
    """Parse and validate a catalog JSONL file.

    In strict mode the first batch of problems raises
    :class:`ValidationError` (or :class:`DuplicateIdError`); otherwise bad
    lines are skipped and listed in ``problems`` as ``(line, message)``.
    """
    records: list[ItemRecord] = []
    problems: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = _parse_record(json.loads(line), image_dim)
            except (ValueError, TypeError) as exc:
                problems.append((lineno, str(exc)))
                continue
            if record.id in seen:
                if strict:
                    raise DuplicateIdError(record.id)
                problems.append((lineno, f"duplicate id {record.id!r} (first seen on line {seen[record.id]})"))
                continue
            seen[record.id] = lineno
            records.append(record)
    if strict and problems:
        raise ValidationError(problems)
    for lineno, msg in problems:
        log.warning("skipping line %d: %s", lineno, msg)
    return IngestResult(records, problems)


def write_items(items: Iterable[ItemRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n")


def labels_from_items(items: Iterable[ItemRecord]) -> tuple[str, ...]:
    return tuple(sorted({it.class_label for it in items if it.class_label is not None}))


def build_fused_catalog(items: Sequence[ItemRecord], cfg: CatalogConfig | Fuser,
                        workers: int = 1) -> list[tuple[str, FusedVector]]:
    """Fuse every item; records are independent, so ``workers`` threads may share the work."""
    fuser = cfg if isinstance(cfg, Fuser) else Fuser(cfg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fused = list(pool.map(fuser.fuse_item, items))
    else:
        fused = [fuser.fuse_item(item) for item in items]
    return [(item.id, fv) for item, fv in zip(items, fused)]


def id_labels(ids: Sequence[str]) -> dict[str, int]:
    """Integer label per id: its rank in sorted order, so label ties follow id order."""
    return {item_id: rank for rank, item_id in enumerate(sorted(ids))}


def build_index(fused: Sequence[tuple[str, FusedVector]], params: HnswParams | None = None,
                mode: str | None = None) -> tuple[HnswIndex, BuildStats]:
    if not fused:
        raise EmptyCatalogError("cannot build an index over an empty catalog")
    dim = fused[0][1].dim
    mode = mode if mode is not None else fused[0][1].mode.value
    labels = id_labels([item_id for item_id, _ in fused])
    index = HnswIndex(dim, params or HnswParams(), mode=mode, capacity=len(fused))
    t0 = time.perf_counter()
    for item_id, fv in fused:
        if fv.dim != dim:
            raise ConfigError(f"fused vector for {item_id!r} has dim {fv.dim}, expected {dim}")
        index.add(labels[item_id], fv.vector)
    stats = BuildStats(len(index), index.level_histogram(), time.perf_counter() - t0)
    return index, stats


class ImageEncoder(Protocol):
    """Integration point for a real image network; returns one embedding per image."""

    dim: int

    def encode(self, image: bytes) -> np.ndarray: ...


class StubImageEncoder:
    """Deterministic pseudo-embedder for tests: hashes image bytes to a unit vector."""

    def __init__(self, dim: int = 1024, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def encode(self, image: bytes) -> np.ndarray:
        digest = hashlib.blake2b(image, digest_size=8, key=self.seed.to_bytes(8, "little")).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self.dim)
        return v / math.sqrt(float(v @ v))


@dataclass
class Catalog:
    """A built catalog: config, item ids in insertion order and the fused index."""

    config: CatalogConfig
    ids: list[str]
    index: HnswIndex
    stats: BuildStats | None = None

    def __post_init__(self):
        self._sorted_ids = sorted(self.ids)

    def id_of(self, label: int) -> str:
        return self._sorted_ids[label]

    def label_of(self, item_id: str) -> int:
        pos = bisect.bisect_left(self._sorted_ids, item_id)
        if pos == len(self._sorted_ids) or self._sorted_ids[pos] != item_id:
            raise KeyError(item_id)
        return pos

    @classmethod
    def build(cls, items: Sequence[ItemRecord], cfg: CatalogConfig, workers: int = 1) -> "Catalog":
        if not items:
            raise EmptyCatalogError("catalog has no items")
        fused = build_fused_catalog(items, cfg, workers)
        index, stats = build_index(fused, cfg.hnsw, cfg.mode.value)
        return cls(cfg, [item.id for item in items], index, stats)

    def save(self, directory: str | Path) -> None:
        save_catalog(self, directory)

    @classmethod
    def load(cls, directory: str | Path) -> "Catalog":
        return load_catalog(directory)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_catalog(catalog: Catalog, directory: str | Path) -> None:
    """Write ``config``, ``ids``, ``index.bin`` and a checksummed ``manifest``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payloads = {
        "config": (json.dumps(catalog.config.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8"),
        "ids": "".join(f"{item_id}\n" for item_id in catalog.ids).encode("utf-8"),
        "index.bin": catalog.index.to_bytes(),
    }
    for name, data in payloads.items():
        (directory / name).write_bytes(data)
    manifest = {
        "bundle_version": BUNDLE_VERSION,
        "members": {name: _sha256(data) for name, data in payloads.items()},
    }
    (directory / "manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")


def load_catalog(directory: str | Path) -> Catalog:
    directory = Path(directory)
    manifest_path = directory / "manifest"
    if not manifest_path.is_file():
        raise BundleError(f"bundle {directory} is missing its manifest")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"unreadable manifest: {exc}") from None
    version = manifest.get("bundle_version")
    if version != BUNDLE_VERSION:
        raise VersionError(version, BUNDLE_VERSION)
    blobs = {}
    for name in BUNDLE_MEMBERS:
        path = directory / name
        if not path.is_file():
            raise BundleError(f"bundle {directory} is missing member {name!r}")
        data = path.read_bytes()
        if manifest.get("members", {}).get(name) != _sha256(data):
            raise ChecksumError(f"bundle member {name!r} does not match its manifest checksum")
        blobs[name] = data
    config = CatalogConfig.from_dict(json.loads(blobs["config"]))
    ids = blobs["ids"].decode("utf-8").splitlines()
    index = HnswIndex.from_bytes(blobs["index.bin"])
    if len(ids) != len(index):
        raise BundleError(f"ids member lists {len(ids)} items but the index holds {len(index)}")
    return Catalog(config, ids, index)


def with_mode(cfg: CatalogConfig, mode: FusionMode | str, **changes) -> CatalogConfig:
    return replace(cfg, mode=FusionMode(mode), **changes)
