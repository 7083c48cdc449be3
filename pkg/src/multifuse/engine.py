"""Query-side orchestration over a built catalog.

:func:`one_shot_search` fuses the query with the catalog's own recipe and
runs a single k-NN lookup. :func:`sequential_search_baseline` is the
two-stage pipeline fusion replaces: an image-only shortlist, then a
rerank by the combined image/text score.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import Catalog, CatalogConfig, Fuser, ItemRecord
from .errors import (
    IncompatibleQueryError,
    InvalidKError,
    InvalidShortlistError,
    InvalidVectorError,
)
from .fusion import FusedVector, FusionMode, as_vector, check_weight
from .hnsw import HnswIndex, SearchHit

_QUERY_KEYS = {"image_vector", "text", "label", "class_scores", "k", "ef", "weight"}


@dataclass
class Query:
    image_vector: np.ndarray
    text: str | None = None
    label: str | Sequence[float] | None = None
    k: int = 10
    ef: int | None = None
    weight: float | None = None

    @classmethod
    def from_item(cls, item: ItemRecord, include_description: bool = False, **kwargs) -> "Query":
        kwargs.setdefault("text", item.text(include_description))
        kwargs.setdefault("label", item.class_label)
        return cls(item.image_vector, **kwargs)

    @classmethod
    def from_json(cls, obj: dict, **defaults) -> "Query":
        if not isinstance(obj, dict):
            raise IncompatibleQueryError("query must be a JSON object")
        unknown = set(obj) - _QUERY_KEYS
        if unknown:
            raise IncompatibleQueryError(f"unknown query keys: {sorted(unknown)}")
        if "image_vector" not in obj:
            raise IncompatibleQueryError("query needs an image_vector")
        if "label" in obj and "class_scores" in obj:
            raise IncompatibleQueryError("give either label or class_scores, not both")
        label = obj.get("label", obj.get("class_scores"))
        params = {**defaults, **{k: obj[k] for k in ("k", "ef", "weight") if k in obj}}
        try:
            image = as_vector(obj["image_vector"], name="image_vector")
        except (TypeError, ValueError) as exc:
            raise IncompatibleQueryError(str(exc)) from None
        return cls(image, text=obj.get("text"), label=label, **params)


@dataclass
class SearchResponse:
    hits: list[SearchHit]
    timing: dict[str, int] = field(default_factory=dict)
    mode: str = ""
    aux_degenerate: bool = False

    def to_json(self, include_timing: bool = True) -> dict:
        out = {
            "mode": self.mode,
            "aux_degenerate": self.aux_degenerate,
            "hits": [{"id": h.id, "similarity": h.similarity} for h in self.hits],
        }
        if include_timing:
            out["timing_ns"] = dict(self.timing)
        return out


class SearchEngine:
    """Immutable, query-ready view of a catalog."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.config: CatalogConfig = catalog.config
        self.fuser = Fuser(catalog.config)
        self.index: HnswIndex = catalog.index
        if self.index.dim != self.config.image_dim + self.fuser.aux_dim:
            raise IncompatibleQueryError(
                f"index dim {self.index.dim} does not match config "
                f"({self.config.image_dim} + {self.fuser.aux_dim})"
            )
        self._image_index: HnswIndex | None = None
        self._components: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def build(cls, items: Sequence[ItemRecord], cfg: CatalogConfig) -> "SearchEngine":
        return cls(Catalog.build(items, cfg))

    @classmethod
    def load(cls, directory) -> "SearchEngine":
        return cls(Catalog.load(directory))

    def save(self, directory) -> None:
        self.catalog.save(directory)

    @property
    def mode(self) -> FusionMode:
        return self.config.mode

    def __len__(self) -> int:
        return len(self.index)

    def _to_hits(self, hits: Sequence[SearchHit]) -> list[SearchHit]:
        return [SearchHit(self.catalog.id_of(h.id), h.similarity) for h in hits]

    def fuse_query(self, query: Query) -> FusedVector:
        try:
            image = as_vector(query.image_vector, name="image_vector")
        except InvalidVectorError as exc:
            raise IncompatibleQueryError(str(exc)) from None
        if image.shape[0] != self.config.image_dim:
            raise IncompatibleQueryError(
                f"query image dim {image.shape[0]} != catalog image dim {self.config.image_dim}"
            )
        if not np.any(image):
            raise IncompatibleQueryError("query image vector is zero")
        fused = self.fuser.fuse(image, text=query.text, label=query.label, weight=query.weight)
        if fused.mode is not self.mode or fused.dim != self.index.dim:
            raise IncompatibleQueryError(
                f"query fused as {fused.mode.value} dim {fused.dim}, "
                f"index holds {self.index.mode} dim {self.index.dim}"
            )
        return fused

    def one_shot_search(self, query: Query) -> SearchResponse:
        if int(query.k) < 1:
            raise InvalidKError(f"k must be >= 1, got {query.k}")
        t0 = time.perf_counter_ns()
        fused = self.fuse_query(query)
        t1 = time.perf_counter_ns()
        hits = self.index.search(fused.vector, query.k, ef=query.ef)
        t2 = time.perf_counter_ns()
        return SearchResponse(
            self._to_hits(hits),
            {"fusion_ns": t1 - t0, "search_ns": t2 - t1, "total_ns": t2 - t0},
            self.mode.value,
            fused.aux_degenerate,
        )

    # sequential baseline ---------------------------------------------------

    def prepare_baseline(self) -> None:
        """Recover per-item image/aux unit vectors and index the image parts."""
        if self._image_index is not None:
            return
        if self.mode is FusionMode.IMAGE_ONLY:
            raise IncompatibleQueryError("the sequential baseline needs a fused catalog")
        d = self.config.image_dim
        stored = self.index.vectors().astype(np.float64)
        image = stored[:, :d]
        image /= np.linalg.norm(image, axis=1, keepdims=True)
        aux = stored[:, d:].copy()
        aux_norm = np.linalg.norm(aux, axis=1, keepdims=True)
        np.divide(aux, aux_norm, out=aux, where=aux_norm > 0)
        aux[aux_norm[:, 0] == 0] = 0.0
        labels = self.index.labels()
        image_index = HnswIndex(d, self.index.params, mode=FusionMode.IMAGE_ONLY.value, capacity=len(labels))
        for label, vec in zip(labels, image):
            image_index.add(int(label), vec)
        self._components = (image, aux)
        self._image_index = image_index

    def sequential_search(self, query: Query, shortlist_size: int) -> SearchResponse:
        k = int(query.k)
        if k < 1:
            raise InvalidKError(f"k must be >= 1, got {query.k}")
        if int(shortlist_size) < k:
            raise InvalidShortlistError(f"shortlist_size {shortlist_size} is smaller than k={k}")
        self.prepare_baseline()
        image, aux = self._components
        w = self.config.weight if query.weight is None else check_weight(query.weight)
        d = self.config.image_dim

        t0 = time.perf_counter_ns()
        fused = self.fuse_query(query)
        q_image = fused.vector[:d]
        q_aux = fused.vector[d:]
        if w > 0:
            q_aux = q_aux / w
        t1 = time.perf_counter_ns()
        shortlist = self._image_index.search(q_image, int(shortlist_size),
                                             ef=max(self.index.params.ef_search, int(shortlist_size)))
        t2 = time.perf_counter_ns()
        labels = np.array([h.id for h in shortlist], dtype=np.int64)
        nodes = np.array([self.index._label_to_node[int(l)] for l in labels], dtype=np.int64)
        cos_image = image[nodes] @ q_image
        cos_aux = aux[nodes] @ q_aux
        scores = (cos_image + w * w * cos_aux) / (1.0 + w * w)
        order = np.lexsort((labels, -scores))[:k]
        hits = [SearchHit(self.catalog.id_of(int(labels[i])), min(1.0, max(-1.0, float(scores[i]))))
                for i in order]
        t3 = time.perf_counter_ns()
        return SearchResponse(
            hits,
            {"fusion_ns": t1 - t0, "shortlist_ns": t2 - t1, "rerank_ns": t3 - t2, "total_ns": t3 - t0},
            f"sequential({self.mode.value})",
            fused.aux_degenerate,
        )


def one_shot_search(engine: SearchEngine, query: Query) -> SearchResponse:
    return engine.one_shot_search(query)


def sequential_search_baseline(engine: SearchEngine, query: Query, shortlist_size: int) -> SearchResponse:
    return engine.sequential_search(query, shortlist_size)


def crossover_weight(cos_image_a: float, cos_aux_a: float, cos_image_b: float, cos_aux_b: float) -> float:
    """Weight above which B (better aux match) outranks A (better image match).

    Follows from comparing ``cos_image + w**2 * cos_aux`` for the two candidates.
    """
    gain_image = cos_image_a - cos_image_b
    gain_aux = cos_aux_b - cos_aux_a
    if gain_image < 0 or gain_aux <= 0:
        raise ValueError("need A ahead on image similarity and B ahead on aux similarity")
    return math.sqrt(gain_image / gain_aux)
