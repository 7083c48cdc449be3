"""One-shot multimodal search over fused image + text/class vectors."""

from .catalog import Catalog, CatalogConfig, ItemRecord, build_fused_catalog, build_index, ingest_items
from .engine import Query, SearchEngine, SearchResponse, one_shot_search, sequential_search_baseline
from .fusion import (
    ClassLabelSpace,
    FusedVector,
    FusionMode,
    cosine_similarity,
    fuse_concat,
    fused_cosine,
    l2_normalize,
    one_hot_encode,
    sentence_vector_postnorm,
    sentence_vector_prenorm,
)
from .hnsw import HnswIndex, HnswParams, SearchHit, brute_force_knn
from .text import SubwordEmbedderConfig, TextEncoder, embed_sentence, embed_word_subword, tokenize_clean

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "CatalogConfig",
    "ClassLabelSpace",
    "FusedVector",
    "FusionMode",
    "HnswIndex",
    "HnswParams",
    "ItemRecord",
    "Query",
    "SearchEngine",
    "SearchHit",
    "SearchResponse",
    "SubwordEmbedderConfig",
    "TextEncoder",
    "brute_force_knn",
    "build_fused_catalog",
    "build_index",
    "cosine_similarity",
    "embed_sentence",
    "embed_word_subword",
    "fuse_concat",
    "fused_cosine",
    "ingest_items",
    "l2_normalize",
    "one_hot_encode",
    "one_shot_search",
    "sentence_vector_postnorm",
    "sentence_vector_prenorm",
    "sequential_search_baseline",
    "tokenize_clean",
]
