"""Text cleaning and word/sentence vectors.

Two word-vector sources are supported: a deterministic subword-hashing
embedder (no training, covers misspellings through shared character
n-grams) and an :class:`EmbeddingTable` loaded from a word2vec text file.

Subword hashing recipe
----------------------
* the word is wrapped as ``"<word>"``; every character n-gram of length
  ``ngram_min..ngram_max`` is taken, plus the whole wrapped word
  (repeats are kept, so a short word's full form may appear twice);
* each piece is hashed with 32-bit FNV-1a over its UTF-8 bytes and reduced
  modulo ``bucket_count``;
* bucket ``b`` maps to a unit vector whose coordinate ``c`` is a standard
  normal drawn by Box-Muller from two splitmix64 outputs keyed by
  ``(seed, b, c)``, then the vector is scaled to unit length;
* the word vector is the mean of its pieces' bucket vectors.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ._rng import splitmix64, to_unit_interval
from .errors import ConfigError, EmptyWordError, FormatError, ParseError
from .fusion import sentence_vector_postnorm, sentence_vector_prenorm

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"[A-Za-z]+")

PRENORM = "prenorm"
POSTNORM = "postnorm"
COMPOSERS = (PRENORM, POSTNORM)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a stopword file; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("multifuse").joinpath("data/stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    return load_stopwords()


def tokenize_clean(raw: str, stopwords: Iterable[str] | None = None) -> list[str]:
    """Lowercased ASCII-alphabetic tokens with stopwords removed.

    Anything outside ``A-Za-z`` (digits, punctuation, other scripts,
    accented letters) acts as a separator.
    """
    stop = default_stopwords() if stopwords is None else stopwords
    tokens = []
    for m in _WORD_RE.finditer(raw or ""):
        tok = m.group(0).lower()
        if tok not in stop:
            tokens.append(tok)
    return tokens


def concat_fields(title: str | None, category: str | None, description: str | None = None) -> str:
    parts = [p for p in (title, category, description) if p]
    return " ".join(parts)


@dataclass(frozen=True)
class SubwordEmbedderConfig:
    dim: int = 110
    ngram_min: int = 3
    ngram_max: int = 6
    bucket_count: int = 1 << 16
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("embedder dim must be >= 1")
        if self.bucket_count < 1:
            raise ConfigError("bucket_count must be >= 1")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ConfigError("need 1 <= ngram_min <= ngram_max")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must fit in 64 unsigned bits")


def fnv1a_32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def bucket_vectors(buckets: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Unit vectors for an array of bucket ids, shape ``(len(buckets), dim)``."""
    buckets = np.asarray(buckets, dtype=np.uint64)
    seed_key = splitmix64(np.array([seed], dtype=np.uint64))[0]
    keys = splitmix64(buckets ^ seed_key)
    coord = np.arange(dim, dtype=np.uint64) * np.uint64(2)
    u1 = to_unit_interval(splitmix64(keys[:, None] + coord[None, :]))
    u2 = to_unit_interval(splitmix64(keys[:, None] + coord[None, :] + np.uint64(1)))
    gauss = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
    norms = np.sqrt(np.einsum("ij,ij->i", gauss, gauss))
    return gauss / norms[:, None]


def subword_pieces(word: str, ngram_min: int = 3, ngram_max: int = 6) -> list[str]:
    marked = f"<{word}>"
    pieces = []
    for n in range(ngram_min, ngram_max + 1):
        for i in range(len(marked) - n + 1):
            pieces.append(marked[i : i + n])
    pieces.append(marked)
    return pieces


def subword_buckets(word: str, cfg: SubwordEmbedderConfig) -> np.ndarray:
    pieces = subword_pieces(word, cfg.ngram_min, cfg.ngram_max)
    return np.array([fnv1a_32(p.encode("utf-8")) % cfg.bucket_count for p in pieces], dtype=np.uint64)


def embed_word_subword(word: str, cfg: SubwordEmbedderConfig | None = None) -> np.ndarray:
    cfg = cfg or SubwordEmbedderConfig()
    if not word:
        raise EmptyWordError("cannot embed an empty word")
    return bucket_vectors(subword_buckets(word, cfg), cfg.dim, cfg.seed).mean(axis=0)


class SubwordEmbedder:
    """Caching wrapper around :func:`embed_word_subword`."""

    def __init__(self, cfg: SubwordEmbedderConfig | None = None, cache_size: int = 1 << 16):
        self.cfg = cfg or SubwordEmbedderConfig()
        self._embed = lru_cache(maxsize=cache_size)(self._compute)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def _compute(self, word: str) -> np.ndarray:
        vec = embed_word_subword(word, self.cfg)
        vec.flags.writeable = False
        return vec

    def __call__(self, word: str) -> np.ndarray:
        return self._embed(word)


class EmbeddingTable:
    """Immutable word -> vector lookup loaded from an external model."""

    def __init__(self, vectors: Mapping[str, np.ndarray] | None = None, dim: int | None = None):
        self._vectors: dict[str, np.ndarray] = {}
        self.dim = dim
        for word, vec in (vectors or {}).items():
            self._insert(word, vec)

    def _insert(self, word: str, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if self.dim is None:
            self.dim = vec.shape[0]
        elif vec.shape[0] != self.dim:
            raise FormatError(f"vector for {word!r} has dim {vec.shape[0]}, table dim is {self.dim}")
        vec.flags.writeable = False
        self._vectors[word.lower()] = vec

    def get(self, word: str) -> np.ndarray | None:
        return self._vectors.get(word.lower())

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def words(self) -> list[str]:
        return list(self._vectors)


def load_embedding_table(path: str | Path) -> EmbeddingTable:
    """Parse a word2vec text file (optional ``"<count> <dim>"`` header)."""
    table = EmbeddingTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if lineno == 1 and len(fields) == 2 and all(f.isdigit() for f in fields):
                table.dim = int(fields[1])
                continue
            word, values = fields[0], fields[1:]
            if not values:
                raise ParseError(f"no vector values for {word!r}", lineno)
            try:
                vec = np.array([float(x) for x in values])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"non-finite value in vector for {word!r}", lineno)
            if table.dim is not None and vec.shape[0] != table.dim:
                raise FormatError(f"line {lineno}: {word!r} has dim {vec.shape[0]}, expected {table.dim}")
            if word.lower() in table:
                log.warning("line %d: duplicate word %r, keeping the later vector", lineno, word)
            table._insert(word, vec)
    return table


class TextEncoder:
    """Sentence vectors from raw text.

    Table lookups come first; misses fall back to the subword embedder when
    one is configured, otherwise the token is dropped.
    """

    def __init__(
        self,
        subword: SubwordEmbedder | SubwordEmbedderConfig | None = None,
        table: EmbeddingTable | None = None,
        composer: str = PRENORM,
        stopwords: Iterable[str] | None = None,
    ):
        if composer not in COMPOSERS:
            raise ConfigError(f"unknown composer {composer!r}; expected one of {COMPOSERS}")
        if isinstance(subword, SubwordEmbedderConfig):
            subword = SubwordEmbedder(subword)
        if subword is None and table is None:
            raise ConfigError("text encoder needs a subword embedder or an embedding table")
        if subword is not None and table is not None and table.dim not in (None, subword.dim):
            raise ConfigError(f"table dim {table.dim} differs from subword dim {subword.dim}")
        self.subword = subword
        self.table = table
        self.composer = composer
        self.stopwords = default_stopwords() if stopwords is None else frozenset(stopwords)

    @property
    def dim(self) -> int:
        if self.subword is not None:
            return self.subword.dim
        if self.table.dim is None:
            raise ConfigError("embedding table is empty and declares no dimension")
        return self.table.dim

    def word_vector(self, token: str) -> np.ndarray | None:
        if self.table is not None:
            vec = self.table.get(token)
            if vec is not None:
                return vec
        if self.subword is not None:
            return self.subword(token)
        return None

    def encode(self, raw: str, *, return_degenerate: bool = False):
        tokens = tokenize_clean(raw, self.stopwords)
        vectors = [v for v in map(self.word_vector, tokens) if v is not None]
        if not vectors:
            out = np.zeros(self.dim)
            return (out, True) if return_degenerate else out
        compose = sentence_vector_prenorm if self.composer == PRENORM else sentence_vector_postnorm
        return compose(vectors, return_degenerate=return_degenerate)


def embed_sentence(
    raw: str,
    embedder: SubwordEmbedderConfig | EmbeddingTable | TextEncoder,
    composer: str = PRENORM,
    stopwords: Iterable[str] | None = None,
    *,
    return_degenerate: bool = False,
):
    if isinstance(embedder, TextEncoder):
        encoder = embedder
    elif isinstance(embedder, EmbeddingTable):
        encoder = TextEncoder(table=embedder, composer=composer, stopwords=stopwords)
    else:
        encoder = TextEncoder(subword=embedder, composer=composer, stopwords=stopwords)
    return encoder.encode(raw, return_degenerate=return_degenerate)


__all__ = [
    "COMPOSERS",
    "EmbeddingTable",
    "POSTNORM",
    "PRENORM",
    "SubwordEmbedder",
    "SubwordEmbedderConfig",
    "TextEncoder",
    "concat_fields",
    "default_stopwords",
    "embed_sentence",
    "embed_word_subword",
    "fnv1a_32",
    "load_embedding_table",
    "load_stopwords",
    "tokenize_clean",
]
