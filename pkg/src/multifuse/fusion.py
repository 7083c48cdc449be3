"""Vector math for multimodal fusion.

Image and auxiliary (text or class) vectors are normalized, the auxiliary
block is scaled by a weight ``w`` and the two are concatenated::

    v_aug = unit(v_image) ++ w * unit(v_aux)

Cosine similarity between two such vectors decomposes as
``(cos_image + w**2 * cos_aux) / (1 + w**2)`` when both blocks are unit.

Vectors are plain numpy arrays. Accumulations run in float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptySentenceError,
    IncompatibleFusionError,
    InvalidVectorError,
    ZeroVectorError,
)


class FusionMode(str, enum.Enum):
    IMAGE_ONLY = "image-only"
    ONEHOT = "onehot-fused"
    TEXTVEC = "textvec-fused"


def as_vector(v, *, name: str = "vector") -> np.ndarray:
    """Coerce ``v`` to a 1-d float64 array, rejecting NaN/inf."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidVectorError(f"{name} must be a non-empty 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidVectorError(f"{name} contains non-finite entries")
    return arr


def l2_normalize(v, *, return_degenerate: bool = False):
    """Scale ``v`` to unit Euclidean norm.

    A zero vector is returned unchanged. With ``return_degenerate=True`` the
    result is ``(vector, degenerate)`` where ``degenerate`` marks that case.
    """
    arr = as_vector(v)
    norm = math.sqrt(float(np.dot(arr, arr)))
    degenerate = norm == 0.0
    out = arr.copy() if degenerate else arr / norm
    if return_degenerate:
        return out, degenerate
    return out


def cosine_similarity(a, b) -> float:
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    sim = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, sim))


def _stack_words(word_vectors: Sequence) -> np.ndarray:
    if len(word_vectors) == 0:
        raise EmptySentenceError("sentence has no word vectors")
    rows = [as_vector(w, name="word vector") for w in word_vectors]
    dim = rows[0].shape[0]
    for r in rows:
        if r.shape[0] != dim:
            raise DimensionMismatchError(f"word vectors disagree on dimension: {dim} vs {r.shape[0]}")
    return np.vstack(rows)


def sentence_vector_prenorm(word_vectors: Sequence, *, return_degenerate: bool = False):
    """Mean of the per-word unit vectors. Zero-norm words are skipped."""
    mat = _stack_words(word_vectors)
    norms = np.sqrt(np.einsum("ij,ij->i", mat, mat))
    keep = norms > 0.0
    if not keep.any():
        out = np.zeros(mat.shape[1])
        return (out, True) if return_degenerate else out
    out = (mat[keep] / norms[keep, None]).sum(axis=0) / int(keep.sum())
    return (out, False) if return_degenerate else out


def sentence_vector_postnorm(word_vectors: Sequence, *, return_degenerate: bool = False):
    """Mean of the raw word vectors, normalized afterwards."""
    mat = _stack_words(word_vectors)
    mean = mat.sum(axis=0) / mat.shape[0]
    return l2_normalize(mean, return_degenerate=return_degenerate)


class ClassLabelSpace:
    """Ordered set of class labels. Slot 0 of an encoding means "unknown"."""

    def __init__(self, labels: Iterable[str]):
        labels = list(labels)
        if not labels:
            raise ConfigError("label space must contain at least one label")
        if len(set(labels)) != len(labels):
            raise ConfigError("label space contains duplicate labels")
        self.labels = labels
        self._slot = {label: i + 1 for i, label in enumerate(labels)}

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def encoded_dim(self) -> int:
        return self.K + 1

    def slot(self, label: str | None) -> int:
        if label is None:
            return 0
        return self._slot.get(label, 0)

    def __len__(self) -> int:
        return self.K

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassLabelSpace) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"ClassLabelSpace(K={self.K})"


def one_hot_encode(label, space: ClassLabelSpace) -> np.ndarray:
    """Encode a label (or a raw classifier score array) as a (K+1)-dim indicator.

    Score arrays of length K are reduced with argmax; ties resolve to the
    lowest index. Unknown or missing labels land in slot 0.
    """
    if not isinstance(space, ClassLabelSpace) or space.K < 1:
        raise ConfigError("one-hot encoding needs a non-empty ClassLabelSpace")
    out = np.zeros(space.encoded_dim)
    if label is None or isinstance(label, str):
        out[space.slot(label)] = 1.0
        return out
    scores = as_vector(label, name="class scores")
    if scores.shape[0] != space.K:
        raise DimensionMismatchError(f"expected {space.K} class scores, got {scores.shape[0]}")
    # np.argmax returns the first maximum
    out[int(np.argmax(scores)) + 1] = 1.0
    return out


@dataclass(frozen=True)
class FusedVector:
    vector: np.ndarray
    mode: FusionMode
    weight: float
    image_dim: int
    aux_dim: int
    aux_degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.image_dim + self.aux_dim

    def compatible_with(self, other: "FusedVector") -> bool:
        return (
            self.mode == other.mode
            and self.image_dim == other.image_dim
            and self.aux_dim == other.aux_dim
        )


def check_weight(w) -> float:
    w = float(w)
    if not math.isfinite(w) or w < 0:
        raise ConfigError(f"fusion weight must be finite and >= 0, got {w}")
    return w


def fuse_concat(v_image, v_aux, w: float, mode: FusionMode = FusionMode.TEXTVEC) -> FusedVector:
    """Concatenate the unit image vector with the unit auxiliary vector times ``w``."""
    w = check_weight(w)
    img, img_zero = l2_normalize(v_image, return_degenerate=True)
    if img_zero:
        raise ZeroVectorError("image vector is zero")
    aux, aux_zero = l2_normalize(v_aux, return_degenerate=True)
    vec = np.concatenate([img, aux * w])
    return FusedVector(vec, FusionMode(mode), w, img.shape[0], aux.shape[0], aux_zero)


def image_only(v_image) -> FusedVector:
    img, img_zero = l2_normalize(v_image, return_degenerate=True)
    if img_zero:
        raise ZeroVectorError("image vector is zero")
    return FusedVector(img, FusionMode.IMAGE_ONLY, 0.0, img.shape[0], 0)


def fused_cosine(a: FusedVector, b: FusedVector) -> float:
    if not a.compatible_with(b) or a.weight != b.weight:
        raise IncompatibleFusionError(
            f"cannot compare {a.mode.value}(w={a.weight}, {a.image_dim}+{a.aux_dim}) "
            f"with {b.mode.value}(w={b.weight}, {b.image_dim}+{b.aux_dim})"
        )
    return cosine_similarity(a.vector, b.vector)
