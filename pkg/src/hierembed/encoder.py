"""Hashed character n-gram term encoder with a trainable bucket matrix.

A term is lower-cased and whitespace-normalized; each word is wrapped in
``^``/``$`` boundary markers and split into character n-grams, optionally
together with the bare word. Features are hashed into ``n_buckets`` rows of a
weight matrix and the term embedding is the mean of the rows it hits.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigInvalid, EmptyTerm, ModelFormatError, ZeroVector
from .utils import make_rng, stable_hash

MAGIC = b"HPRB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIBQ")


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    n_buckets: int = 65536
    ngram_min: int = 3
    ngram_max: int = 4
    include_word_unigrams: bool = True
    hash_seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigInvalid("dim must be >= 2")
        if self.n_buckets < 256:
            raise ConfigInvalid("n_buckets must be >= 256")
        if not 1 <= self.ngram_min <= self.ngram_max <= 8:
            raise ConfigInvalid("need 1 <= ngram_min <= ngram_max <= 8")

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_term(term: str) -> str:
    return " ".join(term.lower().split())


def feature_strings(config: EncoderConfig, term: str) -> list[str]:
    """Un-hashed feature strings of ``term``, in emission order."""
    words = normalize_term(term).split(" ")
    if words == [""]:
        raise EmptyTerm("term is empty after normalization")
    out = []
    for word in words:
        marked = f"^{word}$"
        for n in range(config.ngram_min, config.ngram_max + 1):
            out.extend(marked[i:i + n] for i in range(len(marked) - n + 1))
        if config.include_word_unigrams:
            out.append(word)
    if not out:
        # every word shorter than ngram_min - 2 and no unigrams: fall back to the marked words
        out = [f"^{w}$" for w in words]
    return out


def featurize(config: EncoderConfig, term: str) -> np.ndarray:
    """Sorted multiset of bucket ids for ``term`` as an int64 array."""
    ids = [stable_hash(f, config.hash_seed) % config.n_buckets for f in feature_strings(config, term)]
    return np.sort(np.asarray(ids, dtype=np.int64))


@dataclass
class SparseGradient:
    """Gradient rows for a sorted set of buckets."""

    buckets: np.ndarray  # int64, strictly ascending
    values: np.ndarray   # float64, shape (len(buckets), dim)

    @classmethod
    def empty(cls, dim: int) -> "SparseGradient":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, dim)))

    def to_dict(self) -> dict[int, np.ndarray]:
        return {int(b): v for b, v in zip(self.buckets, self.values)}

    def to_dense(self, n_buckets: int) -> np.ndarray:
        out = np.zeros((n_buckets, self.values.shape[1]))
        out[self.buckets] = self.values
        return out

    def __add__(self, other: "SparseGradient") -> "SparseGradient":
        buckets = np.union1d(self.buckets, other.buckets)
        values = np.zeros((len(buckets), self.values.shape[1]))
        values[np.searchsorted(buckets, self.buckets)] += self.values
        values[np.searchsorted(buckets, other.buckets)] += other.values
        return SparseGradient(buckets, values)


@dataclass
class EncodedBatch:
    """Forward-pass record kept for the backward pass."""

    terms: list[str]
    embeddings: np.ndarray   # float64 (n_terms, dim)
    buckets: np.ndarray      # touched buckets, ascending
    pooling: sp.csr_matrix   # (n_terms, len(buckets)) mean-pooling weights


class TermEncoder(Protocol):
    """What the loss and trainer need from an encoder.

    Any implementation (a transformer included) that maps terms to float64
    embeddings and back-propagates embedding gradients into sparse parameter
    rows can replace :class:`EmbeddingModel`.
    """

    def encode(self, terms: Sequence[str]) -> EncodedBatch: ...

    def backward(self, batch: EncodedBatch, grad_embeddings: np.ndarray) -> SparseGradient: ...


class EmbeddingModel:
    """Encoder configuration plus an ``n_buckets x dim`` weight matrix."""

    def __init__(self, config: EncoderConfig, weights: np.ndarray):
        weights = np.asarray(weights)
        if weights.shape != (config.n_buckets, config.dim):
            raise ConfigInvalid(
                f"weights shape {weights.shape} does not match ({config.n_buckets}, {config.dim})")
        if weights.dtype not in (np.float32, np.float64):
            weights = weights.astype(np.float64)
        self.config = config
        self.weights = weights
        self._features: dict[str, np.ndarray] = {}

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int, dtype=np.float32) -> "EmbeddingModel":
        """Uniform init on ``[-0.5/dim, 0.5/dim]`` from ``seed``."""
        rng = make_rng(seed, "init")
        bound = 0.5 / config.dim
        w = rng.uniform(-bound, bound, size=(config.n_buckets, config.dim)).astype(dtype)
        return cls(config, w)

    @property
    def dim(self) -> int:
        return self.config.dim

    def copy(self) -> "EmbeddingModel":
        other = EmbeddingModel(self.config, self.weights.copy())
        other._features = self._features
        return other

    def features(self, term: str) -> np.ndarray:
        ids = self._features.get(term)
        if ids is None:
            ids = featurize(self.config, term)
            self._features[term] = ids
        return ids

    def embed(self, term: str) -> np.ndarray:
        # same arithmetic as a batched encode, so results agree bit for bit
        return self.encode([term]).embeddings[0]

    def encode(self, terms: Sequence[str]) -> EncodedBatch:
        terms = list(terms)
        feats = [self.features(t) for t in terms]
        if not terms:
            return EncodedBatch(terms, np.zeros((0, self.dim)), np.zeros(0, np.int64),
                                sp.csr_matrix((0, 0)))
        lengths = np.fromiter((len(f) for f in feats), dtype=np.int64, count=len(feats))
        flat = np.concatenate(feats)
        buckets, cols = np.unique(flat, return_inverse=True)
        data = np.repeat(1.0 / lengths, lengths)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        pooling = sp.csr_matrix((data, cols, indptr), shape=(len(terms), len(buckets)))
        pooling.sum_duplicates()
        emb = pooling @ self.weights[buckets].astype(np.float64)
        return EncodedBatch(terms, np.asarray(emb), buckets, pooling)

    def backward(self, batch: EncodedBatch, grad_embeddings: np.ndarray) -> SparseGradient:
        if not batch.terms:
            return SparseGradient.empty(self.dim)
        values = np.asarray(batch.pooling.T @ np.asarray(grad_embeddings, dtype=np.float64))
        return SparseGradient(batch.buckets.copy(), values)

    def embed_many(self, terms: Iterable[str]) -> np.ndarray:
        return self.encode(list(terms)).embeddings

    # -- serialization ---------------------------------------------------

    def write(self, stream: BinaryIO) -> None:
        c = self.config
        stream.write(_HEADER.pack(MAGIC, FORMAT_VERSION, c.dim, c.n_buckets, c.ngram_min,
                                  c.ngram_max, int(c.include_word_unigrams),
                                  c.hash_seed & ((1 << 64) - 1)))
        stream.write(np.ascontiguousarray(self.weights, dtype="<f4").tobytes())

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def read(cls, stream: BinaryIO) -> "EmbeddingModel":
        head = stream.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ModelFormatError("truncated model header")
        magic, version, dim, n_buckets, nmin, nmax, flag, hash_seed = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        config = EncoderConfig(dim, n_buckets, nmin, nmax, bool(flag), hash_seed)
        body = stream.read(4 * dim * n_buckets)
        if len(body) != 4 * dim * n_buckets:
            raise ModelFormatError("truncated weight matrix")
        weights = np.frombuffer(body, dtype="<f4").reshape(n_buckets, dim).astype(np.float32)
        if not np.all(np.isfinite(weights)):
            raise ModelFormatError("non-finite weights")
        return cls(config, weights)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingModel":
        with open(path, "rb") as fh:
            return cls.read(fh)


def embed(model: EmbeddingModel, term: str) -> np.ndarray:
    return model.embed(term)


def embed_gradient(model: EmbeddingModel, term: str, upstream: np.ndarray) -> SparseGradient:
    """Backward pass of :func:`embed` for a single term.

    Each hit bucket receives ``upstream * multiplicity / feature_count``; a zero
    upstream yields an empty gradient.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    ids = model.features(term)
    if not np.any(upstream):
        return SparseGradient.empty(model.dim)
    buckets, counts = np.unique(ids, return_counts=True)
    return SparseGradient(buckets, np.outer(counts / len(ids), upstream))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    return float(cosine_rows(u, v)[0])


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine between equally shaped float64 matrices.

    Rows are normalized before the dot product so identical inputs give
    bit-identical outputs, whichever path (this or :func:`cosine`) computes them.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ZeroVector("cosine of an all-zero vector")
    return np.clip(np.sum((a / na[:, None]) * (b / nb[:, None]), axis=1), -1.0, 1.0)
