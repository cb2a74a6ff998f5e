"""scikit-learn style wrapper around the trainer and encoder."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import EmbeddingModel, cosine_rows
from .exceptions import EmptyTerm
from .hierarchy import HierarchyForest
from .loss import HIERARCHICAL
from .metrics import EvalReport, evaluate
from .training import TrainConfig, train


def check_terms(terms) -> list[str]:
    """Validate a 1-d collection of non-empty strings."""
    if isinstance(terms, str):
        raise ValueError("expected a sequence of terms, got a single string")
    arr = np.asarray(list(terms), dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sequence of terms, got shape {arr.shape}")
    out = []
    for t in arr:
        if not isinstance(t, str):
            raise ValueError(f"terms must be str, got {type(t).__name__}")
        if not t.strip():
            raise EmptyTerm("empty term")
        out.append(t)
    return out


def _check_forests(X) -> list[HierarchyForest]:
    forests = [X] if isinstance(X, HierarchyForest) else list(X)
    for f in forests:
        if not isinstance(f, HierarchyForest):
            raise ValueError(f"expected HierarchyForest, got {type(f).__name__}")
    return forests


class HierarchyEmbedder(TransformerMixin, BaseEstimator):
    """Learn term embeddings whose cosine follows forest distance.

    ``fit`` takes a forest (or a list of them) plus optional synonym pairs;
    ``transform`` maps terms to an ``(n_terms, dim)`` array.
    """

    def __init__(self, loss_mode=HIERARCHICAL, learning_rate=2e-3, weight_decay=0.01,
                 batch_size=256, epochs=1, alpha=2.0, beta=2.0, lam=0.5, margin=0.25,
                 per_category_counts=None, miner_direction="hard", dim=64, n_buckets=65536,
                 ngram_min=3, ngram_max=4, include_word_unigrams=True, hash_seed=0,
                 random_state=0):
        self.loss_mode = loss_mode
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.margin = margin
        self.per_category_counts = per_category_counts
        self.miner_direction = miner_direction
        self.dim = dim
        self.n_buckets = n_buckets
        self.ngram_min = ngram_min
        self.ngram_max = ngram_max
        self.include_word_unigrams = include_word_unigrams
        self.hash_seed = hash_seed
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        flat = {
            "loss_mode": self.loss_mode, "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay, "batch_size": self.batch_size,
            "epochs": self.epochs, "alpha": self.alpha, "beta": self.beta, "lambda": self.lam,
            "margin": self.margin, "miner_direction": self.miner_direction, "dim": self.dim,
            "n_buckets": self.n_buckets, "ngram_min": self.ngram_min, "ngram_max": self.ngram_max,
            "include_word_unigrams": self.include_word_unigrams, "hash_seed": self.hash_seed,
            "seed": int(self.random_state),
        }
        if self.per_category_counts is not None:
            flat["per_category_counts"] = self.per_category_counts
        return TrainConfig.from_flat(flat)

    def fit(self, X, y=None, pairs: Iterable[tuple[str, str]] = ()):
        """Train on forest(s) ``X``; ``y`` is ignored."""
        forests = _check_forests(X)
        pairs = [tuple(p) for p in pairs]
        for p in pairs:
            if len(p) != 2:
                raise ValueError("pairs must be (term, term) tuples")
            check_terms(p)
        result = train(forests, pairs, self._train_config())
        self.model_ = result.model
        self.training_loss_ = result.log.losses
        self.n_steps_ = result.total_steps
        self.n_features_out_ = self.model_.config.dim
        return self

    @classmethod
    def from_model(cls, model: EmbeddingModel) -> "HierarchyEmbedder":
        """Wrap an already trained model, e.g. one loaded from disk."""
        c = model.config
        est = cls(dim=c.dim, n_buckets=c.n_buckets, ngram_min=c.ngram_min, ngram_max=c.ngram_max,
                  include_word_unigrams=c.include_word_unigrams, hash_seed=c.hash_seed)
        est.model_ = model
        est.n_features_out_ = c.dim
        return est

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        terms = check_terms(X)
        if not terms:
            return np.zeros((0, self.n_features_out_))
        return self.model_.embed_many(terms)

    def similarity(self, a: Sequence[str], b: Sequence[str]) -> np.ndarray:
        """Row-wise cosine between two equally long term lists."""
        ea, eb = self.transform(a), self.transform(b)
        if ea.shape != eb.shape:
            raise ValueError("term lists differ in length")
        return cosine_rows(ea, eb)

    def score(self, pairs: Sequence[tuple[str, str, int]], y=None) -> float:
        """Mean populated pairwise AUC over the labelled pairs."""
        aucs = [v for v in self.evaluate(pairs).auc.values() if v is not None]
        return float(np.mean(aucs))

    def evaluate(self, pairs: Sequence[tuple[str, str, int]]) -> EvalReport:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, list(pairs), seed=self.random_state)
