"""Rank statistics and the per-category-pair evaluation report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .encoder import EmbeddingModel, cosine_rows
from .exceptions import DegenerateInput, InsufficientCategories, OneClassOnly
from .utils import fmt_float

PAIR_KEYS = tuple(f"{i}v{j}" for i, j in combinations(range(4), 2))


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(positive outranks negative), ties counted as 1/2."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("roc_auc needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def spearman(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Pearson correlation of tie-averaged ranks of scores and labels."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or len(s) < 2:
        raise DegenerateInput("spearman needs at least 2 paired entries")
    rs, ry = rankdata(s), rankdata(y)
    rs -= rs.mean()
    ry -= ry.mean()
    den = np.sqrt(np.dot(rs, rs) * np.dot(ry, ry))
    if den == 0.0:
        raise DegenerateInput("zero rank variance")
    return float(np.clip(np.dot(rs, ry) / den, -1.0, 1.0))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean precision at the rank of each positive, ties broken by input order."""
    s, y = _as_arrays(scores, labels)
    if not y.any():
        raise OneClassOnly("average_precision needs a positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean())


@dataclass
class EvalReport:
    auc: dict[str, float | None]
    spearman: dict[str, float | None]
    average_precision: dict[str, float | None]
    mean_similarity_by_distance: list[float | None]
    pair_counts: dict[int, int]
    shortfalls: dict[int, int] = field(default_factory=dict)
    model_file: str | None = None
    seed: int | None = None

    def to_json(self) -> str:
        """Compact JSON, keys in fixed order, floats with 9 significant digits."""
        def num(x):
            return "null" if x is None else fmt_float(x)

        def obj(d):
            return "{" + ",".join(f'"{k}":{num(v)}' for k, v in d.items()) + "}"

        parts = [
            f'"auc":{obj(self.auc)}',
            f'"spearman":{obj(self.spearman)}',
            f'"average_precision":{obj(self.average_precision)}',
            '"mean_similarity_by_distance":[' + ",".join(num(x) for x in self.mean_similarity_by_distance) + "]",
            '"pair_counts":{' + ",".join(f'"{k}":{v}' for k, v in self.pair_counts.items()) + "}",
            '"shortfalls":{' + ",".join(f'"{k}":{v}' for k, v in self.shortfalls.items()) + "}",
            f'"model_file":{json.dumps(self.model_file)}',
            f'"seed":{"null" if self.seed is None else int(self.seed)}',
        ]
        return "{" + ",".join(parts) + "}\n"


def _metric(fn, scores, labels):
    try:
        return fn(scores, labels)
    except (OneClassOnly, DegenerateInput):
        return None


def evaluate(model: EmbeddingModel, pairs: Sequence[tuple[str, str, int]],
             shortfalls: dict[int, int] | None = None, *, model_file: str | None = None,
             seed: int | None = None) -> EvalReport:
    """Score labelled term pairs by cosine and summarize per category pair."""
    cats = np.asarray([int(c) for _, _, c in pairs], dtype=np.int64)
    if len(set(cats.tolist())) < 2:
        raise InsufficientCategories("evaluation pairs must cover at least two categories")
    if np.any((cats < 0) | (cats > 3)):
        raise ValueError("categories must lie in 0..3")
    index: dict[str, int] = {}
    for a, b, _ in pairs:
        index.setdefault(a, len(index))
        index.setdefault(b, len(index))
    emb = model.embed_many(index)
    ia = np.fromiter((index[a] for a, _, _ in pairs), dtype=np.int64, count=len(pairs))
    ib = np.fromiter((index[b] for _, b, _ in pairs), dtype=np.int64, count=len(pairs))
    sims = cosine_rows(emb[ia], emb[ib])

    auc, rho, ap = {}, {}, {}
    for key in PAIR_KEYS:
        i, j = int(key[0]), int(key[2])
        mask = (cats == i) | (cats == j)
        s, y = sims[mask], (cats[mask] == i).astype(int)
        auc[key] = _metric(roc_auc, s, y)
        rho[key] = _metric(spearman, s, y)
        ap[key] = _metric(average_precision, s, y) if auc[key] is not None else None
    means = [float(sims[cats == c].mean()) if np.any(cats == c) else None for c in range(4)]
    counts = {c: int(np.sum(cats == c)) for c in range(4)}
    return EvalReport(auc, rho, ap, means, counts, dict(shortfalls or {c: 0 for c in range(4)}),
                      model_file, seed)
