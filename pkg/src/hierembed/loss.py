"""Multi-similarity losses over anchor groups, with analytic gradients.

The flat loss contrasts category-0 members (positives) against everything
else. The hierarchical loss sums the same expression over the thresholds
``d0 = 0, 1, 2``, treating members with category ``<= d0`` as positives, so it
rewards any embedding whose similarities respect the category order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .encoder import SparseGradient, TermEncoder
from .exceptions import ConfigInvalid, NonFiniteInput, ZeroVector

if TYPE_CHECKING:
    from .mining import Minibatch

FLAT = "flat"
HIERARCHICAL = "hierarchical"
HIERARCHY_THRESHOLDS = (0, 1, 2)


@dataclass(frozen=True)
class LossParams:
    alpha: float = 2.0
    beta: float = 2.0
    lam: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0 or not self.beta > 0:
            raise ConfigInvalid("alpha and beta must be > 0")
        if not -1.0 < self.lam < 1.0:
            raise ConfigInvalid("lambda must lie in (-1, 1)")


@dataclass
class SimilaritySet:
    """Flat arrays of ``(anchor index, similarity, category)`` triples."""

    anchor: np.ndarray
    similarity: np.ndarray
    category: np.ndarray
    n_anchors: int

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[tuple[float, int]]]) -> "SimilaritySet":
        """Build from per-anchor lists of ``(similarity, category)``."""
        anchor = [i for i, g in enumerate(groups) for _ in g]
        sims = [s for g in groups for s, _ in g]
        cats = [c for g in groups for _, c in g]
        return cls(np.asarray(anchor, dtype=np.int64), np.asarray(sims, dtype=np.float64),
                   np.asarray(cats, dtype=np.int64), len(groups))

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.int64)
        self.similarity = np.asarray(self.similarity, dtype=np.float64)
        self.category = np.asarray(self.category, dtype=np.int64)
        if not np.all(np.isfinite(self.similarity)):
            raise NonFiniteInput("non-finite similarity")
        if np.any(np.abs(self.similarity) > 1.0):
            raise NonFiniteInput("similarity outside [-1, 1]")


def _threshold_term(sims: SimilaritySet, params: LossParams, d0: int) -> tuple[float, np.ndarray]:
    s = sims.similarity
    pos = sims.category <= d0
    grad = np.zeros_like(s)
    if not len(s):
        return 0.0, grad
    loss = 0.0
    pos_exp = np.where(pos, np.exp(-params.alpha * (s - params.lam)), 0.0)
    neg_exp = np.where(pos, 0.0, np.exp(params.beta * (s - params.lam)))
    pos_den = 1.0 + np.bincount(sims.anchor, weights=pos_exp, minlength=sims.n_anchors)
    neg_den = 1.0 + np.bincount(sims.anchor, weights=neg_exp, minlength=sims.n_anchors)
    loss += float(np.sum(np.log(pos_den)) / params.alpha)
    loss += float(np.sum(np.log(neg_den)) / params.beta)
    grad -= pos_exp / pos_den[sims.anchor]
    grad += neg_exp / neg_den[sims.anchor]
    return loss, grad


def ms_loss(sims: SimilaritySet, params: LossParams = LossParams()) -> tuple[float, np.ndarray]:
    """Standard multi-similarity loss and its gradient w.r.t. each similarity."""
    return _threshold_term(sims, params, 0)


def hierarchical_ms_loss(sims: SimilaritySet, params: LossParams = LossParams()) -> tuple[float, np.ndarray]:
    """Multi-similarity loss summed over category thresholds 0, 1 and 2."""
    total, grad = 0.0, np.zeros_like(sims.similarity)
    for d0 in HIERARCHY_THRESHOLDS:
        loss, g = _threshold_term(sims, params, d0)
        total += loss
        grad += g
    return total, grad


LOSSES = {FLAT: ms_loss, HIERARCHICAL: hierarchical_ms_loss}


def batch_loss_and_gradient(model: TermEncoder, batch: "Minibatch", params: LossParams = LossParams(),
                            mode: str = HIERARCHICAL) -> tuple[float, SparseGradient]:
    """Loss of ``batch`` under ``mode`` and its gradient w.r.t. the encoder weights."""
    try:
        loss_fn = LOSSES[mode]
    except KeyError:
        raise ConfigInvalid(f"unknown loss mode {mode!r}") from None

    index: dict[str, int] = {}
    a_idx, m_idx, cats, owner = [], [], [], []
    for gi, group in enumerate(batch.groups):
        ai = index.setdefault(group.anchor, len(index))
        for term, cat in group.members:
            a_idx.append(ai)
            m_idx.append(index.setdefault(term, len(index)))
            cats.append(int(cat))
            owner.append(gi)
    encoded = model.encode(list(index))
    if not a_idx:
        return 0.0, model.backward(encoded, np.zeros_like(encoded.embeddings))

    a_idx = np.asarray(a_idx)
    m_idx = np.asarray(m_idx)
    emb = encoded.embeddings
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("a batch term embeds to the zero vector")
    ea, em = emb[a_idx], emb[m_idx]
    na, nm = norms[a_idx], norms[m_idx]
    raw = np.einsum("ij,ij->i", ea, em) / (na * nm)
    sims = SimilaritySet(np.asarray(owner), np.clip(raw, -1.0, 1.0), np.asarray(cats), len(batch.groups))
    loss, g = loss_fn(sims, params)

    # d cos(u, v) / du = v / (|u||v|) - cos(u, v) u / |u|^2
    inv = (g / (na * nm))[:, None]
    d_anchor = inv * em - (g * raw / na ** 2)[:, None] * ea
    d_member = inv * ea - (g * raw / nm ** 2)[:, None] * em
    grad_emb = np.zeros_like(emb)
    np.add.at(grad_emb, a_idx, d_anchor)
    np.add.at(grad_emb, m_idx, d_member)
    return loss, model.backward(encoded, grad_emb)
