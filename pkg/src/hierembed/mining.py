"""Minibatch construction: hierarchy anchor groups, hard triplets, eval pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .encoder import EmbeddingModel, cosine_rows
from .exceptions import ConfigInvalid
from .hierarchy import (
    CATEGORIES,
    REJECTION_FACTOR,
    Distance,
    HierarchyForest,
    distance,
    enumerate_pairs,
)
from .utils import make_rng

log = logging.getLogger(__name__)

HARD = "hard"
LITERAL = "literal"
DEFAULT_COUNTS = {0: 2, 1: 2, 2: 2, 3: 4}


@dataclass(frozen=True)
class MinerConfig:
    """Margin, per-category member counts and seed for batch construction.

    ``direction="hard"`` keeps triplets whose positive/negative cosine gap is
    below ``margin``; ``"literal"`` keeps those whose gap exceeds it.
    """

    margin: float = 0.25
    per_category_counts: Mapping[int, int] = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    seed: int = 0
    direction: str = HARD

    def __post_init__(self):
        counts = {int(k): int(v) for k, v in dict(self.per_category_counts).items()}
        object.__setattr__(self, "per_category_counts", counts)
        if not self.margin > 0:
            raise ConfigInvalid("margin must be > 0")
        if set(counts) - {0, 1, 2, 3} or any(v < 0 for v in counts.values()):
            raise ConfigInvalid("per_category_counts needs categories 0..3 with counts >= 0")
        if counts.get(0, 0) <= 0 or sum(counts.get(c, 0) for c in (1, 2, 3)) <= 0:
            raise ConfigInvalid("need at least one positive and one negative count > 0")
        if self.direction not in (HARD, LITERAL):
            raise ConfigInvalid(f"miner direction must be {HARD!r} or {LITERAL!r}")

    def count(self, category: int) -> int:
        return self.per_category_counts.get(int(category), 0)

    @property
    def negative_count(self) -> int:
        return sum(self.count(c) for c in (1, 2, 3))


class Triplet(NamedTuple):
    anchor: str
    positive: str
    negative: str


@dataclass
class AnchorGroup:
    """An anchor term and its members labelled with distance categories."""

    anchor: str
    members: list[tuple[str, int]]

    def close(self, d0: int) -> list[tuple[str, int]]:
        """Members within distance ``d0`` of the anchor."""
        return [m for m in self.members if m[1] <= d0]

    def far(self, d0: int) -> list[tuple[str, int]]:
        return [m for m in self.members if m[1] > d0]


@dataclass
class Minibatch:
    groups: list[AnchorGroup]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.groups)


# ---------------------------------------------------------------------------
# Hard triplet mining


def triplet_gaps(model: EmbeddingModel, candidates: Sequence[Triplet]) -> np.ndarray:
    """``cos(a, p) - cos(a, n)`` for every triplet, embedding each term once."""
    if not candidates:
        return np.zeros(0)
    index: dict[str, int] = {}
    for t in candidates:
        for term in t:
            index.setdefault(term, len(index))
    emb = model.embed_many(index)
    ia = np.fromiter((index[t.anchor] for t in candidates), dtype=np.int64)
    ip = np.fromiter((index[t.positive] for t in candidates), dtype=np.int64)
    ineg = np.fromiter((index[t.negative] for t in candidates), dtype=np.int64)
    return cosine_rows(emb[ia], emb[ip]) - cosine_rows(emb[ia], emb[ineg])


def mine_hard_triplets(model: EmbeddingModel, candidates: Sequence[Triplet],
                       config: MinerConfig = MinerConfig()) -> list[Triplet]:
    """Keep the triplets selected by the miner, in input order."""
    candidates = [Triplet(*t) for t in candidates]
    gaps = triplet_gaps(model, candidates)
    keep = gaps < config.margin if config.direction == HARD else gaps > config.margin
    return [t for t, k in zip(candidates, keep) if k]


# ---------------------------------------------------------------------------
# Hierarchy anchor groups


def _pick(rng: np.random.Generator, items: Sequence, k: int) -> list:
    if k <= 0 or not items:
        return []
    idx = rng.choice(len(items), size=min(k, len(items)), replace=False)
    return [items[int(i)] for i in np.sort(idx)]


def _one_string(forest: HierarchyForest, code: str, rng: np.random.Generator) -> str:
    syns = forest.strings[code]
    return syns[int(rng.integers(0, len(syns)))]


def _far_codes(forest: HierarchyForest, code: str, k: int, rng: np.random.Generator) -> list[str]:
    """Up to ``k`` unrelated codes, half from the anchor's tree and half from other trees."""
    if k <= 0:
        return []
    root = forest.tree_of[code]
    same_tree = forest.tree_members[root]
    n_all = len(forest.sorted_codes)
    has_cross = len(same_tree) < n_all
    near = 1 + len(forest.siblings(code)) + len(forest.relatives(code))
    has_same = len(same_tree) > near
    if has_same and has_cross:
        n_same = k // 2 + (int(rng.integers(0, 2)) if k % 2 else 0)
    else:
        n_same = k if has_same else 0
    chosen: list[str] = []
    seen = {code}

    def draw(pool: Sequence[str], want: int, accept) -> None:
        got, attempts = 0, REJECTION_FACTOR * want
        while got < want and attempts > 0:
            attempts -= 1
            c = pool[int(rng.integers(0, len(pool)))]
            if c not in seen and accept(c):
                seen.add(c)
                chosen.append(c)
                got += 1

    draw(same_tree, n_same, lambda c: distance(forest, code, c) is Distance.UNRELATED)
    if has_cross:
        draw(forest.sorted_codes, k - len(chosen), lambda c: forest.tree_of[c] != root)
    return chosen


def anchor_group(forest: HierarchyForest, code: str, config: MinerConfig) -> AnchorGroup:
    """Members of one anchor code, seeded by ``(config.seed, code)``."""
    forest.check_code(code)
    rng = make_rng(config.seed, "anchor", code)
    syns = forest.strings[code]
    a = int(rng.integers(0, len(syns)))
    anchor = syns[a]
    members: list[tuple[str, int]] = []
    others = [s for i, s in enumerate(syns) if i != a]
    members += [(s, 0) for s in _pick(rng, others, config.count(0))]
    for cat, pool in ((1, forest.siblings(code)), (2, forest.relatives(code))):
        for c in _pick(rng, pool, config.count(cat)):
            members.append((_one_string(forest, c, rng), cat))
    for c in _far_codes(forest, code, config.count(3), rng):
        members.append((_one_string(forest, c, rng), 3))
    return AnchorGroup(anchor, members)


def build_anchor_groups(forest: HierarchyForest, anchors: Iterable[str],
                        config: MinerConfig = MinerConfig()) -> Minibatch:
    """One group per anchor code; anchors yielding no member are dropped."""
    groups, dropped = [], 0
    for code in anchors:
        g = anchor_group(forest, code, config)
        if g.members:
            groups.append(g)
        else:
            dropped += 1
    if dropped:
        log.warning("dropped %d anchor(s) with empty groups", dropped)
    return Minibatch(groups, dropped)


# ---------------------------------------------------------------------------
# Flat (synonym / relation) groups


def _groups_from_triplets(anchor: str, positives: Sequence[str], kept: Iterable[Triplet]) -> AnchorGroup:
    members = [(p, 0) for p in positives]
    seen = set(positives)
    for t in kept:
        if t.negative not in seen:
            seen.add(t.negative)
            members.append((t.negative, 3))
    return AnchorGroup(anchor, members)


def build_pair_groups(model: EmbeddingModel, pairs: Sequence[tuple[str, str]],
                      config: MinerConfig = MinerConfig(), key: int | str = 0) -> Minibatch:
    """Groups for flat positive pairs with negatives mined from the other pairs' terms.

    Each pair ``(a, p)`` becomes a group anchored at ``a`` with ``p`` as the
    positive; candidate negatives are drawn from the batch's other terms and
    filtered by :func:`mine_hard_triplets`.
    """
    rng = make_rng(config.seed, "pairs-batch", key)
    pool = sorted({t for pair in pairs for t in pair})
    candidates: list[Triplet] = []
    for a, p in pairs:
        banned = {a, p}
        choices = [t for t in _pick(rng, pool, config.negative_count + 2) if t not in banned]
        candidates += [Triplet(a, p, n) for n in choices[:config.negative_count]]
    kept = mine_hard_triplets(model, candidates, config)
    by_pair: dict[tuple[str, str], list[Triplet]] = {}
    for t in kept:
        by_pair.setdefault((t.anchor, t.positive), []).append(t)
    groups = [_groups_from_triplets(a, [p], by_pair.get((a, p), [])) for a, p in pairs]
    return Minibatch(groups)


def build_synonym_groups(model: EmbeddingModel, forest: HierarchyForest, anchors: Iterable[str],
                         config: MinerConfig = MinerConfig()) -> Minibatch:
    """Synonym-only groups for forest anchors, ignoring the tree structure.

    Positives are the anchor code's other strings; negatives are hard-mined
    from strings of randomly drawn other codes, whatever their relation.
    """
    plans = []
    candidates: list[Triplet] = []
    n_codes = len(forest.sorted_codes)
    for code in anchors:
        rng = make_rng(config.seed, "synonyms", code)
        syns = forest.strings[code]
        a = int(rng.integers(0, len(syns)))
        positives = _pick(rng, [s for i, s in enumerate(syns) if i != a], config.count(0))
        negs = []
        for _ in range(REJECTION_FACTOR * config.negative_count):
            if len(negs) == config.negative_count or n_codes < 2:
                break
            c = forest.sorted_codes[int(rng.integers(0, n_codes))]
            if c != code:
                negs.append(_one_string(forest, c, rng))
        plans.append((syns[a], positives))
        candidates += [Triplet(syns[a], p, n) for p in positives for n in negs]
    kept = mine_hard_triplets(model, candidates, config)
    by_anchor: dict[str, list[Triplet]] = {}
    for t in kept:
        by_anchor.setdefault(t.anchor, []).append(t)
    groups, dropped = [], 0
    for anchor, positives in plans:
        g = _groups_from_triplets(anchor, positives, by_anchor.get(anchor, []))
        if g.members:
            groups.append(g)
        else:
            dropped += 1
    return Minibatch(groups, dropped)


# ---------------------------------------------------------------------------
# Evaluation pairs


@dataclass
class LabeledPairs:
    pairs: list[tuple[str, str, int]]
    shortfalls: dict[int, int]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def sample_eval_pairs(forest: HierarchyForest, per_category: int, seed: int) -> LabeledPairs:
    """Stratified term pairs labelled with their distance category."""
    if per_category < 1:
        raise ValueError("per_category must be >= 1")
    out: list[tuple[str, str, int]] = []
    shortfalls = {}
    for cat in CATEGORIES:
        sample = enumerate_pairs(forest, cat, per_category, seed)
        shortfalls[int(cat)] = sample.shortfall
        for a, b in sample:
            rng = make_rng(seed, "materialize", int(cat), a, b)
            if cat is Distance.SYNONYM:
                s, t = _pick(rng, forest.strings[a], 2)
            else:
                s, t = _one_string(forest, a, rng), _one_string(forest, b, rng)
            out.append((s, t, int(cat)))
    return LabeledPairs(out, shortfalls)


def with_seed(config: MinerConfig, seed: int) -> MinerConfig:
    return replace(config, seed=seed)
