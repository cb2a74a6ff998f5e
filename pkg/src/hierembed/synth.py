"""Seeded synthetic forests whose strings carry lexical signal of tree proximity.

Every node's canonical string is its path tokens (root down to itself) plus
one family token per ancestor level, each shared by all children of that
ancestor. Siblings therefore share every token but their own, a parent and
child share the parent's tokens, and different trees share almost nothing.
Extra synonyms drop one ancestor path token, gain a variant token and shuffle
word order. Optional noise tokens blur the signal further.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigInvalid
from .hierarchy import HierarchyForest, save_forest
from .utils import make_rng

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
VARIANT_POOL = 512
NOISE_POOL = 2048


@dataclass(frozen=True)
class SynthConfig:
    n_trees: int = 20
    depth: int = 5
    branching: int = 3
    synonyms_per_node: int = 4
    noise_tokens: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigInvalid("n_trees must be >= 1")
        if self.depth < 2:
            raise ConfigInvalid("depth must be >= 2")
        if self.branching < 2:
            raise ConfigInvalid("branching must be >= 2")
        if self.synonyms_per_node < 1:
            raise ConfigInvalid("synonyms_per_node must be >= 1")
        if self.noise_tokens < 0:
            raise ConfigInvalid("noise_tokens must be >= 0")

    @property
    def node_count(self) -> int:
        return self.n_trees * (self.branching ** self.depth - 1) // (self.branching - 1)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown synth config keys: {sorted(unknown)}")
        try:
            return cls(**{k: int(v) for k, v in data.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def _token(rng: np.random.Generator) -> str:
    length = int(rng.integers(4, 7))
    first = int(rng.integers(0, 2))
    letters = [
        (_CONSONANTS if (i + first) % 2 == 0 else _VOWELS)[int(rng.integers(0, 5 if (i + first) % 2 else 14))]
        for i in range(length)
    ]
    return "".join(letters)


class _Vocabulary:
    """Disjoint token pools drawn from one seeded stream."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._used: set[str] = set()

    def pool(self, size: int) -> list[str]:
        out = []
        while len(out) < size:
            tok = _token(self._rng)
            if tok not in self._used:
                self._used.add(tok)
                out.append(tok)
        return out


def generate(config: SynthConfig) -> HierarchyForest:
    """Build the complete ``branching``-ary forest described by ``config``."""
    if config.node_count < 2:
        raise ConfigInvalid("config yields fewer than 2 nodes")
    rng = make_rng(config.seed, "synth")
    vocab = _Vocabulary(rng)
    b = config.branching
    roots = vocab.pool(config.n_trees)
    level_pools = [vocab.pool(3 * b + 8) for _ in range(config.depth - 1)]
    family_pool = vocab.pool(4 * b + 8)
    variant_pool = vocab.pool(VARIANT_POOL)
    noise_pool = vocab.pool(NOISE_POOL) if config.noise_tokens else []

    edges: list[tuple[str, str]] = []
    rows: list[tuple[str, str]] = []

    def emit(code: str, path: list[str], families: list[str]) -> None:
        canonical = path + families
        variants = rng.choice(len(variant_pool), size=config.synonyms_per_node - 1, replace=False)
        forms = [list(canonical)]
        for v in variants:
            words = list(path) + families
            if len(path) > 1:
                del words[int(rng.integers(0, len(path) - 1))]
            words.append(variant_pool[int(v)])
            forms.append([words[i] for i in rng.permutation(len(words))])
        for words in forms:
            if config.noise_tokens:
                words = words + [noise_pool[int(i)] for i in rng.integers(0, len(noise_pool), config.noise_tokens)]
            rows.append((code, " ".join(words)))

    for t, root_tok in enumerate(roots):
        root = f"t{t}"
        emit(root, [root_tok], [family_pool[int(rng.integers(0, len(family_pool)))]])
        frontier = [(root, [root_tok], [])]
        for level in range(config.depth - 1):
            nxt = []
            for code, path, lineage in frontier:
                families = lineage + [family_pool[int(rng.integers(0, len(family_pool)))]]
                picks = rng.choice(len(level_pools[level]), size=b, replace=False)
                for i, tok in enumerate(picks):
                    child = f"{code}.{i}"
                    child_path = path + [level_pools[level][int(tok)]]
                    edges.append((code, child))
                    emit(child, child_path, families)
                    nxt.append((child, child_path, families))
            frontier = nxt
    return HierarchyForest.from_mappings(edges, rows)


def write_synth(config: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write ``hierarchy.tsv``, ``strings.tsv`` and the ``synth.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    forest = generate(config)
    paths = {
        "hierarchy": out / "hierarchy.tsv",
        "strings": out / "strings.tsv",
        "config": out / "synth.json",
    }
    save_forest(forest, paths["hierarchy"], paths["strings"])
    paths["config"].write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    return paths
