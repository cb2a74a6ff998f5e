"""Ontology forests: parsing, validation, distance categories and pair sampling.

A forest is given by two TSV files. The hierarchy file holds ``parent<TAB>child``
edges and the string file holds ``code<TAB>string`` rows; several rows for one
code are that code's synonyms.
"""
from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Mapping

import numpy as np

from .exceptions import (
    AmbiguousString,
    CycleDetected,
    DuplicateParent,
    EmptyInput,
    MalformedLine,
    OrphanCode,
    UnknownCode,
)
from .utils import make_rng

HIERARCHY_HEADER = ("parent", "child")
STRING_HEADER = ("code", "string")

# Attempts per requested pair when sampling unrelated codes.
REJECTION_FACTOR = 50


class Distance(IntEnum):
    """Ordinal closeness of two terms; only the order carries meaning."""

    SYNONYM = 0
    SIBLING = 1
    PARENT_CHILD = 2
    UNRELATED = 3


CATEGORIES = tuple(Distance)


@dataclass(frozen=True)
class ForestStats:
    node_count: int
    tree_count: int
    min_depth: int
    max_depth: int
    synonym_count: int

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "tree_count": self.tree_count,
            "min_depth": self.min_depth,
            "max_depth": self.max_depth,
            "synonym_count": self.synonym_count,
        }


@dataclass(frozen=True, eq=False)
class HierarchyForest:
    """Immutable forest of coded nodes plus the code -> synonyms map.

    Build instances with :func:`parse_forest` or :meth:`from_mappings`, which
    validate every invariant; the raw constructor trusts its arguments.
    """

    strings: Mapping[str, tuple[str, ...]]
    parent: Mapping[str, str]
    children: Mapping[str, tuple[str, ...]] = field(repr=False)
    codes: tuple[str, ...] = field(repr=False)
    sorted_codes: tuple[str, ...] = field(repr=False)
    code_of_string: Mapping[str, str] = field(repr=False)
    roots: tuple[str, ...] = field(repr=False)

    @classmethod
    def from_mappings(
        cls,
        edges: Iterable[tuple[str, str]],
        strings: Mapping[str, Iterable[str]] | Iterable[tuple[str, str]],
    ) -> "HierarchyForest":
        """Validate ``(parent, child)`` edges and a synonym map into a forest."""
        if isinstance(strings, Mapping):
            rows = [(code, s) for code, syns in strings.items() for s in syns]
        else:
            rows = list(strings)
        return _build(list(edges), rows)

    @property
    def edges(self) -> dict[str, frozenset[str]]:
        return {p: frozenset(c) for p, c in self.children.items()}

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: object) -> bool:
        return code in self.strings

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HierarchyForest):
            return NotImplemented
        return dict(self.parent) == dict(other.parent) and {
            c: sorted(s) for c, s in self.strings.items()
        } == {c: sorted(s) for c, s in other.strings.items()}

    __hash__ = None  # type: ignore[assignment]

    def check_code(self, code: str) -> None:
        if code not in self.strings:
            raise UnknownCode(f"unknown code {code!r}")

    def parent_of(self, code: str) -> str | None:
        self.check_code(code)
        return self.parent.get(code)

    def siblings(self, code: str) -> tuple[str, ...]:
        p = self.parent_of(code)
        if p is None:
            return ()
        return tuple(c for c in self.children[p] if c != code)

    def relatives(self, code: str) -> tuple[str, ...]:
        """Parent and children of ``code`` (the distance-2 neighbours)."""
        p = self.parent_of(code)
        out = [p] if p is not None else []
        out.extend(self.children.get(code, ()))
        return tuple(out)

    def root_of(self, code: str) -> str:
        self.check_code(code)
        while code in self.parent:
            code = self.parent[code]
        return code

    def tree_codes(self, root: str) -> list[str]:
        """All codes of the tree rooted at ``root`` in depth-first order."""
        out, stack = [], [root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(self.children.get(node, ())))
        return out

    @cached_property
    def tree_of(self) -> dict[str, str]:
        """Map every code to the root of its tree."""
        out = {}
        for root in self.roots:
            for c in self.tree_codes(root):
                out[c] = root
        return out

    @cached_property
    def tree_members(self) -> dict[str, tuple[str, ...]]:
        """Sorted codes of each tree, keyed by root."""
        out: dict[str, list[str]] = {r: [] for r in self.roots}
        for c in self.sorted_codes:
            out[self.tree_of[c]].append(c)
        return {r: tuple(cs) for r, cs in out.items()}

    def subforest(self, roots: Iterable[str]) -> "HierarchyForest":
        """Forest restricted to the trees under ``roots``."""
        keep: set[str] = set()
        for r in roots:
            if self.parent_of(r) is not None:
                raise ValueError(f"{r!r} is not a root")
            keep.update(self.tree_codes(r))
        codes = [c for c in self.codes if c in keep]
        edges = [(self.parent[c], c) for c in codes if c in self.parent]
        rows = [(c, s) for c in codes for s in self.strings[c]]
        return _build(edges, rows)


def _build(edges: list[tuple[str, str]], rows: list[tuple[str, str]]) -> HierarchyForest:
    if not rows:
        raise EmptyInput("string map is empty")
    strings: dict[str, list[str]] = {}
    code_of_string: dict[str, str] = {}
    for code, text in rows:
        _check_code(code)
        if not text.strip():
            raise MalformedLine(f"empty string for code {code!r}")
        owner = code_of_string.get(text)
        if owner is not None and owner != code:
            raise AmbiguousString(f"string {text!r} is attached to {owner!r} and {code!r}")
        syns = strings.setdefault(code, [])
        if owner is None:
            code_of_string[text] = code
            syns.append(text)

    parent: dict[str, str] = {}
    for p, c in edges:
        _check_code(p)
        _check_code(c)
        if p == c:
            raise CycleDetected(f"self loop on {p!r}")
        prev = parent.get(c)
        if prev is not None and prev != p:
            raise DuplicateParent(f"{c!r} has parents {prev!r} and {p!r}")
        parent[c] = p
    for code in itertools.chain(parent, parent.values()):
        if code not in strings:
            raise OrphanCode(f"edge references {code!r}, which has no strings")
    _check_acyclic(parent)

    codes = tuple(strings)
    children: dict[str, list[str]] = {}
    for c in codes:
        if c in parent:
            children.setdefault(parent[c], []).append(c)
    return HierarchyForest(
        strings={c: tuple(s) for c, s in strings.items()},
        parent=parent,
        children={p: tuple(cs) for p, cs in children.items()},
        codes=codes,
        sorted_codes=tuple(sorted(codes)),
        code_of_string=code_of_string,
        roots=tuple(c for c in codes if c not in parent),
    )


def _check_code(code: str) -> None:
    if not code or any(ch in code for ch in "\t\r\n"):
        raise MalformedLine(f"invalid code {code!r}")


def _check_acyclic(parent: Mapping[str, str]) -> None:
    done: set[str] = set()
    for start in parent:
        path: list[str] = []
        on_path: set[str] = set()
        node: str | None = start
        while node is not None and node not in done:
            if node in on_path:
                raise CycleDetected(f"cycle through {node!r}")
            on_path.add(node)
            path.append(node)
            node = parent.get(node)
        done.update(path)


# ---------------------------------------------------------------------------
# File formats


def _read_tsv(stream: BinaryIO | bytes, header: tuple[str, str], *, allow_empty: bool,
              skip_comments: bool) -> Iterator[tuple[int, tuple[str, str]]]:
    data = stream if isinstance(stream, bytes) else stream.read()
    text = data.decode("utf-8")
    if text.startswith("﻿"):
        text = text[1:]
    lines = text.splitlines()
    seen_header = False
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r")
        if not line.strip() or (skip_comments and line.startswith("#")):
            continue
        cols = line.split("\t")
        if not seen_header:
            if tuple(cols) != header:
                raise MalformedLine(f"line {lineno}: expected header {'<TAB>'.join(header)!r}")
            seen_header = True
            continue
        if len(cols) != 2:
            raise MalformedLine(f"line {lineno}: expected 2 columns, got {len(cols)}")
        yield lineno, (cols[0], cols[1])
    if not seen_header and not allow_empty:
        raise EmptyInput("missing header")


def parse_forest(hierarchy_file: BinaryIO | bytes, string_file: BinaryIO | bytes) -> HierarchyForest:
    """Parse and validate the two TSV streams into a :class:`HierarchyForest`."""
    edges = [row for _, row in _read_tsv(hierarchy_file, HIERARCHY_HEADER,
                                          allow_empty=True, skip_comments=True)]
    rows = [row for _, row in _read_tsv(string_file, STRING_HEADER,
                                         allow_empty=False, skip_comments=False)]
    return _build(edges, rows)


def load_forest(hierarchy_path: str | Path, strings_path: str | Path) -> HierarchyForest:
    with open(hierarchy_path, "rb") as h, open(strings_path, "rb") as s:
        return parse_forest(h, s)


def serialize_forest(forest: HierarchyForest) -> tuple[bytes, bytes]:
    """Return ``(hierarchy_bytes, string_bytes)`` in the TSV file formats."""
    h = io.StringIO()
    h.write("\t".join(HIERARCHY_HEADER) + "\n")
    for code in forest.codes:
        if code in forest.parent:
            h.write(f"{forest.parent[code]}\t{code}\n")
    s = io.StringIO()
    s.write("\t".join(STRING_HEADER) + "\n")
    for code in forest.codes:
        for text in forest.strings[code]:
            s.write(f"{code}\t{text}\n")
    return h.getvalue().encode("utf-8"), s.getvalue().encode("utf-8")


def save_forest(forest: HierarchyForest, hierarchy_path: str | Path, strings_path: str | Path) -> None:
    hb, sb = serialize_forest(forest)
    Path(hierarchy_path).write_bytes(hb)
    Path(strings_path).write_bytes(sb)


# ---------------------------------------------------------------------------
# Queries


def distance(forest: HierarchyForest, a: str, b: str) -> Distance:
    forest.check_code(a)
    forest.check_code(b)
    if a == b:
        return Distance.SYNONYM
    pa, pb = forest.parent.get(a), forest.parent.get(b)
    if pa is not None and pa == pb:
        return Distance.SIBLING
    if pa == b or pb == a:
        return Distance.PARENT_CHILD
    return Distance.UNRELATED


def term_distance(forest: HierarchyForest, s: str, t: str) -> Distance:
    """Distance between two term strings via the codes that own them."""
    try:
        return distance(forest, forest.code_of_string[s], forest.code_of_string[t])
    except KeyError as exc:
        raise UnknownCode(f"term {exc.args[0]!r} is not in the forest") from None


def forest_stats(forest: HierarchyForest) -> ForestStats:
    min_depth, max_depth = math.inf, 0
    stack = [(root, 1) for root in forest.roots]
    while stack:
        node, depth = stack.pop()
        kids = forest.children.get(node)
        if kids:
            stack.extend((k, depth + 1) for k in kids)
        else:
            min_depth = min(min_depth, depth)
            max_depth = max(max_depth, depth)
    return ForestStats(
        node_count=len(forest.codes),
        tree_count=len(forest.roots),
        min_depth=int(min_depth),
        max_depth=max_depth,
        synonym_count=sum(len(s) for s in forest.strings.values()),
    )


@dataclass
class PairSample:
    """Sampled code pairs of one category; ``exhausted`` flags a shortfall."""

    category: Distance
    pairs: list[tuple[str, str]]
    requested: int

    @property
    def exhausted(self) -> bool:
        return len(self.pairs) < self.requested

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def enumerate_pairs(forest: HierarchyForest, category: int, limit: int, seed: int) -> PairSample:
    """Sample up to ``limit`` distinct unordered code pairs at ``category``.

    Category 0 yields ``(code, code)`` for codes owning at least two strings.
    Sampling is uniform without replacement and depends only on the forest
    content, the category, ``limit`` and ``seed``.
    """
    category = Distance(category)
    if limit < 1:
        raise ValueError("limit must be >= 1")
    rng = make_rng(seed, "pairs", int(category))
    if category is Distance.UNRELATED:
        pairs = _sample_unrelated(forest, limit, rng)
    else:
        population = _population(forest, category)
        n = len(population)
        idx = rng.choice(n, size=min(limit, n), replace=False) if n else []
        pairs = [population[i] for i in sorted(idx)]
    return PairSample(category, sorted(pairs), limit)


def _population(forest: HierarchyForest, category: Distance) -> list[tuple[str, str]]:
    if category is Distance.SYNONYM:
        return [(c, c) for c in forest.sorted_codes if len(forest.strings[c]) > 1]
    if category is Distance.PARENT_CHILD:
        return [(forest.parent[c], c) for c in forest.sorted_codes if c in forest.parent]
    out = []
    for p in sorted(forest.children):
        out.extend(itertools.combinations(sorted(forest.children[p]), 2))
    return out


def _sample_unrelated(forest: HierarchyForest, limit: int, rng: np.random.Generator) -> list[tuple[str, str]]:
    codes = forest.sorted_codes
    n = len(codes)
    found: set[tuple[str, str]] = set()
    if n < 2:
        return []
    budget = REJECTION_FACTOR * limit
    while budget > 0 and len(found) < limit:
        draw = min(budget, max(64, 2 * (limit - len(found))))
        budget -= draw
        ij = rng.integers(0, n, size=(draw, 2))
        for i, j in ij:
            a, b = codes[i], codes[j]
            if a > b:
                a, b = b, a
            if distance(forest, a, b) is Distance.UNRELATED:
                found.add((a, b))
                if len(found) == limit:
                    break
    return list(found)
