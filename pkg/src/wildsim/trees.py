"""Ordered m-ary interaction trees.

A tree is stored as its growth history: ``history[k]`` is the position, in
the left-to-right leaf list present after ``k`` expansions, of the leaf that
node ``k`` replaced.  Node ``k`` therefore has birth index ``k``, the root is
node 0, and at step ``k`` there are ``(m - 1) * k + 1`` leaves to choose from.
Expanding a leaf puts the ``m`` new leaves in its place, so children of a
node sit next to each other in slot order.

Two histories are equal iff the labelled trees are equal, which makes
enumeration and uniform sampling straightforward.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import NumericBudgetError

DEFAULT_ENUMERATION_CAP = 10**6


class TreeCountExceeded(NumericBudgetError):
    """Raised when an enumeration would produce more trees than allowed."""

    def __init__(self, m: int, n: int, count: int, cap: int):
        self.m, self.n, self.count, self.cap = m, n, count, cap
        super().__init__(
            f"enumerating m={m}, n={n} would produce {count} trees (cap {cap})"
        )


class NodeRecord(NamedTuple):
    birth_index: int
    parent: int | None  # birth index of the parent node, None for the root
    parent_slot: int | None


def _check_arity(m: int) -> None:
    if int(m) != m or m < 2:
        raise ValueError(f"arity must be an integer >= 2, got {m!r}")


def _check_nodes(n: int) -> None:
    if int(n) != n or n < 0:
        raise ValueError(f"node count must be a non-negative integer, got {n!r}")


def leaf_count(m: int, n: int) -> int:
    return (m - 1) * n + 1


@dataclass(frozen=True)
class OrderedTree:
    m: int
    history: tuple[int, ...] = ()

    def __post_init__(self):
        _check_arity(self.m)
        hist = tuple(int(h) for h in self.history)
        for k, j in enumerate(hist):
            if not 0 <= j < leaf_count(self.m, k):
                raise ValueError(
                    f"history[{k}]={j} outside [0, {leaf_count(self.m, k)})"
                )
        object.__setattr__(self, "history", hist)

    @property
    def n_nodes(self) -> int:
        return len(self.history)

    @property
    def n_leaves(self) -> int:
        return leaf_count(self.m, self.n_nodes)

    def _grow(self):
        # leaves in left-to-right order as (parent node, slot); root leaf is (None, None)
        leaves: list[tuple[int | None, int | None]] = [(None, None)]
        records = []
        for k, j in enumerate(self.history):
            parent, slot = leaves[j]
            records.append(NodeRecord(k, parent, slot))
            leaves[j : j + 1] = [(k, s) for s in range(self.m)]
        return records, leaves

    def nodes(self) -> list[NodeRecord]:
        return self._grow()[0]

    def children(self) -> list[list[int | None]]:
        """Per node, the child in each slot: a node index, or None for a leaf."""
        kids: list[list[int | None]] = [[None] * self.m for _ in self.history]
        for rec in self.nodes()[1:]:
            kids[rec.parent][rec.parent_slot] = rec.birth_index
        return kids

    def depth(self) -> int:
        recs = self.nodes()
        d = [0] * len(recs)
        for rec in recs[1:]:
            d[rec.birth_index] = d[rec.parent] + 1
        return max(d, default=-1) + 1

    def to_json(self) -> dict:
        return {"m": self.m, "history": list(self.history)}

    @classmethod
    def from_json(cls, obj: dict) -> "OrderedTree":
        return cls(int(obj["m"]), tuple(obj["history"]))


def count_trees(m: int, n: int) -> int:
    """Number of ordered m-ary trees with ``n`` nodes, counted exactly.

    Equals ``prod_{k=1}^{n-1} ((m - 1) k + 1)``, the number of growth
    histories of length ``n``.
    """
    _check_arity(m)
    _check_nodes(n)
    return math.prod((m - 1) * k + 1 for k in range(1, n))


def enumerate_trees(m: int, n: int, cap: int = DEFAULT_ENUMERATION_CAP) -> list[OrderedTree]:
    """All ordered trees with ``n`` nodes, in lexicographic history order.

    Raises
    ------
    TreeCountExceeded
        If ``count_trees(m, n)`` is larger than ``cap``.
    """
    count = count_trees(m, n)
    if count > cap:
        raise TreeCountExceeded(m, n, count, cap)
    ranges = [range(leaf_count(m, k)) for k in range(n)]
    return [OrderedTree(m, hist) for hist in itertools.product(*ranges)]


def sample_tree(m: int, n: int, rng) -> OrderedTree:
    """Uniform random ordered tree: ``n`` expansions of a uniformly chosen leaf."""
    _check_arity(m)
    _check_nodes(n)
    hist = tuple(int(rng.integers(leaf_count(m, k))) for k in range(n))
    return OrderedTree(m, hist)


def root_interleaving(tree: OrderedTree) -> tuple[int, ...]:
    """Root subtree (slot of the root) that each node 1..n-1 belongs to."""
    if tree.n_nodes == 0:
        raise ValueError("a tree without nodes has no root interleaving")
    owner = [0] * tree.n_nodes
    out = []
    for rec in tree.nodes()[1:]:
        owner[rec.birth_index] = rec.parent_slot if rec.parent == 0 else owner[rec.parent]
        out.append(owner[rec.birth_index])
    return tuple(out)


def decompose(tree: OrderedTree) -> list[OrderedTree]:
    """Split a tree at its root into the ``m`` subtrees hanging from it.

    Birth indices inside each subtree are relabelled 0, 1, ... keeping their
    relative order.  Combine with :func:`root_interleaving` and :func:`graft`
    to rebuild the original tree.
    """
    if tree.n_nodes == 0:
        raise ValueError("cannot decompose the single-leaf tree")
    m = tree.m
    sizes = [1] * m  # current leaf count of each root subtree
    sub_hist: list[list[int]] = [[] for _ in range(m)]
    for j in tree.history[1:]:
        i, local = _locate(sizes, j)
        sub_hist[i].append(local)
        sizes[i] += m - 1
    return [OrderedTree(m, tuple(h)) for h in sub_hist]


def _locate(sizes: Sequence[int], j: int) -> tuple[int, int]:
    offset = 0
    for i, size in enumerate(sizes):
        if j < offset + size:
            return i, j - offset
        offset += size
    raise IndexError(j)


def graft(subtrees: Sequence[OrderedTree], interleaving: Sequence[int]) -> OrderedTree:
    """Inverse of :func:`decompose`: hang ``subtrees`` under a new root."""
    m = len(subtrees)
    if any(s.m != m for s in subtrees):
        raise ValueError("every subtree must have arity equal to the number of subtrees")
    if sorted(interleaving) != sorted(i for i, s in enumerate(subtrees) for _ in range(s.n_nodes)):
        raise ValueError("interleaving does not match subtree node counts")
    sizes = [1] * m
    ptr = [0] * m
    hist = [0]
    for i in interleaving:
        local = subtrees[i].history[ptr[i]]
        ptr[i] += 1
        hist.append(sum(sizes[:i]) + local)
        sizes[i] += m - 1
    return OrderedTree(m, tuple(hist))


def compositions(n: int, parts: int):
    """All tuples of ``parts`` non-negative integers summing to ``n``."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, parts - 1):
            yield (first,) + rest


def multinomial(n: int, ks: Sequence[int]) -> int:
    out, left = 1, n
    for k in ks:
        out *= math.comb(left, k)
        left -= k
    return out


def count_by_decomposition(m: int, n: int) -> int:
    """``count_trees(m, n + 1)`` rebuilt from root splits into m subtrees.

    Sums ``multinomial(n; i_1..i_m) * prod_j count_trees(m, i_j)`` over
    compositions of ``n``; the multinomial picks which later nodes go to
    which subtree.
    """
    return sum(
        multinomial(n, split) * math.prod(count_trees(m, i) for i in split)
        for split in compositions(n, m)
    )
