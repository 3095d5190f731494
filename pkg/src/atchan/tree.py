"""Attack trees with sequential conjunction.

A tree is either a leaf (a primitive attack) or a node with an AND, OR,
or SAND branch over a non-empty ordered sequence of subtrees.  Two
syntactic equalities are built in: AND/OR children may be transposed,
and a single-child branch means the same thing whatever its operator.
``normalize`` picks the canonical representative; ``semantics`` unfolds
a tree into the multiset of its refinement scenarios (R-trees, trees
without OR branches).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

AND = "AND"
OR = "OR"
SAND = "SAND"
OPS = (AND, OR, SAND)


@dataclass(frozen=True)
class AttackTree:
    """Immutable attack tree.

    ``node_id`` addresses the node (unique within one tree, stable under
    normalization); ``text`` is the human-readable action.  Leaves have
    ``op is None`` and no children.
    """

    node_id: str
    text: str
    op: str | None = None
    children: tuple["AttackTree", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def iter_nodes(self):
        """Pre-order traversal."""
        yield self
        for child in self.children:
            yield from child.iter_nodes()

    def __repr__(self) -> str:  # compact, for test failure output
        if self.is_leaf:
            return f"Lf({self.node_id})"
        inner = ",".join(repr(c) for c in self.children)
        return f"Nd({self.node_id},{self.op},[{inner}])"


def leaf(node_id: str, text: str = "") -> AttackTree:
    return AttackTree(node_id, text)


def node(node_id: str, text: str, op: str, children) -> AttackTree:
    return AttackTree(node_id, text, op, tuple(children))


class MalformedTree(ValueError):
    pass


def validate(t: AttackTree) -> None:
    """Raise MalformedTree unless t is well-formed with unique node ids."""
    seen: set[str] = set()
    for n in t.iter_nodes():
        if n.node_id in seen:
            raise MalformedTree(f"duplicate node id {n.node_id!r}")
        seen.add(n.node_id)
        if n.is_leaf:
            if n.children:
                raise MalformedTree(f"leaf {n.node_id!r} has children")
        else:
            if n.op not in OPS:
                raise MalformedTree(f"node {n.node_id!r} has bad op {n.op!r}")
            if not n.children:
                raise MalformedTree(f"node {n.node_id!r} has no children")


def structural_key(t: AttackTree):
    """Deterministic sort key: ignores node ids, keeps action text.

    Id-freeness matters: ``equivalent`` compares normal forms with ids
    stripped, so the child order of a normal form must not depend on ids.
    """
    if t.is_leaf:
        return ("L", 0, (), t.text)
    return (t.op, len(t.children), tuple(structural_key(c) for c in t.children), t.text)


def normalize(t: AttackTree) -> AttackTree:
    """Canonical representative modulo the built-in equalities.

    AND/OR children are sorted by structural key (node id only as a
    tiebreaker, for determinism); every single-child branch is rewritten
    to AND.  Idempotent.
    """
    if t.is_leaf:
        return t
    kids = tuple(normalize(c) for c in t.children)
    if len(kids) == 1:
        return AttackTree(t.node_id, t.text, AND, kids)
    if t.op in (AND, OR):
        kids = tuple(sorted(kids, key=lambda c: (structural_key(c), c.node_id)))
    return AttackTree(t.node_id, t.text, t.op, kids)


def strip_ids(t: AttackTree) -> AttackTree:
    return AttackTree("", t.text, t.op, tuple(strip_ids(c) for c in t.children))


def equivalent(t1: AttackTree, t2: AttackTree) -> bool:
    """Equality modulo the built-in equalities, ignoring node ids.

    This is the congruence generated by AND/OR transposition and the
    single-child rule, not semantic equivalence across tree shapes.
    """
    return strip_ids(normalize(t1)) == strip_ids(normalize(t2))


def semantics(t: AttackTree) -> tuple[AttackTree, ...]:
    """Multiset of refinement scenarios, as a canonically sorted tuple.

    OR contributes the multiset union of its children's scenarios, each
    wrapped in a single-child AND node keeping the OR node's label;
    AND/SAND recombine children scenarios pointwise.  Every element is
    an R-tree.  Duplicate scenarios (from syntactically equal OR
    children) keep their multiplicity.
    """
    return tuple(sorted(_scenarios(t), key=lambda r: (structural_key(r), r.node_id)))


def _scenarios(t: AttackTree) -> list[AttackTree]:
    if t.is_leaf:
        return [t]
    if t.op == OR:
        out = []
        for child in t.children:
            out.extend(
                AttackTree(t.node_id, t.text, AND, (s,)) for s in _scenarios(child)
            )
        return out
    combos = itertools.product(*(_scenarios(c) for c in t.children))
    return [AttackTree(t.node_id, t.text, t.op, combo) for combo in combos]


def is_rtree(t: AttackTree) -> bool:
    """True iff no OR branch occurs anywhere in t."""
    return all(n.op != OR for n in t.iter_nodes())


def scenario_count(t: AttackTree) -> int:
    """Number of refinement scenarios, by a counting recursion.

    Independent of ``semantics``: OR sums, AND/SAND multiply.
    """
    if t.is_leaf:
        return 1
    counts = [scenario_count(c) for c in t.children]
    if t.op == OR:
        return sum(counts)
    prod = 1
    for c in counts:
        prod *= c
    return prod
