"""Causal attack trees and the projection from refinement scenarios.

Causal attack trees are binary terms over atomic attacks, interpreted
as sets of labeled digraphs: disjunction unions, conjunction juxtaposes,
and sequencing juxtaposes plus adds every edge from the first part to
the second.  An n-ary attack tree translates into a causal term by
left-folding each branch; independently, each refinement scenario
projects to a digraph directly (sequential branches connect consecutive
children only).  The two routes land on the same causal orders: the
commutation check compares them set-wise, up to label-preserving
isomorphism of transitive closures, since consecutive-edge and
all-cross-edge presentations generate the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

from .channel import SizeCapExceeded
from .tree import AND, OR, SAND, AttackTree


# --- causal terms -----------------------------------------------------------


class CausalTree:
    __slots__ = ()


@dataclass(frozen=True)
class Atom(CausalTree):
    label: str

    def __repr__(self):
        return self.label


@dataclass(frozen=True)
class Conj(CausalTree):
    left: CausalTree
    right: CausalTree

    def __repr__(self):
        return f"({self.left!r} & {self.right!r})"


@dataclass(frozen=True)
class Disj(CausalTree):
    left: CausalTree
    right: CausalTree

    def __repr__(self):
        return f"({self.left!r} | {self.right!r})"


@dataclass(frozen=True)
class Seq(CausalTree):
    left: CausalTree
    right: CausalTree

    def __repr__(self):
        return f"({self.left!r} . {self.right!r})"


def beta(t: AttackTree) -> CausalTree:
    """Translate an attack tree into a binary causal term.

    Branches fold left-associatively into the matching binary operator;
    single-child branches disappear (the causal syntax has no unary
    operator and the fold direction is semantics-neutral).  Atoms are
    the leaves' node ids.
    """
    if t.is_leaf:
        return Atom(t.node_id)
    parts = [beta(c) for c in t.children]
    op = {AND: Conj, OR: Disj, SAND: Seq}[t.op]
    return reduce(op, parts)


# --- labeled digraphs ---------------------------------------------------------


@dataclass(frozen=True)
class LabeledDigraph:
    """Vertices 0..n-1 carrying labels (repeats allowed) plus directed edges."""

    labels: tuple
    edges: frozenset

    @property
    def n(self) -> int:
        return len(self.labels)

    def __repr__(self):
        es = ",".join(f"{a}->{b}" for a, b in sorted(self.edges))
        return f"G({','.join(self.labels)};{es})"


def graph_atom(label: str) -> LabeledDigraph:
    return LabeledDigraph((label,), frozenset())


def juxtapose(g1: LabeledDigraph, g2: LabeledDigraph) -> LabeledDigraph:
    off = g1.n
    edges = set(g1.edges) | {(a + off, b + off) for a, b in g2.edges}
    return LabeledDigraph(g1.labels + g2.labels, frozenset(edges))


def seq_compose(g1: LabeledDigraph, g2: LabeledDigraph) -> LabeledDigraph:
    base = juxtapose(g1, g2)
    cross = {(a, b + g1.n) for a in range(g1.n) for b in range(g2.n)}
    return LabeledDigraph(base.labels, base.edges | cross)


def transitive_closure(g: LabeledDigraph) -> LabeledDigraph:
    reach = {v: {w for (a, w) in g.edges if a == v} for v in range(g.n)}
    changed = True
    while changed:
        changed = False
        for v in range(g.n):
            extra = set()
            for w in reach[v]:
                extra |= reach[w] - reach[v]
            if extra:
                reach[v] |= extra
                changed = True
    edges = {(v, w) for v in range(g.n) for w in reach[v]}
    return LabeledDigraph(g.labels, frozenset(edges))


def _graph_key(g: LabeledDigraph):
    return (g.n, tuple(sorted(g.labels)), len(g.edges), repr(g))


def intermediate_semantics(t: CausalTree) -> tuple:
    """The set of digraphs a causal term denotes (deduplicated, ordered)."""
    if isinstance(t, Atom):
        graphs = [graph_atom(t.label)]
    elif isinstance(t, Disj):
        graphs = list(intermediate_semantics(t.left)) + list(
            intermediate_semantics(t.right)
        )
    elif isinstance(t, Conj):
        graphs = [
            juxtapose(a, b)
            for a in intermediate_semantics(t.left)
            for b in intermediate_semantics(t.right)
        ]
    elif isinstance(t, Seq):
        graphs = [
            seq_compose(a, b)
            for a in intermediate_semantics(t.left)
            for b in intermediate_semantics(t.right)
        ]
    else:
        raise TypeError(f"not a causal term: {t!r}")
    return tuple(sorted(set(graphs), key=_graph_key))


def project_rtree(r: AttackTree) -> LabeledDigraph:
    """Project a refinement scenario to its digraph of primitive attacks.

    Conjunctive branches juxtapose; sequential branches additionally
    connect every vertex of each child to every vertex of the next
    (consecutive children only).
    """
    if r.op == OR:
        raise ValueError(f"node {r.node_id!r} is an OR branch, not part of an R-tree")
    if r.is_leaf:
        return graph_atom(r.node_id)
    parts = [project_rtree(c) for c in r.children]
    if r.op == AND:
        return reduce(juxtapose, parts)
    out = parts[0]
    prev = range(0, parts[0].n)
    for nxt in parts[1:]:
        off = out.n
        cross = {(a, b + off) for a in prev for b in range(nxt.n)}
        base = juxtapose(out, nxt)
        out = LabeledDigraph(base.labels, base.edges | frozenset(cross))
        prev = range(off, off + nxt.n)
    return out


def graphs_isomorphic(g1: LabeledDigraph, g2: LabeledDigraph, cap: int = 12) -> bool:
    """Label-preserving digraph isomorphism, by exact backtracking.

    Vertices may share labels; candidates are pruned by label and
    in/out degree.  Refuses graphs above the vertex cap.
    """
    if max(g1.n, g2.n) > cap:
        raise SizeCapExceeded(f"{max(g1.n, g2.n)} vertices exceeds the cap of {cap}")
    if g1.n != g2.n or sorted(g1.labels) != sorted(g2.labels):
        return False
    if len(g1.edges) != len(g2.edges):
        return False

    def degrees(g):
        out = [0] * g.n
        inn = [0] * g.n
        for a, b in g.edges:
            out[a] += 1
            inn[b] += 1
        return out, inn

    out1, in1 = degrees(g1)
    out2, in2 = degrees(g2)
    sig1 = sorted((g1.labels[v], out1[v], in1[v]) for v in range(g1.n))
    sig2 = sorted((g2.labels[v], out2[v], in2[v]) for v in range(g2.n))
    if sig1 != sig2:
        return False

    order = sorted(range(g1.n), key=lambda v: (g1.labels[v], -(out1[v] + in1[v])))
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def consistent(v, w):
        for a, b in mapping.items():
            if ((v, a) in g1.edges) != ((w, b) in g2.edges):
                return False
            if ((a, v) in g1.edges) != ((b, w) in g2.edges):
                return False
        return True

    def assign(k: int) -> bool:
        if k == len(order):
            return True
        v = order[k]
        for w in range(g2.n):
            if w in used:
                continue
            if g2.labels[w] != g1.labels[v]:
                continue
            if out2[w] != out1[v] or in2[w] != in1[v]:
                continue
            if not consistent(v, w):
                continue
            mapping[v] = w
            used.add(w)
            if assign(k + 1):
                return True
            del mapping[v]
            used.discard(w)
        return False

    return assign(0)


def graph_hom_exists(g1: LabeledDigraph, g2: LabeledDigraph, cap: int = 12) -> bool:
    """Is there a label-preserving homomorphism from g1 into g2?

    Vertices map (not necessarily injectively) to same-labeled vertices
    and every edge must map to an edge.
    """
    if max(g1.n, g2.n) > cap:
        raise SizeCapExceeded(f"{max(g1.n, g2.n)} vertices exceeds the cap of {cap}")
    candidates = [
        [w for w in range(g2.n) if g2.labels[w] == g1.labels[v]]
        for v in range(g1.n)
    ]
    if any(not c for c in candidates):
        return False
    mapping: dict[int, int] = {}

    def assign(v: int) -> bool:
        if v == g1.n:
            return True
        for w in candidates[v]:
            ok = True
            for a, b in g1.edges:
                fa = mapping.get(a, w if a == v else None)
                fb = mapping.get(b, w if b == v else None)
                if fa is not None and fb is not None and (fa, fb) not in g2.edges:
                    ok = False
                    break
            if ok:
                mapping[v] = w
                if assign(v + 1):
                    return True
                del mapping[v]
        return False

    return assign(0)


def hom_equivalent(g1: LabeledDigraph, g2: LabeledDigraph, cap: int = 12) -> bool:
    """Homomorphisms both ways: the equivalence validating conjunction
    idempotency, which plain isomorphism cannot (duplicate copies add
    vertices)."""
    return graph_hom_exists(g1, g2, cap) and graph_hom_exists(g2, g1, cap)


def iso_set_equal(gs1, gs2, cap: int = 12) -> bool:
    """Set equality of digraph collections up to isomorphism."""

    def dedupe(gs):
        out = []
        for g in gs:
            if not any(graphs_isomorphic(g, h, cap) for h in out):
                out.append(g)
        return out

    d1, d2 = dedupe(gs1), dedupe(gs2)
    if len(d1) != len(d2):
        return False
    return all(any(graphs_isomorphic(g, h, cap) for h in d2) for g in d1)


def check_commutation(t: AttackTree, max_leaves: int = 8, cap: int = 12) -> bool:
    """Do the two semantic routes agree on this tree?

    Projections of the refinement scenarios are compared with the
    digraph semantics of the folded causal term, as sets up to
    isomorphism of transitive closures (the two presentations of
    sequencing draw consecutive-only versus all-cross edges, which
    close to the same order).
    """
    from .tree import semantics

    leaves = sum(1 for n in t.iter_nodes() if n.is_leaf)
    if leaves > max_leaves:
        raise SizeCapExceeded(f"{leaves} leaves exceeds the cap of {max_leaves}")
    left = [transitive_closure(project_rtree(r)) for r in semantics(t)]
    right = [transitive_closure(g) for g in intermediate_semantics(beta(t))]
    return iso_set_equal(left, right, cap)


def or_choice_count(t: CausalTree) -> int:
    """Number of disjunctive choices after distributing over disjunction."""
    if isinstance(t, Atom):
        return 1
    if isinstance(t, Disj):
        return or_choice_count(t.left) + or_choice_count(t.right)
    return or_choice_count(t.left) * or_choice_count(t.right)
