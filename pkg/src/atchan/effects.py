"""Effects of attacks and the consistency of decompositions.

An effect assigns to an attack node a holding family/formula relation
in the node's classification.  Around a branch, the children's effects
are integrated into the extension of the disjoint sum of their
classifications (OR joins, AND meets, SAND meets the cut sequence), and
a branch is consistent when the children's (integrated) effects refine
the parent's effect through a declared or searched infomorphism.  An
inconsistency verdict is only issued when a search over the declared
constraint space is exhausted; missing data yields "unverified".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .channel import (
    EPSILON,
    TOP,
    Classification,
    Family,
    FdClassification,
    Formula,
    Infomorphism,
    Prim,
    ProductClassification,
    SchemaError,
    TokenMapTable,
    TypeMapTable,
    UnliftableToken,
    apply_type_map,
    check_infomorphism,
    check_refinement_relation,
    conj_all,
    default_index,
    disj_all,
    equivalent_formulas,
    fd,
    fd_holds,
    formula_literals,
    leq,
    map_formula,
    reduce_family,
    sum_classification,
    sym_key,
    tokens_equal_reduced,
)
from .tree import AND, OR, SAND, AttackTree

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
UNVERIFIED = "unverified"


@dataclass(frozen=True)
class Effect:
    """A holding relation assigned to a node: family |= formula in cls."""

    node: str
    cls: str
    family: Family
    formula: Formula


def validate_effect(e: Effect, registry: Mapping[str, Classification]) -> None:
    if e.cls not in registry:
        raise SchemaError(f"effect on {e.node}: unknown classification {e.cls!r}")
    cls = registry[e.cls]
    for _, tok in e.family.entries:
        if tok not in cls.tokens:
            raise SchemaError(f"effect on {e.node}: token {tok!r} not in {e.cls}")
    if not fd_holds(cls, e.family, e.formula):
        raise SchemaError(
            f"effect on {e.node}: relation {e.family!r} |= {e.formula!r} does not hold"
        )


# ---------------------------------------------------------------------------
# cut sequences and integration


def cut_sequence(effects: Sequence[Effect]) -> list[Effect]:
    """Keep the rightmost occurrence of each token family, preserving order.

    Families are compared after the structural deductions, together with
    their classification.
    """
    rightmost: dict = {}
    for pos, e in enumerate(effects):
        rightmost[(e.cls, reduce_family(e.family))] = pos
    keep = sorted(rightmost.values())
    return [effects[pos] for pos in keep]


@dataclass(frozen=True)
class IntegratedEffect:
    """A relation in the extension of the sum of the members' classifications.

    ``members`` are the contributing (position, effect) pairs, 1-based;
    the family and formula carry the member position as the component
    tag on tokens, types, and indices.
    """

    sum_cls: Classification
    family: Family
    formula: Formula
    members: tuple

    def holds(self) -> bool:
        return fd_holds(self.sum_cls, self.family, self.formula)


def _retag(i: int, formula: Formula) -> Formula:
    return map_formula(lambda p: Prim((i, p.type), (i, p.index)), formula)


def integrate(
    kind: str,
    effects: Sequence[Effect],
    registry: Mapping[str, Classification],
) -> IntegratedEffect:
    """Integrate child effects around a branch of the given kind.

    OR takes the join of the lifted formulas over the tagged union of
    the families; AND the meet; SAND the meet over the cut sequence of
    the effects.  The integrated relation holds iff some member holds
    (OR) or all members hold (AND/SAND over the cut).
    """
    members = list(effects)
    if kind == SAND:
        members = cut_sequence(members)
    elif kind not in (AND, OR):
        raise SchemaError(f"unknown branch kind {kind!r}")
    classes = [registry[e.cls] for e in members]
    total = sum_classification(classes)
    fam_entries: dict = {}
    for i, e in enumerate(members, start=1):
        for idx, tok in e.family.entries:
            fam_entries[(i, idx)] = (i, tok)
    family = Family.of(total.name, fam_entries)
    parts = [_retag(i, e.formula) for i, e in enumerate(members, start=1)]
    formula = disj_all(parts) if kind == OR else conj_all(parts)
    return IntegratedEffect(total, family, formula,
                            tuple(enumerate(members, start=1)))


def integration_equal_up_to_tags(a: IntegratedEffect, b: IntegratedEffect) -> bool:
    """Equality of integrated effects modulo renaming the component tags."""
    n = len(a.members)
    if n != len(b.members):
        return False

    def retag_sym(perm, x):
        if isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], int):
            return (perm[x[0]], x[1])
        return x

    a_classes = [e.cls for _, e in a.members]
    b_classes = [e.cls for _, e in b.members]
    for sigma in itertools.permutations(range(1, n + 1)):
        perm = {i + 1: sigma[i] for i in range(n)}
        if any(a_classes[i] != b_classes[perm[i + 1] - 1] for i in range(n)):
            continue
        fam = Family.of(
            b.sum_cls.name,
            {retag_sym(perm, idx): retag_sym(perm, tok) for idx, tok in a.family.entries},
        )
        if fam != b.family:
            continue
        formula = map_formula(
            lambda p: Prim(retag_sym(perm, p.type), retag_sym(perm, p.index)),
            a.formula,
        )
        if equivalent_formulas(b.sum_cls, formula, b.formula):
            return True
    return False


def integration_attribute(registry: Mapping[str, Classification]):
    """The effect integration packaged as a quasi-attribute spec.

    Values are Effect objects; combination integrates them.  Equality is
    up to component-tag renaming, so the transposition laws can be
    checked with the generic validator.
    """
    from .attributes import AttributeSpec

    def equals(x, y):
        if isinstance(x, IntegratedEffect) and isinstance(y, IntegratedEffect):
            return integration_equal_up_to_tags(x, y)
        return x == y

    return AttributeSpec(
        "effect_integration",
        combine_or=lambda es: integrate(OR, es, registry),
        combine_and=lambda es: integrate(AND, es, registry),
        combine_seq=lambda es: integrate(SAND, es, registry),
        equals=equals,
    )


# ---------------------------------------------------------------------------
# witness specifications


@dataclass
class WitnessSpec:
    """Declared witness data for one branch (or one OR child).

    ``type_entries`` maps fully indexed generator keys (a (type, index)
    pair, or a tuple of them for AND/SAND) to target formulas; absent
    entries fall back to ``type_default``.  ``token_entries`` maps a
    parent base token to its image (a family, or a tuple of families
    for AND/SAND).  When ``type_entries`` is None and identity is not
    requested, the branch is checked by searching type maps under the
    token constraints.
    """

    type_entries: dict | None = None
    type_default: Formula | None = None
    identity_types: bool = False
    token_entries: dict | None = None
    token_default: Any = None
    identity_tokens: bool = False
    preconditions: dict = field(default_factory=dict)
    per_child: dict = field(default_factory=dict)

    def has_explicit_types(self) -> bool:
        return self.identity_types or self.type_entries is not None

    def for_child(self, node_id: str) -> "WitnessSpec":
        return self.per_child.get(node_id, self)


def _identity_token_map(source, target_base: Classification):
    def kmap(fam: Family):
        def one(cls_name: str) -> Family:
            return Family.of(cls_name, dict(fam.entries))

        if isinstance(source, ProductClassification):
            return tuple(one(c.base.name) for c in source.components)
        return one(source.base.name)

    return kmap


def _identity_type_map(source):
    def tmap(g):
        if isinstance(source, ProductClassification):
            return conj_all([p for p in g if isinstance(p, Prim)])
        return g

    return tmap


def build_infomorphism(
    spec: WitnessSpec,
    source,
    target: FdClassification,
    name: str = "",
) -> Infomorphism:
    """Materialize a declared witness over a concrete source and target."""
    if spec.identity_types:
        tmap = _identity_type_map(source)
    elif spec.type_entries is not None:
        tmap = TypeMapTable(spec.type_entries, spec.type_default)
    else:
        raise SchemaError("witness has no type map")
    if spec.identity_tokens:
        kmap = _identity_token_map(source, target.base)
    elif spec.token_entries is not None:
        empty = (
            source.empty_token()
            if isinstance(source, (FdClassification, ProductClassification))
            else EPSILON
        )
        kmap = TokenMapTable(spec.token_entries, empty, spec.token_default)
    else:
        raise SchemaError("witness has no token map")
    return Infomorphism(source, target, tmap, kmap, name=name)


# ---------------------------------------------------------------------------
# branch and tree checking


@dataclass
class BranchResult:
    node: str
    kind: str
    verdict: str
    reasons: list = field(default_factory=list)
    complete: bool | None = None
    cut_nodes: list | None = None
    searched: int = 0

    def merge_reason(self, verdict: str, reason: str) -> None:
        order = {CONSISTENT: 0, UNVERIFIED: 1, INCONSISTENT: 2}
        if order[verdict] > order[self.verdict]:
            self.verdict = verdict
        if reason:
            self.reasons.append(reason)


@dataclass
class ConsistencyReport:
    branches: list
    verdict: str

    @staticmethod
    def of(branches: Sequence[BranchResult]) -> "ConsistencyReport":
        verdict = CONSISTENT
        if any(b.verdict == INCONSISTENT for b in branches):
            verdict = INCONSISTENT
        elif any(b.verdict == UNVERIFIED for b in branches):
            verdict = UNVERIFIED
        return ConsistencyReport(list(branches), verdict)


def _effect_of(phi: Mapping[str, Effect], node: AttackTree) -> Effect:
    e = phi.get(node.node_id)
    if e is None:
        raise SchemaError(f"no effect assigned to node {node.node_id!r}")
    return e


def _check_precondition(
    child_id: str,
    pre: Formula,
    preceding: Sequence[Effect],
    registry: Mapping[str, Classification],
    result: BranchResult,
) -> None:
    """Condition (a) for SAND: the precondition must be entailed by the
    integration of the cut sequence of the strictly preceding effects."""
    if not preceding:
        result.merge_reason(
            UNVERIFIED,
            f"precondition of {child_id} has no preceding effects to establish it",
        )
        return
    cut = cut_sequence(list(preceding))
    integrated = integrate(AND, cut, registry)

    def resolve(p: Prim) -> Formula:
        for k in range(len(cut), 0, -1):
            e = cut[k - 1]
            cls = registry[e.cls]
            if p.index in e.family.indices() and p.type in cls.types:
                return Prim((k, p.type), (k, p.index))
        raise UnliftableToken(
            f"precondition index {p.index!r} is not established before {child_id}"
        )

    try:
        lifted = map_formula(resolve, pre)
    except UnliftableToken as exc:
        result.merge_reason(UNVERIFIED, str(exc))
        return
    if not leq(integrated.sum_cls, integrated.formula, lifted):
        result.merge_reason(
            INCONSISTENT, f"failed SAND precondition of {child_id}: {pre!r}"
        )


def _check_or_child(
    info: Infomorphism,
    child: Effect,
    parent: Effect,
    registry: Mapping[str, Classification],
    result: BranchResult,
) -> None:
    im = check_infomorphism(info)
    if im.schema_errors:
        result.merge_reason(UNVERIFIED, f"{child.node}: " + "; ".join(im.schema_errors))
        return
    if im.violations:
        tok, gen = im.violations[0]
        result.merge_reason(
            UNVERIFIED,
            f"{child.node}: witness fails the infomorphism condition at ({tok!r}, {gen!r})",
        )
        return
    try:
        ok = check_refinement_relation(
            info, child.family, child.formula, parent.family, parent.formula
        )
    except UnliftableToken as exc:
        result.merge_reason(UNVERIFIED, f"{child.node}: {exc}")
        return
    except SchemaError as exc:
        result.merge_reason(UNVERIFIED, f"{child.node}: {exc}")
        return
    if not ok:
        result.merge_reason(
            INCONSISTENT,
            f"failed leq: effect of {child.node} does not refine the parent effect",
        )


def _check_tuple_refinement(
    info: Infomorphism,
    members: Sequence[Effect],
    parent: Effect,
    result: BranchResult,
) -> None:
    im = check_infomorphism(info)
    if im.schema_errors:
        result.merge_reason(UNVERIFIED, "; ".join(im.schema_errors))
        return
    if im.violations:
        tok, gen = im.violations[0]
        result.merge_reason(
            UNVERIFIED,
            f"witness fails the infomorphism condition at ({tok!r}, {gen!r})",
        )
        return
    child_token = tuple(e.family for e in members)
    child_formula = tuple(e.formula for e in members)
    try:
        ok = check_refinement_relation(
            info, child_token, child_formula, parent.family, parent.formula
        )
    except UnliftableToken as exc:
        result.merge_reason(UNVERIFIED, str(exc))
        return
    except SchemaError as exc:
        result.merge_reason(UNVERIFIED, str(exc))
        return
    if not ok:
        result.merge_reason(
            INCONSISTENT,
            "failed leq: the integrated child effects do not refine the parent effect",
        )


def check_branch_consistency(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    infos: Sequence[Infomorphism],
    registry: Mapping[str, Classification],
    preconditions: Mapping[str, Formula] | None = None,
) -> BranchResult:
    """Check one branch against explicit witness infomorphisms.

    ``infos`` holds one infomorphism per child for OR branches and a
    single infomorphism (product source) for AND/SAND.  Verdicts:
    a failed derivation-order check is inconsistent; missing or broken
    witness data is unverified.
    """
    kind = branch.op
    parent = _effect_of(phi, branch)
    children = [_effect_of(phi, c) for c in branch.children]
    result = BranchResult(branch.node_id, kind, CONSISTENT)
    pre = dict(preconditions or {})

    if kind == OR:
        if len(infos) != len(children):
            result.merge_reason(UNVERIFIED, "missing witness for some OR child")
            return result
        for info, child in zip(infos, children):
            _check_or_child(info, child, parent, registry, result)
    elif kind == AND:
        _check_tuple_refinement(infos[0], children, parent, result)
    elif kind == SAND:
        for i, c in enumerate(branch.children):
            if c.node_id in pre:
                _check_precondition(
                    c.node_id, pre[c.node_id], children[:i], registry, result
                )
        cut = cut_sequence(children)
        result.cut_nodes = [e.node for e in cut]
        _check_tuple_refinement(infos[0], cut, parent, result)
    else:
        raise SchemaError(f"not a branch: {branch.node_id}")

    if result.verdict == CONSISTENT:
        result.complete = check_completeness(branch, phi, infos, registry)
    return result


def check_completeness(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    infos: Sequence[Infomorphism],
    registry: Mapping[str, Classification],
) -> bool:
    """Is the parent's effect derivable from the integrated child effects?

    True iff the parent formula is below the witness image of the
    integrated type in the derivation order.
    """
    parent = _effect_of(phi, branch)
    children = [_effect_of(phi, c) for c in branch.children]
    target = registry[parent.cls]
    if branch.op == OR:
        mapped = disj_all(
            [apply_type_map(info, c.formula) for info, c in zip(infos, children)]
        )
    else:
        members = children if branch.op == AND else cut_sequence(children)
        mapped = apply_type_map(infos[0], tuple(e.formula for e in members))
    return leq(target, parent.formula, mapped)


@dataclass(frozen=True)
class TaggedSumClassification:
    """The extension of a sum, generated at component-tagged indices.

    Integration renames the i-th member's indices to (i, index) so the
    members' index sets are disjoint; the matching generators are the
    tagged primitives at those indices.
    """

    total: Classification
    components: tuple

    @property
    def name(self) -> str:
        return f"tagged{self.total.name}"

    def sat(self, token: Family, typ) -> bool:
        return fd_holds(self.total, token, typ)

    def generator_types(self) -> list:
        out = []
        for i, c in enumerate(self.components, start=1):
            for p in c.generator_types():
                out.append(Prim((i, p.type), (i, p.index)))
        return out


@dataclass(frozen=True)
class EmbeddedTupleClassification:
    """The image of the product inside the extension of the sum.

    Tokens are sum families; types are the tagged conjunctions that
    tuple types embed to, so the generators carry cross-component
    information (one per tuple of component generators).
    """

    total: Classification
    components: tuple

    @property
    def name(self) -> str:
        return f"embedded{self.total.name}"

    def sat(self, token: Family, typ) -> bool:
        return fd_holds(self.total, token, typ)

    def generator_types(self) -> list:
        slots = [c.generator_types() for c in self.components]
        out = []
        for combo in itertools.product(*slots):
            out.append(conj_all([
                Prim((i, p.type), (i, p.index))
                for i, p in enumerate(combo, start=1)
            ]))
        return out


def _untag_clausewise(total: Classification, arity: int, formula: Formula):
    """Rewrite a tagged formula as a join of component-formula tuples."""
    from .channel import normal_form

    nf = normal_form(total, formula)
    tuples = []
    for clause in nf:
        per: list[list[Formula]] = [[] for _ in range(arity)]
        for ty, idx in sorted(clause, key=lambda l: (sym_key(l[0]), sym_key(l[1]))):
            (i, base_ty) = ty
            base_idx = idx[1] if (
                isinstance(idx, tuple) and len(idx) == 2 and idx[0] == i
            ) else idx
            per[i - 1].append(Prim(base_ty, base_idx))
        tuples.append(tuple(conj_all(ps) for ps in per))
    return tuples


def integration_infomorphism(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    infos: Sequence[Infomorphism],
    registry: Mapping[str, Classification],
) -> tuple[Infomorphism, IntegratedEffect]:
    """The infomorphism from the integrated effect's home to the parent.

    This is the construction behind the validity argument: for OR the
    tagged generators map through the per-child witnesses; for AND/SAND
    the source is the embedded tuple classification and tagged
    conjunctions map through the single witness tuple-wise.
    """
    parent = _effect_of(phi, branch)
    children = [_effect_of(phi, c) for c in branch.children]
    integrated = integrate(branch.op, children, registry)
    members = [e for _, e in integrated.members]
    target = fd(registry[parent.cls])

    if branch.op == OR:
        source = TaggedSumClassification(
            integrated.sum_cls, tuple(fd(registry[e.cls]) for e in members)
        )

        def tmap(p) -> Formula:
            if not isinstance(p, Prim):
                return map_formula(tmap, p)
            (i, ty) = p.type
            idx = p.index
            if isinstance(idx, tuple) and len(idx) == 2 and idx[0] == i:
                idx = idx[1]
            return apply_type_map(infos[i - 1], Prim(ty, idx))

        def kmap(fam: Family) -> Family:
            out: dict = {}
            for i, e in enumerate(members, start=1):
                img = infos[i - 1].token_map(fam)
                for idx, tok in img.entries:
                    out[(i, idx)] = (i, tok)
            return Family.of(integrated.sum_cls.name, out)

    else:
        info = infos[0]
        arity = len(members)
        source = EmbeddedTupleClassification(
            integrated.sum_cls, tuple(fd(registry[e.cls]) for e in members)
        )

        def tmap(formula: Formula) -> Formula:
            tuples = _untag_clausewise(integrated.sum_cls, arity, formula)
            return disj_all([apply_type_map(info, t) for t in tuples])

        def kmap(fam: Family) -> Family:
            imgs = info.token_map(fam)
            out: dict = {}
            for i, img in enumerate(imgs, start=1):
                for idx, tok in img.entries:
                    out[(i, idx)] = (i, tok)
            return Family.of(integrated.sum_cls.name, out)

    g = Infomorphism(source, target, tmap, kmap, name=f"integration[{branch.node_id}]")
    return g, integrated


# ---------------------------------------------------------------------------
# witness search


@dataclass
class SearchOutcome:
    infos: list | None
    searched: int
    capped: bool
    error: str | None = None


def _type_candidates(parent_cls: Classification, names: Sequence) -> list[Formula]:
    out: list[Formula] = [TOP]
    indices = sorted(
        {default_index(t) for t in parent_cls.tokens if t != EPSILON}, key=sym_key
    )
    for ty in names:
        if ty not in parent_cls.types:
            continue
        for idx in indices:
            out.append(Prim(ty, idx))
    return out


def _valid_images(
    source, target: FdClassification, kmap, gen, candidates, counter
) -> list[Formula]:
    """Candidate images of one generator compatible with the infomorphism
    condition for the fixed token map (top is always a don't-care)."""
    good = []
    for img in candidates:
        counter[0] += 1
        if img is TOP:
            good.append(img)
            continue
        ok = True
        for a in target.check_tokens():
            lhs = source.sat(kmap(a), gen)
            rhs = target.sat(a, img)
            if lhs != rhs:
                ok = False
                break
        if ok:
            good.append(img)
    return good


def _search_single(
    source,
    target: FdClassification,
    kmap,
    child_token,
    child_formula,
    parent: Effect,
    names_of,
    counter,
    cap: int,
) -> Infomorphism | None:
    """Search a type map over one source (FD or product) for a refinement."""
    if not tokens_equal_reduced(source, kmap(parent.family), child_token):
        return None
    gens = source.generator_types()
    per_gen: dict = {}
    parent_cls = target.base
    for g in gens:
        cands = _type_candidates(parent_cls, names_of(g))
        good = _valid_images(source, target, kmap, g, cands, counter)
        if counter[0] > cap:
            raise SizeCap()
        if not good:
            return None
        per_gen[g] = good

    needed = _needed_generators(source, child_formula)
    fixed = {}
    for g in gens:
        if g not in needed:
            fixed[TypeMapTable._normalize(g)] = per_gen[g][0]
    options = [per_gen[g] for g in needed]
    for combo in itertools.product(*options):
        counter[0] += 1
        if counter[0] > cap:
            raise SizeCap()
        entries = dict(fixed)
        for g, img in zip(needed, combo):
            entries[TypeMapTable._normalize(g)] = img
        tmap = TypeMapTable(entries, TOP)
        info = Infomorphism(source, target, tmap, kmap, name="searched")
        mapped = apply_type_map(info, child_formula)
        if leq(parent_cls, mapped, parent.formula):
            return info
    return None


def _needed_generators(source, child_formula) -> list:
    """Generators read by the refinement check of the child formula."""
    if isinstance(source, ProductClassification):
        lits = [sorted(formula_literals(f), key=lambda l: (sym_key(l[0]), sym_key(l[1])))
                for f in child_formula]
        needed = list(itertools.product(*[[Prim(t, i) for t, i in ls] for ls in lits]))
        return needed
    return [Prim(t, i) for t, i in
            sorted(formula_literals(child_formula), key=lambda l: (sym_key(l[0]), sym_key(l[1])))]


class SizeCap(Exception):
    pass


def search_infomorphism(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    spec: WitnessSpec,
    registry: Mapping[str, Classification],
    cap: int = 10_000,
) -> SearchOutcome:
    """Search witnesses under the declared token constraints.

    The token part is fixed by the witness's token map; type parts range
    over name-preserving re-indexings into the parent classification
    plus the top don't-care, per generator.  Exhausting the space with
    no witness justifies an inconsistency verdict; hitting the cap does
    not.
    """
    parent = _effect_of(phi, branch)
    children = [_effect_of(phi, c) for c in branch.children]
    target = fd(registry[parent.cls])
    counter = [0]

    def token_map_for(source, child_spec):
        if child_spec.identity_tokens:
            return _identity_token_map(source, target.base)
        if child_spec.token_entries is None:
            return None
        empty = source.empty_token()
        return TokenMapTable(child_spec.token_entries, empty, child_spec.token_default)

    try:
        if branch.op == OR:
            infos = []
            for child in children:
                csp = spec.for_child(child.node)
                source = fd(registry[child.cls])
                kmap = token_map_for(source, csp)
                if kmap is None:
                    return SearchOutcome(None, counter[0], False)
                found = _search_single(
                    source, target, kmap, child.family, child.formula, parent,
                    lambda g: [g.type], counter, cap,
                )
                if found is None:
                    return SearchOutcome(None, counter[0], False)
                infos.append(found)
            return SearchOutcome(infos, counter[0], False)

        members = children if branch.op == AND else cut_sequence(children)
        source = ProductClassification(tuple(fd(registry[e.cls]) for e in members))
        kmap = token_map_for(source, spec)
        if kmap is None:
            return SearchOutcome(None, counter[0], False)
        found = _search_single(
            source, target, kmap,
            tuple(e.family for e in members),
            tuple(e.formula for e in members),
            parent,
            lambda g: sorted({p.type for p in g if isinstance(p, Prim)}, key=sym_key),
            counter, cap,
        )
        if found is None:
            return SearchOutcome(None, counter[0], False)
        return SearchOutcome([found], counter[0], False)
    except SizeCap:
        return SearchOutcome(None, counter[0], True)
    except UnliftableToken:
        return SearchOutcome(None, counter[0], False)
    except SchemaError as exc:
        return SearchOutcome(None, counter[0], False, error=str(exc))


# ---------------------------------------------------------------------------
# whole-tree checking


def analyze_branch(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    spec: WitnessSpec | None,
    registry: Mapping[str, Classification],
    max_search: int = 10_000,
) -> BranchResult:
    """Check one branch from its declared witness data.

    Explicit type maps are checked directly; a token map without a type
    map triggers the witness search; no witness at all is unverified.
    """
    kind = branch.op
    result = BranchResult(branch.node_id, kind, CONSISTENT)
    try:
        parent = _effect_of(phi, branch)
        children = [_effect_of(phi, c) for c in branch.children]
    except SchemaError as exc:
        result.merge_reason(UNVERIFIED, f"missing witness data: {exc}")
        return result
    if kind == SAND:
        result.cut_nodes = [e.node for e in cut_sequence(children)]

    if spec is None:
        result.merge_reason(UNVERIFIED, "no witness declared for this branch")
        return result

    if spec.has_explicit_types() or any(
        spec.for_child(c.node_id).has_explicit_types() for c in branch.children
    ):
        try:
            infos = build_branch_infos(branch, phi, spec, registry)
        except SchemaError as exc:
            result.merge_reason(UNVERIFIED, str(exc))
            return result
        return check_branch_consistency(
            branch, phi, infos, registry, spec.preconditions
        )

    outcome = search_infomorphism(branch, phi, spec, registry, cap=max_search)
    result.searched = outcome.searched
    if outcome.infos is not None:
        checked = check_branch_consistency(
            branch, phi, outcome.infos, registry, spec.preconditions
        )
        checked.searched = outcome.searched
        return checked
    if outcome.error is not None:
        result.merge_reason(UNVERIFIED, outcome.error)
        return result
    if outcome.capped:
        result.merge_reason(
            UNVERIFIED, f"witness search hit the cap of {max_search} candidates"
        )
        return result
    result.merge_reason(
        INCONSISTENT,
        "no infomorphism exists within the declared constraints",
    )
    if kind == SAND:
        for i, c in enumerate(branch.children):
            if c.node_id in spec.preconditions:
                _check_precondition(
                    c.node_id, spec.preconditions[c.node_id], children[:i],
                    registry, result,
                )
    return result


def build_branch_infos(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    spec: WitnessSpec,
    registry: Mapping[str, Classification],
) -> list[Infomorphism]:
    parent = _effect_of(phi, branch)
    children = [_effect_of(phi, c) for c in branch.children]
    target = fd(registry[parent.cls])
    if branch.op == OR:
        infos = []
        for c in children:
            csp = spec.for_child(c.node)
            infos.append(
                build_infomorphism(csp, fd(registry[c.cls]), target,
                                   name=f"{branch.node_id}->{c.node}")
            )
        return infos
    members = children if branch.op == AND else cut_sequence(children)
    source = ProductClassification(tuple(fd(registry[e.cls]) for e in members))
    return [build_infomorphism(spec, source, target, name=branch.node_id)]


def check_tree_consistency(
    tree: AttackTree,
    phi: Mapping[str, Effect],
    witnesses: Mapping[str, WitnessSpec],
    registry: Mapping[str, Classification],
    max_search: int = 10_000,
) -> ConsistencyReport:
    """Check every branch; the tree is consistent iff all branches are."""
    results = []
    for n in tree.iter_nodes():
        if n.is_leaf:
            continue
        results.append(
            analyze_branch(n, phi, witnesses.get(n.node_id), registry, max_search)
        )
    return ConsistencyReport.of(results)
