"""Mitigation of effects under refinement.

A countermeasure cancels part of an effect, leaving a residual that
sits above the original in the derivation order (top is complete
prevention).  Around a consistent branch, residuals cannot be chosen
independently: the witness image of the combined child residuals,
joined with the original parent effect, bounds the parent's residual
from below.  This module checks that bound, reports consistency-
breaking residuals on OR branches, re-runs SAND precondition
entailment under residuals, and enumerates the admissible parent
residuals over the branch's primitive vocabulary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .channel import (
    BOTTOM,
    TOP,
    Classification,
    Formula,
    Infomorphism,
    Or,
    Prim,
    apply_type_map,
    canonical_formula,
    conj_all,
    disj_all,
    equivalent_formulas,
    formula_literals,
    leq,
    map_formula,
    normal_form,
    sym_key,
)
from .effects import (
    Effect,
    WitnessSpec,
    build_branch_infos,
    cut_sequence,
    integrate,
)
from .tree import AND, OR, SAND, AttackTree


def is_reduction(cls: Classification, gamma: Formula, gamma_prime: Formula) -> bool:
    """A residual is valid iff it is derivable from the original."""
    return leq(cls, gamma, gamma_prime)


def least_admissible_residual(
    f: Infomorphism, child_residual, parent_original: Formula
) -> Formula:
    """The strongest parent residual compatible with the child residuals."""
    return Or(apply_type_map(f, child_residual), parent_original)


def check_mitigation_bound(
    f: Infomorphism,
    child_residual,
    parent_original: Formula,
    parent_residual: Formula,
) -> bool:
    """The residual inequality: witness image of the child residual,
    joined with the original parent effect, must be below the parent
    residual."""
    cls = f.target_base()
    return leq(
        cls, least_admissible_residual(f, child_residual, parent_original),
        parent_residual,
    )


def check_or_branch_weakening(
    infos: Sequence[Infomorphism],
    child_residuals: Sequence[Formula],
    parent_residual: Formula,
) -> list[int]:
    """Children whose mapped residual is not below the parent residual.

    For a consistent OR branch whose residuals are claimed to preserve
    consistency, every child's mapped residual must stay below the
    parent's; the returned indices (0-based) violate that.
    """
    bad = []
    for i, (info, res) in enumerate(zip(infos, child_residuals)):
        cls = info.target_base()
        if not leq(cls, apply_type_map(info, res), parent_residual):
            bad.append(i)
    return bad


# ---------------------------------------------------------------------------
# enumeration of candidate residuals


def _order_closure(cls: Classification, literals: set) -> list:
    out = set(literals)
    for ty, idx in tuple(out):
        for other in cls.types:
            if cls.type_leq(ty, other) or cls.type_leq(other, ty):
                out.add((other, idx))
    return sorted(out, key=lambda l: (sym_key(l[1]), sym_key(l[0])))


def enumerate_formulas_over(
    cls: Classification, literals: Sequence, max_literals: int = 4
) -> tuple[list[Formula], bool]:
    """All inequivalent join-of-meet formulas over the literal set.

    Returns the canonical candidates plus a flag marking the result as
    partial when the literal set had to be truncated to the cap.
    """
    lits = list(literals)
    partial = len(lits) > max_literals
    lits = lits[:max_literals]
    distinct = {}
    for r in range(1, len(lits) + 1):
        for combo in itertools.combinations(lits, r):
            clause = conj_all([Prim(t, i) for t, i in combo])
            distinct.setdefault(normal_form(cls, clause), clause)
    clauses = sorted(distinct.values(), key=repr)
    if len(clauses) > 12:
        partial = True
        clauses = clauses[:12]
    seen = {}
    for subset_size in range(0, len(clauses) + 1):
        for subset in itertools.combinations(clauses, subset_size):
            formula = disj_all(list(subset))
            seen.setdefault(normal_form(cls, formula), formula)
    seen.setdefault(normal_form(cls, TOP), TOP)
    seen.setdefault(normal_form(cls, BOTTOM), BOTTOM)
    return list(seen.values()), partial


def _combined_residual(kind: str, members: Sequence[Effect], residuals, infos):
    if kind == OR:
        return disj_all(
            [apply_type_map(info, residuals[e.node])
             for info, e in zip(infos, members)]
        )
    return apply_type_map(infos[0], tuple(residuals[e.node] for e in members))


def admissible_parent_residuals(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    child_residuals: Mapping[str, Formula],
    infos: Sequence[Infomorphism],
    registry: Mapping[str, Classification],
    max_literals: int = 4,
) -> tuple[list[Formula], bool]:
    """Enumerate parent residuals satisfying the residual inequality.

    Sound and complete over the formulas built from the primitives of
    the parent effect and the mapped child residuals, closed under the
    declared order; flagged partial beyond the literal cap.
    """
    parent = phi[branch.node_id]
    cls = registry[parent.cls]
    members = _branch_members(branch, phi)
    full = dict(child_residuals)
    for e in members:
        full.setdefault(e.node, e.formula)
    mapped = _combined_residual(branch.op, members, full, infos)
    lower = Or(mapped, parent.formula)
    lits = _order_closure(
        cls, formula_literals(parent.formula) | formula_literals(mapped)
    )
    candidates, partial = enumerate_formulas_over(cls, lits, max_literals)
    return [c for c in candidates if leq(cls, lower, c)], partial


def _branch_members(branch: AttackTree, phi: Mapping[str, Effect]) -> list[Effect]:
    children = [phi[c.node_id] for c in branch.children]
    return cut_sequence(children) if branch.op == SAND else children


# ---------------------------------------------------------------------------
# precondition re-checking under residuals


def sand_precondition_breaks(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    residuals: Mapping[str, Formula],
    preconditions: Mapping[str, Formula],
    registry: Mapping[str, Classification],
) -> list[str]:
    """Preconditions that stop being entailed once residuals replace the
    preceding effects.  Mitigating an effect that a later attack depends
    on breaks the scenario, which is worth surfacing, not hiding."""
    breaks = []
    children = [phi[c.node_id] for c in branch.children]
    for i, c in enumerate(branch.children):
        pre = preconditions.get(c.node_id)
        if pre is None:
            continue
        preceding = [
            Effect(e.node, e.cls, e.family, residuals.get(e.node, e.formula))
            for e in children[:i]
        ]
        if not preceding:
            continue
        cut = cut_sequence(preceding)
        integrated = integrate(AND, cut, registry)

        def resolve(p: Prim) -> Formula:
            for k in range(len(cut), 0, -1):
                e = cut[k - 1]
                cls = registry[e.cls]
                if p.index in e.family.indices() and p.type in cls.types:
                    return Prim((k, p.type), (k, p.index))
            return BOTTOM  # index never established: entailment will fail

        lifted = map_formula(resolve, pre)
        if not leq(integrated.sum_cls, integrated.formula, lifted):
            breaks.append(c.node_id)
    return breaks


# ---------------------------------------------------------------------------
# per-branch mitigation analysis


@dataclass
class MitigationResult:
    node: str
    kind: str
    ok: bool
    reasons: list = field(default_factory=list)
    claimed: Formula | None = None
    least: Formula | None = None
    exact: bool | None = None
    admissible: list = field(default_factory=list)
    admissible_partial: bool = False
    violating_children: list = field(default_factory=list)
    precondition_breaks: list = field(default_factory=list)


def analyze_branch_mitigation(
    branch: AttackTree,
    phi: Mapping[str, Effect],
    residuals: Mapping[str, Formula],
    spec: WitnessSpec,
    registry: Mapping[str, Classification],
    max_literals: int = 4,
) -> MitigationResult:
    """Check the residual assignment around one branch.

    Residuals default to the original effect where not declared.  The
    branch witness must be explicit (mitigation bounds are relative to
    the infomorphism that realized consistency).
    """
    parent = phi[branch.node_id]
    cls = registry[parent.cls]
    result = MitigationResult(branch.node_id, branch.op, True)
    result.claimed = residuals.get(branch.node_id, parent.formula)

    full = dict(residuals)
    for n in branch.iter_nodes():
        if n.node_id in phi:
            full.setdefault(n.node_id, phi[n.node_id].formula)

    for node_id, residual in residuals.items():
        if node_id in phi and node_id in {n.node_id for n in branch.iter_nodes()}:
            original = phi[node_id].formula
            if not is_reduction(registry[phi[node_id].cls], original, residual):
                result.ok = False
                result.reasons.append(
                    f"residual of {node_id} is not a reduction of its effect"
                )

    infos = build_branch_infos(branch, phi, spec, registry)
    members = _branch_members(branch, phi)
    mapped = _combined_residual(branch.op, members, full, infos)
    result.least = canonical_formula(cls, Or(mapped, parent.formula))
    if not leq(cls, result.least, result.claimed):
        result.ok = False
        result.reasons.append(
            "parent residual is stronger than the least admissible residual"
        )
    result.exact = equivalent_formulas(cls, result.least, result.claimed)

    if branch.op == OR:
        bad = check_or_branch_weakening(
            infos, [full[e.node] for e in members], result.claimed
        )
        result.violating_children = [members[i].node for i in bad]
        if bad:
            result.ok = False
            result.reasons.append(
                "residuals break consistency for children: "
                + ", ".join(result.violating_children)
            )

    if branch.op == SAND and spec.preconditions:
        result.precondition_breaks = sand_precondition_breaks(
            branch, phi, full, spec.preconditions, registry
        )
        if result.precondition_breaks:
            result.ok = False
            result.reasons.append(
                "residuals break SAND preconditions of: "
                + ", ".join(result.precondition_breaks)
            )

    result.admissible, result.admissible_partial = admissible_parent_residuals(
        branch, phi, full, infos, registry, max_literals
    )
    return result
