"""Bottom-up attribute evaluation over attack trees.

An attribute assigns a value to every node, computed from leaf values
by one combinator per branch type.  The OR and AND combinators must be
invariant under transposing arguments, and all three combinators must
agree on singletons; ``validate_attribute_laws`` checks both on sample
data.  Quasi-attributes, whose intermediate nodes contribute on their
own, hook in via ``node_hook`` (applied after the children are
combined).
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .tree import AND, OR, SAND, AttackTree


class UnvaluedLeaf(KeyError):
    pass


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    combine_or: Callable[[Sequence[Any]], Any]
    combine_and: Callable[[Sequence[Any]], Any]
    combine_seq: Callable[[Sequence[Any]], Any]
    leaf_values: Mapping[str, Any] = field(default_factory=dict)
    node_hook: Callable[[str, Any], Any] | None = None
    equals: Callable[[Any, Any], bool] = operator.eq

    def combinator(self, op: str) -> Callable[[Sequence[Any]], Any]:
        return {OR: self.combine_or, AND: self.combine_and, SAND: self.combine_seq}[op]


def evaluate_attribute(t: AttackTree, spec: AttributeSpec):
    """Fold the attribute bottom-up; raises UnvaluedLeaf on a missing leaf."""
    if t.is_leaf:
        try:
            return spec.leaf_values[t.node_id]
        except KeyError:
            raise UnvaluedLeaf(f"unvalued leaf {t.node_id!r}") from None
    value = spec.combinator(t.op)([evaluate_attribute(c, spec) for c in t.children])
    if spec.node_hook is not None:
        value = spec.node_hook(t.node_id, value)
    return value


@dataclass(frozen=True)
class LawViolation:
    law: str
    sample: tuple
    detail: str


def validate_attribute_laws(
    spec: AttributeSpec, samples: Sequence[Sequence[Any]]
) -> list[LawViolation]:
    """Check transposition invariance and singleton agreement on samples.

    Every sampled violation is reported; an empty list means the spec
    passed on the given data (not a proof for all inputs).
    """
    violations: list[LawViolation] = []
    for raw in samples:
        sample = tuple(raw)
        for law, mu in (("or_transposition", spec.combine_or),
                        ("and_transposition", spec.combine_and)):
            base = mu(sample)
            for i in range(len(sample) - 1):
                swapped = list(sample)
                swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
                if not spec.equals(mu(tuple(swapped)), base):
                    violations.append(
                        LawViolation(law, sample, f"positions {i} and {i + 1}")
                    )
        for v in sample:
            o, a, s = spec.combine_or([v]), spec.combine_and([v]), spec.combine_seq([v])
            if not (spec.equals(o, a) and spec.equals(a, s)):
                violations.append(
                    LawViolation("singleton_agreement", (v,), f"{o!r}/{a!r}/{s!r}")
                )
    return violations


def min_experts(leaf_values: Mapping[str, int]) -> AttributeSpec:
    """Minimum number of experts needed: (min, sum, max) over naturals."""
    return AttributeSpec("min_experts", min, sum, max, leaf_values)


def possibility(leaf_values: Mapping[str, bool]) -> AttributeSpec:
    """Whether the attack is possible: (any, all, all) over booleans."""
    return AttributeSpec("possibility", any, all, all, leaf_values)

BUILTIN_ATTRIBUTES = {"min_experts": min_experts, "possibility": possibility}
