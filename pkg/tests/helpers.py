"""Shared builders for the case-study classifications and random structures."""

import itertools
import random

from atchan.channel import (
    BOTTOM,
    TOP,
    And,
    Family,
    Or,
    Prim,
    make_classification,
)

TYPES_54 = ["Disc", "Acc", "Mod", "Inv", "Unav", "Ubhv"]


def make_cinfo():
    """Classification for the information-theft nodes A0/A1/A1.3 (and A2, A3)."""
    cls, _ = make_classification(
        "CInfo",
        tokens=["AuI.I", "AuF.I"],
        types=TYPES_54,
        holds=[(t, ty) for t in ("AuI.I", "AuF.I") for ty in ("Disc", "Acc")],
        order=[("Disc", "Acc")],
    )
    return cls


def make_cdev():
    """Classification for the device nodes A1.1/A1.2."""
    cls, _ = make_classification(
        "CDev",
        tokens=["Mech", "Data", "Pgm"],
        types=TYPES_54,
        holds=[(t, ty) for t in ("Data", "Pgm") for ty in ("Disc", "Acc")]
        + [("Mech", "Acc")],
        order=[("Disc", "Acc")],
    )
    return cls


def fam(cls_name, mapping):
    return Family.of(cls_name, mapping)


def reveng_type_entries():
    """The case-study pair map: (Disc,Disc) to Disc, other Disc/Acc pairs to Acc."""
    disc = Prim("Disc", "AuI.I")
    acc = Prim("Acc", "AuI.I")
    return {
        (("Disc", "Data"), ("Disc", "AuI.I")): disc,
        (("Disc", "Data"), ("Acc", "AuI.I")): acc,
        (("Acc", "Data"), ("Disc", "AuI.I")): acc,
        (("Acc", "Data"), ("Acc", "AuI.I")): acc,
    }


def reveng_token_entries():
    return {
        "AuI.I": (fam("CDev", {"Data": "Data"}), fam("CInfo", {"AuI.I": "AuI.I"})),
    }


def random_classification(rng: random.Random, name: str, max_tokens=3, max_types=3):
    tokens = [f"t{i}" for i in range(rng.randint(1, max_tokens))]
    types = [f"y{i}" for i in range(rng.randint(1, max_types))]
    holds = [
        (t, ty) for t in tokens for ty in types if rng.random() < 0.5
    ]
    order = []
    if len(types) >= 2 and rng.random() < 0.5:
        a, b = rng.sample(types, 2)
        order.append((a, b))
    cls, _ = make_classification(name, tokens, types, holds, order)
    return cls


def random_formula(rng: random.Random, atoms, depth=3):
    if depth == 0 or rng.random() < 0.4:
        roll = rng.random()
        if roll < 0.08:
            return TOP
        if roll < 0.16:
            return BOTTOM
        return rng.choice(atoms)
    left = random_formula(rng, atoms, depth - 1)
    right = random_formula(rng, atoms, depth - 1)
    return And(left, right) if rng.random() < 0.5 else Or(left, right)


def enumerate_formulas(atoms, max_atoms):
    """All formula shapes with at most max_atoms atom occurrences."""
    by_count = {0: [TOP, BOTTOM], 1: list(atoms)}
    for k in range(2, max_atoms + 1):
        forms = []
        for i in range(0, k + 1):
            j = k - i
            if i not in by_count or j not in by_count:
                continue
            for a, b in itertools.product(by_count[i], by_count[j]):
                forms.append(And(a, b))
                forms.append(Or(a, b))
        by_count[k] = forms
    out = []
    for k in range(0, max_atoms + 1):
        out.extend(by_count.get(k, []))
    return out
