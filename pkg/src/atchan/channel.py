"""Channel-theory engine.

Classifications relate tokens (objects) to types (properties).  On top
of a finite base classification this module builds:

* token families (finite index-to-token maps) and distributive-lattice
  formulas over indexed primitive types, with the satisfaction relation
  between them;
* a decidable order on formulas ("the greater can be derived from the
  smaller"), via join-of-meets normal forms, plus an independent
  brute-force oracle over monotone valuations;
* infomorphisms (a forward type map and a backward token map tied by
  the biconditional f_tok(a) |= g  <=>  a |= f_typ(g)) with a finite
  mechanical check, and the standard constructions: disjoint sums,
  products, the family/lattice extension of a classification, pointwise
  lifting of infomorphisms, and the standard embeddings.

Everything is immutable; the decision procedures are pure functions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Iterable, Mapping, Sequence

EPSILON = "eps"  # the un-connected token: satisfies no type, present everywhere


class SchemaError(ValueError):
    """A symbol is used outside its declared classification."""


class UnliftableToken(ValueError):
    """A token has no usable preimage under an infomorphism's token map."""


class SizeCapExceeded(ValueError):
    """An exact procedure refused an input above its size cap."""


def sym_key(x) -> tuple:
    """Total order on the str/int/tuple symbols used for tokens, types, indices."""
    if isinstance(x, tuple):
        return ("t", tuple(sym_key(e) for e in x))
    if isinstance(x, int):
        return ("i", x)
    return ("s", str(x))


def default_index(token):
    """The index a token stands for when none is given (tokens index themselves)."""
    if isinstance(token, tuple):
        return default_index(token[1])
    return token


# ---------------------------------------------------------------------------
# classifications


@dataclass(frozen=True)
class Classification:
    """A finite token/type satisfaction structure.

    ``order`` is a reflexive-transitive relation on types; (a, b) means
    b is derivable from a.  ``holds`` is closed under it: if a token
    satisfies a then it satisfies every b above a.  The un-connected
    token EPSILON is always a member and satisfies nothing.
    """

    name: str
    tokens: frozenset
    types: frozenset
    holds: frozenset
    order: frozenset

    def satisfies(self, token, typ) -> bool:
        return (token, typ) in self.holds

    def type_leq(self, a, b) -> bool:
        return a == b or (a, b) in self.order

    # finite-check interface shared with the compound classifications
    def check_tokens(self) -> list:
        return sorted(self.tokens, key=sym_key)

    def generator_types(self) -> list:
        return sorted(self.types, key=sym_key)

    def sat(self, token, typ) -> bool:
        return self.satisfies(token, typ)


def _transitive_close(pairs: set) -> set:
    closed = set(pairs)
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(tuple(closed), tuple(closed)):
            if b == c and (a, d) not in closed:
                closed.add((a, d))
                changed = True
    return closed


def make_classification(
    name: str,
    tokens: Iterable,
    types: Iterable,
    holds: Iterable = (),
    order: Iterable = (),
) -> tuple[Classification, list[str]]:
    """Build a classification, closing the order and the holds relation.

    Returns the classification and a warning per holds pair that had to
    be added for monotone closure.
    """
    toks = frozenset(tokens) | {EPSILON}
    typs = frozenset(types)
    warnings: list[str] = []
    for a, b in order:
        if a not in typs or b not in typs:
            raise SchemaError(f"{name}: order pair ({a!r}, {b!r}) uses undeclared types")
    closed_order = frozenset(_transitive_close(set(order)) | {(t, t) for t in typs})
    hold_set = set()
    for tok, typ in holds:
        if tok == EPSILON:
            raise SchemaError(f"{name}: the un-connected token cannot satisfy {typ!r}")
        if tok not in toks:
            raise SchemaError(f"{name}: holds uses undeclared token {tok!r}")
        if typ not in typs:
            raise SchemaError(f"{name}: holds uses undeclared type {typ!r}")
        hold_set.add((tok, typ))
    for tok, typ in tuple(hold_set):
        for a, b in closed_order:
            if a == typ and (tok, b) not in hold_set:
                hold_set.add((tok, b))
                warnings.append(f"{name}: added {tok!r} |= {b!r} (monotone closure)")
    return Classification(name, toks, typs, frozenset(hold_set), closed_order), warnings


def sum_classification(components: Sequence[Classification], name: str | None = None) -> Classification:
    """Disjoint sum: tokens and types tagged by 1-based component position."""
    if name is None:
        name = "(" + "+".join(c.name for c in components) + ")"
    tokens = {EPSILON}
    types = set()
    holds = set()
    order = set()
    for i, c in enumerate(components, start=1):
        tokens |= {(i, t) for t in c.tokens if t != EPSILON}
        types |= {(i, ty) for ty in c.types}
        holds |= {((i, t), (i, ty)) for (t, ty) in c.holds}
        order |= {((i, a), (i, b)) for (a, b) in c.order}
    return Classification(name, frozenset(tokens), frozenset(types),
                          frozenset(holds), frozenset(order))


def product_classification(components: Sequence[Classification], name: str | None = None) -> Classification:
    """Materialized product of finite base classifications (tuple tokens/types)."""
    if name is None:
        name = "(" + ",".join(c.name for c in components) + ")"
    tokens = set(itertools.product(*(c.check_tokens() for c in components)))
    types = set(itertools.product(*(c.generator_types() for c in components)))
    holds = {
        (tok, typ)
        for tok in tokens
        for typ in types
        if all(c.satisfies(a, t) for c, a, t in zip(components, tok, typ))
    }
    # componentwise order on type tuples
    order = {
        (ta, tb)
        for ta in types
        for tb in types
        if all(c.type_leq(x, y) for c, x, y in zip(components, ta, tb))
    }
    return Classification(name, frozenset(tokens), frozenset(types),
                          frozenset(holds), frozenset(order))


# ---------------------------------------------------------------------------
# token families and lattice formulas


@dataclass(frozen=True)
class Family:
    """A finite index-to-token map over one base classification."""

    cls: str
    entries: tuple = ()

    @staticmethod
    def of(cls: str, mapping: Mapping) -> "Family":
        items = tuple(sorted(mapping.items(), key=lambda kv: sym_key(kv[0])))
        return Family(cls, items)

    def as_dict(self) -> dict:
        return dict(self.entries)

    def indices(self) -> tuple:
        return tuple(i for i, _ in self.entries)

    def get(self, index, default=None):
        for i, t in self.entries:
            if i == index:
                return t
        return default

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def __repr__(self) -> str:
        body = ",".join(f"{i}->{t}" for i, t in self.entries)
        return f"{{{body}}}"


class Formula:
    """Marker base class for lattice formulas."""

    __slots__ = ()

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)


@dataclass(frozen=True, repr=False)
class Prim(Formula):
    type: Any
    index: Any

    def __repr__(self):
        return f"{self.type}@{self.index}"


@dataclass(frozen=True, repr=False)
class _Top(Formula):
    def __repr__(self):
        return "top"


@dataclass(frozen=True, repr=False)
class _Bottom(Formula):
    def __repr__(self):
        return "bot"


TOP = _Top()
BOTTOM = _Bottom()


@dataclass(frozen=True, repr=False)
class And(Formula):
    left: Formula
    right: Formula

    def __repr__(self):
        return f"({self.left!r} /\\ {self.right!r})"


@dataclass(frozen=True, repr=False)
class Or(Formula):
    left: Formula
    right: Formula

    def __repr__(self):
        return f"({self.left!r} \\/ {self.right!r})"


def conj_all(formulas: Sequence[Formula]) -> Formula:
    out: Formula | None = None
    for f in formulas:
        out = f if out is None else And(out, f)
    return TOP if out is None else out


def disj_all(formulas: Sequence[Formula]) -> Formula:
    out: Formula | None = None
    for f in formulas:
        out = f if out is None else Or(out, f)
    return BOTTOM if out is None else out


def formula_literals(formula: Formula) -> set:
    """All (type, index) pairs occurring in the formula."""
    if isinstance(formula, Prim):
        return {(formula.type, formula.index)}
    if isinstance(formula, (And, Or)):
        return formula_literals(formula.left) | formula_literals(formula.right)
    return set()


def map_formula(prim_map: Callable[[Prim], Formula], formula: Formula) -> Formula:
    """Homomorphic extension of a map on primitives (fixes top and bottom)."""
    if isinstance(formula, Prim):
        return prim_map(formula)
    if isinstance(formula, And):
        return And(map_formula(prim_map, formula.left), map_formula(prim_map, formula.right))
    if isinstance(formula, Or):
        return Or(map_formula(prim_map, formula.left), map_formula(prim_map, formula.right))
    return formula


def tag_formula(i: int, formula: Formula) -> Formula:
    """Lift a formula into the i-th component of a sum (types get tagged)."""
    return map_formula(lambda p: Prim((i, p.type), p.index), formula)


def fd_holds(cls: Classification, family: Family, formula: Formula) -> bool:
    """Satisfaction of a lattice formula by a token family.

    A primitive with index m holds iff m is in the family and the token
    there satisfies the primitive's base type; top always holds, bottom
    never; conjunction and disjunction recurse.
    """
    if isinstance(formula, Prim):
        if formula.type not in cls.types:
            raise SchemaError(f"type {formula.type!r} not declared in {cls.name}")
        tok = family.get(formula.index)
        if tok is None or tok == EPSILON:
            return False
        if tok not in cls.tokens:
            raise SchemaError(f"token {tok!r} not declared in {cls.name}")
        return cls.satisfies(tok, formula.type)
    if formula is TOP or isinstance(formula, _Top):
        return True
    if formula is BOTTOM or isinstance(formula, _Bottom):
        return False
    if isinstance(formula, And):
        return fd_holds(cls, family, formula.left) and fd_holds(cls, family, formula.right)
    if isinstance(formula, Or):
        return fd_holds(cls, family, formula.left) or fd_holds(cls, family, formula.right)
    raise SchemaError(f"not a formula: {formula!r}")


# ---------------------------------------------------------------------------
# the derivation order, by normal forms


@lru_cache(maxsize=None)
def _canon_type(cls: Classification, typ):
    """Representative of typ's equivalence class under mutual derivability."""
    eq = [t for t in cls.types if cls.type_leq(typ, t) and cls.type_leq(t, typ)]
    return min(eq, key=sym_key) if eq else typ


def _lit_leq(cls: Classification, x, y) -> bool:
    # literals are (type, index); only same-index literals are comparable
    return x[1] == y[1] and cls.type_leq(x[0], y[0])


def _clause_leq(cls: Classification, m: frozenset, n: frozenset) -> bool:
    # a meet m is below a meet n iff every literal of n is above one of m
    return all(any(_lit_leq(cls, x, y) for x in m) for y in n)


def _reduce_clause(cls: Classification, clause: Iterable) -> frozenset:
    lits = {( _canon_type(cls, t), i) for t, i in clause}
    return frozenset(
        x for x in lits
        if not any(y != x and _lit_leq(cls, y, x) for y in lits)
    )


def _clause_key(clause: frozenset):
    return tuple(sorted((sym_key(t), sym_key(i)) for t, i in clause))


def _antichain(cls: Classification, clauses: Iterable) -> frozenset:
    cs = sorted(set(clauses), key=_clause_key)
    keep = []
    for i, m in enumerate(cs):
        absorbed = False
        for j, n in enumerate(cs):
            if i == j:
                continue
            if _clause_leq(cls, m, n) and (not _clause_leq(cls, n, m) or j < i):
                absorbed = True
                break
        if not absorbed:
            keep.append(m)
    return frozenset(keep)


@lru_cache(maxsize=None)
def normal_form(cls: Classification, formula: Formula) -> frozenset:
    """Join-of-meets normal form: an antichain of reduced clauses.

    Each clause is a frozenset of (type, index) literals with types
    canonicalized; the empty clause set is bottom, the set holding the
    empty clause is top.  Unique up to the construction, so syntactic
    equality of normal forms is formula equivalence.
    """
    if isinstance(formula, Prim):
        return frozenset({frozenset({(_canon_type(cls, formula.type), formula.index)})})
    if isinstance(formula, _Top):
        return frozenset({frozenset()})
    if isinstance(formula, _Bottom):
        return frozenset()
    if isinstance(formula, Or):
        return _antichain(
            cls, normal_form(cls, formula.left) | normal_form(cls, formula.right)
        )
    if isinstance(formula, And):
        left = normal_form(cls, formula.left)
        right = normal_form(cls, formula.right)
        merged = {_reduce_clause(cls, m | n) for m in left for n in right}
        return _antichain(cls, merged)
    raise SchemaError(f"not a formula: {formula!r}")


def leq(cls: Classification, f: Formula, g: Formula) -> bool:
    """Decide f <= g (g derivable from f) in the lattice over cls."""
    nf, ng = normal_form(cls, f), normal_form(cls, g)
    return all(any(_clause_leq(cls, m, n) for n in ng) for m in nf)


def equivalent_formulas(cls: Classification, f: Formula, g: Formula) -> bool:
    return normal_form(cls, f) == normal_form(cls, g)


def is_top(cls: Classification, f: Formula) -> bool:
    return normal_form(cls, f) == frozenset({frozenset()})


def canonical_formula(cls: Classification, f: Formula) -> Formula:
    """Rebuild a formula from its normal form (clauses and literals sorted)."""
    nf = normal_form(cls, f)
    if not nf:
        return BOTTOM
    if nf == frozenset({frozenset()}):
        return TOP
    clauses = []
    for clause in sorted(nf, key=_clause_key):
        lits = sorted(clause, key=lambda l: (sym_key(l[1]), sym_key(l[0])))
        clauses.append(conj_all([Prim(t, i) for t, i in lits]))
    return disj_all(clauses)


def leq_oracle(cls: Classification, f: Formula, g: Formula, cap: int = 12) -> bool:
    """Brute-force check of f <= g over all monotone boolean valuations.

    A valuation assigns each occurring literal a truth value, restricted
    to assignments that respect the declared type order at equal
    indices.  f <= g iff every such valuation satisfying f satisfies g.
    Independent of the normal-form path; refuses above the literal cap.
    """
    lits = sorted(formula_literals(f) | formula_literals(g),
                  key=lambda l: (sym_key(l[0]), sym_key(l[1])))
    n = len(lits)
    if n > cap:
        raise SizeCapExceeded(f"{n} literals exceeds the oracle cap of {cap}")
    width = 1 << n  # one bit per valuation
    ones = (1 << width) - 1

    masks = {}
    for i, lit in enumerate(lits):
        # bit v is set iff valuation v makes literal i true, i.e. v>>i&1
        block = 1 << i
        unit = ((1 << block) - 1) << block  # block zeros then block ones
        span = block * 2
        repeats = width // span
        masks[lit] = unit * (((1 << (span * repeats)) - 1) // ((1 << span) - 1))

    monotone = ones
    for x, y in itertools.permutations(lits, 2):
        if x != y and _lit_leq(cls, x, y):
            monotone &= (~masks[x] | masks[y]) & ones

    def ev(formula: Formula) -> int:
        if isinstance(formula, Prim):
            return masks[(formula.type, formula.index)]
        if isinstance(formula, _Top):
            return ones
        if isinstance(formula, _Bottom):
            return 0
        if isinstance(formula, And):
            return ev(formula.left) & ev(formula.right)
        if isinstance(formula, Or):
            return ev(formula.left) | ev(formula.right)
        raise SchemaError(f"not a formula: {formula!r}")

    return (ev(f) & monotone) & ~ev(g) == 0


# ---------------------------------------------------------------------------
# family/lattice extension and products, as checkable classifications


@dataclass(frozen=True)
class FdClassification:
    """The family-token / lattice-type extension of a base classification."""

    base: Classification

    @property
    def name(self) -> str:
        return f"fd({self.base.name})"

    def sat(self, token: Family, typ: Formula) -> bool:
        if token.cls != self.base.name:
            raise SchemaError(
                f"family over {token.cls!r} used in {self.name}"
            )
        return fd_holds(self.base, token, typ)

    def check_tokens(self) -> list:
        """The empty family plus one singleton per base token."""
        out = [Family(self.base.name, ())]
        for t in self.base.check_tokens():
            if t == EPSILON:
                continue
            out.append(Family.of(self.base.name, {default_index(t): t}))
        return out

    def generator_types(self) -> list:
        gens = []
        for ty in self.base.generator_types():
            for t in self.base.check_tokens():
                if t == EPSILON:
                    continue
                gens.append(Prim(ty, default_index(t)))
        return sorted(set(gens), key=lambda p: (sym_key(p.type), sym_key(p.index)))

    def empty_token(self) -> Family:
        return Family(self.base.name, ())


def fd(cls: Classification) -> FdClassification:
    return FdClassification(cls)


@dataclass(frozen=True)
class ProductClassification:
    """Finite product; tokens are tuples of component tokens, types tuples of types."""

    components: tuple

    @property
    def name(self) -> str:
        return "(" + ",".join(c.name for c in self.components) + ")"

    def sat(self, token: tuple, typ: tuple) -> bool:
        if len(token) != len(self.components) or len(typ) != len(self.components):
            raise SchemaError(f"arity mismatch in {self.name}")
        return all(c.sat(a, t) for c, a, t in zip(self.components, token, typ))

    def check_tokens(self) -> list:
        return list(itertools.product(*(c.check_tokens() for c in self.components)))

    def generator_types(self) -> list:
        return list(itertools.product(*(c.generator_types() for c in self.components)))

    def empty_token(self) -> tuple:
        return tuple(c.empty_token() for c in self.components)


# ---------------------------------------------------------------------------
# infomorphisms


@dataclass(frozen=True, eq=False)
class Infomorphism:
    """A forward type map and a backward token map between classifications.

    ``type_map`` is defined on source generator types (primitive
    formulas, base types, or tuples of primitives, depending on the
    source kind) and returns a target type or formula; ``apply_type_map``
    extends it to whole formulas.  ``token_map`` sends target tokens to
    source tokens.
    """

    source: Any
    target: Any
    type_map: Callable
    token_map: Callable
    name: str = ""

    def target_base(self) -> Classification:
        t = self.target
        return t.base if isinstance(t, FdClassification) else t


def apply_type_map(f: Infomorphism, typ) -> Any:
    """Extend f's generator-level type map to an arbitrary source type."""
    src = f.source
    if isinstance(src, ProductClassification):
        return _apply_product_type_map(f, typ)
    if isinstance(src, FdClassification):
        return map_formula(lambda p: _as_formula(f.type_map(p)), typ)
    return f.type_map(typ)


def _as_formula(x) -> Formula:
    if isinstance(x, Formula):
        return x
    raise SchemaError(f"type map produced a non-formula {x!r} for a lattice target")


def _apply_product_type_map(f: Infomorphism, typ: tuple) -> Formula:
    """Tuples of formulas factor into joins of meets of generator tuples.

    Each component formula is put in normal form; a choice of one clause
    per component contributes the meet, over the cross product of the
    clauses' literals (empty clauses contribute a fixed top slot), of
    the mapped generator tuples.
    """
    comps = f.source.components
    if len(typ) != len(comps):
        raise SchemaError("tuple type arity does not match the product source")
    nfs = [normal_form(c.base, fm) for c, fm in zip(comps, typ)]
    if any(not nf for nf in nfs):
        return BOTTOM
    choices = []
    for combo in itertools.product(*nfs):
        slots = []
        for clause in combo:
            if clause:
                slots.append([Prim(t, i) for t, i in sorted(clause, key=lambda l: (sym_key(l[0]), sym_key(l[1])))])
            else:
                slots.append([TOP])
        atoms = list(itertools.product(*slots))
        if all(all(a is TOP for a in atom) for atom in atoms):
            choices.append(TOP)
            continue
        choices.append(conj_all([_as_formula(f.type_map(atom)) for atom in atoms]))
    return disj_all(choices)


@dataclass
class InfoCheckResult:
    valid: bool
    violations: list
    schema_errors: list

    def __bool__(self) -> bool:
        return self.valid


def check_infomorphism(f: Infomorphism, strict: bool = False) -> InfoCheckResult:
    """Verify the infomorphism condition over the finite check set.

    The check runs over the target's check tokens and the source's
    generator types.  A generator whose mapped type is the top formula
    is a declared don't-care and is skipped unless ``strict`` is set:
    the biconditional cannot hold for an always-true image, and such
    maps are used deliberately to leave generators unconstrained.
    """
    violations = []
    errors = []
    gens = f.source.generator_types()
    mapped = {}
    for g in gens:
        try:
            mapped[g] = f.type_map(g)
        except SchemaError as e:
            errors.append(str(e))
    for a in f.target.check_tokens():
        try:
            src_tok = f.token_map(a)
        except SchemaError as e:
            errors.append(str(e))
            continue
        for g in gens:
            if g not in mapped:
                continue
            img = mapped[g]
            if (
                not strict
                and isinstance(f.target, FdClassification)
                and isinstance(img, Formula)
                and is_top(f.target.base, img)
            ):
                continue
            try:
                lhs = f.source.sat(src_tok, g)
                rhs = f.target.sat(a, img)
            except SchemaError as e:
                errors.append(str(e))
                continue
            if lhs != rhs:
                violations.append((a, g))
    return InfoCheckResult(not violations and not errors, violations, errors)


# --- constructors ----------------------------------------------------------


def identity_infomorphism(cls) -> Infomorphism:
    return Infomorphism(cls, cls, lambda t: t, lambda a: a, name=f"id[{cls.name}]")


def compose(g: Infomorphism, f: Infomorphism) -> Infomorphism:
    """g after f: type maps compose forwards, token maps backwards."""
    return Infomorphism(
        f.source,
        g.target,
        lambda t: _compose_type(g, f, t),
        lambda a: f.token_map(g.token_map(a)),
        name=f"{g.name}.{f.name}",
    )


def _compose_type(g: Infomorphism, f: Infomorphism, t):
    mid = f.type_map(t)
    if isinstance(g.source, FdClassification) and isinstance(mid, Formula):
        return apply_type_map(g, mid)
    return g.type_map(mid)


def fd_map(f: Infomorphism) -> Infomorphism:
    """Pointwise lift of a base-to-base infomorphism to the lattice level.

    Primitives map typewise with indices kept; families map tokenwise.
    Requires the type map to respect the declared orders, otherwise the
    lifted map would not be well defined on the quotient.
    """
    src, tgt = f.source, f.target
    if not isinstance(src, Classification) or not isinstance(tgt, Classification):
        raise SchemaError("fd_map lifts base-to-base infomorphisms only")
    for a, b in src.order:
        if not tgt.type_leq(f.type_map(a), f.type_map(b)):
            raise SchemaError(
                f"type map breaks the order: {a!r} <= {b!r} but images are unordered"
            )

    def tmap(p: Prim) -> Formula:
        return Prim(f.type_map(p.type), p.index)

    def kmap(fam: Family) -> Family:
        return Family.of(src.name, {i: f.token_map(t) for i, t in fam.entries})

    return Infomorphism(fd(src), fd(tgt), tmap, kmap, name=f"fd({f.name})")


def lift_embedding(cls: Classification, mu) -> Infomorphism:
    """The mu-th embedding of a base classification into its extension."""

    def kmap(fam: Family) -> Any:
        t = fam.get(mu)
        return EPSILON if t is None else t

    return Infomorphism(cls, fd(cls), lambda ty: Prim(ty, mu), kmap,
                        name=f"lift[{mu}]")


def inc_embedding(components: Sequence[Classification], i: int,
                  total: Classification | None = None) -> Infomorphism:
    """Embedding of the i-th component (1-based) into the disjoint sum."""
    total = total or sum_classification(components)
    comp = components[i - 1]

    def kmap(tok) -> Any:
        if isinstance(tok, tuple) and len(tok) == 2 and tok[0] == i:
            return tok[1]
        return EPSILON

    return Infomorphism(comp, total, lambda ty: (i, ty), kmap, name=f"inc[{i}]")


def lifted_inc(components: Sequence[Classification], i: int,
               total: Classification | None = None) -> Infomorphism:
    """The lattice-level lift of the i-th sum embedding.

    The token part keeps exactly the entries tagged with component i
    (the empty family when there are none).
    """
    total = total or sum_classification(components)
    comp = components[i - 1]

    def tmap(p: Prim) -> Formula:
        return Prim((i, p.type), p.index)

    def kmap(fam: Family) -> Family:
        out = {}
        for idx, tok in fam.entries:
            if isinstance(tok, tuple) and len(tok) == 2 and tok[0] == i:
                out[idx] = tok[1]
        return Family.of(comp.name, out)

    return Infomorphism(fd(comp), fd(total), tmap, kmap, name=f"liftinc[{i}]")


def conj_embedding(components: Sequence[Classification],
                   total: Classification | None = None) -> Infomorphism:
    """Embedding of the product of extensions into the extension of the sum.

    The type part sends a generator tuple to the conjunction of its
    tagged members; the token part splits a sum family by component tag.
    """
    total = total or sum_classification(components)
    source = ProductClassification(tuple(fd(c) for c in components))

    def tmap(atom: tuple) -> Formula:
        parts = []
        for i, p in enumerate(atom, start=1):
            if p is TOP or isinstance(p, _Top):
                continue
            parts.append(Prim((i, p.type), p.index))
        return conj_all(parts)

    def kmap(fam: Family) -> tuple:
        outs = [dict() for _ in components]
        for idx, tok in fam.entries:
            if isinstance(tok, tuple) and len(tok) == 2:
                i, raw = tok
                if 1 <= i <= len(components):
                    outs[i - 1][idx] = raw
        return tuple(
            Family.of(c.name, d) for c, d in zip(components, outs)
        )

    return Infomorphism(source, fd(total), tmap, kmap, name="conj")


# --- table-backed maps (used by model witnesses) ---------------------------


class TypeMapTable:
    """Generator-to-formula map given as explicit entries plus a default."""

    def __init__(self, entries: Mapping, default: Formula | None = None):
        self._entries = dict(entries)
        self.default = default

    def __call__(self, key):
        k = self._normalize(key)
        if k in self._entries:
            return self._entries[k]
        if self.default is not None:
            return self.default
        raise SchemaError(f"unmapped generator {key!r}")

    @staticmethod
    def _normalize(key):
        if isinstance(key, Prim):
            return (key.type, key.index)
        if isinstance(key, tuple):
            return tuple(TypeMapTable._normalize(k) for k in key)
        if isinstance(key, _Top):
            return TOP
        return key


class TokenMapTable:
    """Backward token map given per parent base token, extended by union.

    The image of a singleton family is the declared image of its token;
    a multi-entry family maps to the disjoint union of its tokens'
    images (indices are prefixed on collision).  The empty family maps
    to the source's empty token.
    """

    def __init__(self, entries: Mapping, empty_token, default=None):
        self._entries = dict(entries)
        self._empty = empty_token
        self.default = default

    def _image(self, token):
        if token in self._entries:
            return self._entries[token]
        if self.default is not None:
            return self.default
        raise SchemaError(f"unmapped token {token!r}")

    def __call__(self, fam: Family):
        if not isinstance(fam, Family):
            raise SchemaError(f"token map expects a family, got {fam!r}")
        if fam.is_empty:
            return self._empty
        images = [self._image(tok) for _, tok in fam.entries]
        if len(images) == 1:
            return images[0]
        if isinstance(self._empty, tuple):
            return tuple(
                _merge_families([img[k] for img in images])
                for k in range(len(self._empty))
            )
        return _merge_families(images)


def _merge_families(fams: Sequence[Family]) -> Family:
    cls = fams[0].cls
    out: dict = {}
    for j, fam in enumerate(fams):
        for idx, tok in fam.entries:
            key = idx if idx not in out else (j, idx)
            out[key] = tok
    return Family.of(cls, out)


# ---------------------------------------------------------------------------
# structural deductions and refinement


def reduce_family(fam: Family, formulas: Sequence[Formula] = ()) -> Family:
    """Apply the structural deductions to a fixpoint.

    Un-connected entries are dropped; duplicate tokens keep their least
    index; when formulas are given, indices with no occurrence in any of
    them are dropped as well.
    """
    used = None
    if formulas:
        used = set()
        for f in formulas:
            used |= {i for _, i in formula_literals(f)}
    seen_tokens: dict = {}
    out = {}
    for idx, tok in sorted(fam.entries, key=lambda kv: sym_key(kv[0])):
        if tok == EPSILON:
            continue
        if used is not None and idx not in used:
            continue
        if tok in seen_tokens:
            continue
        seen_tokens[tok] = idx
        out[idx] = tok
    return Family.of(fam.cls, out)


def tokens_equal_reduced(source, a, b) -> bool:
    """Equality of source tokens modulo the structural deductions."""
    if isinstance(source, ProductClassification):
        if not (isinstance(a, tuple) and isinstance(b, tuple) and len(a) == len(b)):
            return False
        return all(tokens_equal_reduced(c, x, y)
                   for c, x, y in zip(source.components, a, b))
    if isinstance(source, FdClassification):
        return reduce_family(a) == reduce_family(b)
    return a == b


def check_refinement_relation(
    f: Infomorphism,
    child_token,
    child_formula,
    parent_token,
    parent_formula,
) -> bool:
    """Is the child relation a refinement of the parent relation through f?

    The parent token must map onto the child token (modulo the
    structural deductions), else the child relation cannot be lifted;
    given that, the child formula's image must be below the parent
    formula in the derivation order.
    """
    image = f.token_map(parent_token)
    if not tokens_equal_reduced(f.source, image, child_token):
        raise UnliftableToken(
            f"parent token {parent_token!r} maps to {image!r}, not the child token"
        )
    mapped = apply_type_map(f, child_formula)
    return leq(f.target_base(), mapped, parent_formula)
