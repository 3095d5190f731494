"""Text format for attack-tree models and its parser.

A model file declares classifications, one or more trees, effects,
witnesses, and optional residuals:

    classification C { tokens: a, b; types: X, Y; holds: a |= X;
                       order: X => Y; }
    tree T { node A0 "root action" OR { leaf A1 "sub action"; ... } }
    effect A1: {i -> a} |= X@i in C;
    witness A0 { typemap: identity; tokmap: identity; }
    residual A1: Y@i;

Witness maps may be `identity`, or explicit entries with a `default`;
AND/SAND entries use tuples matching the branch's integration arity
(the cut sequence for SAND).  Type atoms in witness maps and residuals
may omit `@index` when the family involved is a singleton, in which
case the family's index is used.  Parsing never raises: it returns the
model (when error-free) together with located diagnostics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .channel import (
    BOTTOM,
    EPSILON,
    TOP,
    And,
    Classification,
    Family,
    Formula,
    Or,
    Prim,
    SchemaError,
    fd_holds,
    leq,
    make_classification,
)
from .effects import Effect, WitnessSpec, cut_sequence
from .tree import AttackTree, MalformedTree, OPS, SAND, validate

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    line: int
    col: int
    length: int
    code: str
    message: str

    def render(self) -> str:
        return f"{self.line}:{self.col}: {self.severity} [{self.code}] {self.message}"


@dataclass
class ModelFile:
    registry: dict = field(default_factory=dict)
    trees: dict = field(default_factory=dict)
    effects: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    def node_index(self) -> dict:
        nodes = {}
        for tree in self.trees.values():
            for n in tree.iter_nodes():
                nodes[n.node_id] = n
        return nodes


# ---------------------------------------------------------------------------
# tokenizer


_SYMBOLS = ("->", "=>", "|=", "/\\", "\\/", "{", "}", ":", ";", ",", "@",
            "<", ">", "(", ")")
_ID_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


@dataclass(frozen=True)
class Token:
    kind: str  # "id", "string", "sym", "eof"
    text: str
    line: int
    col: int


class _ParseAbort(Exception):
    pass


def _tokenize(text: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == '"':
            j = i + 1
            out = []
            closed = False
            while j < n:
                if text[j] == "\\" and j + 1 < n:
                    out.append(text[j + 1])
                    j += 2
                    continue
                if text[j] == '"':
                    closed = True
                    break
                if text[j] == "\n":
                    break
                out.append(text[j])
                j += 1
            if not closed:
                diags.append(Diagnostic(ERROR, line, col, j - i, "unterminated-string",
                                        "string literal is not closed"))
                return tokens, diags
            tokens.append(Token("string", "".join(out), line, col))
            col += j + 1 - i
            i = j + 1
            continue
        sym = next((s for s in _SYMBOLS if text.startswith(s, i)), None)
        if sym is not None:
            tokens.append(Token("sym", sym, line, col))
            i += len(sym)
            col += len(sym)
            continue
        m = _ID_RE.match(text, i)
        if m:
            tokens.append(Token("id", m.group(), line, col))
            col += len(m.group())
            i = m.end()
            continue
        diags.append(Diagnostic(ERROR, line, col, 1, "bad-character",
                                f"unexpected character {ch!r}"))
        return tokens, diags
    tokens.append(Token("eof", "", line, col))
    return tokens, diags


# ---------------------------------------------------------------------------
# raw syntax (before resolution)


@dataclass
class RawFormula:
    pass


@dataclass
class RawAtom(RawFormula):
    type: str
    index: str | None
    token: Token


@dataclass
class RawConst(RawFormula):
    which: str  # "top" | "bot"


@dataclass
class RawOp(RawFormula):
    op: str  # "and" | "or"
    left: RawFormula
    right: RawFormula


@dataclass
class RawEffect:
    node: str
    family: list  # (index, token-name) pairs
    formula: RawFormula
    cls: str
    token: Token


@dataclass
class RawWitness:
    branch: str
    child: str | None
    identity_types: bool
    type_entries: list  # (key tuple of RawAtom|"top", RawFormula|None default marker)
    type_default: RawFormula | None
    identity_tokens: bool
    token_entries: list  # (token-name, list of family dicts)
    token_default: list | None
    preconditions: list  # (child-id, RawFormula, token)
    token: Token


@dataclass
class RawResidual:
    node: str
    formula: RawFormula
    token: Token


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.diags: list[Diagnostic] = []

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def error(self, tok: Token, code: str, message: str):
        self.diags.append(
            Diagnostic(ERROR, tok.line, tok.col, max(1, len(tok.text)), code, message)
        )
        raise _ParseAbort()

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            self.error(t, "syntax", f"expected {want!r}, found {t.text or t.kind!r}")
        return self.next()

    def at_sym(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "sym" and t.text == text

    def at_id(self, text: str | None = None) -> bool:
        t = self.peek()
        return t.kind == "id" and (text is None or t.text == text)

    # --- blocks ---

    def parse_model(self):
        classifications = []
        trees = []
        effects = []
        witnesses = []
        residuals = []
        while not self.peek().kind == "eof":
            t = self.peek()
            if self.at_id("classification"):
                classifications.append(self.classification())
            elif self.at_id("tree"):
                trees.append(self.tree())
            elif self.at_id("effect"):
                effects.append(self.effect())
            elif self.at_id("witness"):
                witnesses.append(self.witness())
            elif self.at_id("residual"):
                residuals.append(self.residual())
            else:
                self.error(t, "syntax",
                           f"expected a block keyword, found {t.text!r}")
        return classifications, trees, effects, witnesses, residuals

    def idlist(self) -> list[Token]:
        out = [self.expect("id")]
        while self.at_sym(","):
            self.next()
            out.append(self.expect("id"))
        return out

    def classification(self):
        self.expect("id", "classification")
        name = self.expect("id")
        self.expect("sym", "{")
        self.expect("id", "tokens")
        self.expect("sym", ":")
        tokens = self.idlist()
        self.expect("sym", ";")
        self.expect("id", "types")
        self.expect("sym", ":")
        types = self.idlist()
        self.expect("sym", ";")
        holds = []
        if self.at_id("holds"):
            self.next()
            self.expect("sym", ":")
            holds.append(self.rel())
            while self.at_sym(";") and self._lookahead_rel():
                self.next()
                holds.append(self.rel())
            self.expect("sym", ";")
        order = []
        while self.at_id("order"):
            self.next()
            self.expect("sym", ":")
            a = self.expect("id")
            self.expect("sym", "=>")
            b = self.expect("id")
            self.expect("sym", ";")
            order.append((a, b))
        self.expect("sym", "}")
        return (name, tokens, types, holds, order)

    def _lookahead_rel(self):
        # after a ';' inside holds, a further 'tok |= ty' pair may follow
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        after = self.tokens[self.pos + 2] if self.pos + 2 < len(self.tokens) else None
        return (
            nxt is not None and nxt.kind == "id"
            and nxt.text not in ("order", "holds")
            and after is not None and after.kind == "sym" and after.text == "|="
        )

    def rel(self):
        tok = self.expect("id")
        self.expect("sym", "|=")
        ty = self.expect("id")
        return (tok, ty)

    def tree(self):
        self.expect("id", "tree")
        name = self.expect("id")
        self.expect("sym", "{")
        root = self.node()
        self.expect("sym", "}")
        return (name, root)

    def node(self):
        t = self.peek()
        if self.at_id("leaf"):
            self.next()
            nid = self.expect("id")
            text = self.expect("string")
            self.expect("sym", ";")
            return ("leaf", nid, text)
        if self.at_id("node"):
            self.next()
            nid = self.expect("id")
            text = self.expect("string")
            op = self.expect("id")
            if op.text not in OPS:
                self.error(op, "bad-op", f"unknown branch type {op.text!r}")
            self.expect("sym", "{")
            children = [self.node()]
            while not self.at_sym("}"):
                children.append(self.node())
            self.expect("sym", "}")
            return ("node", nid, text, op.text, children)
        self.error(t, "syntax", f"expected 'leaf' or 'node', found {t.text!r}")

    def family(self) -> list:
        self.expect("sym", "{")
        entries = []
        if not self.at_sym("}"):
            entries.append(self.family_entry())
            while self.at_sym(","):
                self.next()
                entries.append(self.family_entry())
        self.expect("sym", "}")
        return entries

    def family_entry(self):
        idx = self.expect("id")
        self.expect("sym", "->")
        tok = self.expect("id")
        return (idx, tok)

    def formula(self) -> RawFormula:
        left = self.term()
        while self.at_sym("\\/"):
            self.next()
            left = RawOp("or", left, self.term())
        return left

    def term(self) -> RawFormula:
        left = self.factor()
        while self.at_sym("/\\"):
            self.next()
            left = RawOp("and", left, self.factor())
        return left

    def factor(self) -> RawFormula:
        t = self.peek()
        if self.at_sym("("):
            self.next()
            f = self.formula()
            self.expect("sym", ")")
            return f
        if self.at_id("top"):
            self.next()
            return RawConst("top")
        if self.at_id("bot"):
            self.next()
            return RawConst("bot")
        if t.kind == "id":
            self.next()
            idx = None
            if self.at_sym("@"):
                self.next()
                idx = self.expect("id").text
            return RawAtom(t.text, idx, t)
        self.error(t, "syntax", f"expected a formula, found {t.text or t.kind!r}")

    def effect(self) -> RawEffect:
        kw = self.expect("id", "effect")
        node = self.expect("id")
        self.expect("sym", ":")
        fam = self.family()
        self.expect("sym", "|=")
        f = self.formula()
        self.expect("id", "in")
        cls = self.expect("id")
        self.expect("sym", ";")
        return RawEffect(node.text, [(i.text, t.text) for i, t in fam], f,
                         cls.text, node)

    def witness(self) -> RawWitness:
        self.expect("id", "witness")
        branch = self.expect("id")
        child = None
        if self.at_id("child"):
            self.next()
            child = self.expect("id").text
        self.expect("sym", "{")
        identity_types = False
        type_entries: list = []
        type_default = None
        identity_tokens = False
        token_entries: list = []
        token_default = None
        preconditions: list = []
        while not self.at_sym("}"):
            if self.at_id("typemap"):
                self.next()
                self.expect("sym", ":")
                if self.at_id("identity"):
                    self.next()
                    self.expect("sym", ";")
                    identity_types = True
                    continue
                while True:
                    if self.at_id("default"):
                        self.next()
                        self.expect("sym", "->")
                        type_default = self.formula()
                        self.expect("sym", ";")
                    else:
                        key = self.type_key()
                        self.expect("sym", "->")
                        value = self.formula()
                        self.expect("sym", ";")
                        type_entries.append((key, value))
                    if not (self._at_type_key() or self.at_id("default")):
                        break
            elif self.at_id("tokmap"):
                self.next()
                self.expect("sym", ":")
                if self.at_id("identity"):
                    self.next()
                    self.expect("sym", ";")
                    identity_tokens = True
                    continue
                while True:
                    if self.at_id("default"):
                        self.next()
                        self.expect("sym", "->")
                        token_default = self.family_tuple()
                        self.expect("sym", ";")
                    else:
                        tok = self.expect("id")
                        self.expect("sym", "->")
                        value = self.family_tuple()
                        self.expect("sym", ";")
                        token_entries.append((tok, value))
                    if not (self.at_id("default") or self._at_token_key()):
                        break
            elif self.at_id("pre"):
                kw = self.next()
                child_id = self.expect("id")
                self.expect("sym", ":")
                f = self.formula()
                self.expect("sym", ";")
                preconditions.append((child_id.text, f, kw))
            else:
                self.error(self.peek(), "syntax",
                           "expected 'typemap:', 'tokmap:', 'pre', or '}'")
        self.expect("sym", "}")
        return RawWitness(branch.text, child, identity_types, type_entries,
                          type_default, identity_tokens, token_entries,
                          token_default, preconditions, branch)

    def _at_type_key(self) -> bool:
        if self.at_sym("<"):
            return True
        if self.peek().kind != "id":
            return False
        if self.peek().text in ("tokmap", "pre", "default", "identity"):
            return False
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        return nxt is not None and nxt.kind == "sym" and nxt.text in ("->", "@")

    def _at_token_key(self) -> bool:
        if self.peek().kind != "id":
            return False
        if self.peek().text in ("typemap", "pre", "default", "identity"):
            return False
        nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
        return nxt is not None and nxt.kind == "sym" and nxt.text == "->"

    def type_key(self) -> list:
        if self.at_sym("<"):
            self.next()
            atoms = [self.type_atom()]
            while self.at_sym(","):
                self.next()
                atoms.append(self.type_atom())
            self.expect("sym", ">")
            return atoms
        return [self.type_atom()]

    def type_atom(self):
        if self.at_id("top"):
            tok = self.next()
            return ("top", None, tok)
        t = self.expect("id")
        idx = None
        if self.at_sym("@"):
            self.next()
            idx = self.expect("id").text
        return (t.text, idx, t)

    def family_tuple(self) -> list:
        if self.at_sym("<"):
            self.next()
            fams = [self.family()]
            while self.at_sym(","):
                self.next()
                fams.append(self.family())
            self.expect("sym", ">")
            return fams
        return [self.family()]

    def residual(self) -> RawResidual:
        self.expect("id", "residual")
        node = self.expect("id")
        self.expect("sym", ":")
        f = self.formula()
        self.expect("sym", ";")
        return RawResidual(node.text, f, node)


# ---------------------------------------------------------------------------
# resolution


class _Resolver:
    def __init__(self):
        self.diags: list[Diagnostic] = []
        self.model = ModelFile()

    def err(self, tok: Token, code: str, message: str):
        self.diags.append(
            Diagnostic(ERROR, tok.line, tok.col, max(1, len(tok.text)), code, message)
        )

    def warn(self, tok: Token, code: str, message: str):
        self.diags.append(
            Diagnostic(WARNING, tok.line, tok.col, max(1, len(tok.text)), code, message)
        )

    def resolve(self, classifications, trees, effects, witnesses, residuals):
        for name, tokens, types, holds, order in classifications:
            self._classification(name, tokens, types, holds, order)
        for name, root in trees:
            self._tree(name, root)
        if not self.model.trees and not any(
            d.severity == ERROR for d in self.diags
        ):
            self.diags.append(Diagnostic(ERROR, 1, 1, 1, "no-tree",
                                         "model has no tree block"))
        nodes = self.model.node_index()
        for raw in effects:
            self._effect(raw, nodes)
        for raw in witnesses:
            self._witness(raw, nodes)
        for raw in residuals:
            self._residual(raw, nodes)
        return self.model

    def _classification(self, name, tokens, types, holds, order):
        if name.text in self.model.registry:
            self.err(name, "duplicate-classification",
                     f"classification {name.text!r} is declared twice")
            return
        for t in tokens:
            if t.text == EPSILON:
                self.err(t, "reserved-token",
                         f"token name {EPSILON!r} is reserved for the "
                         "un-connected token")
                return
        try:
            cls, warnings = make_classification(
                name.text,
                [t.text for t in tokens],
                [t.text for t in types],
                [(a.text, b.text) for a, b in holds],
                order=[(a.text, b.text) for a, b in order],
            )
        except SchemaError as exc:
            self.err(name, "bad-classification", str(exc))
            return
        for w in warnings:
            self.warn(name, "holds-closure", w)
        self.model.registry[name.text] = cls

    def _build_node(self, raw) -> AttackTree:
        if raw[0] == "leaf":
            _, nid, text = raw
            return AttackTree(nid.text, text.text)
        _, nid, text, op, children = raw
        return AttackTree(nid.text, text.text, op,
                          tuple(self._build_node(c) for c in children))

    def _tree(self, name, root):
        if name.text in self.model.trees:
            self.err(name, "duplicate-tree", f"tree {name.text!r} is declared twice")
            return
        built = self._build_node(root)
        try:
            validate(built)
        except MalformedTree as exc:
            self.err(name, "bad-tree", str(exc))
            return
        existing = self.model.node_index()
        clash = next((n.node_id for n in built.iter_nodes() if n.node_id in existing),
                     None)
        if clash is not None:
            self.err(name, "duplicate-node",
                     f"node id {clash!r} is already used by another tree")
            return
        self.model.trees[name.text] = built

    def _formula(self, raw: RawFormula, cls: Classification,
                 default_index) -> Formula | None:
        if isinstance(raw, RawConst):
            return TOP if raw.which == "top" else BOTTOM
        if isinstance(raw, RawAtom):
            if raw.type not in cls.types:
                self.err(raw.token, "unknown-type",
                         f"type {raw.type!r} is not declared in {cls.name}")
                return None
            idx = raw.index
            if idx is None:
                idx = default_index(raw.token)
                if idx is None:
                    return None
            return Prim(raw.type, idx)
        left = self._formula(raw.left, cls, default_index)
        right = self._formula(raw.right, cls, default_index)
        if left is None or right is None:
            return None
        return And(left, right) if raw.op == "and" else Or(left, right)

    def _singleton_index(self, family: Family, what: str):
        def get(tok: Token):
            if len(family.entries) != 1:
                self.err(tok, "ambiguous-index",
                         f"omitted index is ambiguous: {what} is not a "
                         "singleton family")
                return None
            return family.entries[0][0]

        return get

    def _no_default_index(self, tok: Token):
        self.err(tok, "missing-index", "an explicit @index is required here")
        return None

    def _effect(self, raw: RawEffect, nodes):
        if raw.node not in nodes:
            self.err(raw.token, "unknown-node",
                     f"effect names unknown node {raw.node!r}")
            return
        if raw.node in self.model.effects:
            self.err(raw.token, "duplicate-effect",
                     f"node {raw.node!r} already has an effect")
            return
        cls = self.model.registry.get(raw.cls)
        if cls is None:
            self.err(raw.token, "unknown-classification",
                     f"effect uses unknown classification {raw.cls!r}")
            return
        for idx, tok_name in raw.family:
            if tok_name != EPSILON and tok_name not in cls.tokens:
                self.err(raw.token, "unknown-token",
                         f"token {tok_name!r} is not declared in {cls.name}")
                return
        family = Family.of(cls.name, dict(raw.family))
        formula = self._formula(raw.formula, cls,
                                self._singleton_index(family, "the effect family"))
        if formula is None:
            return
        effect = Effect(raw.node, cls.name, family, formula)
        if not fd_holds(cls, family, formula):
            self.err(raw.token, "effect-does-not-hold",
                     f"effect of {raw.node} does not hold: "
                     f"{family!r} |= {formula!r} fails in {cls.name}")
            return
        self.model.effects[raw.node] = effect

    def _branch_members(self, branch: AttackTree) -> list[Effect] | None:
        children = []
        for c in branch.children:
            e = self.model.effects.get(c.node_id)
            if e is None:
                return None
            children.append(e)
        return cut_sequence(children) if branch.op == SAND else children

    def _witness(self, raw: RawWitness, nodes):
        branch = nodes.get(raw.branch)
        if branch is None:
            self.err(raw.token, "unknown-node",
                     f"witness names unknown node {raw.branch!r}")
            return
        if branch.is_leaf:
            self.err(raw.token, "witness-on-leaf",
                     f"node {raw.branch!r} is a leaf and has no branch")
            return
        if raw.child is not None and raw.child not in {
            c.node_id for c in branch.children
        }:
            self.err(raw.token, "unknown-child",
                     f"{raw.child!r} is not a child of {raw.branch!r}")
            return
        if raw.child is not None and branch.op != "OR":
            self.err(raw.token, "child-witness-on-non-or",
                     "per-child witnesses apply to OR branches only; AND and "
                     "SAND branches take a single tuple witness")
            return

        parent_effect = self.model.effects.get(raw.branch)
        members = self._branch_members(branch)
        needs_effects = bool(raw.type_entries or raw.token_entries
                             or raw.type_default or raw.token_default)
        if needs_effects and (parent_effect is None or members is None):
            self.err(raw.token, "witness-without-effects",
                     f"witness for {raw.branch!r} needs effects on the branch "
                     "to resolve its maps")
            return

        spec = WitnessSpec(identity_types=raw.identity_types,
                           identity_tokens=raw.identity_tokens)
        if raw.child is not None or branch.op != "OR":
            arity = 1 if branch.op == "OR" else (len(members) if members else 1)
        else:
            arity = 1

        if raw.type_entries or raw.type_default is not None:
            parent_cls = self.model.registry[parent_effect.cls]
            parent_idx = self._singleton_index(parent_effect.family,
                                               "the parent effect family")
            entries = {}
            for key_atoms, value in raw.type_entries:
                key = self._type_key(key_atoms, members, arity, branch)
                if key is None:
                    continue
                formula = self._formula(value, parent_cls, parent_idx)
                if formula is None:
                    continue
                entries[key] = formula
            spec.type_entries = entries
            if raw.type_default is not None:
                spec.type_default = self._formula(raw.type_default, parent_cls,
                                                  parent_idx)

        if raw.token_entries or raw.token_default is not None:
            parent_cls = self.model.registry[parent_effect.cls]
            token_entries = {}
            for tok, fams in raw.token_entries:
                if tok.text not in parent_cls.tokens:
                    self.err(tok, "unknown-token",
                             f"token {tok.text!r} is not declared in "
                             f"{parent_cls.name}")
                    continue
                image = self._family_tuple(tok, fams, members, arity, branch)
                if image is None:
                    continue
                token_entries[tok.text] = image
            spec.token_entries = token_entries
            if raw.token_default is not None:
                spec.token_default = self._family_tuple(
                    raw.token, raw.token_default, members, arity, branch
                )

        for child_id, f, tok in raw.preconditions:
            if child_id not in {c.node_id for c in branch.children}:
                self.err(tok, "unknown-child",
                         f"precondition names {child_id!r}, which is not a "
                         f"child of {raw.branch!r}")
                continue
            pre = self._precondition_formula(f, branch, child_id, tok)
            if pre is not None:
                spec.preconditions[child_id] = pre

        if raw.child is not None:
            host = self.model.witnesses.setdefault(raw.branch, WitnessSpec())
            host.per_child[raw.child] = spec
        else:
            existing = self.model.witnesses.get(raw.branch)
            if existing is not None and (
                existing.has_explicit_types() or existing.token_entries
                or existing.identity_tokens
            ):
                self.err(raw.token, "duplicate-witness",
                         f"branch {raw.branch!r} already has a witness")
                return
            if existing is not None:
                spec.per_child = existing.per_child
            self.model.witnesses[raw.branch] = spec

    def _type_key(self, atoms, members, arity, branch):
        if branch.op == "OR":
            if len(atoms) != 1:
                self.err(atoms[0][2], "bad-arity",
                         "per-child maps of an OR branch take single types")
                return None
            slots = None
        else:
            if len(atoms) != arity:
                self.err(atoms[0][2], "bad-arity",
                         f"this branch integrates {arity} effects, the key "
                         f"has {len(atoms)}")
                return None
            slots = members
        key = []
        for pos, (ty, idx, tok) in enumerate(atoms):
            if ty == "top":
                key.append(TOP)
                continue
            member = None if slots is None else slots[pos]
            cls = (self.model.registry[member.cls] if member is not None
                   else None)
            if cls is not None and ty not in cls.types:
                self.err(tok, "unknown-type",
                         f"type {ty!r} is not declared in {cls.name}")
                return None
            if idx is None:
                if member is None:
                    self.err(tok, "missing-index",
                             "per-child OR keys need explicit @indexes")
                    return None
                if len(member.family.entries) != 1:
                    self.err(tok, "ambiguous-index",
                             f"omitted index is ambiguous: the effect family "
                             f"of {member.node} is not a singleton")
                    return None
                idx = member.family.entries[0][0]
            key.append((ty, idx))
        if len(key) == 1:
            return key[0]
        return tuple(key)

    def _family_tuple(self, tok, fams, members, arity, branch):
        if branch.op == "OR":
            if len(fams) != 1:
                self.err(tok, "bad-arity",
                         "per-child maps of an OR branch take single families")
                return None
            slots = [None]
        else:
            if len(fams) != arity:
                self.err(tok, "bad-arity",
                         f"this branch integrates {arity} effects, the image "
                         f"has {len(fams)}")
                return None
            slots = members
        images = []
        for pos, entries in enumerate(fams):
            member = slots[pos]
            if member is None:
                cls = None
                for c in branch.children:
                    e = self.model.effects.get(c.node_id)
                    if e is not None:
                        cls = self.model.registry[e.cls]
                        break
                if cls is None:
                    self.err(tok, "witness-without-effects",
                             "token map needs child effects to name their "
                             "classification")
                    return None
            else:
                cls = self.model.registry[member.cls]
            pairs = [(i.text, t.text) for i, t in entries]
            for _, name in pairs:
                if name != EPSILON and name not in cls.tokens:
                    self.err(tok, "unknown-token",
                             f"token {name!r} is not declared in {cls.name}")
                    return None
            images.append(Family.of(cls.name, dict(pairs)))
        if branch.op == "OR":
            return images[0]
        return tuple(images)

    def _precondition_formula(self, raw, branch, child_id, tok):
        # resolve each atom against the classifications of the strictly
        # preceding siblings (rightmost hosting effect wins)
        idx_pos = [c.node_id for c in branch.children].index(child_id)
        preceding = [self.model.effects.get(c.node_id)
                     for c in branch.children[:idx_pos]]
        preceding = [e for e in preceding if e is not None]

        def resolve_atom(a: RawAtom) -> Formula | None:
            for e in reversed(preceding):
                cls = self.model.registry[e.cls]
                if a.type in cls.types:
                    idx = a.index
                    if idx is None:
                        if len(e.family.entries) != 1:
                            continue
                        idx = e.family.entries[0][0]
                    return Prim(a.type, idx)
            self.err(a.token, "unknown-type",
                     f"type {a.type!r} is not declared by any effect "
                     f"preceding {child_id!r}")
            return None

        def go(f: RawFormula) -> Formula | None:
            if isinstance(f, RawConst):
                return TOP if f.which == "top" else BOTTOM
            if isinstance(f, RawAtom):
                return resolve_atom(f)
            left, right = go(f.left), go(f.right)
            if left is None or right is None:
                return None
            return And(left, right) if f.op == "and" else Or(left, right)

        return go(raw)

    def _residual(self, raw: RawResidual, nodes):
        if raw.node not in nodes:
            self.err(raw.token, "unknown-node",
                     f"residual names unknown node {raw.node!r}")
            return
        effect = self.model.effects.get(raw.node)
        if effect is None:
            self.err(raw.token, "residual-without-effect",
                     f"node {raw.node!r} has no effect to reduce")
            return
        cls = self.model.registry[effect.cls]
        formula = self._formula(raw.formula, cls,
                                self._singleton_index(effect.family,
                                                      "the effect family"))
        if formula is None:
            return
        if not leq(cls, effect.formula, formula):
            self.err(raw.token, "invalid-residual",
                     f"residual of {raw.node} is not a reduction of its effect")
            return
        self.model.residuals[raw.node] = formula


def parse_model(text: str) -> tuple[ModelFile | None, list[Diagnostic]]:
    """Parse and resolve a model file.

    Returns the model and all diagnostics; the model is None when any
    error was produced.  Warnings (holds-closure additions) do not
    suppress the model.
    """
    tokens, diags = _tokenize(text)
    if any(d.severity == ERROR for d in diags):
        return None, diags
    parser = _Parser(tokens)
    try:
        blocks = parser.parse_model()
    except _ParseAbort:
        return None, parser.diags
    resolver = _Resolver()
    model = resolver.resolve(*blocks)
    diags = parser.diags + resolver.diags
    if any(d.severity == ERROR for d in diags):
        return None, diags
    return model, diags


# ---------------------------------------------------------------------------
# printing (canonical form; parse . print . parse is the identity)


def _print_formula(f: Formula) -> str:
    def go(f: Formula, parent: str) -> str:
        if isinstance(f, Prim):
            return f"{f.type}@{f.index}"
        if f is TOP or f.__class__.__name__ == "_Top":
            return "top"
        if f is BOTTOM or f.__class__.__name__ == "_Bottom":
            return "bot"
        if isinstance(f, And):
            body = f"{go(f.left, 'and')} /\\ {go(f.right, 'and')}"
            return f"({body})" if parent == "or" else body
        body = f"{go(f.left, 'or')} \\/ {go(f.right, 'or')}"
        return f"({body})" if parent in ("and",) else body

    return go(f, "")


def _print_family(fam: Family) -> str:
    body = ", ".join(f"{i} -> {t}" for i, t in fam.entries)
    return "{" + body + "}"


def _print_tree(t: AttackTree, indent: str) -> list[str]:
    if t.is_leaf:
        return [f'{indent}leaf {t.node_id} "{t.text}";']
    lines = [f'{indent}node {t.node_id} "{t.text}" {t.op} {{']
    for c in t.children:
        lines.extend(_print_tree(c, indent + "  "))
    lines.append(f"{indent}}}")
    return lines


def _print_type_key(key) -> str:
    def atom(k):
        if isinstance(k, Formula):
            return "top"
        return f"{k[0]}@{k[1]}"

    if isinstance(key, tuple) and key and isinstance(key[0], (tuple, Formula)):
        return "<" + ", ".join(atom(k) for k in key) + ">"
    return atom(key)


def _print_family_tuple(value) -> str:
    if isinstance(value, tuple):
        return "<" + ", ".join(_print_family(f) for f in value) + ">"
    return _print_family(value)


def _print_witness(branch: str, spec: WitnessSpec, child: str | None = None) -> list[str]:
    head = f"witness {branch}"
    if child is not None:
        head += f" child {child}"
    lines = [head + " {"]
    if spec.identity_types:
        lines.append("  typemap: identity;")
    elif spec.type_entries is not None:
        lines.append("  typemap:")
        for key in sorted(spec.type_entries, key=repr):
            lines.append(f"    {_print_type_key(key)} -> "
                         f"{_print_formula(spec.type_entries[key])};")
        if spec.type_default is not None:
            lines.append(f"    default -> {_print_formula(spec.type_default)};")
    if spec.identity_tokens:
        lines.append("  tokmap: identity;")
    elif spec.token_entries is not None:
        lines.append("  tokmap:")
        for tok in sorted(spec.token_entries):
            lines.append(f"    {tok} -> "
                         f"{_print_family_tuple(spec.token_entries[tok])};")
        if spec.token_default is not None:
            lines.append(f"    default -> "
                         f"{_print_family_tuple(spec.token_default)};")
    for child_id in sorted(spec.preconditions):
        lines.append(f"  pre {child_id}: "
                     f"{_print_formula(spec.preconditions[child_id])};")
    lines.append("}")
    return lines


def print_model(model: ModelFile) -> str:
    lines: list[str] = []
    for name in sorted(model.registry):
        cls = model.registry[name]
        tokens = ", ".join(sorted(t for t in cls.tokens if t != EPSILON))
        types = ", ".join(sorted(cls.types))
        lines.append(f"classification {name} {{")
        lines.append(f"  tokens: {tokens};")
        lines.append(f"  types: {types};")
        holds = sorted(cls.holds)
        if holds:
            body = "; ".join(f"{a} |= {b}" for a, b in holds)
            lines.append(f"  holds: {body};")
        for a, b in sorted(p for p in cls.order if p[0] != p[1]):
            lines.append(f"  order: {a} => {b};")
        lines.append("}")
    for name in sorted(model.trees):
        lines.append(f"tree {name} {{")
        lines.extend(_print_tree(model.trees[name], "  "))
        lines.append("}")
    for node_id in sorted(model.effects):
        e = model.effects[node_id]
        lines.append(f"effect {node_id}: {_print_family(e.family)} |= "
                     f"{_print_formula(e.formula)} in {e.cls};")
    for branch in sorted(model.witnesses):
        spec = model.witnesses[branch]
        lines.extend(_print_witness(branch, spec))
        for child_id in sorted(spec.per_child):
            lines.extend(_print_witness(branch, spec.per_child[child_id], child_id))
    for node_id in sorted(model.residuals):
        lines.append(f"residual {node_id}: "
                     f"{_print_formula(model.residuals[node_id])};")
    return "\n".join(lines) + "\n"
