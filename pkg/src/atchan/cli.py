"""Command-line driver.

Subcommands: `check` (consistency and completeness), `attr NAME`
(attribute evaluation over the trees), `mitigate` (residual analysis),
`project` (causal projection and commutation), `scenarios` (list the
refinement scenarios).  Exit codes: 0 all checks pass, 1 an
inconsistency or law violation was found, 2 unverified items remain,
3 usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from .attributes import BUILTIN_ATTRIBUTES, UnvaluedLeaf, evaluate_attribute
from .causal import check_commutation, project_rtree
from .channel import SizeCapExceeded
from .dot import graph_dot, tree_dot
from .dsl import ERROR, WARNING, _print_formula, parse_model
from .effects import CONSISTENT, INCONSISTENT, UNVERIFIED, check_tree_consistency
from .mitigation import analyze_branch_mitigation
from .tree import AND, OR, SAND, AttackTree, leaf, node, semantics

EXIT_OK = 0
EXIT_INCONSISTENT = 1
EXIT_UNVERIFIED = 2
EXIT_USAGE = 3

_COLORS = {CONSISTENT: "32", "pass": "32", "ok": "32",
           INCONSISTENT: "31", "fail": "31",
           UNVERIFIED: "33", "skipped": "33", WARNING: "33", ERROR: "31"}


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _color_mode() -> str:
    mode = os.environ.get("ATCHAN_COLOR", "auto")
    return mode if mode in ("auto", "always", "never") else "auto"


def _paint(text: str, kind: str) -> str:
    mode = _color_mode()
    if mode == "never" or (mode == "auto" and not sys.stdout.isatty()):
        return text
    code = _COLORS.get(kind)
    return f"\x1b[{code}m{text}\x1b[0m" if code else text


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="atchan",
                             description="attack trees with effects")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("file", help="model file")
        p.add_argument("--format", choices=("text", "json"), default="text")
        p.add_argument("--strict", action="store_true",
                       help="treat warnings as errors")
        p.add_argument("--dot", metavar="OUTDIR", default=None,
                       help="write DOT files to this directory")
        p.add_argument("--max-search", type=int, default=10_000,
                       help="witness search cap")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for the randomized harness")

    p = sub.add_parser("check", help="check branch consistency and completeness")
    common(p)
    p = sub.add_parser("attr", help="evaluate a built-in attribute")
    p.add_argument("name", choices=sorted(BUILTIN_ATTRIBUTES))
    common(p)
    p.add_argument("--values", required=True,
                   help="JSON file mapping leaf node ids to values")
    p = sub.add_parser("mitigate", help="check residual effects and bounds")
    common(p)
    p = sub.add_parser("project", help="project to causal graphs and check "
                                       "commutation")
    common(p)
    p.add_argument("--random-trees", type=int, default=0,
                   help="also run the commutation harness on N random trees")
    p = sub.add_parser("scenarios", help="list the refinement scenarios")
    common(p)
    return parser


def _load(path: str, strict: bool, report: dict):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        report["diagnostics"].append(
            {"severity": ERROR, "line": 0, "col": 0, "code": "io",
             "message": str(exc)}
        )
        return None
    model, diags = parse_model(text)
    for d in diags:
        report["diagnostics"].append(
            {"severity": d.severity, "line": d.line, "col": d.col,
             "code": d.code, "message": d.message}
        )
    if model is not None and strict and any(d.severity == WARNING for d in diags):
        return None
    return model


def _emit(report: dict, fmt: str, lines: list[str]) -> None:
    if fmt == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    for d in report["diagnostics"]:
        tag = _paint(d["severity"], d["severity"])
        print(f"{d['line']}:{d['col']}: {tag} [{d['code']}] {d['message']}")
    for line in lines:
        print(line)


def _render_scenario(t: AttackTree) -> str:
    if t.is_leaf:
        return t.node_id
    inner = ", ".join(_render_scenario(c) for c in t.children)
    return f"{t.node_id}[{t.op}]({inner})"


def _write_dot(outdir: str, name: str, content: str) -> str:
    path = Path(outdir)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    target.write_text(content)
    return str(target)


# --- subcommands -------------------------------------------------------------


def _cmd_check(args, report: dict, model) -> tuple[int, list[str]]:
    lines = []
    worst = EXIT_OK
    report["trees"] = []
    for name in sorted(model.trees):
        tree = model.trees[name]
        result = check_tree_consistency(
            tree, model.effects, model.witnesses, model.registry,
            max_search=args.max_search,
        )
        entry = {"tree": name, "verdict": result.verdict, "branches": []}
        lines.append(f"tree {name}: {_paint(result.verdict, result.verdict)}")
        for b in sorted(result.branches, key=lambda b: b.node):
            entry["branches"].append({
                "node": b.node,
                "kind": b.kind,
                "verdict": b.verdict,
                "complete": b.complete,
                "reasons": list(b.reasons),
                "cut": b.cut_nodes,
                "searched": b.searched,
            })
            extra = ""
            if b.cut_nodes is not None:
                extra += f" cut=[{', '.join(b.cut_nodes)}]"
            if b.complete is not None:
                extra += f" complete={'yes' if b.complete else 'no'}"
            lines.append(f"  branch {b.node} ({b.kind}): "
                         f"{_paint(b.verdict, b.verdict)}{extra}")
            for r in b.reasons:
                lines.append(f"    - {r}")
        if result.verdict == INCONSISTENT:
            worst = max(worst, EXIT_INCONSISTENT)
        elif result.verdict == UNVERIFIED:
            worst = max(worst, EXIT_UNVERIFIED)
        report["trees"].append(entry)
        if args.dot:
            path = _write_dot(args.dot, f"{name}.dot",
                              tree_dot(tree, model.effects))
            lines.append(f"  wrote {path}")
    return worst, lines


def _cmd_attr(args, report: dict, model) -> tuple[int, list[str]]:
    try:
        values = json.loads(Path(args.values).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        report["diagnostics"].append(
            {"severity": ERROR, "line": 0, "col": 0, "code": "values",
             "message": f"cannot read values: {exc}"}
        )
        return EXIT_USAGE, []
    spec = BUILTIN_ATTRIBUTES[args.name](values)
    lines = []
    report["attribute"] = {"name": args.name, "trees": {}}
    for name in sorted(model.trees):
        try:
            value = evaluate_attribute(model.trees[name], spec)
        except UnvaluedLeaf as exc:
            report["diagnostics"].append(
                {"severity": ERROR, "line": 0, "col": 0, "code": "unvalued-leaf",
                 "message": str(exc)}
            )
            return EXIT_USAGE, []
        report["attribute"]["trees"][name] = value
        lines.append(f"tree {name}: {args.name} = {value}")
    return EXIT_OK, lines


def _cmd_mitigate(args, report: dict, model) -> tuple[int, list[str]]:
    lines = []
    worst = EXIT_OK
    skipped = False
    report["branches"] = []
    for name in sorted(model.trees):
        tree = model.trees[name]
        for n in tree.iter_nodes():
            if n.is_leaf:
                continue
            spec = model.witnesses.get(n.node_id)
            if spec is None or not (
                spec.has_explicit_types()
                or any(spec.for_child(c.node_id).has_explicit_types()
                       for c in n.children)
            ):
                lines.append(f"  branch {n.node_id}: "
                             f"{_paint('skipped', 'skipped')} "
                             "(no explicit witness)")
                report["branches"].append(
                    {"node": n.node_id, "status": "skipped"})
                skipped = True
                continue
            result = analyze_branch_mitigation(
                n, model.effects, model.residuals, spec, model.registry
            )
            status = "ok" if result.ok else "fail"
            entry = {
                "node": result.node,
                "kind": result.kind,
                "status": status,
                "claimed": _print_formula(result.claimed),
                "least": _print_formula(result.least),
                "exact": result.exact,
                "reasons": list(result.reasons),
                "admissible": sorted(_print_formula(f)
                                     for f in result.admissible),
                "admissible_partial": result.admissible_partial,
                "violating_children": list(result.violating_children),
                "precondition_breaks": list(result.precondition_breaks),
            }
            report["branches"].append(entry)
            lines.append(f"  branch {result.node} ({result.kind}): "
                         f"{_paint(status, status)} "
                         f"claimed={entry['claimed']} least={entry['least']}"
                         f"{' (exact)' if result.exact else ''}")
            for r in result.reasons:
                lines.append(f"    - {r}")
            lines.append(f"    admissible: {', '.join(entry['admissible'])}"
                         + (" (partial)" if result.admissible_partial else ""))
            if not result.ok:
                worst = max(worst, EXIT_INCONSISTENT)
    if worst == EXIT_OK and skipped:
        worst = EXIT_UNVERIFIED
    return worst, lines


def _random_tree(rng: random.Random, max_depth=4, max_arity=3, max_leaves=8,
                 min_leaves=3):
    counter = [0]

    def shape(depth, root=False):
        if depth == 0 or (not root and rng.random() < 0.3):
            return ("leaf",)
        return (rng.choice([AND, OR, SAND]),
                [shape(depth - 1) for _ in range(rng.randint(1, max_arity))])

    def build(s):
        nid = f"n{counter[0]}"
        counter[0] += 1
        if s[0] == "leaf":
            return leaf(nid, nid)
        return node(nid, nid, s[0], [build(c) for c in s[1]])

    while True:
        counter[0] = 0
        t = build(shape(max_depth, root=True))
        if min_leaves <= sum(1 for n in t.iter_nodes() if n.is_leaf) <= max_leaves:
            return t


def _cmd_project(args, report: dict, model) -> tuple[int, list[str]]:
    lines = []
    worst = EXIT_OK
    report["trees"] = []
    for name in sorted(model.trees):
        tree = model.trees[name]
        entry = {"tree": name}
        try:
            commutes = check_commutation(tree)
            entry["commutes"] = commutes
            tag = "pass" if commutes else "fail"
            lines.append(f"tree {name}: commutation {_paint(tag, tag)}")
            if not commutes:
                worst = max(worst, EXIT_INCONSISTENT)
        except SizeCapExceeded as exc:
            entry["commutes"] = None
            entry["note"] = str(exc)
            lines.append(f"tree {name}: commutation "
                         f"{_paint('skipped', 'skipped')} ({exc})")
            worst = max(worst, EXIT_UNVERIFIED)
        if args.dot:
            for i, r in enumerate(semantics(tree)):
                path = _write_dot(args.dot, f"{name}_scenario{i}.dot",
                                  graph_dot(project_rtree(r)))
                lines.append(f"  wrote {path}")
        report["trees"].append(entry)
    if args.random_trees:
        rng = random.Random(args.seed)
        passed = 0
        for _ in range(args.random_trees):
            t = _random_tree(rng)
            if check_commutation(t):
                passed += 1
        report["random_harness"] = {
            "count": args.random_trees, "passed": passed, "seed": args.seed,
        }
        tag = "pass" if passed == args.random_trees else "fail"
        lines.append(f"random harness: {passed}/{args.random_trees} "
                     f"{_paint(tag, tag)} (seed {args.seed})")
        if passed != args.random_trees:
            worst = max(worst, EXIT_INCONSISTENT)
    return worst, lines


def _cmd_scenarios(args, report: dict, model) -> tuple[int, list[str]]:
    lines = []
    report["trees"] = []
    for name in sorted(model.trees):
        scen = semantics(model.trees[name])
        rendered = [_render_scenario(r) for r in scen]
        report["trees"].append(
            {"tree": name, "count": len(scen), "scenarios": rendered})
        lines.append(f"tree {name}: {len(scen)} scenario(s)")
        for r in rendered:
            lines.append(f"  {r}")
    return EXIT_OK, lines


_COMMANDS = {
    "check": _cmd_check,
    "attr": _cmd_attr,
    "mitigate": _cmd_mitigate,
    "project": _cmd_project,
    "scenarios": _cmd_scenarios,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    report = {
        "schema": "atchan-report/1",
        "command": args.command,
        "file": args.file,
        "diagnostics": [],
    }
    model = _load(args.file, args.strict, report)
    if model is None:
        report["exit_code"] = EXIT_USAGE
        _emit(report, args.format, [])
        return EXIT_USAGE
    code, lines = _COMMANDS[args.command](args, report, model)
    report["exit_code"] = code
    _emit(report, args.format, lines)
    return code


def main(argv=None) -> int:
    code = run(argv)
    if argv is None:
        sys.exit(code)
    return code
