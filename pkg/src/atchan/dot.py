"""DOT export for digraphs and for trees with their effects."""

from __future__ import annotations

from typing import Mapping

from .causal import LabeledDigraph
from .dsl import _print_family, _print_formula
from .tree import AttackTree


def _esc(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def graph_dot(g: LabeledDigraph) -> str:
    """Vertices in index order, edges sorted; stable output."""
    lines = ["digraph G {"]
    for v, label in enumerate(g.labels):
        lines.append(f'  v{v} [label="{_esc(label)}"];')
    for a, b in sorted(g.edges):
        lines.append(f"  v{a} -> v{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def tree_dot(tree: AttackTree, effects: Mapping[str, object] = ()) -> str:
    """The tree as boxes, with effect vertices attached by dashed blue edges."""
    nodes = list(tree.iter_nodes())
    ids = {n.node_id: i for i, n in enumerate(nodes)}
    lines = ["digraph G {"]
    for n in nodes:
        label = n.node_id if n.is_leaf else f"{n.node_id} [{n.op}]"
        lines.append(f'  v{ids[n.node_id]} [label="{_esc(label)}", shape=box];')
    for n in nodes:
        for c in n.children:
            lines.append(f"  v{ids[n.node_id]} -> v{ids[c.node_id]};")
    counter = 0
    for n in nodes:
        e = effects.get(n.node_id) if effects else None
        if e is None:
            continue
        text = f"{_print_family(e.family)} |= {_print_formula(e.formula)}"
        lines.append(
            f'  e{counter} [label="{_esc(text)}", shape=ellipse, color=blue, '
            f"fontcolor=blue];"
        )
        lines.append(
            f"  v{ids[n.node_id]} -> e{counter} "
            f"[color=blue, style=dashed, arrowhead=none];"
        )
        counter += 1
    lines.append("}")
    return "\n".join(lines) + "\n"
