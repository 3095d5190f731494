import json
from pathlib import Path

import pytest

from atchan.causal import LabeledDigraph, graph_atom
from atchan.cli import run
from atchan.dot import graph_dot, tree_dot
from atchan.dsl import ERROR, WARNING, parse_model, print_model

FIXTURES = Path(__file__).resolve().parent.parent / "models"

MINIMAL = """
classification C {
  tokens: a, b;
  types: X, Y;
  holds: a |= X; b |= Y;
}
tree T {
  node N "root" AND {
    leaf L "child";
  }
}
effect N: {a -> a} |= X@a in C;
effect L: {a -> a} |= X@a in C;
witness N { typemap: identity; tokmap: identity; }
"""


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


# --- parsing ------------------------------------------------------------------


def test_case_study_fixture_parses_without_errors():
    model, diags = parse_model(fixture_text("infotainment_auth.atc"))
    assert model is not None
    assert [d for d in diags if d.severity == ERROR] == []
    assert set(model.trees) == {"TAuth"}
    assert len(model.effects) == 7
    assert set(model.witnesses) == {"A0", "A1"}


def test_all_fixtures_parse():
    for name in ("infotainment_auth.atc", "infotainment_auth_mitigated.atc",
                 "powertrain_early.atc", "powertrain_revised.atc"):
        model, diags = parse_model(fixture_text(name))
        assert model is not None, (name, [d.render() for d in diags])


def test_non_holding_effect_is_diagnosed():
    text = MINIMAL.replace("effect N: {a -> a} |= X@a in C;",
                           "effect N: {a -> a} |= Y@a in C;")
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code == "effect-does-not-hold" for d in diags)


def test_mechanical_part_disclosure_does_not_hold():
    # the mechanical part is only accessible, never disclosed
    text = fixture_text("infotainment_auth.atc").replace(
        "effect A1.1: {Data -> Data} |= Acc@Data in CDev;",
        "effect A1.1: {i -> Mech} |= Disc@i in CDev;",
    )
    model, diags = parse_model(text)
    assert model is None
    bad = [d for d in diags if d.code == "effect-does-not-hold"]
    assert bad and "does not hold" in bad[0].message


def test_empty_file_reports_no_tree():
    model, diags = parse_model("")
    assert model is None
    assert any(d.code == "no-tree" for d in diags)


def test_syntax_error_has_a_span_inside_the_input():
    text = "classification C {\n  tokens a;\n}\n"
    model, diags = parse_model(text)
    assert model is None
    d = diags[0]
    lines = text.splitlines()
    assert 1 <= d.line <= len(lines)
    assert 1 <= d.col <= len(lines[d.line - 1]) + 1
    assert d.length >= 1


def test_unknown_node_reference_is_diagnosed():
    text = MINIMAL + "residual ZZ: X@a;\n"
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code == "unknown-node" for d in diags)


def test_duplicate_node_ids_are_diagnosed():
    text = MINIMAL.replace('leaf L "child";', 'leaf N "child";')
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code in ("bad-tree", "duplicate-node") for d in diags)


def test_unknown_type_in_formula_is_diagnosed():
    text = MINIMAL.replace("effect L: {a -> a} |= X@a in C;",
                           "effect L: {a -> a} |= Zed@a in C;")
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code == "unknown-type" for d in diags)


def test_monotone_closure_produces_a_warning():
    text = MINIMAL.replace("holds: a |= X; b |= Y;",
                           "holds: a |= X; b |= Y;\n  order: X => Y;")
    model, diags = parse_model(text)
    assert model is not None
    assert any(d.severity == WARNING and d.code == "holds-closure" for d in diags)


def test_invalid_residual_is_diagnosed():
    # Y is not derivable from X without an order declaration
    text = MINIMAL + "residual N: Y@a;\n"
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code == "invalid-residual" for d in diags)


def test_comments_and_whitespace_are_ignored():
    text = "# leading comment\n" + MINIMAL.replace("tree T {",
                                                   "tree T { # trailing\n")
    model, _ = parse_model(text)
    assert model is not None


PER_CHILD = """
classification C {
  tokens: p, c1, c2;
  types: X, Y, Z;
  holds: p |= X; c1 |= Y; c2 |= Z;
}
tree T {
  node P "parent" OR {
    leaf A "first alternative";
    leaf B "second alternative";
  }
}
effect P: {p -> p} |= X@p in C;
effect A: {c1 -> c1} |= Y@c1 in C;
effect B: {c2 -> c2} |= Z@c2 in C;
witness P child A {
  typemap: Y@c1 -> X@p; default -> top;
  tokmap: p -> {c1 -> c1}; default -> {};
}
witness P child B {
  typemap: Z@c2 -> X@p; default -> top;
  tokmap: p -> {c2 -> c2}; default -> {};
}
"""


def test_per_child_witnesses_on_an_or_branch(tmp_path, capsys):
    model, diags = parse_model(PER_CHILD)
    assert model is not None, [d.render() for d in diags]
    target = tmp_path / "m.atc"
    target.write_text(PER_CHILD)
    assert run(["check", str(target)]) == 0
    capsys.readouterr()
    reparsed, rediags = parse_model(print_model(model))
    assert reparsed is not None, [d.render() for d in rediags]
    assert _models_equal(model, reparsed)


def test_child_witness_on_non_or_branch_is_diagnosed():
    text = PER_CHILD.replace('node P "parent" OR', 'node P "parent" AND')
    model, diags = parse_model(text)
    assert model is None
    assert any(d.code == "child-witness-on-non-or" for d in diags)


# --- round trip -----------------------------------------------------------------


def _models_equal(a, b) -> bool:
    return (
        a.registry == b.registry
        and a.trees == b.trees
        and a.effects == b.effects
        and a.residuals == b.residuals
        and set(a.witnesses) == set(b.witnesses)
        and all(a.witnesses[k] == b.witnesses[k] for k in a.witnesses)
    )


@pytest.mark.parametrize("name", [
    "infotainment_auth.atc",
    "infotainment_auth_mitigated.atc",
    "powertrain_early.atc",
    "powertrain_revised.atc",
])
def test_print_parse_round_trip(name):
    model, _ = parse_model(fixture_text(name))
    printed = print_model(model)
    reparsed, diags = parse_model(printed)
    assert reparsed is not None, [d.render() for d in diags]
    assert _models_equal(model, reparsed)
    assert print_model(reparsed) == printed


# --- DOT export -----------------------------------------------------------------


def test_singleton_graph_dot_is_frozen():
    assert graph_dot(graph_atom("a")) == 'digraph G {\n  v0 [label="a"];\n}\n'


def test_edge_graph_dot_is_deterministic():
    g = LabeledDigraph(("b", "c"), frozenset({(0, 1)}))
    assert graph_dot(g) == (
        'digraph G {\n  v0 [label="b"];\n  v1 [label="c"];\n  v0 -> v1;\n}\n'
    )


def test_case_study_tree_dot_has_seven_attack_and_effect_vertices():
    model, _ = parse_model(fixture_text("infotainment_auth.atc"))
    out = tree_dot(model.trees["TAuth"], model.effects)
    attack = [l for l in out.splitlines() if l.strip().startswith("v")
              and "[label=" in l]
    effect = [l for l in out.splitlines() if l.strip().startswith("e")
              and "[label=" in l]
    assert len(attack) == 7
    assert len(effect) == 7
    assert "color=blue" in out and "style=dashed" in out


# --- CLI ------------------------------------------------------------------------


def test_check_exit_codes(capsys):
    assert run(["check", str(FIXTURES / "infotainment_auth.atc")]) == 0
    assert run(["check", str(FIXTURES / "powertrain_early.atc")]) == 1
    capsys.readouterr()


def test_missing_witness_yields_exit_two(tmp_path, capsys):
    text = MINIMAL.replace("witness N { typemap: identity; tokmap: identity; }",
                           "")
    target = tmp_path / "m.atc"
    target.write_text(text)
    assert run(["check", str(target)]) == 2
    out = capsys.readouterr().out
    assert "unverified" in out


def test_parse_error_yields_exit_three(tmp_path, capsys):
    target = tmp_path / "m.atc"
    target.write_text("tree {")
    assert run(["check", str(target)]) == 3
    capsys.readouterr()


def test_usage_error_yields_exit_three(capsys):
    assert run(["check", "--no-such-flag", "x"]) == 3
    capsys.readouterr()


def test_strict_turns_warnings_into_errors(tmp_path, capsys):
    text = MINIMAL.replace("holds: a |= X; b |= Y;",
                           "holds: a |= X; b |= Y;\n  order: X => Y;")
    target = tmp_path / "m.atc"
    target.write_text(text)
    assert run(["check", str(target)]) == 0
    assert run(["check", str(target), "--strict"]) == 3
    capsys.readouterr()


def test_json_report_is_deterministic_and_versioned(capsys):
    path = str(FIXTURES / "infotainment_auth.atc")
    assert run(["check", path, "--format", "json"]) == 0
    first = capsys.readouterr().out
    assert run(["check", path, "--format", "json"]) == 0
    second = capsys.readouterr().out
    assert first == second
    report = json.loads(first)
    assert report["schema"] == "atchan-report/1"
    assert report["exit_code"] == 0
    branches = {b["node"]: b for t in report["trees"] for b in t["branches"]}
    assert branches["A1"]["cut"] == ["A1.2", "A1.3"]
    assert branches["A1"]["verdict"] == "consistent"


def test_scenarios_command_lists_three(capsys):
    assert run(["scenarios", str(FIXTURES / "infotainment_auth.atc"),
                "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["trees"][0]["count"] == 3


def test_project_writes_dot_files(tmp_path, capsys):
    out = tmp_path / "dots"
    assert run(["project", str(FIXTURES / "infotainment_auth.atc"),
                "--dot", str(out)]) == 0
    capsys.readouterr()
    files = sorted(p.name for p in out.iterdir())
    assert files == [f"TAuth_scenario{i}.dot" for i in range(3)]


def test_attr_command_reproduces_the_intro_conclusion(tmp_path, capsys):
    values = {
        "A1.1": True, "A1.2": True, "A1.3": True,
        "A2": False, "A3": False,
    }
    vfile = tmp_path / "vals.json"
    vfile.write_text(json.dumps(values))
    assert run(["attr", "possibility", str(FIXTURES / "infotainment_auth.atc"),
                "--values", str(vfile), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["attribute"]["trees"]["TAuth"] is True


def test_attr_command_min_experts(tmp_path, capsys):
    values = {"A1.1": 1, "A1.2": 2, "A1.3": 1, "A2": 4, "A3": 3}
    vfile = tmp_path / "vals.json"
    vfile.write_text(json.dumps(values))
    assert run(["attr", "min_experts", str(FIXTURES / "infotainment_auth.atc"),
                "--values", str(vfile), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    # min(max(1,2,1), 4, 3) over the alternatives
    assert report["attribute"]["trees"]["TAuth"] == 2


def test_mitigate_command_exit_codes(capsys):
    assert run(["mitigate", str(FIXTURES / "infotainment_auth_mitigated.atc")]) == 0
    capsys.readouterr()


def test_color_env_var_forces_ansi(capsys, monkeypatch):
    monkeypatch.setenv("ATCHAN_COLOR", "always")
    run(["check", str(FIXTURES / "infotainment_auth.atc")])
    out = capsys.readouterr().out
    assert "\x1b[32m" in out
    monkeypatch.setenv("ATCHAN_COLOR", "never")
    run(["check", str(FIXTURES / "infotainment_auth.atc")])
    out = capsys.readouterr().out
    assert "\x1b[" not in out
