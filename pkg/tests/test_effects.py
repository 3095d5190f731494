import random

import pytest

from atchan.attributes import validate_attribute_laws
from atchan.channel import (
    EPSILON,
    TOP,
    And,
    Family,
    Prim,
    apply_type_map,
    check_infomorphism,
    leq,
    make_classification,
)
from atchan.effects import (
    CONSISTENT,
    INCONSISTENT,
    UNVERIFIED,
    Effect,
    WitnessSpec,
    analyze_branch,
    check_tree_consistency,
    cut_sequence,
    integrate,
    integration_attribute,
    integration_equal_up_to_tags,
    integration_infomorphism,
    search_infomorphism,
    validate_effect,
)
from atchan.tree import AND, OR, SAND, leaf, node
from helpers import (
    fam,
    make_cdev,
    make_cinfo,
    random_classification,
    reveng_token_entries,
    reveng_type_entries,
)


# --- the credential-theft case study built directly against the library API --


def auth_registry():
    return {"CInfo": make_cinfo(), "CDev": make_cdev()}


def auth_tree():
    return node(
        "A0", "authentication information stolen", OR,
        [
            node("A1", "reverse engineering", SAND,
                 [leaf("A1.1", "procure device"),
                  leaf("A1.2", "analyze device"),
                  leaf("A1.3", "identify information")]),
            leaf("A2", "brute-force"),
            leaf("A3", "eavesdropping"),
        ],
    )


def auth_effects():
    disc_info = Prim("Disc", "AuI.I")
    phi = {}
    for n in ("A0", "A1", "A2", "A3", "A1.3"):
        phi[n] = Effect(n, "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}), disc_info)
    phi["A1.1"] = Effect("A1.1", "CDev", fam("CDev", {"Data": "Data"}),
                         Prim("Acc", "Data"))
    phi["A1.2"] = Effect("A1.2", "CDev", fam("CDev", {"Data": "Data"}),
                         Prim("Disc", "Data"))
    return phi


def identity_witness(**kw):
    return WitnessSpec(identity_types=True, identity_tokens=True, **kw)


def reveng_witness():
    return WitnessSpec(
        type_entries=reveng_type_entries(),
        type_default=TOP,
        token_entries=reveng_token_entries(),
        token_default=(fam("CDev", {}), fam("CInfo", {})),
        preconditions={
            "A1.2": Prim("Acc", "Data"),
            "A1.3": Prim("Disc", "Data"),
        },
    )


def auth_witnesses():
    return {"A0": identity_witness(), "A1": reveng_witness()}


# --- effects are holding relations -------------------------------------------


def test_effect_must_hold_at_load():
    reg = auth_registry()
    bad = Effect("x", "CDev", fam("CDev", {"1": "Mech"}), Prim("Disc", "1"))
    with pytest.raises(Exception, match="does not hold"):
        validate_effect(bad, reg)
    validate_effect(
        Effect("x", "CDev", fam("CDev", {"1": "Mech"}), Prim("Acc", "1")), reg
    )


# --- cut sequences ------------------------------------------------------------


def test_cut_sequence_keeps_rightmost_per_token():
    phi = auth_effects()
    cut = cut_sequence([phi["A1.1"], phi["A1.2"], phi["A1.3"]])
    assert [e.node for e in cut] == ["A1.2", "A1.3"]


def test_cut_sequence_of_singleton_is_itself():
    phi = auth_effects()
    assert cut_sequence([phi["A1.1"]]) == [phi["A1.1"]]


def test_cut_sequence_with_distinct_tokens_is_unchanged():
    phi = auth_effects()
    seq = [phi["A1.2"], phi["A1.3"]]
    assert cut_sequence(seq) == seq


def test_cut_sequence_is_idempotent_with_distinct_families():
    phi = auth_effects()
    cut = cut_sequence([phi["A1.1"], phi["A1.2"], phi["A1.3"]])
    assert cut_sequence(cut) == cut
    families = [(e.cls, e.family) for e in cut]
    assert len(set(families)) == len(families)


# --- integration ----------------------------------------------------------------


def two_small_classifications():
    c1, _ = make_classification("c1", ["a"], ["alpha"], holds=[("a", "alpha")])
    c2, _ = make_classification("c2", ["b"], ["beta"], holds=[("b", "beta")])
    return {"c1": c1, "c2": c2}


def test_and_integration_direct_instance():
    reg = two_small_classifications()
    e1 = Effect("n1", "c1", fam("c1", {"1": "a"}), Prim("alpha", "1"))
    e2 = Effect("n2", "c2", fam("c2", {"2": "b"}), Prim("beta", "2"))
    out = integrate(AND, [e1, e2], reg)
    assert out.family == Family.of(
        out.sum_cls.name, {(1, "1"): (1, "a"), (2, "2"): (2, "b")}
    )
    assert out.formula == And(
        Prim((1, "alpha"), (1, "1")), Prim((2, "beta"), (2, "2"))
    )
    assert out.holds()


def test_or_integration_holds_iff_some_member_holds():
    # toggling the holds relations exercises both directions
    rng = random.Random(21)
    for trial in range(40):
        c1 = random_classification(rng, "r1")
        c2 = random_classification(rng, "r2")
        reg = {"r1": c1, "r2": c2}
        tok1 = sorted(c1.tokens - {EPSILON})[0]
        tok2 = sorted(c2.tokens - {EPSILON})[0]
        ty1 = sorted(c1.types)[0]
        ty2 = sorted(c2.types)[0]
        e1 = Effect("n1", "r1", fam("r1", {"i": tok1}), Prim(ty1, "i"))
        e2 = Effect("n2", "r2", fam("r2", {"j": tok2}), Prim(ty2, "j"))
        holds = [c1.satisfies(tok1, ty1), c2.satisfies(tok2, ty2)]
        assert integrate(OR, [e1, e2], reg).holds() == any(holds)
        assert integrate(AND, [e1, e2], reg).holds() == all(holds)


def test_seq_integration_is_and_of_the_cut():
    reg = auth_registry()
    phi = auth_effects()
    children = [phi["A1.1"], phi["A1.2"], phi["A1.3"]]
    seq = integrate(SAND, children, reg)
    cut_and = integrate(AND, cut_sequence(children), reg)
    assert seq.family == cut_and.family
    assert seq.formula == cut_and.formula
    assert seq.holds()


def test_singleton_integrations_agree():
    reg = auth_registry()
    phi = auth_effects()
    e = phi["A1.2"]
    o = integrate(OR, [e], reg)
    a = integrate(AND, [e], reg)
    s = integrate(SAND, [e], reg)
    assert o.family == a.family == s.family
    assert o.formula == a.formula == s.formula


def test_integration_is_a_quasi_attribute():
    reg = auth_registry()
    phi = auth_effects()
    spec = integration_attribute(reg)
    samples = [
        (phi["A1.1"], phi["A1.3"]),
        (phi["A1.2"], phi["A1.3"], phi["A1.1"]),
        (phi["A0"],),
    ]
    assert validate_attribute_laws(spec, samples) == []


def test_transposed_integration_equal_up_to_tags():
    reg = auth_registry()
    phi = auth_effects()
    a = integrate(AND, [phi["A1.1"], phi["A1.3"]], reg)
    b = integrate(AND, [phi["A1.3"], phi["A1.1"]], reg)
    assert integration_equal_up_to_tags(a, b)
    assert not integration_equal_up_to_tags(
        a, integrate(AND, [phi["A1.1"], phi["A1.1"]], reg)
    )


# --- branch consistency -----------------------------------------------------------


def test_case_study_sand_branch_is_consistent():
    reg = auth_registry()
    phi = auth_effects()
    tree = auth_tree()
    branch = tree.children[0]
    result = analyze_branch(branch, phi, reveng_witness(), reg)
    assert result.verdict == CONSISTENT
    assert result.cut_nodes == ["A1.2", "A1.3"]
    assert result.complete is True


def test_case_study_or_branch_is_consistent_with_identity_witness():
    reg = auth_registry()
    phi = auth_effects()
    result = analyze_branch(auth_tree(), phi, identity_witness(), reg)
    assert result.verdict == CONSISTENT
    assert result.complete is True


def test_failed_order_check_is_inconsistent():
    reg = auth_registry()
    phi = {
        "p": Effect("p", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
        "c": Effect("c", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Acc", "AuI.I")),
    }
    branch = node("p", "", AND, [leaf("c", "")])
    result = analyze_branch(branch, phi, identity_witness(), reg)
    assert result.verdict == INCONSISTENT
    assert any("failed leq" in r for r in result.reasons)


def test_missing_witness_is_unverified_not_inconsistent():
    reg = auth_registry()
    phi = auth_effects()
    result = analyze_branch(auth_tree(), phi, None, reg)
    assert result.verdict == UNVERIFIED


def test_broken_sand_precondition_is_inconsistent():
    reg = auth_registry()
    phi = auth_effects()
    spec = reveng_witness()
    spec.preconditions["A1.2"] = Prim("Disc", "Data")  # needs E1.1 to disclose
    branch = auth_tree().children[0]
    result = analyze_branch(branch, phi, spec, reg)
    assert result.verdict == INCONSISTENT
    assert any("precondition" in r for r in result.reasons)


def test_whole_tree_consistency_aggregates():
    reg = auth_registry()
    phi = auth_effects()
    report = check_tree_consistency(auth_tree(), phi, auth_witnesses(), reg)
    assert report.verdict == CONSISTENT
    assert [b.node for b in report.branches] == ["A0", "A1"]


def test_one_bad_branch_spoils_the_tree():
    reg = auth_registry()
    phi = auth_effects()
    phi["A1.3"] = Effect("A1.3", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                         Prim("Acc", "AuI.I"))
    report = check_tree_consistency(auth_tree(), phi, auth_witnesses(), reg)
    assert report.verdict == INCONSISTENT


def test_single_leaf_tree_is_vacuously_consistent():
    reg = auth_registry()
    report = check_tree_consistency(leaf("only", ""), {}, {}, reg)
    assert report.verdict == CONSISTENT
    assert report.branches == []


def test_verdicts_invariant_under_family_inflation():
    # adding removable entries (duplicate token, un-connected token) to an
    # effect family must not change any verdict
    reg = auth_registry()
    phi = auth_effects()
    phi["A1.2"] = Effect(
        "A1.2", "CDev",
        fam("CDev", {"Data": "Data", "Data2": "Data", "E": EPSILON}),
        Prim("Disc", "Data"),
    )
    report = check_tree_consistency(auth_tree(), phi, auth_witnesses(), reg)
    assert report.verdict == CONSISTENT


# --- completeness -------------------------------------------------------------------


def test_completeness_false_when_parent_strictly_weaker():
    reg = auth_registry()
    phi = {
        "p": Effect("p", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Acc", "AuI.I")),
        "c": Effect("c", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
    }
    branch = node("p", "", AND, [leaf("c", "")])
    result = analyze_branch(branch, phi, identity_witness(), reg)
    assert result.verdict == CONSISTENT
    assert result.complete is False


def test_completeness_true_for_identical_single_child():
    reg = auth_registry()
    phi = {
        "p": Effect("p", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
        "c": Effect("c", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
    }
    branch = node("p", "", AND, [leaf("c", "")])
    result = analyze_branch(branch, phi, identity_witness(), reg)
    assert result.complete is True


# --- validity construction ------------------------------------------------------------


def test_integration_infomorphism_realizes_the_abstraction():
    reg = auth_registry()
    phi = auth_effects()
    tree = auth_tree()
    from atchan.effects import build_branch_infos

    for branch, spec in ((tree, identity_witness()),
                         (tree.children[0], reveng_witness())):
        infos = build_branch_infos(branch, phi, spec, reg)
        g, integrated = integration_infomorphism(branch, phi, infos, reg)
        assert integrated.holds()
        assert check_infomorphism(g).valid
        parent = phi[branch.node_id]
        mapped = apply_type_map(g, integrated.formula)
        assert leq(reg[parent.cls], mapped, parent.formula)


# --- witness search ---------------------------------------------------------------------


def powertrain_registry():
    cpt, _ = make_classification(
        "CPT",
        tokens=["AuthF_PT", "MsgIdF_PT", "Software_PT"],
        types=["Ubhv", "Inv", "Unav"],
        holds=[
            ("AuthF_PT", "Ubhv"),
            ("MsgIdF_PT", "Inv"),
            ("MsgIdF_PT", "Unav"),
            ("MsgIdF_PT", "Ubhv"),
            ("Software_PT", "Inv"),
        ],
    )
    return {"CPT": cpt}


def early_phi():
    def eff(n, tok, ty):
        return Effect(n, "CPT", fam("CPT", {tok: tok}), Prim(ty, tok))

    return {
        "A0": eff("A0", "AuthF_PT", "Ubhv"),
        "A1": eff("A1", "MsgIdF_PT", "Inv"),
        "A1.1": eff("A1.1", "Software_PT", "Inv"),
        "A2": eff("A2", "MsgIdF_PT", "Unav"),
    }


def test_search_finds_no_witness_when_types_cannot_be_related():
    # invalidness cannot be related to unintended behavior by any
    # name-preserving map, so the interference branch is inconsistent
    reg = powertrain_registry()
    phi = early_phi()
    branch = node("A0", "", OR,
                  [node("A1", "", AND, [leaf("A1.1", "")]), leaf("A2", "")])
    spec = WitnessSpec(
        token_entries={"AuthF_PT": fam("CPT", {"MsgIdF_PT": "MsgIdF_PT"})},
        token_default=fam("CPT", {}),
    )
    result = analyze_branch(branch, phi, spec, reg)
    assert result.verdict == INCONSISTENT
    assert result.searched > 0


def test_search_finds_no_witness_under_forbidding_token_constraints():
    # the tampering child targets wider software; mapping the message
    # identification function onto it is not allowed
    reg = powertrain_registry()
    phi = early_phi()
    branch = node("A1", "", AND, [leaf("A1.1", "")])
    spec = WitnessSpec(
        token_entries={"MsgIdF_PT": (fam("CPT", {"MsgIdF_PT": "MsgIdF_PT"}),)},
        token_default=(fam("CPT", {}),),
    )
    result = analyze_branch(branch, phi, spec, reg)
    assert result.verdict == INCONSISTENT


def test_search_finds_identity_witness_for_equal_effects():
    reg = auth_registry()
    phi = {
        "p": Effect("p", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
        "c": Effect("c", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
    }
    branch = node("p", "", OR, [leaf("c", "")])
    spec = WitnessSpec(
        token_entries={"AuI.I": fam("CInfo", {"AuI.I": "AuI.I"})},
        token_default=fam("CInfo", {}),
    )
    outcome = search_infomorphism(branch, phi, spec, auth_registry())
    assert outcome.infos is not None
    result = analyze_branch(branch, phi, spec, reg)
    assert result.verdict == CONSISTENT


def test_search_covers_multi_child_conjunctive_branches():
    cls, _ = make_classification(
        "C", ["p", "c1", "c2"], ["Y", "Z"],
        holds=[("p", "Y"), ("c1", "Y"), ("c2", "Z")],
    )
    reg = {"C": cls}
    phi = {
        "P": Effect("P", "C", fam("C", {"p": "p"}), Prim("Y", "p")),
        "A": Effect("A", "C", fam("C", {"c1": "c1"}), Prim("Y", "c1")),
        "B": Effect("B", "C", fam("C", {"c2": "c2"}), Prim("Z", "c2")),
    }
    spec = WitnessSpec(
        token_entries={"p": (fam("C", {"c1": "c1"}), fam("C", {"c2": "c2"}))},
        token_default=(fam("C", {}), fam("C", {})),
    )
    for op in (AND, SAND):
        branch = node("P", "", op, [leaf("A", ""), leaf("B", "")])
        result = analyze_branch(branch, phi, spec, reg)
        assert result.verdict == CONSISTENT, (op, result.reasons)
        assert result.searched > 0


def test_search_cap_yields_unverified():
    reg = auth_registry()
    phi = {
        "p": Effect("p", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
        "c": Effect("c", "CInfo", fam("CInfo", {"AuI.I": "AuI.I"}),
                    Prim("Disc", "AuI.I")),
    }
    branch = node("p", "", OR, [leaf("c", "")])
    spec = WitnessSpec(
        token_entries={"AuI.I": fam("CInfo", {"AuI.I": "AuI.I"})},
        token_default=fam("CInfo", {}),
    )
    result = analyze_branch(branch, phi, spec, reg, max_search=3)
    assert result.verdict == UNVERIFIED
    assert any("cap" in r for r in result.reasons)
