"""Attack trees with sequential conjunction and channel-theoretic effects.

The library represents AND/OR/SAND attack trees, unfolds them into
refinement scenarios, assigns effects (holding token-family/formula
relations in a classification) to nodes, and mechanically checks that
decompositions are consistent: children's integrated effects must
refine the parent's effect through an infomorphism.  On top of that it
bounds admissible mitigations and projects trees onto causal digraph
semantics.  The `atchan` command drives everything from a small text
format; see the README for a tour.
"""

from .attributes import (
    AttributeSpec,
    evaluate_attribute,
    min_experts,
    possibility,
    validate_attribute_laws,
)
from .causal import (
    Atom,
    Conj,
    Disj,
    LabeledDigraph,
    Seq,
    beta,
    check_commutation,
    graphs_isomorphic,
    intermediate_semantics,
    project_rtree,
)
from .channel import (
    BOTTOM,
    EPSILON,
    TOP,
    And,
    Classification,
    Family,
    Infomorphism,
    Or,
    Prim,
    check_infomorphism,
    check_refinement_relation,
    conj_embedding,
    fd,
    fd_holds,
    fd_map,
    inc_embedding,
    leq,
    leq_oracle,
    lift_embedding,
    lifted_inc,
    make_classification,
    product_classification,
    reduce_family,
    sum_classification,
)
from .dsl import Diagnostic, ModelFile, parse_model, print_model
from .effects import (
    Effect,
    WitnessSpec,
    check_branch_consistency,
    check_tree_consistency,
    cut_sequence,
    integrate,
    search_infomorphism,
)
from .mitigation import (
    admissible_parent_residuals,
    analyze_branch_mitigation,
    check_mitigation_bound,
    check_or_branch_weakening,
    is_reduction,
)
from .tree import AttackTree, equivalent, leaf, node, normalize, semantics

__version__ = "0.1.0"
