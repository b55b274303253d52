import numpy as np
import pytest

from factorplan import FactorKind, GraphError, ParseError, parse_skeleton, serialize_skeleton
from factorplan.graph import isomorphic

from conftest import DEPENDENT_PARALLEL, INDEPENDENT_PARALLEL, LINEAR_CHAIN


@pytest.mark.parametrize("doc", [DEPENDENT_PARALLEL, INDEPENDENT_PARALLEL, LINEAR_CHAIN])
def test_round_trip_isomorphic(doc):
    plan = parse_skeleton(doc)
    text = serialize_skeleton(plan)
    again = parse_skeleton(text)
    assert isomorphic(plan, again)
    # a second round trip is textually stable
    assert serialize_skeleton(again) == text


def test_round_trip_preserves_params(independent_parallel):
    text = serialize_skeleton(independent_parallel)
    again = parse_skeleton(text)
    mu1 = again.external_constraints[0]
    assert mu1.kind is FactorKind.FIXED_TRANSFORM
    np.testing.assert_allclose(mu1.params["admissible"][0], [0.0, 0.3, 1.0, 0.0])
    assert again.spatial_factors["gl"].weight == 0.0


def test_round_trip_preserves_goal_weights():
    doc = LINEAR_CHAIN.replace(
        "gO gaussian members=O2 mean=0.5,0.0 cov=diag:0.01,0.01",
        "gO gaussian members=O2 mean=0.5,0.0 cov=diag:0.01,0.01 rweight=2.5",
    )
    plan = parse_skeleton(doc)
    assert plan.goal.residual_weights == (2.5,)
    again = parse_skeleton(serialize_skeleton(plan))
    assert again.goal.residual_weights == (2.5,)
    np.testing.assert_allclose(
        again.goal.factors[0].params["cov"], np.diag([0.01, 0.01])
    )


def test_comments_and_blank_lines_ignored():
    doc = "# header comment\n\n[nodes]\nA object raw 2  # trailing\n\n"
    plan = parse_skeleton(doc)
    assert set(plan.nodes) == {"A"}


def test_bounds_parse():
    doc = "[nodes]\na skill_param raw 2 bounds=-1:1,-0.5:0.5\n"
    plan = parse_skeleton(doc)
    np.testing.assert_allclose(plan.node("a").bounds, [[-1, 1], [-0.5, 0.5]])


def test_line_numbers_in_errors():
    doc = "[nodes]\nA object raw 2\nB object pose2d 5\n"
    with pytest.raises(ParseError, match="line 3"):
        parse_skeleton(doc)


@pytest.mark.parametrize(
    "doc, match",
    [
        ("x before sections\n", "before any section"),
        ("[widgets]\n", "unknown section"),
        ("[nodes]\nA object raw 2\nA object raw 2\n", "duplicate node id"),
        ("[nodes]\nA wizard raw 2\n", "'wizard'"),
        ("[nodes]\nA object raw 2\n[factors]\nf grasped members=A,B\n", "unknown node 'B'"),
        (
            "[nodes]\nA object raw 2\n[factors]\nf gaussian members=A mean=0,0 "
            "cov=diag:1,1 radius=3\n",
            "unknown key",
        ),
        (
            "[nodes]\nA object raw 2\nB object raw 2\na skill_param raw 1\n"
            "[skills]\ns m step=0 pre=A param=a effects=A-B\n",
            "bad effect binding",
        ),
        (
            "[nodes]\nA object raw 2\nB object raw 2\np object raw 1\n"
            "[skills]\ns m step=0 pre=A param=p effects=A>B\n",
            "must have role",
        ),
        (
            "[nodes]\nA object pose2d 4\nB object pose2d 4\n"
            "[constraints]\nc fixed_transform state=0 members=A,B "
            "admissible=0,0,1,0\n",
            "no state= key",
        ),
        ("[nodes]\nA object raw 2\n[factors]\nf gaussian members=A mean=0,0 "
         "cov=1,2,3\n", "square"),
    ],
)
def test_parse_errors(doc, match):
    with pytest.raises(ParseError, match=match):
        parse_skeleton(doc)


def test_cyclic_temporal_dependency_rejected():
    doc = """
[nodes]
A object raw 1
B object raw 1
a1 skill_param raw 1
a2 skill_param raw 1

[skills]
p1 m step=0 pre=B param=a1 effects=B>A
p2 m step=0 pre=A param=a2 effects=A>B
"""
    with pytest.raises(GraphError, match="cyclic|absent"):
        parse_skeleton(doc)


def test_goal_may_reference_only_live_nodes():
    doc = """
[nodes]
A object raw 2
Z object raw 2
a1 skill_param raw 1

[skills]
p1 m step=0 pre=A param=a1 effects=A>Z

[goal]
g gaussian members=Z mean=0,0 cov=diag:1,1
"""
    plan = parse_skeleton(doc)  # Z is live in state 1
    assert plan.goal.factors[0].members == ("Z",)
    bad = doc.replace("effects=A>Z", "effects=A>Z", 1).replace(
        "members=Z", "members=Q", 1
    )
    with pytest.raises(ParseError, match="unknown node 'Q'"):
        parse_skeleton(bad)


def test_added_factor_becomes_active_later():
    doc = """
[nodes]
L0 robot pose2d 4
H0 object pose2d 4
L1 robot pose2d 4
H1 object pose2d 4
a1 skill_param raw 4

[factors]
g1 grasped members=L1,H1 weight=0

[skills]
pk pick step=0 pre=L0,H0 param=a1 effects=L0>L1,H0>H1 add=g1
"""
    plan = parse_skeleton(doc)
    assert "g1" not in plan.states[0].factors
    assert "g1" in plan.states[1].factors
    again = parse_skeleton(serialize_skeleton(plan))
    assert isomorphic(plan, again)


def test_factor_activation_and_removal_window():
    doc = """
[nodes]
L0 robot pose2d 4
H0 object pose2d 4
L1 robot pose2d 4
H1 object pose2d 4
L2 robot pose2d 4
a1 skill_param raw 4
a2 skill_param raw 4

[factors]
g0 grasped state=0 members=L0,H0

[skills]
mv move step=0 pre=L0,H0 prefactors=g0 param=a1 effects=L0>L1,H0>H1
pl place step=1 pre=L1,H1 param=a2 effects=L1>L2 remove=g0
"""
    plan = parse_skeleton(doc)
    assert "g0" in plan.states[0].factors
    assert "g0" in plan.states[1].factors
    assert "g0" not in plan.states[2].factors
