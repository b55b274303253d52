import numpy as np
import pytest

from factorplan import parse_skeleton

# Dependent parallel chaining: two skills share the source node P0 and both
# produce the same fresh node P1; an external constraint couples L1 and R1.
DEPENDENT_PARALLEL = """
[nodes]
L0 robot pose2d 4
P0 object pose2d 4
R0 robot pose2d 4
L1 robot pose2d 4
P1 object pose2d 4
R1 robot pose2d 4
a1 skill_param raw 4
a2 skill_param raw 4

[factors]

[skills]
pi1 grasp_left step=0 pre=L0,P0 param=a1 effects=L0>L1,P0>P1
pi2 grasp_right step=0 pre=R0,P0 param=a2 effects=R0>R1,P0>P1

[constraints]
mu2 fixed_transform members=L1,R1 admissible=0.0,0.4,1.0,0.0 weight=1

[goal]
gP gaussian members=P1 mean=0.0,0.2,1.0,0.0 cov=diag:0.01,0.01,0.02,0.02
"""

# Independent parallel chaining: two skills on disjoint node sets.
INDEPENDENT_PARALLEL = """
[nodes]
L0 robot pose2d 4
C0 object pose2d 4
R0 robot pose2d 4
M0 object pose2d 4
L1 robot pose2d 4
C1 object pose2d 4
R1 robot pose2d 4
M1 object pose2d 4
a1 skill_param raw 4
a2 skill_param raw 4

[factors]
gl grasped state=0 members=L0,C0 weight=0
gr grasped state=0 members=R0,M0 weight=0

[skills]
pi1 move_left step=0 pre=L0,C0 prefactors=gl param=a1 effects=L0>L1,C0>C1
pi2 move_right step=0 pre=R0,M0 prefactors=gr param=a2 effects=R0>R1,M0>M1

[constraints]
mu1 fixed_transform members=C1,M1 admissible=0.0,0.3,1.0,0.0 weight=1
"""

# Two-skill linear chain through one transported object node.
LINEAR_CHAIN = """
[nodes]
O0 object raw 2
O1 object raw 2
O2 object raw 2
a1 skill_param raw 1
a2 skill_param raw 1

[factors]

[skills]
pi1 shift step=0 pre=O0 param=a1 effects=O0>O1
pi2 shift step=1 pre=O1 param=a2 effects=O1>O2

[goal]
gO gaussian members=O2 mean=0.5,0.0 cov=diag:0.01,0.01
"""


@pytest.fixture
def dependent_parallel():
    return parse_skeleton(DEPENDENT_PARALLEL)


@pytest.fixture
def independent_parallel():
    return parse_skeleton(INDEPENDENT_PARALLEL)


@pytest.fixture
def linear_chain():
    return parse_skeleton(LINEAR_CHAIN)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
