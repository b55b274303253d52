"""Spatial-temporal factor graph data model.

A plan is a sequence of state graphs chained by temporal skill factors.
Nodes are bounded real vectors (object poses, gripper poses, skill
parameters); spatial factors constrain nodes within a state; skill factors
connect precondition nodes, a parameter node, and fresh effect nodes across
states. Nodes untouched by any skill are aliased (one decision variable)
across states so the flattened decision vector stays minimal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Role",
    "Semantic",
    "FactorKind",
    "VariableNode",
    "SpatialFactorSpec",
    "SkillFactorSpec",
    "StateGraph",
    "GoalCondition",
    "PlanGraph",
    "GraphError",
    "Violation",
    "validate_symbolic",
    "apply_effects",
    "flatten",
]


class GraphError(Exception):
    """Structural problem in a plan graph (bad reference, cycle, conflict)."""


class Role(str, enum.Enum):
    OBJECT = "object"
    ROBOT = "robot"
    SKILL_PARAM = "skill_param"


class Semantic(str, enum.Enum):
    POSE2D = "pose2d"  # (x, y, cos, sin)
    POSE3D = "pose3d"  # (x, y, z, qw, qx, qy, qz)
    RAW = "raw"


SEMANTIC_DIMS = {Semantic.POSE2D: 4, Semantic.POSE3D: 7}


class FactorKind(str, enum.Enum):
    GRASPED = "grasped"
    ALIGNED = "aligned"
    FIXED_TRANSFORM = "fixed_transform"
    REACHABLE = "reachable"
    GAUSSIAN = "gaussian"
    CUSTOM = "custom"


@dataclass(frozen=True)
class VariableNode:
    id: str
    role: Role
    dim: int
    semantic: Semantic = Semantic.RAW
    bounds: np.ndarray | None = None  # shape (dim, 2), [lo, hi] rows

    def __post_init__(self):
        if self.dim <= 0:
            raise GraphError(f"node {self.id}: dim must be positive")
        expected = SEMANTIC_DIMS.get(self.semantic)
        if expected is not None and self.dim != expected:
            raise GraphError(
                f"node {self.id}: semantic {self.semantic.value} requires dim "
                f"{expected}, got {self.dim}"
            )
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (self.dim, 2):
                raise GraphError(f"node {self.id}: bounds shape must be ({self.dim}, 2)")
            if not np.all(b[:, 0] < b[:, 1]):
                raise GraphError(f"node {self.id}: bounds need lo < hi per dimension")
            object.__setattr__(self, "bounds", b)

    def rotation_slice(self) -> slice | None:
        """Index range of the rotation components within this node, if any."""
        if self.semantic is Semantic.POSE2D:
            return slice(2, 4)
        if self.semantic is Semantic.POSE3D:
            return slice(3, 7)
        return None


@dataclass(frozen=True)
class SpatialFactorSpec:
    id: str
    kind: FactorKind
    members: tuple[str, ...]
    params: dict = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if not self.members:
            raise GraphError(f"factor {self.id}: members must be non-empty")
        if self.weight < 0:
            raise GraphError(f"factor {self.id}: weight must be >= 0")
        object.__setattr__(self, "members", tuple(self.members))


@dataclass(frozen=True)
class SkillFactorSpec:
    id: str
    skill_name: str
    step: int  # transitions state `step` -> `step + 1`
    pre_nodes: tuple[str, ...]
    pre_factors: tuple[str, ...]
    param_node: str
    effect_map: dict[str, str]  # old node id -> fresh node id
    added_factors: tuple[str, ...] = ()
    removed_factors: tuple[str, ...] = ()
    model_ref: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pre_nodes", tuple(self.pre_nodes))
        object.__setattr__(self, "pre_factors", tuple(self.pre_factors))
        object.__setattr__(self, "added_factors", tuple(self.added_factors))
        object.__setattr__(self, "removed_factors", tuple(self.removed_factors))
        fresh = set(self.effect_nodes)
        if fresh & set(self.pre_nodes):
            raise GraphError(
                f"skill {self.id}: effect nodes must be fresh variables, "
                f"disjoint from pre_nodes"
            )

    @property
    def effect_nodes(self) -> tuple[str, ...]:
        return tuple(self.effect_map.values())

    @property
    def member_order(self) -> tuple[str, ...]:
        """Slot order used by this skill's score model."""
        return self.pre_nodes + (self.param_node,) + self.effect_nodes


@dataclass(frozen=True)
class StateGraph:
    index: int
    nodes: tuple[str, ...]
    factors: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True)
class GoalCondition:
    factors: tuple[SpatialFactorSpec, ...]
    residual_weights: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.residual_weights:
            object.__setattr__(self, "residual_weights", (1.0,) * len(self.factors))
        if len(self.residual_weights) != len(self.factors):
            raise GraphError("goal: residual_weights length must match factors")
        if any(w < 0 for w in self.residual_weights):
            raise GraphError("goal: residual_weights must be nonnegative")


@dataclass(frozen=True)
class Violation:
    skill: str
    missing: str
    detail: str = ""


@dataclass(frozen=True)
class PlanGraph:
    nodes: dict[str, VariableNode]
    states: tuple[StateGraph, ...]
    skills: tuple[SkillFactorSpec, ...]
    spatial_factors: dict[str, SpatialFactorSpec]
    external_constraints: tuple[SpatialFactorSpec, ...]
    goal: GoalCondition
    layout: dict[str, slice] = field(default_factory=dict)
    total_dim: int = 0

    def __post_init__(self):
        if not self.layout:
            lay, total = flatten(self)
            object.__setattr__(self, "layout", lay)
            object.__setattr__(self, "total_dim", total)

    @property
    def K(self) -> int:
        return len(self.states) - 1

    def node(self, node_id: str) -> VariableNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def factor(self, factor_id: str) -> SpatialFactorSpec:
        try:
            return self.spatial_factors[factor_id]
        except KeyError:
            raise GraphError(f"unknown factor id {factor_id!r}") from None

    def incident_skills(self, node_id: str) -> list[SkillFactorSpec]:
        out = []
        for sk in self.skills:
            if node_id in sk.pre_nodes or node_id in sk.effect_nodes:
                out.append(sk)
        return out

    def shared_nodes(self) -> dict[str, tuple[SkillFactorSpec, SkillFactorSpec]]:
        """Nodes where marginal compensation applies.

        A node is shared when it is the effect of at least one skill and is
        incident to a second temporal factor (as effect or precondition).
        Precondition-only fan-out (e.g. two parallel skills reading the same
        source node) gets no compensation, matching the worked dependent-chain
        expansion where the source node appears in both numerator factors but
        not in the denominator.
        """
        shared = {}
        effect_of = {n for sk in self.skills for n in sk.effect_nodes}
        for node_id in self.nodes:
            if node_id not in effect_of:
                continue
            inc = self.incident_skills(node_id)
            if len(inc) < 2:
                continue
            if len(inc) > 2:
                raise GraphError(
                    f"node {node_id} has {len(inc)} incident temporal factors; "
                    f"compensation requires exactly two"
                )
            shared[node_id] = (inc[0], inc[1])
        return shared

    def slices_of(self, node_ids) -> list[slice]:
        return [self.layout[n] for n in node_ids]

    def gather(self, x: np.ndarray, node_ids) -> list[np.ndarray]:
        """Slice per-node values out of a flat vector (or batch of vectors)."""
        return [x[..., self.layout[n]] for n in node_ids]


def flatten(plan: PlanGraph) -> tuple[dict[str, slice], int]:
    """Deterministic layout of the flattened decision vector.

    Order: state-graph nodes by first-appearance state index then lexicographic
    id, followed by skill parameter nodes in skill order. Aliased nodes get a
    single slice.
    """
    first_state: dict[str, int] = {}
    for sg in plan.states:
        for n in sg.nodes:
            first_state.setdefault(n, sg.index)
    param_ids = [sk.param_node for sk in plan.skills]
    ordered = sorted(first_state, key=lambda n: (first_state[n], n))
    ordered += [p for p in param_ids if p not in first_state]

    layout: dict[str, slice] = {}
    offset = 0
    for node_id in ordered:
        if node_id in layout:
            raise GraphError(f"node {node_id} appears twice in layout order")
        dim = plan.node(node_id).dim
        layout[node_id] = slice(offset, offset + dim)
        offset += dim
    missing = set(plan.nodes) - set(layout)
    if missing:
        raise GraphError(f"nodes never placed in any state or skill: {sorted(missing)}")
    return layout, offset


def validate_symbolic(plan: PlanGraph) -> list[Violation]:
    """Check that every skill's precondition is satisfied by its source state.

    Violations are data, not errors: each names the offending skill and the
    missing node/factor. Also flags nodes with more than two incident temporal
    factors, which would make compensation ill-defined.
    """
    violations: list[Violation] = []
    states_by_index = {sg.index: sg for sg in plan.states}
    for sk in plan.skills:
        src = states_by_index.get(sk.step)
        if src is None:
            violations.append(Violation(sk.id, f"state {sk.step}", "missing source state"))
            continue
        for n in sk.pre_nodes:
            if n not in src.nodes:
                violations.append(Violation(sk.id, n, f"node absent from state {sk.step}"))
        for f in sk.pre_factors:
            if f not in src.factors:
                violations.append(Violation(sk.id, f, f"factor inactive at state {sk.step}"))
    effect_counts: dict[str, int] = {}
    for sk in plan.skills:
        for n in sk.effect_nodes:
            effect_counts[n] = effect_counts.get(n, 0)
    for node_id in effect_counts:
        inc = plan.incident_skills(node_id)
        if len(inc) > 2:
            violations.append(
                Violation(
                    inc[-1].id,
                    node_id,
                    f"{len(inc)} incident temporal factors (max 2)",
                )
            )
    return violations


def apply_effects(
    state: StateGraph,
    skills: SkillFactorSpec | list[SkillFactorSpec],
    spatial_factors: dict[str, SpatialFactorSpec] | None = None,
) -> StateGraph:
    """Produce the next state graph from the union of the given skills' effects.

    Transitioned nodes are replaced by their fresh ids; untouched nodes are
    aliased unchanged; added factors are inserted and removed factors dropped.
    Order-independent for parallel skills; conflicting edits to the same factor
    id raise.
    """
    if isinstance(skills, SkillFactorSpec):
        skills = [skills]
    rename: dict[str, str] = {}
    added: list[str] = []
    removed: set[str] = set()
    edits: dict[str, str] = {}  # factor id -> "add"/"remove", conflict detection
    for sk in sorted(skills, key=lambda s: s.id):
        for old, new in sk.effect_map.items():
            if old in rename and rename[old] != new:
                raise GraphError(
                    f"parallel skills disagree on effect of node {old}: "
                    f"{rename[old]} vs {new}"
                )
            rename[old] = new
        for f in sk.added_factors:
            prev = edits.get(f)
            if prev == "remove":
                raise GraphError(f"conflicting edits to factor {f} from parallel skills")
            if prev != "add":
                added.append(f)
            edits[f] = "add"
        for f in sk.removed_factors:
            prev = edits.get(f)
            if prev == "add":
                raise GraphError(f"conflicting edits to factor {f} from parallel skills")
            edits[f] = "remove"
            removed.add(f)

    nodes = tuple(rename.get(n, n) for n in state.nodes)
    factors = [f for f in state.factors if f not in removed]
    factors += [f for f in added if f not in factors]
    if spatial_factors is not None:
        for f in added:
            if f not in spatial_factors:
                raise GraphError(f"added factor {f} is not declared")
    return StateGraph(index=state.index + 1, nodes=nodes, factors=tuple(factors))


def project_rotations(plan: PlanGraph, x: np.ndarray) -> np.ndarray:
    """Renormalize rotation components of every pose node in-place-safe.

    Works on a flat vector or a batch with the vector in the last axis.
    """
    out = np.array(x, copy=True)
    for node_id, sl in plan.layout.items():
        rot = plan.node(node_id).rotation_slice()
        if rot is None:
            continue
        start = sl.start + rot.start
        stop = sl.start + rot.stop
        block = out[..., start:stop]
        norm = np.linalg.norm(block, axis=-1, keepdims=True)
        np.maximum(norm, 1e-12, out=norm)
        out[..., start:stop] = block / norm
    return out


def isomorphic(a: PlanGraph, b: PlanGraph) -> bool:
    """Structural equality: same nodes, factors, skills, states, and layout."""
    if set(a.nodes) != set(b.nodes) or a.layout != b.layout:
        return False
    if len(a.states) != len(b.states) or len(a.skills) != len(b.skills):
        return False
    for sa, sb in zip(a.states, b.states):
        if sa != sb:
            return False
    for ka, kb in zip(a.skills, b.skills):
        if ka != kb:
            return False
    if set(a.spatial_factors) != set(b.spatial_factors):
        return False
    return True
