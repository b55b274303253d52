"""Benchmark scenario builders for the planar bimanual world.

Each scenario bundles a plan skeleton (variable nodes, skill factors, reach
and clamp factors, external constraints, goal factors), an initial
WorldState, a world-level goal, per-skill executor bindings, and analytic
KinematicSkillModel score models. The skill models score annealed kinematic
residuals: eps = sigma / (s^2 + sigma^2) * J^T r, with closed-form pose2d
Jacobians, so scenarios can be planned without any learned network.

Initial-state nodes are clamped to the trial's world values by tight
Gaussian factors; gripper nodes carry reach-disc factors with a small
margin below the executors' true reach so sampled waypoints survive
execution noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factors import build_factor_model, compose_pose2d, rel_pose2d
from .graph import PlanGraph
from .scores import ConfigurationError, ScoreModel, active_spatial_factors
from .skeleton import parse_skeleton
from .world import (
    ArmSpec,
    FlagGoal,
    ObjectState,
    PoseGoal,
    POUR_OFFSET,
    RelPoseGoal,
    WorldGoal,
    WorldState,
)

__all__ = [
    "SCENARIO_NAMES",
    "KinematicSkillModel",
    "SkillBinding",
    "Scenario",
    "build_scenario",
]

SCENARIO_NAMES = (
    "handover_place",
    "align_strike",
    "pour",
    "bimanual_reorient",
    "hook_push",
    "extended_v1",
    "extended_v2",
    "extended_v3",
    "inconsistent_handover",
)

# Residual scales (see module docstring) and planning-time reach margin.
S_KIN = 0.008      # hard kinematic consistency residuals
S_SITE = 0.01      # grasp-site priors
S_WEAK = 0.5       # weak priors on otherwise-free scalars
REACH_PLAN = 0.53  # plan-time reach-disc radius (executors allow 0.55)
CLAMP_COV = 1e-4   # variance pinning initial-state nodes to world values

LEFT_BASE = (-0.5, 0.0)
RIGHT_BASE = (0.5, 0.0)
ARM_REACH = 0.55
GRIPPER_INIT = {
    "left": np.array([-0.5, 0.2, 1.0, 0.0]),
    "right": np.array([0.5, 0.2, 1.0, 0.0]),
}


# --------------------------------------------------------------- pose algebra


def _compose_jac(a, b):
    """Pose2d composition with Jacobians w.r.t. both inputs.

    Returns (out, Ja, Jb) where out has shape (..., 4) and the Jacobians
    (..., 4, 4). Rotations are treated as free (cos, sin) pairs, so every
    entry is exact without a unit-norm assumption.
    """
    ax, ay, ca, sa = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, cb, sb = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.stack(
        [ax + ca * bx - sa * by, ay + sa * bx + ca * by,
         ca * cb - sa * sb, sa * cb + ca * sb], axis=-1)
    Ja = np.zeros(out.shape + (4,))
    Ja[..., 0, 0] = 1.0
    Ja[..., 0, 2] = bx
    Ja[..., 0, 3] = -by
    Ja[..., 1, 1] = 1.0
    Ja[..., 1, 2] = by
    Ja[..., 1, 3] = bx
    Ja[..., 2, 2] = cb
    Ja[..., 2, 3] = -sb
    Ja[..., 3, 2] = sb
    Ja[..., 3, 3] = cb
    Jb = np.zeros(out.shape + (4,))
    Jb[..., 0, 0] = ca
    Jb[..., 0, 1] = -sa
    Jb[..., 1, 0] = sa
    Jb[..., 1, 1] = ca
    Jb[..., 2, 2] = ca
    Jb[..., 2, 3] = -sa
    Jb[..., 3, 2] = sa
    Jb[..., 3, 3] = ca
    return out, Ja, Jb


def _inv_jac(a):
    """Pose2d inverse (unit-rotation form) with its Jacobian."""
    ax, ay, ca, sa = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    out = np.stack([-(ca * ax + sa * ay), sa * ax - ca * ay, ca, -sa], axis=-1)
    J = np.zeros(out.shape + (4,))
    J[..., 0, 0] = -ca
    J[..., 0, 1] = -sa
    J[..., 0, 2] = -ax
    J[..., 0, 3] = -ay
    J[..., 1, 0] = sa
    J[..., 1, 1] = -ca
    J[..., 1, 2] = -ay
    J[..., 1, 3] = ax
    J[..., 2, 2] = 1.0
    J[..., 3, 3] = -1.0
    return out, J


class _PV:
    """A batched pose value with accumulated Jacobians per leaf slot."""

    __slots__ = ("v", "J")

    def __init__(self, v, J):
        self.v = v
        self.J = J  # slot index -> (..., 4, 4)


def _leaf(values, slot):
    v = values[slot]
    eye = np.broadcast_to(np.eye(4), v.shape + (4,))
    return _PV(v, {slot: eye})


def _const(v, like):
    v = np.broadcast_to(np.asarray(v, dtype=float), like.shape)
    return _PV(v, {})


def _chain(Jf, J):
    return {s: Jf @ Jx for s, Jx in J.items()}


def _merge(Ja, Jb):
    out = dict(Ja)
    for s, Jx in Jb.items():
        out[s] = out[s] + Jx if s in out else Jx
    return out


def _pcompose(a: _PV, b: _PV) -> _PV:
    out, Ja, Jb = _compose_jac(a.v, b.v)
    return _PV(out, _merge(_chain(Ja, a.J), _chain(Jb, b.J)))


def _pinv(a: _PV) -> _PV:
    out, J = _inv_jac(a.v)
    return _PV(out, _chain(J, a.J))


def _prel(a: _PV, b: _PV) -> _PV:
    return _pcompose(_pinv(a), b)


def _pdiff(a: _PV, b: _PV, rows: slice | None = None):
    """Residual a - b with Jacobians, optionally restricted to output rows."""
    r = a.v - b.v
    J = _merge(a.J, {s: -Jx for s, Jx in b.J.items()})
    if rows is not None:
        r = r[..., rows]
        J = {s: Jx[..., rows, :] for s, Jx in J.items()}
    return r, J


_ROW_POS = np.zeros((2, 4))
_ROW_POS[0, 0] = _ROW_POS[1, 1] = 1.0
_ROW_ROT = np.zeros((2, 4))
_ROW_ROT[0, 2] = _ROW_ROT[1, 3] = 1.0


# --------------------------------------------------------------- skill models


class KinematicSkillModel(ScoreModel):
    """Analytic skill score from annealed kinematic residuals.

    `residual_fn(values)` yields (r, {slot: J}, scale) triples where r has
    shape (..., k) and each J (..., k, dim_slot). The model scores
    eps_slot = sum_r sigma / (scale^2 + sigma^2) * J^T r. Marginal heads are
    diagonal workspace-Gaussian surrogates per slot.
    """

    def __init__(self, member_dims, residual_fn, marginals=None,
                 r_max: float = 1.0, eps_max: float = 4.0):
        self.member_dims = tuple(member_dims)
        self.residual_fn = residual_fn
        self.marginals = dict(marginals or {})
        self.r_max = r_max
        self.eps_max = eps_max

    @staticmethod
    def _clip(x, bound):
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        return x * np.minimum(1.0, bound / np.maximum(norm, 1e-12))

    def eval(self, values, t, sigma):
        values = [np.asarray(v, dtype=float) for v in values]
        self.check_slots(values)
        out = [np.zeros_like(v) for v in values]
        for r, J, scale in self.residual_fn(values):
            # saturate large residuals so the quartic composition energy
            # cannot overpower the fixed-step integrator at high noise
            r = self._clip(r, self.r_max)
            k = sigma / (scale * scale + sigma * sigma)
            for slot, Jx in J.items():
                out[slot] += k * np.einsum("...ki,...k->...i", Jx, r)
        return [self._clip(o, self.eps_max) for o in out]

    def residual_norm(self, values):
        """Sum of squared scale-normalized residuals; the candidate-ranking key."""
        values = [np.asarray(v, dtype=float) for v in values]
        total = 0.0
        for r, _, scale in self.residual_fn(values):
            total = total + np.sum((r / scale) ** 2, axis=-1)
        return total

    def marginal_eval(self, subset, values, t, sigma):
        # broad, saturated workspace surrogates: the compensation term must
        # never outgrow the (clipped) kinematic attraction on shared nodes
        out = []
        for slot, v in zip(subset, values):
            mean, var = self.marginals.get(slot, self._default_marginal(slot))
            dev = self._clip(v - mean, 1.0)
            out.append(sigma * dev / (var + sigma * sigma))
        return out

    def _default_marginal(self, slot):
        d = self.member_dims[slot]
        if d == 4:
            return np.zeros(4), np.full(4, 4.0)
        return np.full(d, 0.5), np.full(d, 4.0)


def _site_prior(values, q_slot, sites, scale=S_SITE):
    """Pull the grasp parameter's position toward its nearest grasp site."""
    q = values[q_slot]
    sites = np.asarray(sites, dtype=float)
    d2 = np.sum((q[..., None, :2] - sites) ** 2, axis=-1)
    nearest = sites[np.argmin(d2, axis=-1)]
    r = q[..., :2] - nearest
    J = np.broadcast_to(_ROW_POS, r.shape + (4,))
    return r, {q_slot: J}, scale


def _hinge(value, J, lo, scale):
    """Residual max(0, lo - value) for scalar constraints value >= lo."""
    r = np.minimum(value - lo, 0.0)
    mask = (r < 0.0).astype(float)
    return r[..., None], {s: (mask[..., None, None] * Jx[..., None, :])
                          for s, Jx in J.items()}, scale


def make_pick_model(sites, rot_pin=None):
    """Slots: (G_prev, O, q, G_new); G_new = O o q plus grasp-site prior."""

    def fn(values):
        O = _leaf(values, 1)
        q = _leaf(values, 2)
        Gn = _leaf(values, 3)
        r1, J1 = _pdiff(Gn, _pcompose(O, q))
        yield r1, J1, S_KIN
        yield _site_prior(values, 2, sites)
        if rot_pin is not None:
            r = values[2][..., 2:4] - np.asarray(rot_pin, dtype=float)
            yield r, {2: np.broadcast_to(_ROW_ROT, r.shape + (4,))}, S_SITE

    return KinematicSkillModel((4, 4, 4, 4), fn)


def make_regrasp_model(sites):
    """Slots: (G_prev, O, q, G_new, O_new); object pose carried unchanged."""

    def fn(values):
        O = _leaf(values, 1)
        q = _leaf(values, 2)
        Gn = _leaf(values, 3)
        On = _leaf(values, 4)
        r1, J1 = _pdiff(Gn, _pcompose(O, q))
        yield r1, J1, S_KIN
        r2, J2 = _pdiff(On, O)
        yield r2, J2, S_KIN
        yield _site_prior(values, 2, sites)

    return KinematicSkillModel((4, 4, 4, 4, 4), fn)


def make_move_model():
    """Slots: (G, O, p, G_new, O_new); gripper goes to p, grasp preserved."""

    def fn(values):
        G, O = _leaf(values, 0), _leaf(values, 1)
        p = _leaf(values, 2)
        Gn, On = _leaf(values, 3), _leaf(values, 4)
        r1, J1 = _pdiff(Gn, p)
        yield r1, J1, S_KIN
        r2, J2 = _pdiff(_prel(Gn, On), _prel(G, O))
        yield r2, J2, S_KIN

    return KinematicSkillModel((4, 4, 4, 4, 4), fn)


def make_move_free_model():
    """Slots: (G, p, G_new); an unconstrained gripper relocation."""

    def fn(values):
        r1, J1 = _pdiff(_leaf(values, 2), _leaf(values, 1))
        yield r1, J1, S_KIN

    return KinematicSkillModel((4, 4, 4), fn)


def make_track_move_model():
    """Slots: (G, O_ref, O_new, p, G_new); keeps rel(O, G) while O is renamed
    by a parallel chain -- the dependent bimanual coordination skill."""

    def fn(values):
        G, Oref, On = _leaf(values, 0), _leaf(values, 1), _leaf(values, 2)
        p, Gn = _leaf(values, 3), _leaf(values, 4)
        r1, J1 = _pdiff(Gn, p)
        yield r1, J1, S_KIN
        r2, J2 = _pdiff(_prel(On, Gn), _prel(Oref, G))
        yield r2, J2, S_KIN

    return KinematicSkillModel((4, 4, 4, 4, 4), fn)


def make_place_model():
    """Slots: (G, O, p, G_new, O_new); object lands at p, grasp preserved."""

    def fn(values):
        G, O = _leaf(values, 0), _leaf(values, 1)
        p = _leaf(values, 2)
        Gn, On = _leaf(values, 3), _leaf(values, 4)
        r1, J1 = _pdiff(On, p)
        yield r1, J1, S_KIN
        r2, J2 = _pdiff(_prel(On, Gn), _prel(O, G))
        yield r2, J2, S_KIN

    return KinematicSkillModel((4, 4, 4, 4, 4), fn)


def make_strike_model(head_offset):
    """Slots: (G, O_tool, N, s, N_new); tail grasp + head-on-nail residuals."""
    head = np.array([head_offset[0], head_offset[1], 1.0, 0.0])

    def fn(values):
        G = _leaf(values, 0)
        O = _leaf(values, 1)
        N = _leaf(values, 2)
        Nn = _leaf(values, 4)
        r1, J1 = _pdiff(Nn, N)
        yield r1, J1, S_KIN
        grip = _prel(O, G)  # gripper in the tool frame
        yield _hinge(grip.v[..., 0], {s: Jx[..., 0, :] for s, Jx in grip.J.items()},
                     0.04, S_SITE)
        head_pose = _pcompose(O, _const(head, O.v))
        r3, J3 = _pdiff(head_pose, N, rows=slice(0, 2))
        yield r3, J3, S_KIN
        r4 = values[3] - 0.5
        yield r4, {3: np.ones(r4.shape + (1,))}, S_WEAK

    return KinematicSkillModel((4, 4, 4, 1, 4), fn)


def make_pour_model():
    """Slots: (O_cup, B, s, B_new); cup held at the pour offset over B."""
    offset = POUR_OFFSET.copy()

    def fn(values):
        O = _leaf(values, 0)
        B = _leaf(values, 1)
        Bn = _leaf(values, 3)
        r1, J1 = _pdiff(Bn, B)
        yield r1, J1, S_KIN
        r2, J2 = _pdiff(_prel(B, O), _const(offset, O.v))
        yield r2, J2, S_KIN
        r3 = values[2] - 0.5
        yield r3, {2: np.ones(r3.shape + (1,))}, S_WEAK

    return KinematicSkillModel((4, 4, 1, 4), fn)


def make_pull_model(base, stroke=0.25):
    """Slots: (O, u, O_new) with u = (x, y, r, theta); radial pull to base."""
    base = np.asarray(base, dtype=float)

    def fn(values):
        O, u, On = values[0], values[1], values[2]
        r_len, theta = u[..., 2], u[..., 3]
        ct, st = np.cos(theta), np.sin(theta)
        disp = np.stack([r_len * ct, r_len * st], axis=-1)
        # displaced object position
        r1 = On[..., :2] - O[..., :2] - disp
        Ju = np.zeros(r1.shape + (4,))
        Ju[..., 0, 2] = -ct
        Ju[..., 0, 3] = r_len * st
        Ju[..., 1, 2] = -st
        Ju[..., 1, 3] = -r_len * ct
        Jpos = np.broadcast_to(_ROW_POS, r1.shape + (4,))
        yield r1, {2: Jpos, 0: -Jpos, 1: Ju}, S_KIN
        # rotation unchanged
        r2 = On[..., 2:4] - O[..., 2:4]
        Jrot = np.broadcast_to(_ROW_ROT, r2.shape + (4,))
        yield r2, {2: Jrot, 0: -Jrot}, S_KIN
        # hook placed on the object
        r3 = u[..., :2] - O[..., :2]
        yield r3, {1: Jpos, 0: -Jpos}, 0.03
        # displacement keeps a positive component toward the arm base
        toward = base - O[..., :2]
        unit = toward / np.maximum(np.linalg.norm(toward, axis=-1, keepdims=True),
                                   1e-9)
        proj = disp[..., 0] * unit[..., 0] + disp[..., 1] * unit[..., 1]
        Jp = np.zeros(proj.shape + (4,))
        Jp[..., 2] = ct * unit[..., 0] + st * unit[..., 1]
        Jp[..., 3] = r_len * (-st * unit[..., 0] + ct * unit[..., 1])
        yield _hinge(proj, {1: Jp}, 0.06, 0.02)
        # stroke-length prior: split long hauls across consecutive pulls
        r5 = (r_len - stroke)[..., None]
        Jr = np.zeros(r5.shape + (4,))
        Jr[..., 0, 2] = 1.0
        yield r5, {1: Jr}, 0.1

    return KinematicSkillModel((4, 4, 4), fn)


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class SkillBinding:
    """How one skill factor is realized by the world executor."""

    skill_id: str
    executor: str          # execute_skill name
    arm: str
    obj: str
    param_node: str
    # direct: parameters executed as planned; grasp_track: the parameter is a
    # grasp offset in the object frame; object_track: the gripper target is
    # anchored to the executed object pose via the planned relative transform
    mode: str = "direct"


@dataclass
class Scenario:
    name: str
    plan: PlanGraph
    models: dict[str, ScoreModel]
    world: WorldState
    goal: WorldGoal
    bindings: tuple[SkillBinding, ...]
    node_sources: dict[str, tuple[str, str]]  # node -> ("gripper"|"object", id)
    metadata: dict = field(default_factory=dict)


def _fmt(vals) -> str:
    return ",".join(f"{float(v):.9g}" for v in np.asarray(vals).ravel())


class _PlanBuilder:
    """Accumulates skeleton text, models, and bindings for chain scenarios."""

    def __init__(self, world: WorldState, obj_id: str):
        self.world = world
        self.obj_id = obj_id
        self.nodes: list[str] = []
        self.factors: list[str] = []
        self.skills: list[str] = []
        self.constraints: list[str] = []
        self.goal_lines: list[str] = []
        self.models: dict[str, ScoreModel] = {}
        self.bindings: list[SkillBinding] = []
        self.node_sources: dict[str, tuple[str, str]] = {}
        self.step = 0
        self.n_param = 0
        self.n_factor = 0
        self.grip: dict[str, str] = {}
        self.grip_count = {"left": 0, "right": 0}
        for arm in ("left", "right"):
            node = f"G_{arm[0].upper()}0"
            self.grip[arm] = node
            self._node(node, "robot", "pose2d", 4)
            self.node_sources[node] = ("gripper", arm)
            self._clamp(node, world.arm(arm).gripper)
        self.obj_node = "O0"
        self.obj_count = 0
        self._node("O0", "object", "pose2d", 4)
        self.node_sources["O0"] = ("object", obj_id)
        self._clamp("O0", world.obj(obj_id).pose)

    # -- low-level emitters
    def _node(self, nid, role, semantic, dim):
        self.nodes.append(f"{nid} {role} {semantic} {dim}")

    def _clamp(self, nid, value):
        fid = self._fid("clamp")
        self.factors.append(
            f"{fid} gaussian state=0 members={nid} mean={_fmt(value)} "
            f"cov=diag:{_fmt([CLAMP_COV] * 4)}"
        )

    def _fid(self, stem):
        self.n_factor += 1
        return f"f_{stem}{self.n_factor}"

    def _param(self, semantic="pose2d", dim=4):
        self.n_param += 1
        nid = f"a{self.n_param}"
        self._node(nid, "skill_param", semantic, dim)
        return nid

    def _reach(self, node, arm, radius=REACH_PLAN, weight=4.0):
        base = LEFT_BASE if arm == "left" else RIGHT_BASE
        fid = self._fid("reach")
        self.factors.append(
            f"{fid} reachable state=0 members={node} center={_fmt(base)} "
            f"radius={radius} weight={weight}"
        )

    def _new_grip(self, arm):
        self.grip_count[arm] += 1
        nid = f"G_{arm[0].upper()}{self.grip_count[arm]}"
        self._node(nid, "robot", "pose2d", 4)
        self.node_sources[nid] = ("gripper", arm)
        self._reach(nid, arm)
        return nid

    def _new_obj(self, obj_id=None, stem="O"):
        self.obj_count += 1
        nid = f"{stem}{self.obj_count}"
        self._node(nid, "object", "pose2d", 4)
        self.node_sources[nid] = ("object", obj_id or self.obj_id)
        return nid

    def _skill(self, name, pre, param, effects, model, executor, arm,
               obj=None, mode="direct"):
        self.step += 1
        sid = f"s{self.step:02d}"
        eff = ",".join(f"{o}>{n}" for o, n in effects)
        self.skills.append(
            f"{sid} {name} step={self.step - 1} pre={','.join(pre)} "
            f"param={param} effects={eff}"
        )
        self.models[sid] = model
        self.bindings.append(SkillBinding(sid, executor, arm,
                                          obj or self.obj_id, param, mode))
        return sid

    # -- skill ops
    def op_move_free(self, arm):
        g = self.grip[arm]
        p = self._param()
        self._reach(p, arm)
        gn = self._new_grip(arm)
        self._skill("move_free", (g,), p, ((g, gn),), make_move_free_model(),
                    "move", arm)
        self.grip[arm] = gn

    def op_pick(self, arm, sites, rot_pin=None):
        g = self.grip[arm]
        q = self._param()
        gn = self._new_grip(arm)
        self._skill("pick", (g, self.obj_node), q, ((g, gn),),
                    make_pick_model(sites, rot_pin), "pick", arm)
        self.grip[arm] = gn

    def op_regrasp(self, arm, sites):
        g = self.grip[arm]
        q = self._param()
        gn = self._new_grip(arm)
        on = self._new_obj()
        self._skill("regrasp", (g, self.obj_node), q, ((g, gn),
                    (self.obj_node, on)), make_regrasp_model(sites),
                    "regrasp", arm)
        self.grip[arm] = gn
        self.obj_node = on

    def op_move(self, arm):
        g = self.grip[arm]
        p = self._param()
        self._reach(p, arm)
        gn = self._new_grip(arm)
        on = self._new_obj()
        self._skill("move", (g, self.obj_node), p, ((g, gn),
                    (self.obj_node, on)), make_move_model(), "move", arm)
        self.grip[arm] = gn
        self.obj_node = on

    def op_place(self, arm):
        g = self.grip[arm]
        p = self._param()
        self._reach(p, arm)
        gn = self._new_grip(arm)
        on = self._new_obj()
        self._skill("place", (g, self.obj_node), p, ((g, gn),
                    (self.obj_node, on)), make_place_model(), "place", arm)
        self.grip[arm] = gn
        self.obj_node = on

    def op_pull(self, arm, stroke=0.25):
        u = self._param("raw", 4)
        on = self._new_obj()
        base = LEFT_BASE if arm == "left" else RIGHT_BASE
        self._skill("pull", (self.obj_node,), u, ((self.obj_node, on),),
                    make_pull_model(base, stroke), "pull", arm)
        self.obj_node = on

    # -- extra objects, constraints, goal
    def add_static_object(self, node, obj_id, pose):
        self._node(node, "object", "pose2d", 4)
        self.node_sources[node] = ("object", obj_id)
        self._clamp(node, pose)

    def add_hint_reachable(self, node, center, radius, weight=4.0):
        fid = self._fid("hint")
        self.factors.append(
            f"{fid} reachable state=0 members={node} center={_fmt(center)} "
            f"radius={radius} weight={weight}"
        )
        return fid

    def add_constraint(self, line):
        self.constraints.append(line)

    def add_goal_gaussian(self, node, mean, cov_diag, mirror=True, rweight=1.0):
        gid = self._fid("goal")
        body = (f"gaussian members={node} mean={_fmt(mean)} "
                f"cov=diag:{_fmt(cov_diag)}")
        self.goal_lines.append(f"{gid} {body} rweight={rweight}")
        if mirror:
            self.constraints.append(f"{gid}c {body}")

    def add_goal_transform(self, node_a, node_b, admissible, mirror=True,
                           rweight=1.0):
        gid = self._fid("goal")
        body = (f"fixed_transform members={node_a},{node_b} "
                f"admissible={_fmt(admissible)}")
        self.goal_lines.append(f"{gid} {body} rweight={rweight}")
        if mirror:
            self.constraints.append(f"{gid}c {body}")

    def build(self, name, goal, metadata=None) -> Scenario:
        text = "\n".join(
            ["[nodes]"] + self.nodes
            + ["[factors]"] + self.factors
            + ["[skills]"] + self.skills
            + ["[constraints]"] + self.constraints
            + ["[goal]"] + self.goal_lines
        ) + "\n"
        plan = parse_skeleton(text)
        models = dict(self.models)
        for spec in active_spatial_factors(plan) + list(plan.external_constraints):
            if spec.weight > 0 and spec.id not in models:
                models[spec.id] = build_factor_model(spec)
        return Scenario(
            name=name, plan=plan, models=models, world=self.world, goal=goal,
            bindings=tuple(self.bindings), node_sources=dict(self.node_sources),
            metadata=dict(metadata or {}),
        )


# ------------------------------------------------------- world randomization


def _arms():
    return (
        ArmSpec("left", LEFT_BASE, ARM_REACH, GRIPPER_INIT["left"].copy()),
        ArmSpec("right", RIGHT_BASE, ARM_REACH, GRIPPER_INIT["right"].copy()),
    )


def _sample_disc(rng, base, r_lo, r_hi, x_lo=None, x_hi=None, y_abs=0.3):
    for _ in range(200):
        ang = rng.uniform(-np.pi, np.pi)
        rad = rng.uniform(r_lo, r_hi)
        x = base[0] + rad * np.cos(ang)
        y = base[1] + rad * np.sin(ang)
        if abs(y) > y_abs:
            continue
        if x_lo is not None and x < x_lo:
            continue
        if x_hi is not None and x > x_hi:
            continue
        return np.array([x, y])
    raise RuntimeError("region sampling failed")


def _rand_rot(rng):
    a = rng.uniform(-np.pi, np.pi)
    return np.cos(a), np.sin(a)


def _pose_at(pos, rot=(1.0, 0.0)):
    return np.array([pos[0], pos[1], rot[0], rot[1]])


DEFAULT_SITES = ((0.0, 0.0), (0.06, 0.0), (-0.06, 0.0))
HAMMER_SITES = ((-0.05, 0.0), (0.05, 0.0), (0.12, 0.0))
HAMMER_TAIL_SITES = ((0.05, 0.0), (0.12, 0.0))
HAMMER_HEAD = (-0.15, 0.0)
POT_SITES = ((0.08, 0.0), (-0.08, 0.0))
GOAL_POS_COV = 2e-4
GOAL_ROT_LOOSE = 25.0
BAND_CENTER = (0.0, 0.0)
BAND_RADIUS = 0.05


def _handover_like(rng, *, hint: bool, name: str, extra_pad: int = 0,
                   double: bool = False, interleave: bool = False) -> Scenario:
    """Right arm fetches the item, hands it over, left (or right) places it."""
    start = _sample_disc(rng, RIGHT_BASE, 0.15, 0.42, x_lo=0.2)
    item = ObjectState("item", _pose_at(start, _rand_rot(rng)), 0.04,
                       grasp_sites=DEFAULT_SITES)
    if double:
        goal_pos = _sample_disc(rng, RIGHT_BASE, 0.15, 0.42, x_lo=0.2)
    else:
        goal_pos = _sample_disc(rng, LEFT_BASE, 0.15, 0.42, x_hi=-0.2)
    world = WorldState(arms=_arms(), objects=(item,))

    b = _PlanBuilder(world, "item")
    b.op_move_free("right")
    b.op_pick("right", DEFAULT_SITES)
    b.op_move("right")
    if hint:
        b.add_hint_reachable(b.obj_node, BAND_CENTER, BAND_RADIUS)
    if interleave:
        # a task-irrelevant step between the handover move and the regrasp,
        # so the sequentially dependent steps are no longer adjacent
        b.op_move_free("left")
    b.op_regrasp("left", DEFAULT_SITES)
    b.op_move_free("right")
    if double:
        b.op_move("left")
        if hint:
            b.add_hint_reachable(b.obj_node, BAND_CENTER, BAND_RADIUS)
        b.op_regrasp("right", DEFAULT_SITES)
        b.op_move_free("left")
        b.op_move("right")
        b.op_place("right")
        final_arm = "right"
    else:
        b.op_move("left")
        b.op_place("left")
        final_arm = "left"
    b.op_move_free(final_arm)
    for i in range(extra_pad):
        b.op_move_free("left" if i % 2 == 0 else "right")

    goal_mean = _pose_at(goal_pos)
    b.add_goal_gaussian(
        b.obj_node, goal_mean,
        (GOAL_POS_COV, GOAL_POS_COV, GOAL_ROT_LOOSE, GOAL_ROT_LOOSE),
    )
    goal = WorldGoal([PoseGoal("item", goal_mean, rot_matters=False)])
    return b.build(name, goal)


def _align_strike(rng) -> Scenario:
    start = _sample_disc(rng, RIGHT_BASE, 0.15, 0.4, x_lo=0.2)
    nail_pos = _sample_disc(rng, LEFT_BASE, 0.1, 0.35, x_hi=-0.3, y_abs=0.2)
    hammer = ObjectState("hammer", _pose_at(start, _rand_rot(rng)), 0.04,
                         grasp_sites=HAMMER_SITES, head_offset=HAMMER_HEAD)
    nail = ObjectState("nail", _pose_at(nail_pos), 0.015)
    world = WorldState(arms=_arms(), objects=(hammer, nail))

    b = _PlanBuilder(world, "hammer")
    b.add_static_object("N0", "nail", nail.pose)
    b.op_move_free("left")
    b.op_move_free("right")
    b.op_pick("right", HAMMER_SITES)
    b.op_move("right")
    b.op_move("right")
    b.add_hint_reachable(b.obj_node, BAND_CENTER, BAND_RADIUS)
    b.op_regrasp("left", HAMMER_TAIL_SITES)
    b.op_move_free("right")
    b.op_move("left")
    b.op_move("left")
    b.op_move_free("right")
    # terminal strike: nail node renamed, alignment scored kinematically
    s = b._param("raw", 1)
    n1 = b._new_obj("nail", stem="N")
    b._skill("strike", (b.grip["left"], b.obj_node, "N0"), s, (("N0", n1),),
             make_strike_model(HAMMER_HEAD), "strike", "left", obj="nail")

    tool_goal = _pose_at(nail_pos + np.array([-HAMMER_HEAD[0], -HAMMER_HEAD[1]]))
    b.add_goal_gaussian(b.obj_node, tool_goal,
                        (GOAL_POS_COV, GOAL_POS_COV, 1e-2, 1e-2))
    goal = WorldGoal([FlagGoal("nail", "struck")])
    return b.build("align_strike", goal)


def _pour(rng) -> Scenario:
    recv_pos = _sample_disc(rng, RIGHT_BASE, 0.12, 0.3, y_abs=0.2)
    while True:
        cup_pos = _sample_disc(rng, RIGHT_BASE, 0.15, 0.4)
        if np.linalg.norm(cup_pos - recv_pos) > 0.2:
            break
    cup_b = ObjectState("cup_b", _pose_at(recv_pos), 0.04,
                        grasp_sites=((0.0, 0.0),))
    cup_a = ObjectState("cup_a", _pose_at(cup_pos, _rand_rot(rng)), 0.04,
                        grasp_sites=((0.0, 0.0),))
    world = WorldState(arms=_arms(), objects=(cup_b, cup_a))

    b = _PlanBuilder(world, "cup_a")
    b.add_static_object("B0", "cup_b", cup_b.pose)
    b.op_move_free("right")
    b.op_pick("right", ((0.0, 0.0),))
    b.op_move("right")
    s = b._param("raw", 1)
    b1 = b._new_obj("cup_b", stem="B")
    b._skill("pour", (b.obj_node, "B0"), s, (("B0", b1),), make_pour_model(),
             "pour", "right", obj="cup_b")
    b.add_goal_transform("B0", b.obj_node, POUR_OFFSET)
    goal = WorldGoal([
        FlagGoal("cup_b", "filled"),
        RelPoseGoal("cup_b", "cup_a", POUR_OFFSET, rot_tol=np.deg2rad(25.0)),
    ])
    return b.build("pour", goal)


def _bimanual_reorient(rng, angle_deg: float) -> Scenario:
    pot_pos = _sample_disc(rng, (0.0, 0.1), 0.0, 0.03, y_abs=0.25)
    pot = ObjectState("pot", _pose_at(pot_pos), 0.03, grasp_sites=POT_SITES)
    world = WorldState(arms=_arms(), objects=(pot,))
    theta = np.deg2rad(angle_deg)
    target = np.array([pot_pos[0], pot_pos[1], np.cos(theta), np.sin(theta)])

    b = _PlanBuilder(world, "pot")
    b.op_pick("right", (POT_SITES[0],), rot_pin=(1.0, 0.0))
    # left "grasp" is virtual: the gripper tracks its site without holding
    g = b.grip["left"]
    q = b._param()
    gl1 = b._new_grip("left")
    b._skill("pick", (g, "O0"), q, ((g, gl1),),
             make_pick_model((POT_SITES[1],), rot_pin=(1.0, 0.0)),
             "move", "left", mode="grasp_track")
    b.grip["left"] = gl1
    gr1 = b.grip["right"]
    b.op_move("right")
    o1 = b.obj_node
    # left tracks the shared pot node renamed by the right arm's move
    p = b._param()
    gl2 = b._new_grip("left")
    b._skill("track_move", (gl1, "O0", o1), p, ((gl1, gl2),),
             make_track_move_model(), "move", "left", mode="object_track")
    b.grip["left"] = gl2
    gr2 = b.grip["right"]

    mu_rel = compose_pose2d(
        np.array([-POT_SITES[0][0], -POT_SITES[0][1], 1.0, 0.0]),
        np.array([POT_SITES[1][0], POT_SITES[1][1], 1.0, 0.0]))
    b.add_constraint(
        f"mu2 fixed_transform members={gr2},{gl2} admissible={_fmt(mu_rel)}")
    b.add_goal_gaussian(o1, target, (GOAL_POS_COV, GOAL_POS_COV, 9e-4, 9e-4))
    goal = WorldGoal([PoseGoal("pot", target)])
    return b.build(
        "bimanual_reorient", goal,
        metadata={
            "angle_deg": angle_deg,
            "grip_pair_pick": (gr1, gl1),
            "grip_pair_move": (gr2, gl2),
        },
    )


def _hook_push(rng) -> Scenario:
    pos = np.array([rng.uniform(0.78, 0.9), rng.uniform(-0.12, 0.12)])
    item = ObjectState("item", _pose_at(pos, _rand_rot(rng)), 0.04,
                       grasp_sites=DEFAULT_SITES)
    world = WorldState(arms=_arms(), objects=(item,))
    toward = np.array(RIGHT_BASE) - pos
    goal_pos = pos + 0.45 * toward / np.linalg.norm(toward)

    b = _PlanBuilder(world, "item")
    b.op_pull("right")
    b.op_pull("right")
    b.add_goal_gaussian(
        b.obj_node, _pose_at(goal_pos),
        (GOAL_POS_COV, GOAL_POS_COV, GOAL_ROT_LOOSE, GOAL_ROT_LOOSE))
    goal = WorldGoal([PoseGoal("item", _pose_at(goal_pos), rot_matters=False)])
    return b.build("hook_push", goal)


def build_scenario(name: str, rng=None, seed: int = 0, **options) -> Scenario:
    """Construct a randomized scenario instance by name.

    Options: `angle_deg` (bimanual_reorient target rotation, default 30).
    Unknown names or options raise ConfigurationError.
    """
    if name not in SCENARIO_NAMES:
        raise ConfigurationError(f"unknown scenario {name!r}; "
                                 f"choose from {SCENARIO_NAMES}")
    angle = options.pop("angle_deg", 30.0)
    if options:
        raise ConfigurationError(f"unknown scenario option(s) {sorted(options)}")
    rng = np.random.default_rng(seed) if rng is None else rng
    if name == "handover_place":
        return _handover_like(rng, hint=True, name=name)
    if name == "inconsistent_handover":
        return _handover_like(rng, hint=True, name=name, interleave=True)
    if name == "extended_v1":
        return _handover_like(rng, hint=True, name=name, double=True,
                              extra_pad=5)
    if name == "extended_v2":
        return _handover_like(rng, hint=True, name=name, double=True,
                              extra_pad=7)
    if name == "extended_v3":
        return _handover_like(rng, hint=True, name=name, double=True,
                              extra_pad=9)
    if name == "align_strike":
        return _align_strike(rng)
    if name == "pour":
        return _pour(rng)
    if name == "bimanual_reorient":
        return _bimanual_reorient(rng, angle)
    return _hook_push(rng)
