"""Deterministic planar bimanual world.

A 2 m x 1 m table with two arms whose reach discs overlap only in a narrow
central band, a handful of circle-collision objects with grasp sites, and
pure-function skill executors (pick, move, place, regrasp, push, pull,
strike, pour). Executors either return a fresh WorldState or a typed
SkillFailure; input states are never mutated.

Also provides rejection-sampled transition datasets for score training
(columnar binary files with a JSON header and min/max -> [-1, 1]
normalization) and world-level goal checking.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .factors import compose_pose2d, pose_distance, rel_pose2d

__all__ = [
    "ArmSpec", "ObjectState", "WorldState", "SkillFailure",
    "PoseGoal", "FlagGoal", "RelPoseGoal", "WorldGoal",
    "execute_skill", "check_goal", "path_feasible",
    "TransitionDataset", "generate_transitions",
    "pose_inverse", "SKILL_PARAM_DIMS", "PARAM_BOXES",
    "TABLE_BOUNDS", "POS_TOL", "ROT_TOL", "GRASP_TOL",
]

TABLE_BOUNDS = np.array([[-1.0, 1.0], [-0.5, 0.5]])  # x rows, y rows
POS_TOL = 0.05
ROT_TOL = np.deg2rad(5.0)
GRASP_TOL = 0.05
HOOK_RANGE = 0.15
POUR_OFFSET = np.array([0.0, 0.12, -1.0, 0.0])  # top-over-top, tilted
POUR_ROT_TOL = np.deg2rad(25.0)


def pose_inverse(T: np.ndarray) -> np.ndarray:
    """Inverse of a pose2d transform (t, R) -> (-R^T t, R^T)."""
    T = np.asarray(T, dtype=float)
    c, s = T[..., 2], T[..., 3]
    x = -(c * T[..., 0] + s * T[..., 1])
    y = -(-s * T[..., 0] + c * T[..., 1])
    return np.stack([x, y, c, -s], axis=-1)


@dataclass(frozen=True)
class ArmSpec:
    id: str
    base: tuple[float, float]
    reach_radius: float
    gripper: np.ndarray  # pose2d
    held: tuple[str, np.ndarray] | None = None  # (object id, obj pose in gripper frame)

    def reaches(self, pos) -> bool:
        return float(np.hypot(pos[0] - self.base[0], pos[1] - self.base[1])) \
            <= self.reach_radius


@dataclass(frozen=True)
class ObjectState:
    id: str
    pose: np.ndarray  # pose2d
    radius: float  # collision circle
    grasp_sites: tuple[tuple[float, float], ...] = ()  # positions in object frame
    head_offset: tuple[float, float] | None = None  # tool tip in object frame
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class WorldState:
    arms: tuple[ArmSpec, ArmSpec]
    objects: tuple[ObjectState, ...]
    bounds: np.ndarray = field(default_factory=lambda: TABLE_BOUNDS.copy())

    def arm(self, arm_id: str) -> ArmSpec:
        for a in self.arms:
            if a.id == arm_id:
                return a
        raise KeyError(f"unknown arm {arm_id!r}")

    def other_arm(self, arm_id: str) -> ArmSpec:
        return next(a for a in self.arms if a.id != arm_id)

    def obj(self, obj_id: str) -> ObjectState:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(f"unknown object {obj_id!r}")

    def with_arm(self, arm: ArmSpec) -> "WorldState":
        arms = tuple(arm if a.id == arm.id else a for a in self.arms)
        return replace(self, arms=arms)

    def with_obj(self, obj: ObjectState) -> "WorldState":
        objs = tuple(obj if o.id == obj.id else o for o in self.objects)
        return replace(self, objects=objs)

    def holder_of(self, obj_id: str) -> ArmSpec | None:
        for a in self.arms:
            if a.held is not None and a.held[0] == obj_id:
                return a
        return None

    def in_bounds(self, pos, margin: float = 0.0) -> bool:
        return bool(
            self.bounds[0, 0] + margin <= pos[0] <= self.bounds[0, 1] - margin
            and self.bounds[1, 0] + margin <= pos[1] <= self.bounds[1, 1] - margin
        )


@dataclass(frozen=True)
class SkillFailure:
    kind: str  # precondition_unsatisfied | unreachable | overlap | execution_slip
    detail: str = ""


def _overlaps(world: WorldState, obj_id: str, pos, radius: float) -> bool:
    for o in world.objects:
        if o.id == obj_id:
            continue
        if np.hypot(pos[0] - o.pose[0], pos[1] - o.pose[1]) < radius + o.radius:
            return True
    return False


def _renorm(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=float).copy()
    n = np.hypot(pose[2], pose[3])
    if n < 1e-9:
        pose[2], pose[3] = 1.0, 0.0
    else:
        pose[2:] /= n
    return pose


# Param dimensionality per skill; pose-valued params use the pose2d layout.
SKILL_PARAM_DIMS = {
    "pick": 4, "move": 4, "place": 4, "regrasp": 4,
    "push": 4, "pull": 4, "strike": 1, "pour": 1,
}

# Uniform sampling boxes for rejection sampling / random-shoot baselines.
PARAM_BOXES = {
    "pick": np.array([[-0.25, 0.25], [-0.25, 0.25], [-1, 1], [-1, 1]]),
    "regrasp": np.array([[-0.25, 0.25], [-0.25, 0.25], [-1, 1], [-1, 1]]),
    "move": np.array([[-1.0, 1.0], [-0.5, 0.5], [-1, 1], [-1, 1]]),
    "place": np.array([[-1.0, 1.0], [-0.5, 0.5], [-1, 1], [-1, 1]]),
    "push": np.array([[-1.0, 1.0], [-0.5, 0.5], [0.0, 0.3], [-np.pi, np.pi]]),
    "pull": np.array([[-1.0, 1.0], [-0.5, 0.5], [0.0, 0.3], [-np.pi, np.pi]]),
    "strike": np.array([[0.0, 1.0]]),
    "pour": np.array([[0.0, 1.0]]),
}


def _exec_pick(world, arm_id, obj_id, params, regrasp=False):
    arm = world.arm(arm_id)
    if arm.held is not None:
        return SkillFailure("precondition_unsatisfied", f"{arm_id} already holds")
    holder = world.holder_of(obj_id)
    if regrasp:
        if holder is None or holder.id == arm_id:
            return SkillFailure(
                "precondition_unsatisfied", "regrasp needs the other arm holding"
            )
    elif holder is not None:
        return SkillFailure("precondition_unsatisfied", f"{obj_id} already held")
    obj = world.obj(obj_id)
    g = _renorm(params)
    site_dist = min(
        (np.hypot(g[0] - sx, g[1] - sy) for sx, sy in obj.grasp_sites),
        default=np.inf,
    )
    if site_dist > GRASP_TOL:
        return SkillFailure(
            "precondition_unsatisfied", f"no grasp site within {GRASP_TOL} m"
        )
    gripper = compose_pose2d(obj.pose, g)
    if not arm.reaches(gripper[:2]):
        return SkillFailure("unreachable", f"grasp outside {arm_id} reach")
    out = world.with_arm(
        replace(arm, gripper=gripper, held=(obj_id, pose_inverse(g)))
    )
    if regrasp:
        out = out.with_arm(replace(out.arm(holder.id), held=None))
    return out


def _exec_move(world, arm_id, obj_id, params):
    arm = world.arm(arm_id)
    target = _renorm(params)
    if not arm.reaches(target[:2]):
        return SkillFailure("unreachable", "move target outside reach")
    out_arm = replace(arm, gripper=target)
    out = world.with_arm(out_arm)
    if arm.held is not None:
        held_id, transform = arm.held
        new_pose = compose_pose2d(target, transform)
        # a held object may overhang the table edge; bounds are enforced on release
        if _overlaps(world, held_id, new_pose[:2], world.obj(held_id).radius):
            return SkillFailure("overlap", "held object collides")
        out = out.with_obj(replace(world.obj(held_id), pose=new_pose))
    return out


def _exec_place(world, arm_id, obj_id, params):
    arm = world.arm(arm_id)
    if arm.held is None or arm.held[0] != obj_id:
        return SkillFailure("precondition_unsatisfied", f"{arm_id} not holding {obj_id}")
    target = _renorm(params)
    if not world.in_bounds(target[:2]):
        return SkillFailure("unreachable", "placement off the table")
    gripper = compose_pose2d(target, pose_inverse(arm.held[1]))
    if not arm.reaches(gripper[:2]):
        return SkillFailure("unreachable", "placement outside reach")
    if _overlaps(world, obj_id, target[:2], world.obj(obj_id).radius):
        return SkillFailure("overlap", "placement collides")
    out = world.with_arm(replace(arm, gripper=gripper, held=None))
    return out.with_obj(replace(world.obj(obj_id), pose=target))


def _exec_push_pull(world, arm_id, obj_id, params, pull):
    arm = world.arm(arm_id)
    if arm.held is not None:
        return SkillFailure("precondition_unsatisfied", f"{arm_id} busy")
    x, y, r, theta = [float(v) for v in params]
    obj = world.obj(obj_id)
    if world.holder_of(obj_id) is not None:
        return SkillFailure("precondition_unsatisfied", f"{obj_id} is held")
    if np.hypot(x - obj.pose[0], y - obj.pose[1]) > HOOK_RANGE:
        return SkillFailure("precondition_unsatisfied", "hook too far from object")
    if not arm.reaches((x, y)):
        return SkillFailure("unreachable", "hook pose outside reach")
    disp = np.array([r * np.cos(theta), r * np.sin(theta)])
    toward_base = np.array(arm.base) - obj.pose[:2]
    sense = float(disp @ toward_base)
    if pull and sense <= 0:
        return SkillFailure("precondition_unsatisfied", "pull must move toward base")
    if not pull and sense >= 0:
        return SkillFailure("precondition_unsatisfied", "push must move away from base")
    new_pos = obj.pose[:2] + disp
    if not world.in_bounds(new_pos):
        return SkillFailure("unreachable", "object leaves the table")
    if _overlaps(world, obj_id, new_pos, obj.radius):
        return SkillFailure("overlap", "pushed object collides")
    hook_end = np.array([x, y]) + disp
    if not arm.reaches(hook_end):
        return SkillFailure("unreachable", "hook stroke leaves reach")
    new_pose = obj.pose.copy()
    new_pose[:2] = new_pos
    gripper = np.array([hook_end[0], hook_end[1], np.cos(theta), np.sin(theta)])
    return world.with_obj(replace(obj, pose=new_pose)).with_arm(
        replace(arm, gripper=gripper)
    )


def _exec_strike(world, arm_id, obj_id, params):
    # obj_id is the nail; the arm must hold a tool grasped in its tail half
    arm = world.arm(arm_id)
    if arm.held is None:
        return SkillFailure("precondition_unsatisfied", "nothing held")
    tool = world.obj(arm.held[0])
    if tool.head_offset is None:
        return SkillFailure("precondition_unsatisfied", "held object has no head")
    grip_in_obj = pose_inverse(arm.held[1])
    if grip_in_obj[0] < 0.02:
        return SkillFailure(
            "precondition_unsatisfied", "grasp not in the tail half of the handle"
        )
    nail = world.obj(obj_id)
    head = compose_pose2d(tool.pose, np.array([*tool.head_offset, 1.0, 0.0]))
    if np.hypot(head[0] - nail.pose[0], head[1] - nail.pose[1]) > POS_TOL:
        return SkillFailure("precondition_unsatisfied", "head not aligned with nail")
    if "struck" in nail.flags:
        return world
    return world.with_obj(replace(nail, flags=nail.flags + ("struck",)))


def _exec_pour(world, arm_id, obj_id, params):
    # obj_id is the receiving cup; the arm must hold the pouring cup top-down
    arm = world.arm(arm_id)
    if arm.held is None:
        return SkillFailure("precondition_unsatisfied", "no cup held")
    cup = world.obj(arm.held[0])
    target = world.obj(obj_id)
    rel = rel_pose2d(target.pose, cup.pose)
    pos_err = np.hypot(rel[0] - POUR_OFFSET[0], rel[1] - POUR_OFFSET[1])
    ang_err = abs(np.arctan2(
        POUR_OFFSET[2] * rel[3] - POUR_OFFSET[3] * rel[2],
        POUR_OFFSET[2] * rel[2] + POUR_OFFSET[3] * rel[3],
    ))
    if pos_err > POS_TOL or ang_err > POUR_ROT_TOL:
        return SkillFailure(
            "precondition_unsatisfied",
            "pour transform not in the open-top admissible family",
        )
    if "filled" in target.flags:
        return world
    return world.with_obj(replace(target, flags=target.flags + ("filled",)))


def execute_skill(world: WorldState, skill: str, arm_id: str, obj_id: str,
                  params, slip_prob: float = 0.0,
                  rng: np.random.Generator | None = None):
    """Run one skill; returns a new WorldState or a SkillFailure.

    Deterministic at slip_prob 0. With slip enabled, grasp-contact skills can
    fail stochastically with kind execution_slip.
    """
    params = np.asarray(params, dtype=float)
    expected = SKILL_PARAM_DIMS.get(skill)
    if expected is None:
        raise KeyError(f"unknown skill {skill!r}")
    if params.shape != (expected,):
        raise ValueError(f"{skill} expects {expected} params, got {params.shape}")
    if slip_prob > 0.0 and skill in ("pick", "regrasp", "move", "place"):
        if rng is None:
            raise ValueError("slip_prob > 0 requires an rng")
        if rng.random() < slip_prob:
            return SkillFailure("execution_slip", f"{skill} slipped")
    if skill == "pick":
        return _exec_pick(world, arm_id, obj_id, params)
    if skill == "regrasp":
        return _exec_pick(world, arm_id, obj_id, params, regrasp=True)
    if skill == "move":
        return _exec_move(world, arm_id, obj_id, params)
    if skill == "place":
        return _exec_place(world, arm_id, obj_id, params)
    if skill in ("push", "pull"):
        return _exec_push_pull(world, arm_id, obj_id, params, pull=(skill == "pull"))
    if skill == "strike":
        return _exec_strike(world, arm_id, obj_id, params)
    return _exec_pour(world, arm_id, obj_id, params)


def path_feasible(world: WorldState, arm: ArmSpec, start, end,
                  held_id: str | None = None, samples: int = 12) -> bool:
    """Straight-line inter-waypoint check: stays in reach, avoids objects."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    for u in np.linspace(0.0, 1.0, samples):
        p = (1 - u) * start + u * end
        if not arm.reaches(p):
            return False
        for o in world.objects:
            if o.id == held_id or world.holder_of(o.id) is not None:
                continue
            # the gripper itself may approach its target object at u=1
            if np.hypot(p[0] - o.pose[0], p[1] - o.pose[1]) < 0.5 * o.radius:
                return False
    return True


# ------------------------------------------------------------------- goals


@dataclass(frozen=True)
class PoseGoal:
    obj: str
    target: np.ndarray  # pose2d
    pos_tol: float = POS_TOL
    rot_tol: float = ROT_TOL
    rot_matters: bool = True
    weight: float = 1.0


@dataclass(frozen=True)
class FlagGoal:
    obj: str
    flag: str
    weight: float = 1.0


@dataclass(frozen=True)
class RelPoseGoal:
    obj_a: str
    obj_b: str
    transform: np.ndarray  # pose of b in a's frame
    pos_tol: float = POS_TOL
    rot_tol: float = ROT_TOL
    weight: float = 1.0


@dataclass(frozen=True)
class WorldGoal:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


def _angle_err(ca, sa, cb, sb) -> float:
    return abs(float(np.arctan2(ca * sb - sa * cb, ca * cb + sa * sb)))


def check_goal(world: WorldState, goal: WorldGoal) -> tuple[bool, float]:
    """Success iff every term is within tolerance; residual = weighted sum."""
    ok = True
    total = 0.0
    for term in goal.terms:
        if isinstance(term, FlagGoal):
            hit = term.flag in world.obj(term.obj).flags
            ok &= hit
            total += term.weight * (0.0 if hit else 1.0)
            continue
        if isinstance(term, PoseGoal):
            pose = world.obj(term.obj).pose
            pos = float(np.hypot(pose[0] - term.target[0], pose[1] - term.target[1]))
            rot = _angle_err(term.target[2], term.target[3], pose[2], pose[3]) \
                if term.rot_matters else 0.0
        else:
            rel = rel_pose2d(world.obj(term.obj_a).pose, world.obj(term.obj_b).pose)
            pos = float(np.hypot(rel[0] - term.transform[0], rel[1] - term.transform[1]))
            rot = _angle_err(term.transform[2], term.transform[3], rel[2], rel[3])
        hit = pos <= term.pos_tol and rot <= term.rot_tol
        ok &= hit
        total += term.weight * (pos + rot)
    return bool(ok), total


# ------------------------------------------------------------------ datasets


@dataclass
class TransitionDataset:
    """Per-skill transition columns in world units with [-1, 1] stats.

    Column order matches the skill factor's member order:
    pre-node values, parameter, effect-node values.
    """

    skill: str
    column_names: tuple[str, ...]
    columns: list[np.ndarray]
    lo: list[np.ndarray]
    hi: list[np.ndarray]
    acceptance_rate: float = 1.0

    @classmethod
    def from_columns(cls, skill, column_names, columns, acceptance_rate=1.0):
        columns = [np.asarray(c, dtype=float) for c in columns]
        lo, hi = [], []
        for c in columns:
            if c.shape[0]:
                lo.append(c.min(axis=0))
                hi.append(c.max(axis=0))
            else:
                lo.append(np.zeros(c.shape[-1]))
                hi.append(np.zeros(c.shape[-1]))
        return cls(skill, tuple(column_names), columns, lo, hi, acceptance_rate)

    def __len__(self) -> int:
        return self.columns[0].shape[0] if self.columns else 0

    @property
    def member_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[-1] for c in self.columns)

    def normalize(self, i: int, x: np.ndarray) -> np.ndarray:
        span = self.hi[i] - self.lo[i]
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (x - self.lo[i]) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def denormalize(self, i: int, x: np.ndarray) -> np.ndarray:
        span = self.hi[i] - self.lo[i]
        return np.where(span > 0, self.lo[i] + 0.5 * (x + 1.0) * span, self.lo[i])

    def slot_values(self) -> list[np.ndarray]:
        """Normalized columns, the training-time contract for train_skill."""
        return [self.normalize(i, c) for i, c in enumerate(self.columns)]

    def stats_dict(self) -> dict:
        return {
            "lo": [list(v) for v in self.lo],
            "hi": [list(v) for v in self.hi],
        }

    def save(self, path) -> None:
        header = {
            "skill": self.skill,
            "column_names": list(self.column_names),
            "dims": [int(c.shape[-1]) for c in self.columns],
            "rows": len(self),
            "acceptance_rate": self.acceptance_rate,
            **self.stats_dict(),
        }
        blob = json.dumps(header).encode()
        with open(path, "wb") as fh:
            fh.write(b"FPDS" + struct.pack("<IQ", 1, len(blob)))
            fh.write(blob)
            for c in self.columns:
                fh.write(np.ascontiguousarray(c, dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path) -> "TransitionDataset":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != b"FPDS":
            raise ValueError("not a transition dataset file (bad magic)")
        version, hlen = struct.unpack_from("<IQ", data, 4)
        if version != 1:
            raise ValueError(f"unsupported dataset version {version}")
        head = json.loads(data[16:16 + hlen].decode())
        off = 16 + hlen
        rows = head["rows"]
        columns = []
        for d in head["dims"]:
            n = rows * d
            arr = np.frombuffer(data, dtype=np.float64, count=n, offset=off)
            columns.append(arr.reshape(rows, d).copy())
            off += 8 * n
        ds = cls(
            head["skill"], tuple(head["column_names"]), columns,
            [np.array(v) for v in head["lo"]], [np.array(v) for v in head["hi"]],
            head["acceptance_rate"],
        )
        return ds


def _random_pose(rng, bounds=TABLE_BOUNDS, margin=0.1) -> np.ndarray:
    ang = rng.uniform(-np.pi, np.pi)
    return np.array([
        rng.uniform(bounds[0, 0] + margin, bounds[0, 1] - margin),
        rng.uniform(bounds[1, 0] + margin, bounds[1, 1] - margin),
        np.cos(ang), np.sin(ang),
    ])


def default_world_sampler(rng: np.random.Generator) -> tuple[WorldState, str, str]:
    """A one-object world with a randomly chosen arm; used for data generation."""
    arm_id = "left" if rng.random() < 0.5 else "right"
    base = (-0.5, 0.0) if arm_id == "left" else (0.5, 0.0)
    pose = _random_pose(rng)
    # keep the object inside the sampled arm's reach most of the time
    if rng.random() < 0.8:
        ang = rng.uniform(-np.pi, np.pi)
        rad = rng.uniform(0.0, 0.5)
        pose[0] = base[0] + rad * np.cos(ang)
        pose[1] = np.clip(base[1] + rad * np.sin(ang), -0.4, 0.4)
    obj = ObjectState(
        id="item", pose=pose, radius=0.04,
        grasp_sites=((0.0, 0.0), (0.06, 0.0), (-0.06, 0.0)),
    )
    arms = (
        ArmSpec("left", (-0.5, 0.0), 0.55, np.array([-0.5, 0.2, 1.0, 0.0])),
        ArmSpec("right", (0.5, 0.0), 0.55, np.array([0.5, 0.2, 1.0, 0.0])),
    )
    return WorldState(arms=arms, objects=(obj,)), arm_id, "item"


COLUMN_NAMES = ("gripper_pre", "object_pre", "param", "gripper_eff", "object_eff")


def _pick_setup(world, arm_id, obj_id, rng, tries: int = 50):
    box = PARAM_BOXES["pick"]
    for _ in range(tries):
        q1 = rng.uniform(box[:, 0], box[:, 1])
        out = execute_skill(world, "pick", arm_id, obj_id, q1)
        if not isinstance(out, SkillFailure):
            return out
    return None


def generate_transitions(
    skill: str,
    n: int,
    rng: np.random.Generator,
    world_sampler=default_world_sampler,
    max_attempts_per_row: int = 5000,
) -> TransitionDataset:
    """Rejection-sample n successful transitions of one skill.

    Uniform params over the skill's box on randomized worlds; ReGrasp rows
    are built by the pick/move reuse rule (pick with q1, move with q2, then
    the object can be regrasped at q1 in its moved frame). Raises if the
    acceptance rate over a trailing window falls below 0.1%.
    """
    if skill not in SKILL_PARAM_DIMS:
        raise KeyError(f"unknown skill {skill!r}")
    if n == 0:
        dims = (4, 4, SKILL_PARAM_DIMS[skill], 4, 4)
        return TransitionDataset.from_columns(
            skill, COLUMN_NAMES, [np.zeros((0, d)) for d in dims]
        )

    box = PARAM_BOXES[skill]
    rows: list[list[np.ndarray]] = []
    attempts = 0
    while len(rows) < n:
        attempts += 1
        if attempts > max_attempts_per_row * n:
            rate = len(rows) / attempts
            raise RuntimeError(
                f"{skill}: acceptance rate {rate:.5f} below diagnostic floor; "
                f"skill and world sampler are mismatched"
            )
        world, arm_id, obj_id = world_sampler(rng)
        if skill == "regrasp":
            # reuse rule: pick with q1, move with q2, regrasp at q1
            q1 = rng.uniform(PARAM_BOXES["pick"][:, 0], PARAM_BOXES["pick"][:, 1])
            picked = execute_skill(world, "pick", arm_id, obj_id, q1)
            if isinstance(picked, SkillFailure):
                continue
            q2 = rng.uniform(PARAM_BOXES["move"][:, 0], PARAM_BOXES["move"][:, 1])
            moved = execute_skill(picked, "move", arm_id, obj_id, q2)
            if isinstance(moved, SkillFailure):
                continue
            other = moved.other_arm(arm_id)
            done = execute_skill(moved, "regrasp", other.id, obj_id, q1)
            if isinstance(done, SkillFailure):
                continue
            pre_arm, post_arm = moved.arm(other.id), done.arm(other.id)
            rows.append([
                pre_arm.gripper, moved.obj(obj_id).pose, _renorm(q1),
                post_arm.gripper, done.obj(obj_id).pose,
            ])
            continue
        params = rng.uniform(box[:, 0], box[:, 1])
        if skill in ("move", "place"):
            # these need something in the gripper; the pick setup is part of
            # world sampling and does not count against the acceptance rate
            world = _pick_setup(world, arm_id, obj_id, rng)
            if world is None:
                continue
        out = execute_skill(world, skill, arm_id, obj_id, params)
        if isinstance(out, SkillFailure):
            continue
        if SKILL_PARAM_DIMS[skill] == 4 and skill not in ("push", "pull"):
            params = _renorm(params)
        rows.append([
            world.arm(arm_id).gripper, world.obj(obj_id).pose, params,
            out.arm(arm_id).gripper, out.obj(obj_id).pose,
        ])
    columns = [np.stack([r[i] for r in rows]) for i in range(5)]
    return TransitionDataset.from_columns(
        skill, COLUMN_NAMES, columns, acceptance_rate=n / attempts
    )
