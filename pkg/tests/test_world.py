import numpy as np
import pytest

from factorplan.factors import compose_pose2d, rel_pose2d
from factorplan.world import (
    ArmSpec,
    FlagGoal,
    ObjectState,
    PoseGoal,
    RelPoseGoal,
    SkillFailure,
    TransitionDataset,
    WorldGoal,
    WorldState,
    check_goal,
    default_world_sampler,
    execute_skill,
    generate_transitions,
    path_feasible,
    pose_inverse,
)


def _world(obj_pose=(0.4, 0.1, 1.0, 0.0), sites=((0.0, 0.0), (0.08, 0.0))):
    arms = (
        ArmSpec("left", (-0.5, 0.0), 0.55, np.array([-0.5, 0.2, 1.0, 0.0])),
        ArmSpec("right", (0.5, 0.0), 0.55, np.array([0.5, 0.2, 1.0, 0.0])),
    )
    obj = ObjectState("item", np.array(obj_pose, dtype=float), 0.04,
                      grasp_sites=tuple(sites))
    return WorldState(arms=arms, objects=(obj,))


def test_pose_inverse_round_trip(rng):
    for _ in range(10):
        T = rng.normal(size=4)
        T[2:] /= np.linalg.norm(T[2:])
        ident = compose_pose2d(T, pose_inverse(T))
        np.testing.assert_allclose(ident, [0, 0, 1, 0], atol=1e-12)


def test_pick_sets_held_object_pose_unchanged():
    w = _world()
    out = execute_skill(w, "pick", "right", "item", np.array([0.08, 0.0, 0.0, 1.0]))
    assert isinstance(out, WorldState)
    np.testing.assert_allclose(out.obj("item").pose, w.obj("item").pose)
    held = out.arm("right").held
    assert held is not None and held[0] == "item"
    # held invariant: object world pose = gripper pose composed with transform
    np.testing.assert_allclose(
        compose_pose2d(out.arm("right").gripper, held[1]),
        out.obj("item").pose, atol=1e-12,
    )
    # input world untouched
    assert w.arm("right").held is None


def test_pick_far_from_any_site_fails():
    out = execute_skill(_world(), "pick", "right", "item",
                        np.array([0.2, 0.2, 1.0, 0.0]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "precondition_unsatisfied"


def test_pick_out_of_reach_fails():
    w = _world(obj_pose=(-0.4, 0.1, 1.0, 0.0))
    out = execute_skill(w, "pick", "right", "item", np.zeros(4) + [0, 0, 1, 0])
    assert isinstance(out, SkillFailure)
    assert out.kind == "unreachable"


def test_move_requires_reach():
    w = _world()
    w2 = execute_skill(w, "pick", "right", "item", np.array([0.0, 0.0, 1.0, 0.0]))
    out = execute_skill(w2, "move", "right", "item", np.array([-0.9, 0.0, 1.0, 0.0]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "unreachable"


def test_move_transports_held_object():
    w = _world()
    w2 = execute_skill(w, "pick", "right", "item", np.array([0.08, 0.0, 1.0, 0.0]))
    target = np.array([0.5, -0.2, 0.0, 1.0])
    out = execute_skill(w2, "move", "right", "item", target)
    assert isinstance(out, WorldState)
    np.testing.assert_allclose(out.arm("right").gripper, target)
    held = w2.arm("right").held[1]
    np.testing.assert_allclose(out.obj("item").pose,
                               compose_pose2d(target, held), atol=1e-12)


def test_place_releases_at_target():
    w = _world()
    w2 = execute_skill(w, "pick", "right", "item", np.array([0.0, 0.0, 1.0, 0.0]))
    target = np.array([0.7, 0.1, 1.0, 0.0])
    out = execute_skill(w2, "place", "right", "item", target)
    assert isinstance(out, WorldState)
    assert out.arm("right").held is None
    np.testing.assert_allclose(out.obj("item").pose, target)


def test_place_without_holding_fails():
    out = execute_skill(_world(), "place", "right", "item",
                        np.array([0.7, 0.1, 1.0, 0.0]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "precondition_unsatisfied"


def test_regrasp_handover():
    w = _world(obj_pose=(0.3, 0.1, 1.0, 0.0))
    w2 = execute_skill(w, "pick", "right", "item", np.array([0.0, 0.0, 1.0, 0.0]))
    w3 = execute_skill(w2, "move", "right", "item", np.array([-0.04, 0.0, 1.0, 0.0]))
    assert isinstance(w3, WorldState)
    out = execute_skill(w3, "regrasp", "left", "item",
                        np.array([0.08, 0.0, 1.0, 0.0]))
    assert isinstance(out, WorldState)
    assert out.arm("left").held[0] == "item"
    assert out.arm("right").held is None


def test_regrasp_requires_other_arm_holding():
    out = execute_skill(_world(), "regrasp", "left", "item",
                        np.array([0.0, 0.0, 1.0, 0.0]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "precondition_unsatisfied"


def test_pull_moves_toward_base():
    w = _world(obj_pose=(0.25, 0.0, 1.0, 0.0))
    # direction from object toward the right base (0.5, 0) is +x
    out = execute_skill(w, "pull", "right", "item",
                        np.array([0.25, 0.05, 0.2, 0.0]))
    assert isinstance(out, WorldState)
    np.testing.assert_allclose(out.obj("item").pose[:2], [0.45, 0.0])
    # pulling away from the base is rejected
    bad = execute_skill(w, "pull", "right", "item",
                        np.array([0.25, 0.05, 0.2, np.pi]))
    assert isinstance(bad, SkillFailure)
    assert bad.kind == "precondition_unsatisfied"


def test_push_moves_away_from_base():
    w = _world(obj_pose=(0.25, 0.0, 1.0, 0.0))
    out = execute_skill(w, "push", "right", "item",
                        np.array([0.3, 0.0, 0.15, np.pi]))
    assert isinstance(out, WorldState)
    np.testing.assert_allclose(out.obj("item").pose[:2], [0.10, 0.0], atol=1e-12)


def test_hook_too_far_fails():
    w = _world(obj_pose=(0.25, 0.0, 1.0, 0.0))
    out = execute_skill(w, "pull", "right", "item",
                        np.array([0.6, 0.3, 0.2, 0.0]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "precondition_unsatisfied"


def _hammer_world(grasp_x, head_at_nail=True):
    arms = (
        ArmSpec("left", (-0.5, 0.0), 0.55, np.array([-0.5, 0.2, 1.0, 0.0])),
        ArmSpec("right", (0.5, 0.0), 0.55, np.array([0.5, 0.2, 1.0, 0.0])),
    )
    hammer = ObjectState(
        "hammer", np.array([0.45, 0.0, 1.0, 0.0]), 0.04,
        grasp_sites=((-0.05, 0.0), (0.05, 0.0), (0.12, 0.0)),
        head_offset=(-0.15, 0.0),
    )
    nail_x = 0.30 if head_at_nail else 0.0
    nail = ObjectState("nail", np.array([nail_x, 0.0, 1.0, 0.0]), 0.015)
    w = WorldState(arms=arms, objects=(hammer, nail))
    return execute_skill(w, "pick", "right", "hammer",
                         np.array([grasp_x, 0.0, 1.0, 0.0]))


def test_strike_requires_tail_grasp():
    w = _hammer_world(grasp_x=-0.05)
    out = execute_skill(w, "strike", "right", "nail", np.array([0.5]))
    assert isinstance(out, SkillFailure)
    assert "tail" in out.detail


def test_strike_requires_head_alignment():
    w = _hammer_world(grasp_x=0.12, head_at_nail=False)
    out = execute_skill(w, "strike", "right", "nail", np.array([0.5]))
    assert isinstance(out, SkillFailure)
    assert "aligned" in out.detail


def test_strike_success_sets_flag():
    w = _hammer_world(grasp_x=0.12)
    out = execute_skill(w, "strike", "right", "nail", np.array([0.5]))
    assert isinstance(out, WorldState)
    assert "struck" in out.obj("nail").flags


def _cup_world(rel):
    arms = (
        ArmSpec("left", (-0.5, 0.0), 0.55, np.array([-0.5, 0.2, 1.0, 0.0])),
        ArmSpec("right", (0.5, 0.0), 0.55, np.array([0.5, 0.2, 1.0, 0.0])),
    )
    cup_b = ObjectState("cup_b", np.array([0.5, 0.0, 1.0, 0.0]), 0.04,
                        grasp_sites=((0.0, 0.0),))
    cup_a = ObjectState("cup_a", compose_pose2d(cup_b.pose, np.asarray(rel)),
                        0.04, grasp_sites=((0.0, 0.0),))
    w = WorldState(arms=arms, objects=(cup_a, cup_b))
    return execute_skill(w, "pick", "right", "cup_a", np.array([0.0, 0.0, 1.0, 0.0]))


def test_pour_top_over_top_succeeds():
    w = _cup_world([0.0, 0.12, -1.0, 0.0])
    out = execute_skill(w, "pour", "right", "cup_b", np.array([0.5]))
    assert isinstance(out, WorldState)
    assert "filled" in out.obj("cup_b").flags


def test_pour_bottom_orientation_rejected():
    # right position but top-up orientation: the closed bottom faces the cup
    w = _cup_world([0.0, 0.12, 1.0, 0.0])
    out = execute_skill(w, "pour", "right", "cup_b", np.array([0.5]))
    assert isinstance(out, SkillFailure)
    assert out.kind == "precondition_unsatisfied"


def test_executor_determinism():
    w = _world()
    a = execute_skill(w, "pick", "right", "item", np.array([0.0, 0.0, 1.0, 0.0]))
    b = execute_skill(w, "pick", "right", "item", np.array([0.0, 0.0, 1.0, 0.0]))
    np.testing.assert_array_equal(a.arm("right").gripper, b.arm("right").gripper)


def test_slip_failure_when_enabled():
    w = _world()
    fails = 0
    for i in range(200):
        out = execute_skill(w, "pick", "right", "item",
                            np.array([0.0, 0.0, 1.0, 0.0]),
                            slip_prob=0.5, rng=np.random.default_rng(i))
        if isinstance(out, SkillFailure):
            assert out.kind == "execution_slip"
            fails += 1
    assert 60 < fails < 140


def test_unknown_skill_raises():
    with pytest.raises(KeyError):
        execute_skill(_world(), "teleport", "right", "item", np.zeros(4))


def test_path_feasible_blocks_out_of_reach_segments():
    w = _world()
    arm = w.arm("right")
    assert path_feasible(w, arm, [0.6, 0.2], [0.5, -0.2], held_id="item")
    assert not path_feasible(w, arm, [0.6, 0.2], [-0.6, 0.2], held_id="item")


def test_check_goal_exact_pose():
    w = _world(obj_pose=(0.7, 0.1, 1.0, 0.0))
    goal = WorldGoal([PoseGoal("item", np.array([0.7, 0.1, 1.0, 0.0]))])
    ok, res = check_goal(w, goal)
    assert ok and res == pytest.approx(0.0)


def test_check_goal_threshold_behavior():
    w = _world(obj_pose=(0.7, 0.1, 1.0, 0.0))
    near = WorldGoal([PoseGoal("item", np.array([0.73, 0.1, 1.0, 0.0]))])
    far = WorldGoal([PoseGoal("item", np.array([0.4, 0.1, 1.0, 0.0]), weight=2.0)])
    ok, _ = check_goal(w, near)
    assert ok
    ok, res = check_goal(w, far)
    assert not ok
    assert res == pytest.approx(2.0 * 0.3, abs=1e-9)


def test_check_goal_flag_and_relpose():
    w = _cup_world([0.0, 0.12, -1.0, 0.0])
    goal = WorldGoal([
        FlagGoal("cup_b", "filled"),
        RelPoseGoal("cup_b", "cup_a", np.array([0.0, 0.12, -1.0, 0.0]),
                    rot_tol=np.deg2rad(25)),
    ])
    ok, res = check_goal(w, goal)
    assert not ok  # not poured yet
    w2 = execute_skill(w, "pour", "right", "cup_b", np.array([0.5]))
    ok, res = check_goal(w2, goal)
    assert ok


# ------------------------------------------------------------------ datasets


def test_generate_empty_dataset():
    ds = generate_transitions("pick", 0, np.random.default_rng(0))
    assert len(ds) == 0
    assert ds.member_dims == (4, 4, 4, 4, 4)
    norm = ds.slot_values()
    assert all(c.shape[0] == 0 for c in norm)


def test_generate_pick_dataset_replays():
    rng = np.random.default_rng(1)
    ds = generate_transitions("pick", 50, rng)
    assert len(ds) == 50
    for i in range(0, 50, 10):
        w = _world(obj_pose=ds.columns[1][i])
        w = w.with_arm(ArmSpec("right", (0.5, 0.0), 0.55, ds.columns[0][i]))
        w = w.with_arm(ArmSpec("left", (-0.5, 0.0), 0.55, np.array([-0.5, 0.2, 1, 0])))
        # replay through a one-item world with the recorded poses
        obj = ObjectState("item", ds.columns[1][i], 0.04,
                          grasp_sites=((0.0, 0.0), (0.06, 0.0), (-0.06, 0.0)))
        w = WorldState(arms=w.arms, objects=(obj,))
        arm_id = "right" if abs(ds.columns[3][i][0] - 0.5) < 0.56 else "left"
        out = execute_skill(w, "pick", arm_id, "item", ds.columns[2][i])
        if isinstance(out, SkillFailure):
            out = execute_skill(w, "pick", "left" if arm_id == "right" else "right",
                                "item", ds.columns[2][i])
        assert isinstance(out, WorldState)
        np.testing.assert_allclose(out.arm(out.holder_of("item").id).gripper,
                                   ds.columns[3][i], atol=1e-9)


def test_move_acceptance_rate_matches_area_ratio():
    rng = np.random.default_rng(2)
    ds = generate_transitions("move", 300, rng)
    assert len(ds) == 300
    # reach disc clipped by the table, over the 2 x 1 sampling box
    r, clip_y, clip_x = 0.55, 0.5, 0.5
    disc = np.pi * r * r
    seg_y = r * r * np.arccos(clip_y / r) - clip_y * np.sqrt(r * r - clip_y**2)
    seg_x = r * r * np.arccos(clip_x / r) - clip_x * np.sqrt(r * r - clip_x**2)
    expected = (disc - 2 * seg_y - seg_x) / 2.0
    assert ds.acceptance_rate == pytest.approx(expected, rel=0.2)


def test_regrasp_dataset_reuse_rule():
    rng = np.random.default_rng(3)
    ds = generate_transitions("regrasp", 30, rng)
    assert len(ds) == 30
    # each row: regrasping gripper pose = object pose composed with the param
    for i in range(30):
        np.testing.assert_allclose(
            ds.columns[3][i],
            compose_pose2d(ds.columns[1][i], ds.columns[2][i]),
            atol=1e-9,
        )


def test_normalization_round_trip():
    rng = np.random.default_rng(4)
    ds = generate_transitions("pick", 40, rng)
    for i, col in enumerate(ds.columns):
        back = ds.denormalize(i, ds.normalize(i, col))
        np.testing.assert_allclose(back, col, atol=1e-9)
        norm = ds.normalize(i, col)
        assert norm.min() >= -1.0 - 1e-12 and norm.max() <= 1.0 + 1e-12


def test_dataset_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    ds = generate_transitions("pick", 25, rng)
    path = tmp_path / "pick.fpds"
    ds.save(path)
    again = TransitionDataset.load(path)
    assert again.skill == "pick"
    assert again.column_names == ds.column_names
    for a, b in zip(ds.columns, again.columns):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(ds.lo, again.lo):
        np.testing.assert_array_equal(a, b)
    assert again.acceptance_rate == ds.acceptance_rate


def test_dataset_rejects_bad_magic(tmp_path):
    p = tmp_path / "junk.fpds"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        TransitionDataset.load(p)


def test_acceptance_floor_diagnostic():
    # a world sampler that never yields a pickable object
    def hopeless(rng):
        w, arm, obj = default_world_sampler(rng)
        o = w.obj(obj)
        return w.with_obj(ObjectState(o.id, o.pose, o.radius, ())), arm, obj

    with pytest.raises(RuntimeError, match="acceptance"):
        generate_transitions("pick", 5, np.random.default_rng(6),
                             world_sampler=hopeless, max_attempts_per_row=500)
