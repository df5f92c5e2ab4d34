import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axisloop.errors import DegenerateEstimate
from axisloop.geometry import JointAxis, JointKind
from axisloop.policy import (
    Mode,
    PolicyConfig,
    init_manipulation,
    plan_next_waypoint,
    run_trial,
    simulate,
)
from axisloop.sim import (
    GraspModel,
    SensorModel,
    apply_end_effector_motion,
    make_door_scene,
    make_drawer_scene,
    random_scene,
)

CLEAN = SensorModel(2000, 0.0, 0.0, seed=0)


def same_report(a, b):
    """Equality that treats NaN errors as equal."""
    if len(a.per_step) != len(b.per_step):
        return False
    for x, y in zip(a.per_step, b.per_step):
        for u, v in zip(
            (x.direction_error_deg, x.pivot_error_m, x.joint_state),
            (y.direction_error_deg, y.pivot_error_m, y.joint_state),
        ):
            if not (u == v or (math.isnan(u) and math.isnan(v))):
                return False
        if (x.slipped, x.status) != (y.slipped, y.status):
            return False
    return (a.success, a.steps_used, a.final_joint_state, a.failure, a.target) == (
        b.success, b.steps_used, b.final_joint_state, b.failure, b.target
    )


def test_policy_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(step_size=0)
    with pytest.raises(ValueError):
        PolicyConfig(init_steps=3, max_steps=3)
    assert PolicyConfig("open_loop").mode is Mode.OPEN_LOOP


def test_plan_prismatic():
    axis = JointAxis(JointKind.PRISMATIC, (0, 0, 0), (0, 1, 0))
    np.testing.assert_allclose(plan_next_waypoint(axis, (0, 0, 0), 0.05), [0, 0.05, 0])


def test_plan_prismatic_follows_last_motion():
    axis = JointAxis(JointKind.PRISMATIC, (0, 0, 0), (0, 1, 0))
    np.testing.assert_allclose(plan_next_waypoint(axis, (0, 0, 0), 0.05, (0, -0.01, 0)), [0, -0.05, 0])


def test_plan_revolute_quarter_chord():
    axis = JointAxis(JointKind.REVOLUTE, (0, 0, 0), (0, 0, 1))
    np.testing.assert_allclose(plan_next_waypoint(axis, (1, 0, 0), math.pi / 2), [-1, 1, 0], atol=1e-15)


def test_plan_revolute_degenerate():
    axis = JointAxis(JointKind.REVOLUTE, (0, 0, 0), (0, 0, 1))
    with pytest.raises(DegenerateEstimate):
        plan_next_waypoint(axis, (0.005, 0, 3.0), 0.05)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 0.8), st.floats(0.0, 1.5), st.booleans())
def test_true_axis_step_residual_bound(width, q, left):
    scene = make_door_scene(1.0, 0.5, 0.9, width, hinge_left=left).with_state(q)
    grasp = GraspModel(scene.grip_point())
    delta = plan_next_waypoint(scene.joint, grasp.grip_point, 0.05)
    out = apply_end_effector_motion(scene, grasp, delta)
    rho = scene.grip_radius
    assert out.deviation <= 0.05**2 / (2 * rho) + 1e-12
    assert out.deviation < 0.02


def test_init_drawer_aligned():
    scene = make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2)
    frames, scene, grasp, records = init_manipulation(scene, GraspModel.at_handle(scene), PolicyConfig(), CLEAN)
    assert scene.joint_state == pytest.approx(0.10)
    assert len(frames) == 3 and len(records) == 2
    assert grasp.attached


def test_init_door_chord():
    scene = make_door_scene(0.8, 0.5, 0.9, 0.5)
    rho = scene.grip_radius
    _, scene, grasp, _ = init_manipulation(scene, GraspModel.at_handle(scene), PolicyConfig(), CLEAN)
    assert scene.joint_state == pytest.approx(2 * 2 * math.asin(0.025 / rho), rel=1e-3)
    assert grasp.attached
    assert np.linalg.norm(grasp.offset) < 0.02


def test_init_reversed_slips():
    for scene in (make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2), make_door_scene(0.8, 0.5, 0.9, 0.5)):
        _, _, grasp, records = init_manipulation(
            scene, GraspModel.at_handle(scene), PolicyConfig(), CLEAN, pull_sign=-1.0
        )
        assert records[-1].slipped and not grasp.attached


def test_noise_free_drawer_closed_loop():
    scene = make_drawer_scene(0.7, 0.6, 0.6, 0.5, 0.2, yaw=0.1)
    report = run_trial(scene, CLEAN, PolicyConfig(Mode.CLOSED_LOOP, max_steps=10, target=0.30))
    assert report.success and report.final_joint_state >= 0.30
    planned = report.per_step[2:]
    assert planned and all(s.direction_error_deg < 0.1 for s in planned)


def test_target_within_init_displacement():
    scene = make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2)
    report = run_trial(scene, CLEAN, PolicyConfig(target=0.099, max_steps=10))
    assert report.success and report.steps_used == 2


def test_stale_pivot_slips_where_true_pivot_succeeds():
    """A frozen, slightly wrong pivot accumulates chord deviation until the grasp slips."""
    scene0 = make_door_scene(0.9, 0.5, 0.9, 0.6, hinge_left=True)
    target = math.radians(70)
    wrong = JointAxis(JointKind.REVOLUTE, scene0.joint.pivot + (0.05, 0, 0), (0, 0, 1))

    def execute(axis):
        scene, grasp = scene0, GraspModel.at_handle(scene0)
        for _ in range(40):
            delta = plan_next_waypoint(axis, grasp.grip_point, 0.05)
            out = apply_end_effector_motion(scene, grasp, delta)
            scene, grasp = out.scene, out.grasp
            if out.slipped:
                return False, scene.joint_state
            if scene.joint_state >= target:
                return True, scene.joint_state
        return False, scene.joint_state

    ok_true, _ = execute(scene0.joint)
    ok_wrong, reached = execute(wrong)
    assert ok_true
    assert not ok_wrong and reached < target


def test_budget_and_determinism():
    rng = np.random.default_rng(4)
    for kind in ("revolute", "prismatic"):
        scene = random_scene(kind, rng)
        sensor = SensorModel(2000, 0.005, 0.01, seed=8)
        policy = PolicyConfig(Mode.CLOSED_LOOP, max_steps=6, target=scene.joint_limit * 0.95)
        a = run_trial(scene, sensor, policy)
        b = run_trial(scene, sensor, policy)
        assert same_report(a, b)
        assert a.steps_used <= 6


def test_multi_target_equals_individual_runs():
    rng = np.random.default_rng(21)
    for kind, targets in (("revolute", [0.2, 0.6, 1.0]), ("prismatic", [0.1, 0.25, 0.4])):
        for _ in range(3):
            scene = random_scene(kind, rng)
            sensor = SensorModel(2000, 0.005, 0.01, seed=int(rng.integers(1000)))
            for mode in Mode:
                policy = PolicyConfig(mode, max_steps=14, target=targets[-1])
                joint = simulate(scene, sensor, policy, targets)
                for t, rep in zip(targets, joint):
                    single = run_trial(scene, sensor, PolicyConfig(mode, max_steps=14, target=t))
                    assert same_report(rep, single)


def test_success_iff_target_reached():
    rng = np.random.default_rng(5)
    for _ in range(6):
        scene = random_scene("revolute", rng)
        sensor = SensorModel(2000, 0.005, 0.01, seed=int(rng.integers(100)))
        for rep in simulate(scene, sensor, PolicyConfig(Mode.OPEN_LOOP, target=1.2), [0.3, 0.8, 1.2]):
            assert rep.success == (rep.final_joint_state >= rep.target)


def test_open_loop_freezes_first_estimate():
    scene = random_scene("revolute", np.random.default_rng(2))
    sensor = SensorModel(2000, 0.005, 0.01, seed=2)
    rep = run_trial(scene, sensor, PolicyConfig(Mode.OPEN_LOOP, target=1.2))
    planned = [s.pivot_error_m for s in rep.per_step if s.status == "planned"]
    assert len(set(planned)) == 1


def test_oracle_axis_has_zero_error():
    scene = random_scene("revolute", np.random.default_rng(3))
    rep = run_trial(scene, CLEAN, PolicyConfig(target=1.0, oracle_axis=True))
    assert rep.success
    assert all(s.pivot_error_m == 0.0 for s in rep.per_step if s.status == "planned")


def test_closed_loop_direction_error_median_non_increasing():
    errors = []
    for seed in range(10):
        scene = random_scene("prismatic", np.random.default_rng([seed, 3]))
        rep = run_trial(scene, SensorModel(2000, seed=seed), PolicyConfig(max_steps=9, target=0.45))
        errors.append([s.direction_error_deg for s in rep.per_step[2:9]])
    depth = min(len(e) for e in errors)
    med = np.median([e[:depth] for e in errors], axis=0)
    assert all(b <= a + 1e-9 for a, b in zip(med, med[1:]))
