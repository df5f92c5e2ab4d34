import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axisloop.cloud import FilterParams, MotionExtractionParams, extract_motion_part, fit_obb
from axisloop.geometry import JointKind, Label
from axisloop.sim import (
    DOOR_LIMIT,
    Box,
    GraspModel,
    SensorModel,
    apply_end_effector_motion,
    apportion,
    make_door_scene,
    make_drawer_scene,
    random_scene,
    sample_boxes,
    sample_cloud,
)


def drawer():
    return make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2, drawer_x=0.1, drawer_z=0.2)


def door(**kw):
    return make_door_scene(0.8, 0.5, 0.9, 0.5, **kw)


def test_apportion_largest_remainder():
    np.testing.assert_array_equal(apportion([1, 1, 1], 10), [4, 3, 3])
    assert apportion([0.2, 0.3, 0.5], 7).sum() == 7
    np.testing.assert_array_equal(apportion([0, 0], 5), [0, 0])


def test_unit_cube_point_count_and_faces():
    cube = Box.from_bounds((0, 0, 0), (1, 1, 1))
    pts, labels = sample_boxes([cube], [Label.BODY], 1000, np.random.default_rng(0))
    assert abs(len(pts) - 6000) <= 1
    assert (labels == Label.BODY).all()
    on_face = np.isclose(pts, 0, atol=1e-12) | np.isclose(pts, 1, atol=1e-12)
    assert on_face.any(axis=1).all()
    assert ((pts >= -1e-12) & (pts <= 1 + 1e-12)).all()
    per_face = [(np.abs(pts[:, k] - v) <= 1e-12).sum() for k in range(3) for v in (0, 1)]
    assert all(abs(c - 1000) <= 1 for c in per_face)


def test_opened_drawer_points_inside_translated_box():
    scene = drawer().with_state(0.2)
    cloud = sample_cloud(scene, SensorModel(3000, seed=5))
    moving = cloud.points[cloud.labels == Label.MOTION]
    closed = moving - 0.2 * scene.joint.direction
    lo = scene.movable.center - scene.movable.half
    hi = scene.movable.center + scene.movable.half
    assert ((closed >= lo - 1e-12) & (closed <= hi + 1e-12)).all()


def test_same_seed_bit_identical():
    scene = random_scene("revolute", np.random.default_rng(3)).with_state(0.4)
    s = SensorModel(2000, 0.005, 0.01, seed=11)
    a, b = sample_cloud(scene, s), sample_cloud(scene, s)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c = sample_cloud(scene, SensorModel(2000, 0.005, 0.01, seed=12))
    assert a.points.tobytes() != c.points.tobytes()


def test_outliers_labeled_and_counted():
    cloud = sample_cloud(drawer(), SensorModel(2000, 0.0, 0.05, seed=1))
    n_surface = (cloud.labels != Label.OUTLIER).sum()
    assert (cloud.labels == Label.OUTLIER).sum() == round(0.05 * n_surface)


def test_outlier_box_respected():
    box = ((5, 5, 5), (6, 6, 6))
    cloud = sample_cloud(drawer(), SensorModel(1000, 0.0, 0.1, outlier_box=box, seed=1))
    out = cloud.points[cloud.labels == Label.OUTLIER]
    assert ((out >= 5) & (out <= 6)).all()


def test_back_face_culling_drops_hidden_faces():
    cube = Box.from_bounds((0, 0, 0), (1, 1, 1))
    pts, _ = sample_boxes([cube], [Label.BODY], 1000, np.random.default_rng(0), view_direction=(0, -1, 0))
    # only the +y face faces a camera looking along -y
    assert abs(len(pts) - 1000) <= 1
    np.testing.assert_allclose(pts[:, 1], 1.0, atol=1e-12)


def test_culling_follows_door_rotation():
    scene = door().with_state(math.radians(90))
    view = -np.array([0.0, 1.0, 0.0])
    cloud = sample_cloud(scene, SensorModel(2000, view_direction=view, seed=0))
    panel = cloud.points[cloud.labels == Label.MOTION]
    assert len(panel) > 0


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorModel(0)
    with pytest.raises(ValueError):
        SensorModel(100, outlier_fraction=1.0)
    with pytest.raises(ValueError):
        SensorModel(100, noise_sigma=-1)


def test_scene_invariants_random():
    rng = np.random.default_rng(9)
    for _ in range(50):
        d = random_scene("revolute", rng)
        assert abs(d.joint.direction[2]) == 1.0 and d.joint.direction[:2].tolist() == [0, 0]
        assert d.joint_limit == DOOR_LIMIT
        assert 0.3 <= 2 * d.movable.half[0] <= 0.8
        w = random_scene("prismatic", rng)
        assert w.joint.direction[2] == 0.0
        assert abs(np.linalg.norm(w.joint.direction) - 1) < 1e-12
        assert w.joint_limit >= 0.45
        for s in (d, w):
            assert np.all((2 * s.body.half >= 0.4 - 1e-12) & (2 * s.body.half <= 1.0 + 1e-12))
    with pytest.raises(ValueError):
        drawer().with_state(-0.1)


def test_door_hinge_on_panel_midline():
    for left in (True, False):
        scene = door(hinge_left=left)
        for q in np.linspace(0.1, 1.5, 6):
            box = fit_obb(_part(scene.with_state(q)))
            rel = scene.joint.pivot[:2] - box.rect.center
            cross = rel[0] * box.rect.long_axis[1] - rel[1] * box.rect.long_axis[0]
            assert abs(cross) < 1e-9


def _part(scene):
    c = sample_cloud(scene, SensorModel(3000, seed=1))
    return c.subset(c.labels == Label.MOTION)


def test_moving_points_equal_transformed_closed_points():
    rng = np.random.default_rng(2)
    for kind in ("revolute", "prismatic"):
        scene = random_scene(kind, rng)
        closed = sample_cloud(scene, SensorModel(1500, seed=4))
        for q in rng.uniform(0, scene.joint_limit, 5):
            moved = sample_cloud(scene.with_state(q), SensorModel(1500, seed=4))
            mask = np.isin(closed.labels, [Label.MOTION, Label.HANDLE])
            np.testing.assert_allclose(moved.points[mask], scene.transform(closed.points[mask], q), atol=1e-12)
            np.testing.assert_array_equal(moved.points[~mask], closed.points[~mask])


def test_aligned_drawer_pull():
    scene = make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2)
    out = apply_end_effector_motion(scene, GraspModel.at_handle(scene), [0, 0.05, 0])
    assert out.scene.joint_state == pytest.approx(0.05)
    assert not out.slipped and out.grasp.attached


def test_orthogonal_drawer_push_slips():
    scene = make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2)
    out = apply_end_effector_motion(scene, GraspModel.at_handle(scene, 0.02), [0.05, 0, 0])
    assert out.scene.joint_state == 0.0
    np.testing.assert_array_equal(out.realized, 0.0)
    assert out.deviation == pytest.approx(0.05)
    assert out.slipped and not out.grasp.attached


def test_detached_grasp_has_no_effect():
    scene = drawer()
    grasp = GraspModel(scene.grip_point(), attached=False)
    out = apply_end_effector_motion(scene, grasp, [0, 0.05, 0])
    assert out.scene.joint_state == 0.0


def test_door_tangent_command_deviation_bound():
    for left in (True, False):
        scene = door(hinge_left=left).with_state(0.3)
        rho = scene.grip_radius
        grip = scene.grip_point()
        radial = grip - scene.joint.pivot
        radial[2] = 0.0
        tangent = np.cross(scene.joint.direction, radial) / np.linalg.norm(radial)
        out = apply_end_effector_motion(scene, GraspModel(grip), 0.05 * tangent)
        assert out.scene.joint_state - 0.3 == pytest.approx(0.05 / rho, rel=1e-12)
        assert out.deviation <= 0.05**2 / (2 * rho) + 1e-12
        assert not out.slipped


def test_limits_clamp():
    scene = drawer().with_state(drawer().joint_limit - 0.01)
    out = apply_end_effector_motion(scene, GraspModel.at_handle(scene, 1.0), 0.05 * scene.joint.direction)
    assert out.scene.joint_state == scene.joint_limit


def test_grip_moves_rigidly_with_part():
    scene = door()
    grasp = GraspModel.at_handle(scene)
    for _ in range(5):
        out = apply_end_effector_motion(scene, grasp, 0.05 * scene.pull_direction(0.05))
        scene, grasp = out.scene, out.grasp
        np.testing.assert_allclose(grasp.grip_point, scene.grip_point(), atol=1e-12)


def test_round_trip_joint_state(rng):
    for kind in ("revolute", "prismatic"):
        scene = random_scene(kind, rng).with_state(0.2)
        start = scene.grip_point()
        dq = 0.13
        assert np.linalg.norm(scene.grip_point(0.2 + dq) - start) > 0.01
        back = scene.with_state(0.2 + dq).with_state(0.2).grip_point()
        np.testing.assert_allclose(back, start, atol=1e-9)


def test_round_trip_commands_prismatic():
    scene = drawer().with_state(0.2)
    grasp = GraspModel.at_handle(scene)
    start = grasp.grip_point.copy()
    out = apply_end_effector_motion(scene, grasp, 0.07 * scene.joint.direction)
    back = apply_end_effector_motion(out.scene, out.grasp, -out.realized)
    np.testing.assert_allclose(back.grasp.grip_point, start, atol=1e-9)


def test_round_trip_commands_revolute():
    scene = door().with_state(0.5)
    start = scene.grip_point()
    out = apply_end_effector_motion(scene, GraspModel(start), 0.05 * scene.pull_direction(0.05))
    reverse = out.scene.with_state(0.5)
    np.testing.assert_allclose(reverse.grip_point(), start, atol=1e-9)


def test_offset_carries_over_between_steps():
    scene = make_drawer_scene(0.6, 0.6, 0.6, 0.4, 0.2)
    grasp = GraspModel.at_handle(scene, 0.02)
    sideways = np.array([0.012, 0.05, 0.0])
    out1 = apply_end_effector_motion(scene, grasp, sideways)
    assert not out1.slipped
    np.testing.assert_allclose(out1.grasp.offset, [0.012, 0, 0], atol=1e-15)
    out2 = apply_end_effector_motion(out1.scene, out1.grasp, sideways)
    assert out2.slipped


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-0.05, 0.05), st.floats(0.0, 0.06)), min_size=1, max_size=10),
    st.floats(0.005, 0.05),
    st.floats(0.1, 0.99),
)
def test_slip_monotone_in_tolerance(commands, tau, shrink):
    def first_slip(tol):
        scene = drawer()
        grasp = GraspModel.at_handle(scene, tol)
        for i, (dx, dy) in enumerate(commands):
            out = apply_end_effector_motion(scene, grasp, [dx, dy, 0.0])
            scene, grasp = out.scene, out.grasp
            if out.slipped:
                return i
        return None

    at_tau = first_slip(tau)
    if at_tau is not None:
        smaller = first_slip(tau * shrink)
        assert smaller is not None and smaller <= at_tau


def test_label_recall_precision_noise_free():
    fp = FilterParams(0.04, 1)
    params = MotionExtractionParams(0.01, fp)
    for scene, q in ((drawer(), 0.15), (door(), math.radians(30))):
        sensor = SensorModel(3000, seed=3)
        frame0 = sample_cloud(scene, sensor)
        body = fit_obb(frame0.subset(frame0.labels == Label.BODY))
        frame = sample_cloud(scene.with_state(q), sensor)
        part = extract_motion_part(frame.subset(frame.labels != Label.HANDLE), body, params)
        truth = (frame.labels == Label.MOTION) & ~body.inside_mask(frame.points, 0.01)
        assert (part.labels == Label.MOTION).all()
        assert len(part) == truth.sum()


def test_pull_direction_drawer_is_axis():
    scene = drawer()
    np.testing.assert_array_equal(scene.pull_direction(0.05), scene.joint.direction)


def test_kind_mismatch_rejected():
    scene = drawer()
    from dataclasses import replace

    from axisloop.geometry import JointAxis

    with pytest.raises(ValueError):
        replace(scene, joint=JointAxis(JointKind.REVOLUTE, (0, 0, 0), (0, 0, 1)))
