"""Deterministic articulated-cabinet simulator.

A scene is a cabinet body box plus a movable part (door panel or drawer) and
a handle bar rigidly attached to it. Clouds are drawn uniformly over box
faces and tagged with the part they came from. Manipulation is kinematic: a
commanded grip displacement is projected onto the joint's feasible motion and
the grasp slips once the hand drifts too far from the handle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import JointAxis, JointKind, Label, PointCloud, rotate_about_axis

HANDLE_GAP = 0.06
HANDLE_SIZE = (0.02, 0.02, 0.1)
DOOR_THICKNESS = 0.02
DOOR_LIMIT = math.radians(100.0)


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Box:
    """Solid box: ``world = center + rotation @ local``, local in ``[-half, half]``."""

    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "half", np.asarray(self.half, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))

    @classmethod
    def from_bounds(cls, lo, hi, frame_rotation=None, frame_origin=None) -> Box:
        """Box with local-frame bounds ``lo..hi``, mapped by an optional rigid frame."""
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        rot = np.eye(3) if frame_rotation is None else np.asarray(frame_rotation, dtype=float)
        origin = np.zeros(3) if frame_origin is None else np.asarray(frame_origin, dtype=float)
        return cls(origin + rot @ (0.5 * (lo + hi)), 0.5 * (hi - lo), rot)

    def faces(self):
        """``(axis, sign, outward_normal, area)`` for each of the six faces."""
        h = self.half
        for k in range(3):
            a, b = [i for i in range(3) if i != k]
            for sign in (-1.0, 1.0):
                yield k, sign, sign * self.rotation[:, k], 4.0 * h[a] * h[b]

    @property
    def area(self) -> float:
        return sum(f[3] for f in self.faces())

    def sample_faces(self, counts, rng) -> np.ndarray:
        """Uniform points on each face; ``counts`` follows :meth:`faces` order."""
        chunks = []
        for (k, sign, _, _), n in zip(self.faces(), counts):
            if n == 0:
                continue
            local = rng.uniform(-1.0, 1.0, size=(n, 3)) * self.half
            local[:, k] = sign * self.half[k]
            chunks.append(local)
        if not chunks:
            return np.empty((0, 3))
        return np.concatenate(chunks) @ self.rotation.T + self.center


def apportion(weights, total: int) -> np.ndarray:
    """Split ``total`` integer counts proportionally (largest remainder)."""
    weights = np.asarray(weights, dtype=float)
    if total <= 0 or weights.sum() <= 0:
        return np.zeros(len(weights), dtype=np.int64)
    exact = weights / weights.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


@dataclass(frozen=True, eq=False)
class ArticulatedScene:
    """Cabinet with one movable part. Boxes are given in the closed state."""

    kind: JointKind
    body: Box
    movable: Box
    handle: Box
    joint: JointAxis
    joint_state: float = 0.0
    joint_limit: float = DOOR_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "kind", JointKind(self.kind))
        if self.joint.kind is not self.kind:
            raise ValueError("joint kind does not match scene kind")
        if not 0.0 <= self.joint_state <= self.joint_limit:
            raise ValueError("joint state outside limits")

    def with_state(self, q: float) -> ArticulatedScene:
        return replace(self, joint_state=float(q))

    def transform(self, points, q: float | None = None) -> np.ndarray:
        """Move closed-state points of the movable part to joint state ``q``."""
        q = self.joint_state if q is None else q
        pts = np.asarray(points, dtype=float)
        if self.kind is JointKind.REVOLUTE:
            return rotate_about_axis(pts, self.joint, q)
        return pts + q * self.joint.direction

    def transform_vectors(self, vectors, q: float | None = None) -> np.ndarray:
        q = self.joint_state if q is None else q
        v = np.asarray(vectors, dtype=float)
        if self.kind is JointKind.REVOLUTE:
            origin = JointAxis(JointKind.REVOLUTE, np.zeros(3), self.joint.direction)
            return rotate_about_axis(v, origin, q)
        return v

    @property
    def closed_grip(self) -> np.ndarray:
        return self.handle.center.copy()

    def grip_point(self, q: float | None = None) -> np.ndarray:
        return self.transform(self.closed_grip, q)

    @property
    def grip_radius(self) -> float:
        """Distance from the grip to the hinge line (revolute scenes)."""
        return float(self.joint.distance_to(self.closed_grip))

    def pull_direction(self, step_size: float) -> np.ndarray:
        """Outward pull of the grasp frame at the current state.

        A drawer is pulled along its slide. A door is pulled along the chord
        that a ``step_size`` long pull traces on the handle's circle.
        """
        if self.kind is JointKind.PRISMATIC:
            return self.joint.direction.copy()
        rho = self.grip_radius
        half_turn = math.asin(min(1.0, 0.5 * step_size / rho))
        grip = self.grip_point()
        chord = rotate_about_axis(grip, self.joint, 2 * half_turn) - grip
        return chord / np.linalg.norm(chord)

    def parts(self):
        """``(closed-state box, label, moves_with_joint)`` for every part."""
        return (
            (self.body, Label.BODY, False),
            (self.movable, Label.MOTION, True),
            (self.handle, Label.HANDLE, True),
        )


@dataclass(frozen=True, eq=False)
class SensorModel:
    surface_density: float = 2000.0
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_box: tuple | None = None
    view_direction: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.surface_density > 0:
            raise ValueError("surface density must be positive")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier fraction must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def sample_boxes(boxes, labels, density, rng, normal_maps=None, view_direction=None):
    """Sample labeled points over box surfaces.

    ``normal_maps[i]`` (optional) maps closed-state face normals of box ``i`` to
    their current orientation, used for back-face culling.
    """
    pts, labs = [], []
    for i, (box, label) in enumerate(zip(boxes, labels)):
        faces = list(box.faces())
        areas = np.array([f[3] for f in faces])
        if view_direction is not None:
            normals = np.array([f[2] for f in faces])
            if normal_maps is not None and normal_maps[i] is not None:
                normals = normal_maps[i](normals)
            areas = np.where(normals @ np.asarray(view_direction, dtype=float) < 0, areas, 0.0)
        counts = apportion(areas, int(round(areas.sum() * density)))
        p = box.sample_faces(counts, rng)
        pts.append(p)
        labs.append(np.full(len(p), int(label), dtype=np.uint8))
    return np.concatenate(pts), np.concatenate(labs)


def sample_cloud(
    scene: ArticulatedScene, sensor: SensorModel, rng: np.random.Generator | None = None
) -> PointCloud:
    """Noisy labeled cloud of the scene at its current joint state.

    Without an explicit ``rng`` the sensor seed is used, so repeated calls
    return identical clouds.
    """
    rng = sensor.rng() if rng is None else rng
    chunks, labels = [], []
    for box, label, moving in scene.parts():
        nmap = scene.transform_vectors if moving else None
        p, lab = sample_boxes(
            [box], [label], sensor.surface_density, rng, [nmap], sensor.view_direction
        )
        if moving:
            p = scene.transform(p)
        chunks.append(p)
        labels.append(lab)
    pts = np.concatenate(chunks)
    labs = np.concatenate(labels)
    if sensor.noise_sigma > 0:
        pts = pts + rng.normal(0.0, sensor.noise_sigma, size=pts.shape)
    n_out = int(round(sensor.outlier_fraction * len(pts)))
    if n_out:
        if sensor.outlier_box is None:
            lo, hi = pts.min(axis=0) - 0.2, pts.max(axis=0) + 0.2
        else:
            lo, hi = (np.asarray(v, dtype=float) for v in sensor.outlier_box)
        pts = np.concatenate([pts, rng.uniform(lo, hi, size=(n_out, 3))])
        labs = np.concatenate([labs, np.full(n_out, int(Label.OUTLIER), dtype=np.uint8)])
    return PointCloud(pts, labs)


@dataclass(frozen=True, eq=False)
class GraspModel:
    """Hand holding the handle.

    ``offset`` is the hand position relative to the grip point: the part of
    earlier commands the joint could not follow. It carries over between
    steps, and the grasp slips once its norm exceeds ``slip_tolerance``.
    """

    grip_point: np.ndarray
    attached: bool = True
    slip_tolerance: float = 0.02
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "grip_point", np.asarray(self.grip_point, dtype=float).reshape(3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))

    @classmethod
    def at_handle(cls, scene: ArticulatedScene, slip_tolerance: float = 0.02) -> GraspModel:
        return cls(scene.grip_point(), True, slip_tolerance)


@dataclass(frozen=True, eq=False)
class StepOutcome:
    scene: ArticulatedScene
    grasp: GraspModel
    realized: np.ndarray
    deviation: float
    slipped: bool


def joint_increment(scene: ArticulatedScene, grip, motion) -> float:
    """Joint-space projection of a grip displacement onto the true joint."""
    axis = scene.joint
    motion = np.asarray(motion, dtype=float)
    if scene.kind is JointKind.PRISMATIC:
        return float(motion @ axis.direction)
    r = np.asarray(grip, dtype=float) - axis.pivot
    r_perp = r - (r @ axis.direction) * axis.direction
    return float(np.cross(r, motion) @ axis.direction / (r_perp @ r_perp))


def apply_end_effector_motion(
    scene: ArticulatedScene, grasp: GraspModel, delta
) -> StepOutcome:
    """Move the hand by ``delta`` and let the joint follow as far as it can.

    A detached grasp has no effect. Otherwise the hand's displacement from the
    grip (carried offset plus ``delta``) is projected onto the joint, the state
    is clamped to its limits, and the remaining hand-to-grip offset decides
    whether the grasp slips.
    """
    delta = np.asarray(delta, dtype=float).reshape(3)
    if not grasp.attached:
        return StepOutcome(scene, grasp, np.zeros(3), 0.0, False)
    grip = grasp.grip_point
    command = grasp.offset + delta
    dq = joint_increment(scene, grip, command)
    q_new = min(max(scene.joint_state + dq, 0.0), scene.joint_limit)
    moved = scene.with_state(q_new)
    new_grip = moved.grip_point()
    realized = new_grip - grip
    offset = command - realized
    deviation = float(np.linalg.norm(offset))
    slipped = deviation > grasp.slip_tolerance
    new_grasp = GraspModel(new_grip, not slipped, grasp.slip_tolerance, offset)
    return StepOutcome(moved, new_grasp, realized, deviation, slipped)


@dataclass(frozen=True)
class SceneRanges:
    """Randomization ranges for generated cabinets (meters, radians)."""

    body: tuple[float, float] = (0.4, 1.0)
    drawer_depth: tuple[float, float] = (0.55, 1.0)
    door_width: tuple[float, float] = (0.3, 0.8)
    drawer_width_frac: tuple[float, float] = (0.6, 0.9)
    drawer_height: tuple[float, float] = (0.12, 0.3)
    position_jitter: float = 0.1
    yaw_jitter: float = math.radians(10.0)
    handle_inset: float = 0.04


def make_door_scene(
    width, depth, height, door_width, *, door_x=0.0, hinge_left=True,
    yaw=0.0, origin=(0.0, 0.0, 0.0), handle_inset=0.04,
) -> ArticulatedScene:
    """Cabinet whose front carries a vertical-hinge door panel.

    Local frame: body spans ``[0, width] x [0, depth] x [0, height]`` and its
    front faces ``+y``. The hinge runs through the panel's mid-thickness at one
    of its vertical edges.
    """
    rot = _rot_z(yaw)
    org = np.asarray(origin, dtype=float)
    t = DOOR_THICKNESS
    z0, z1 = 0.02, height - 0.02
    body = Box.from_bounds((0, 0, 0), (width, depth, height), rot, org)
    panel = Box.from_bounds((door_x, depth, z0), (door_x + door_width, depth + t, z1), rot, org)
    u = door_width - handle_inset
    hx = door_x + u if hinge_left else door_x + door_width - u
    hy = depth + t + HANDLE_GAP + HANDLE_SIZE[1] / 2
    hz = 0.5 * (z0 + z1)
    half = np.array(HANDLE_SIZE) / 2
    handle = Box.from_bounds((hx, hy, hz) - half, (hx, hy, hz) + half, rot, org)
    hinge_local = np.array([door_x if hinge_left else door_x + door_width, depth + t / 2, hz])
    direction = np.array([0.0, 0.0, 1.0 if hinge_left else -1.0])
    joint = JointAxis(JointKind.REVOLUTE, org + rot @ hinge_local, direction)
    return ArticulatedScene(JointKind.REVOLUTE, body, panel, handle, joint, 0.0, DOOR_LIMIT)


def make_drawer_scene(
    width, depth, height, drawer_width, drawer_height, *, drawer_x=0.0, drawer_z=0.02,
    yaw=0.0, origin=(0.0, 0.0, 0.0),
) -> ArticulatedScene:
    """Cabinet with a drawer flush with the body front, sliding along local ``+y``."""
    rot = _rot_z(yaw)
    org = np.asarray(origin, dtype=float)
    drawer_depth = depth - 0.02
    drawer = Box.from_bounds(
        (drawer_x, depth - drawer_depth, drawer_z),
        (drawer_x + drawer_width, depth, drawer_z + drawer_height), rot, org,
    )
    body = Box.from_bounds((0, 0, 0), (width, depth, height), rot, org)
    hx = drawer_x + drawer_width / 2
    hy = depth + HANDLE_GAP + HANDLE_SIZE[1] / 2
    hz = drawer_z + drawer_height / 2
    half = np.array([HANDLE_SIZE[2], HANDLE_SIZE[1], HANDLE_SIZE[0]]) / 2
    handle = Box.from_bounds((hx, hy, hz) - half, (hx, hy, hz) + half, rot, org)
    joint = JointAxis(JointKind.PRISMATIC, org + rot @ np.array([hx, depth, hz]), rot @ [0.0, 1.0, 0.0])
    return ArticulatedScene(
        JointKind.PRISMATIC, body, drawer, handle, joint, 0.0, 0.9 * drawer_depth
    )


def random_scene(kind, rng: np.random.Generator, ranges: SceneRanges = SceneRanges()) -> ArticulatedScene:
    """Draw a cabinet with a door (revolute) or drawer (prismatic)."""
    kind = JointKind(kind)
    yaw = rng.uniform(-ranges.yaw_jitter, ranges.yaw_jitter)
    jitter = ranges.position_jitter
    origin = (rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter), 0.0)
    width, height = rng.uniform(*ranges.body, size=2)
    if kind is JointKind.REVOLUTE:
        depth = rng.uniform(*ranges.body)
        lo, hi = ranges.door_width
        door_width = rng.uniform(lo, min(hi, width))
        door_x = rng.uniform(0.0, width - door_width)
        hinge_left = bool(rng.random() < 0.5)
        return make_door_scene(
            width, depth, height, door_width, door_x=door_x, hinge_left=hinge_left,
            yaw=yaw, origin=origin, handle_inset=ranges.handle_inset,
        )
    depth = rng.uniform(*ranges.drawer_depth)
    drawer_width = width * rng.uniform(*ranges.drawer_width_frac)
    drawer_height = min(rng.uniform(*ranges.drawer_height), 0.5 * height)
    drawer_x = rng.uniform(0.0, width - drawer_width)
    drawer_z = rng.uniform(0.02, height - drawer_height - 0.02)
    return make_drawer_scene(
        width, depth, height, drawer_width, drawer_height,
        drawer_x=drawer_x, drawer_z=drawer_z, yaw=yaw, origin=origin,
    )
