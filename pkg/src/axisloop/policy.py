"""Perception-action loop: pull a little, estimate the joint, follow the estimate.

The closed loop re-estimates the axis after every step over a short frame
window. The open-loop baseline freezes the first estimate it gets. Both spend
the same step size and budget.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .cloud import (
    FilterParams,
    MotionExtractionParams,
    extract_motion_part,
    filter_cloud,
    refine_body_obb,
)
from .errors import DegenerateEstimate, EmptyMotionPart
from .estimation import AxisEstimate, AxisTracker, WindowPolicy
from .geometry import TOL, JointAxis, JointKind, PointCloud, angle_between, rotate_about_axis
from .sim import ArticulatedScene, GraspModel, SensorModel, apply_end_effector_motion, sample_cloud


class Mode(str, enum.Enum):
    CLOSED_LOOP = "closed_loop"
    OPEN_LOOP = "open_loop"


@dataclass(frozen=True)
class PolicyConfig:
    """Controller settings.

    ``max_steps`` counts every commanded step, init pulls included.
    ``oracle_axis`` replaces estimates by the scene's true joint.
    """

    mode: Mode = Mode.CLOSED_LOOP
    step_size: float = 0.05
    init_steps: int = 2
    max_steps: int = 24
    target: float = math.radians(45.0)
    oracle_axis: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.init_steps < 0 or self.max_steps < self.init_steps + 1:
            raise ValueError("need max_steps >= init_steps + 1")


@dataclass(frozen=True)
class PerceptionConfig:
    """Filtering, motion extraction and window settings used inside a trial."""

    filter: FilterParams = field(default_factory=lambda: FilterParams(0.04, 3))
    extraction: MotionExtractionParams = field(
        default_factory=lambda: MotionExtractionParams(0.01, FilterParams(0.04, 3))
    )
    window: WindowPolicy = field(default_factory=WindowPolicy)
    cluster_motion: bool = True
    min_motion_points: int = 30


@dataclass(frozen=True)
class StepRecord:
    """One commanded step. Errors refer to the axis used for planning it.

    Errors are NaN when no estimate was available; pivot error is NaN for
    prismatic joints, whose pivot is arbitrary along the slide.
    """

    direction_error_deg: float
    pivot_error_m: float
    slipped: bool
    joint_state: float
    status: str = "planned"


@dataclass(frozen=True)
class TrialReport:
    success: bool
    steps_used: int
    final_joint_state: float
    per_step: tuple[StepRecord, ...]
    seed: int
    target: float
    mode: Mode = Mode.CLOSED_LOOP
    failure: str | None = None

    def final_direction_error(self) -> float:
        """Direction error of the last planned step (NaN if none)."""
        errs = [s.direction_error_deg for s in self.per_step if not math.isnan(s.direction_error_deg)]
        return errs[-1] if errs else float("nan")

    def final_pivot_error(self) -> float:
        errs = [s.pivot_error_m for s in self.per_step if not math.isnan(s.pivot_error_m)]
        return errs[-1] if errs else float("nan")


def axis_errors(estimate: JointAxis | None, truth: JointAxis) -> tuple[float, float]:
    """(direction error in degrees, pivot error in meters) against the true joint."""
    if estimate is None:
        return float("nan"), float("nan")
    direction = math.degrees(angle_between(estimate.direction, truth.direction))
    if truth.kind is JointKind.PRISMATIC:
        return direction, float("nan")
    return direction, float(truth.distance_to(estimate.pivot))


def plan_next_waypoint(
    estimate: AxisEstimate | JointAxis, grip, step_size: float, last_motion=None
) -> np.ndarray:
    """Grip displacement for the next step along the estimated joint.

    Prismatic: ``step_size`` along the estimated direction, flipped if that
    would oppose ``last_motion``. Revolute: the chord of the circle about the
    estimated axis through ``grip`` spanning an arc of ``step_size``.

    Raises:
        DegenerateEstimate: estimated pivot within 1 cm of the grip (top-down).
    """
    axis = estimate.axis if isinstance(estimate, AxisEstimate) else estimate
    grip = np.asarray(grip, dtype=float)
    if axis.kind is JointKind.PRISMATIC:
        direction = axis.direction
        if last_motion is not None and float(np.dot(direction, last_motion)) < 0:
            direction = -direction
        return step_size * direction
    rho = float(axis.distance_to(grip))
    if rho < TOL.degenerate_radius:
        raise DegenerateEstimate(f"pivot is {rho:.4g} m from the grip")
    return rotate_about_axis(grip, axis, step_size / rho) - grip


@dataclass
class FramePipeline:
    """Per-frame perception shared by simulated trials and offline replay.

    Frame 0 fixes the body box; every later frame contributes its motion part
    to the axis tracker.
    """

    kind: JointKind
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)

    def __post_init__(self):
        self.kind = JointKind(self.kind)
        radius = self.perception.extraction.refilter.r if self.perception.cluster_motion else None
        self.tracker = AxisTracker(
            self.kind, self.perception.window, radius, self.perception.min_motion_points
        )
        self.body_obb = None
        self.count = 0
        self.status: list[str] = []
        self.frame_estimates: list[AxisEstimate | None] = []

    def add(self, cloud: PointCloud) -> AxisEstimate | None:
        k = self.count
        self.count += 1
        filtered = filter_cloud(cloud, self.perception.filter)
        if k == 0:
            self.body_obb = refine_body_obb(filtered, self.perception.filter)
            self.tracker.add_frame(None, 0)
            self.tracker.skipped[0] = "reference"
            return self._note(None, "reference")
        try:
            part = extract_motion_part(filtered, self.body_obb, self.perception.extraction)
        except EmptyMotionPart:
            part = None
        n_before = len(self.tracker.estimates)
        self.tracker.add_frame(part, k)
        if len(self.tracker.estimates) > n_before:
            return self._note(self.tracker.latest, "ok")
        return self._note(None, self.tracker.skipped.get(k, "skipped"))

    def _note(self, est, status):
        self.status.append(status)
        self.frame_estimates.append(est)
        return est


def init_manipulation(
    scene: ArticulatedScene,
    grasp: GraspModel,
    config: PolicyConfig,
    sensor: SensorModel,
    rng: np.random.Generator | None = None,
    pull_sign: float = 1.0,
):
    """Pull ``init_steps`` times along the handle's outward direction.

    Returns ``(frames, scene, grasp, records)``; ``frames`` starts with the
    closed-state frame and gains one frame per step. Stops early on slip.
    """
    rng = sensor.rng() if rng is None else rng
    frames = [sample_cloud(scene, sensor, rng)]
    records = []
    for _ in range(config.init_steps):
        delta = pull_sign * config.step_size * scene.pull_direction(config.step_size)
        out = apply_end_effector_motion(scene, grasp, delta)
        scene, grasp = out.scene, out.grasp
        records.append(StepRecord(math.nan, math.nan, out.slipped, scene.joint_state, "init"))
        frames.append(sample_cloud(scene, sensor, rng))
        if out.slipped:
            break
    return frames, scene, grasp, records


def simulate(
    scene: ArticulatedScene,
    sensor: SensorModel,
    policy: PolicyConfig,
    targets: Sequence[float] | None = None,
    perception: PerceptionConfig | None = None,
    slip_tolerance: float = 0.02,
) -> list[TrialReport]:
    """Run one trial and report it against each of ``targets``.

    The controller never looks at the target except to stop, so a single run
    to the largest target yields, for every smaller target, exactly the report
    a dedicated run would give: its prefix up to the first step that reached
    that target.
    """
    targets = [policy.target] if targets is None else [float(t) for t in targets]
    perception = PerceptionConfig() if perception is None else perception
    kind = scene.kind
    rng = sensor.rng()
    goal = max(targets)
    start_state = scene.joint_state
    grasp = GraspModel.at_handle(scene, slip_tolerance)
    pipeline = FramePipeline(kind, perception)
    pipeline.add(sample_cloud(scene, sensor, rng))
    records: list[StepRecord] = []
    failure = None
    last_delta = None
    last_motion = None
    frozen = None
    fallback_used = False

    def step(delta, errors, status):
        nonlocal scene, grasp, last_delta, last_motion
        out = apply_end_effector_motion(scene, grasp, delta)
        scene, grasp = out.scene, out.grasp
        last_delta, last_motion = np.asarray(delta, dtype=float), out.realized
        records.append(StepRecord(*errors, out.slipped, scene.joint_state, status))
        if not out.slipped and scene.joint_state < goal and len(records) < policy.max_steps:
            pipeline.add(sample_cloud(scene, sensor, rng))
        return out.slipped

    for _ in range(policy.init_steps):
        if scene.joint_state >= goal:
            break
        delta = policy.step_size * scene.pull_direction(policy.step_size)
        if step(delta, (math.nan, math.nan), "init"):
            failure = "slip"
            break

    while failure is None and scene.joint_state < goal and len(records) < policy.max_steps:
        if policy.oracle_axis:
            axis = scene.joint
        else:
            est = pipeline.tracker.latest
            if policy.mode is Mode.OPEN_LOOP:
                frozen = frozen or pipeline.tracker.first
                est = frozen
            axis = None if est is None else est.axis
        errors = axis_errors(axis, scene.joint)
        if axis is None:
            delta, status = last_delta, "no_estimate"
        else:
            try:
                delta = plan_next_waypoint(axis, grasp.grip_point, policy.step_size, last_motion)
                status = "planned"
                fallback_used = False
            except DegenerateEstimate:
                if fallback_used or last_delta is None:
                    failure = "degenerate_estimate"
                    break
                delta, status, fallback_used = last_delta, "degenerate_fallback", True
        if delta is None:
            failure = "no_estimate"
            break
        if step(delta, errors, status):
            failure = "slip"

    reports = []
    for target in targets:
        if start_state >= target:
            used, reason = [], None
        else:
            hit = next((i for i, r in enumerate(records) if r.joint_state >= target), None)
            if hit is None:
                used, reason = records, failure or "budget"
            else:
                used, reason = records[: hit + 1], None
        reports.append(
            TrialReport(
                success=reason is None,
                steps_used=len(used),
                final_joint_state=used[-1].joint_state if used else start_state,
                per_step=tuple(used),
                seed=sensor.seed,
                target=target,
                mode=policy.mode,
                failure=reason,
            )
        )
    return reports


def run_trial(
    scene: ArticulatedScene,
    sensor: SensorModel,
    policy: PolicyConfig,
    kind: JointKind | None = None,
    perception: PerceptionConfig | None = None,
    slip_tolerance: float = 0.02,
) -> TrialReport:
    """Run one trial until the target, the budget or a slip ends it."""
    if kind is not None and JointKind(kind) is not scene.kind:
        raise ValueError("kind does not match the scene")
    return simulate(scene, sensor, policy, None, perception, slip_tolerance)[0]
