"""Joint-axis estimation from pairs of motion-part OBBs.

Prismatic joints take the direction between the two box centers. Revolute
joints are vertical: the pivot is where the two boxes' long-axis midlines
cross in the top-down view, and the rotation sense comes from the sign of the
center displacement against the tangent ``(pivot - O_st) x z``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .cloud import fit_obb, largest_cluster
from .errors import (
    DegenerateCloud,
    DegenerateRotation,
    InsufficientMotion,
    NoValidWindow,
    ParallelLines,
)
from .geometry import (
    TOL,
    Z_AXIS,
    AxisEvidence,
    JointAxis,
    JointKind,
    OrientedBoundingBox,
    PointCloud,
    Rect2,
    line_intersection_2d,
)


@dataclass(frozen=True)
class WindowPolicy:
    """How the closed loop picks its frame pair.

    ``max_length`` is counted in manipulation steps; the two gates reject
    pairs whose boxes barely moved.
    """

    max_length: int = 4
    min_displacement: float = TOL.min_displacement
    min_rotation: float = TOL.min_rotation

    def __post_init__(self):
        if self.max_length < 1:
            raise ValueError("window length must be at least 1")


@dataclass(frozen=True)
class FrameWindow:
    st: int
    ed: int
    min_displacement: float = TOL.min_displacement

    def __post_init__(self):
        if not 0 <= self.st < self.ed:
            raise ValueError("frame window needs 0 <= st < ed")


@dataclass(frozen=True, eq=False)
class AxisEstimate:
    axis: JointAxis
    evidence: AxisEvidence
    low_confidence: bool = False
    window: FrameWindow | None = None


def heading_difference(r1: Rect2, r2: Rect2) -> float:
    """Unsigned angle between the long axes of two rectangles, in [0, pi/2]."""
    diff = abs(r1.heading - r2.heading) % math.pi
    return min(diff, math.pi - diff)


def estimate_prismatic(
    obb_st: OrientedBoundingBox,
    obb_ed: OrientedBoundingBox,
    min_displacement: float = TOL.min_displacement,
) -> AxisEstimate:
    """Pivot at the start center, direction along the center displacement."""
    o_st, o_ed = obb_st.center, obb_ed.center
    d = o_ed - o_st
    dist = float(np.linalg.norm(d))
    if dist < min_displacement or dist == 0.0:
        raise InsufficientMotion(f"center moved {dist:.4g} m, gate is {min_displacement:.4g} m")
    axis = JointAxis(JointKind.PRISMATIC, o_st, d / dist)
    return AxisEstimate(axis, AxisEvidence(o_st, o_ed, d))


def estimate_revolute(
    obb_st: OrientedBoundingBox,
    obb_ed: OrientedBoundingBox,
    parallel_tol: float = TOL.midline_parallel,
) -> AxisEstimate:
    """Vertical axis through the crossing of the two long-axis midlines.

    Raises:
        DegenerateRotation: midlines within ``parallel_tol`` radians of
            parallel, or the displacement is orthogonal to the tangent.
    """
    r_st, r_ed = obb_st.rect, obb_ed.rect
    try:
        pivot_2d = line_intersection_2d(
            r_st.center, r_st.long_axis, r_ed.center, r_ed.long_axis, math.sin(parallel_tol)
        )
    except ParallelLines:
        raise DegenerateRotation("midlines are near-parallel") from None
    o_st, o_ed = obb_st.center, obb_ed.center
    pivot = np.array([pivot_2d[0], pivot_2d[1], o_st[2]])
    d = o_ed - o_st
    t = np.cross(pivot - o_st, Z_AXIS)
    sense = float(np.dot(d, t))
    if sense == 0.0:
        raise DegenerateRotation("displacement is orthogonal to the tangent")
    direction = Z_AXIS.copy() if sense > 0 else -Z_AXIS
    flags = tuple(
        f"near_square_{name}"
        for name, rect in (("st", r_st), ("ed", r_ed))
        if rect.aspect < TOL.square_ratio
    )
    axis = JointAxis(JointKind.REVOLUTE, pivot, direction)
    evidence = AxisEvidence(o_st, o_ed, d, t, pivot_2d, flags)
    return AxisEstimate(axis, evidence, low_confidence=bool(flags))


def estimate_axis(
    kind: JointKind,
    obb_st: OrientedBoundingBox,
    obb_ed: OrientedBoundingBox,
    policy: WindowPolicy = WindowPolicy(),
) -> AxisEstimate:
    """Gate a frame pair with ``policy`` and dispatch on joint kind."""
    kind = JointKind(kind)
    if kind is JointKind.PRISMATIC:
        return estimate_prismatic(obb_st, obb_ed, policy.min_displacement)
    dist = float(np.linalg.norm(obb_ed.center - obb_st.center))
    if dist < policy.min_displacement:
        raise InsufficientMotion(f"center moved {dist:.4g} m")
    turn = heading_difference(obb_st.rect, obb_ed.rect)
    if turn < policy.min_rotation:
        raise DegenerateRotation(f"boxes turned {math.degrees(turn):.3g} deg only")
    return estimate_revolute(obb_st, obb_ed)


class AxisTracker:
    """Sliding-window axis estimator fed one motion-part frame at a time.

    For frame ``k`` the window is ``[max(first_valid, k - max_length), k]``;
    if the start frame has no usable box the next usable one is taken. When
    ``cluster_radius`` is set, each frame's box is fit to its largest
    radius-connected cluster so protruding handles do not bias the midline.
    Parts with fewer than ``min_points`` points count as no motion, which is
    what a detached handle alone looks like before the part has moved.
    """

    def __init__(
        self,
        kind: JointKind,
        policy: WindowPolicy = WindowPolicy(),
        cluster_radius: float | None = None,
        min_points: int = 0,
    ):
        self.kind = JointKind(kind)
        self.policy = policy
        self.cluster_radius = cluster_radius
        self.min_points = min_points
        self.boxes: dict[int, OrientedBoundingBox] = {}
        self.estimates: list[AxisEstimate] = []
        self.skipped: dict[int, str] = {}
        self._next = 0

    @property
    def latest(self) -> AxisEstimate | None:
        return self.estimates[-1] if self.estimates else None

    @property
    def first(self) -> AxisEstimate | None:
        return self.estimates[0] if self.estimates else None

    def select(self, cloud: PointCloud) -> PointCloud:
        if self.cluster_radius is not None and len(cloud):
            cloud = largest_cluster(cloud, self.cluster_radius)
        return cloud

    def fit_box(self, cloud: PointCloud) -> OrientedBoundingBox:
        return fit_obb(self.select(cloud))

    def add_frame(self, cloud: PointCloud | None, index: int | None = None) -> AxisEstimate | None:
        """Register frame ``index`` (default: next index); return its estimate if any."""
        k = self._next if index is None else index
        if k < self._next:
            raise ValueError("frames must be added in increasing order")
        self._next = k + 1
        if cloud is None:
            self.skipped[k] = "empty_motion"
            return None
        cloud = self.select(cloud)
        if len(cloud) < self.min_points:
            self.skipped[k] = "too_few_points"
            return None
        try:
            self.boxes[k] = fit_obb(cloud)
        except DegenerateCloud:
            self.skipped[k] = "degenerate_cloud"
            return None
        valid = sorted(i for i in self.boxes if i < k)
        if not valid:
            self.skipped[k] = "first_valid"
            return None
        lo = max(valid[0], k - self.policy.max_length)
        st = next(i for i in valid if i >= lo) if valid[-1] >= lo else None
        if st is None:
            self.skipped[k] = "no_window"
            return None
        try:
            est = estimate_axis(self.kind, self.boxes[st], self.boxes[k], self.policy)
        except InsufficientMotion:
            self.skipped[k] = "insufficient_motion"
            return None
        except DegenerateRotation:
            self.skipped[k] = "degenerate_rotation"
            return None
        est = AxisEstimate(
            est.axis, est.evidence, est.low_confidence,
            FrameWindow(st, k, self.policy.min_displacement),
        )
        self.estimates.append(est)
        return est


def refine_axis(
    frames: Sequence[PointCloud | None],
    kind: JointKind,
    policy: WindowPolicy = WindowPolicy(),
    cluster_radius: float | None = None,
    min_points: int = 0,
) -> list[AxisEstimate]:
    """Run the sliding-window estimator over a whole sequence.

    ``None`` entries mark frames without a motion part. The last estimate is
    the current belief.

    Raises:
        NoValidWindow: no frame pair passed the gates.
    """
    tracker = AxisTracker(kind, policy, cluster_radius, min_points)
    for cloud in frames:
        tracker.add_frame(cloud)
    if not tracker.estimates:
        raise NoValidWindow("no frame pair passed the motion gates")
    return tracker.estimates
