"""Geometric value types and exact primitives shared by the pipeline.

Vectors are plain ``numpy`` float arrays: shape ``(3,)`` for points and
directions, ``(N, 3)`` for point sets and ``(2,)`` for top-down coordinates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParallelLines

Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Tolerances:
    """Numeric tolerances used throughout the package."""

    parallel_sin: float = 1e-6
    unit_norm: float = 1e-9
    containment: float = 1e-9
    midline_parallel: float = 1e-3
    square_ratio: float = 1.05
    min_displacement: float = 0.01
    min_rotation: float = math.radians(2.0)
    degenerate_radius: float = 0.01


TOL = Tolerances()


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float64 3-vector from three scalars or one sequence."""
    if y is None:
        out = np.asarray(x, dtype=float).reshape(3)
    else:
        out = np.array([x, y, z], dtype=float)
    return out


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def angle_between(u, v) -> float:
    """Angle in radians between two nonzero vectors, in [0, pi]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cross = np.linalg.norm(np.cross(u, v))
    return float(math.atan2(cross, float(np.dot(u, v))))


class Label(enum.IntEnum):
    """Per-point part tag; the integer value is what PLY files store."""

    BODY = 0
    MOTION = 1
    HANDLE = 2
    OUTLIER = 3
    UNKNOWN = 4


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point :class:`Label` codes."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if np.isnan(pts).any():
            raise ValueError("point cloud contains NaN coordinates")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise ValueError("labels and points differ in length")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, mask_or_index) -> PointCloud:
        """Select points (and their labels) by boolean mask or index array."""
        labels = None if self.labels is None else self.labels[mask_or_index]
        return PointCloud(self.points[mask_or_index], labels)

    def translated(self, v) -> PointCloud:
        return PointCloud(self.points + np.asarray(v, dtype=float), self.labels)

    @staticmethod
    def concatenate(clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.empty((0, 3)))
        points = np.concatenate([c.points for c in clouds])
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        else:
            labels = None
        return PointCloud(points, labels)


@dataclass(frozen=True, eq=False)
class Rect2:
    """Top-down rectangle.

    ``half_extents = (a, b)`` with ``a >= b > 0``; ``heading`` is the
    direction of the longer edges, normalized to ``[0, pi)``. Constructing
    with ``b > a`` swaps the extents and turns the heading by a quarter turn.
    """

    center: np.ndarray
    half_extents: tuple[float, float]
    heading: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(2)
        a, b = (float(x) for x in self.half_extents)
        heading = float(self.heading)
        if b > a:
            a, b = b, a
            heading += math.pi / 2
        if not b > 0:
            raise ValueError("rectangle half extents must be positive")
        heading %= math.pi
        if heading >= math.pi:
            heading = 0.0
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", (a, b))
        object.__setattr__(self, "heading", heading)

    @property
    def long_axis(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    @property
    def short_axis(self) -> np.ndarray:
        return np.array([-math.sin(self.heading), math.cos(self.heading)])

    @property
    def area(self) -> float:
        a, b = self.half_extents
        return 4.0 * a * b

    @property
    def aspect(self) -> float:
        a, b = self.half_extents
        return a / b

    def vertices(self) -> np.ndarray:
        """Corners in counter-clockwise order, shape (4, 2)."""
        a, b = self.half_extents
        u, v = self.long_axis, self.short_axis
        signs = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
        return np.array([self.center + sa * a * u + sb * b * v for sa, sb in signs])

    def to_local(self, xy) -> np.ndarray:
        """Coordinates of top-down points along (long, short) axes."""
        rel = np.asarray(xy, dtype=float) - self.center
        return np.stack([rel @ self.long_axis, rel @ self.short_axis], axis=-1)


@dataclass(frozen=True, eq=False)
class OrientedBoundingBox:
    """Top-down rectangle extruded over ``[z_min, z_max]``."""

    rect: Rect2
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.z_max < self.z_min:
            raise ValueError("z_max must not be below z_min")

    @property
    def center(self) -> np.ndarray:
        cx, cy = self.rect.center
        return np.array([cx, cy, 0.5 * (self.z_min + self.z_max)])

    def inside_mask(self, points, margin: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the box inflated by ``margin``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        a, b = self.rect.half_extents
        local = self.rect.to_local(pts[:, :2])
        return (
            (np.abs(local[:, 0]) <= a + margin)
            & (np.abs(local[:, 1]) <= b + margin)
            & (pts[:, 2] >= self.z_min - margin)
            & (pts[:, 2] <= self.z_max + margin)
        )


class JointKind(str, enum.Enum):
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"


@dataclass(frozen=True, eq=False)
class JointAxis:
    kind: JointKind
    pivot: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", JointKind(self.kind))
        object.__setattr__(self, "pivot", vec3(self.pivot))
        direction = vec3(self.direction)
        if abs(np.linalg.norm(direction) - 1.0) > TOL.unit_norm:
            raise ValueError("joint direction must be a unit vector")
        object.__setattr__(self, "direction", direction)

    def distance_to(self, points) -> np.ndarray:
        """Distance of points from the axis line."""
        rel = np.asarray(points, dtype=float) - self.pivot
        along = rel @ self.direction
        perp = rel - np.multiply.outer(along, self.direction)
        return np.linalg.norm(perp, axis=-1)


@dataclass(frozen=True, eq=False)
class AxisEvidence:
    """Intermediate quantities behind one axis estimate."""

    o_st: np.ndarray
    o_ed: np.ndarray
    d: np.ndarray
    t: np.ndarray | None = None
    pivot_2d: np.ndarray | None = None
    flags: tuple[str, ...] = field(default=())


def line_intersection_2d(p1, d1, p2, d2, tol: float = TOL.parallel_sin) -> np.ndarray:
    """Intersect two 2D lines given as point + direction.

    Raises:
        ParallelLines: if ``|sin|`` of the angle between directions is at
            most ``tol``.
    """
    p1, d1, p2, d2 = (np.asarray(v, dtype=float).reshape(2) for v in (p1, d1, p2, d2))
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("line directions must be nonzero")
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(cross) <= tol * n1 * n2:
        raise ParallelLines("lines are parallel within tolerance")
    w = p2 - p1
    s = (w[0] * d2[1] - w[1] * d2[0]) / cross
    return p1 + s * d1


def rotate_about_axis(p, axis: JointAxis, angle: float) -> np.ndarray:
    """Rotate point(s) about a revolute axis line by ``angle`` (right-hand rule)."""
    if axis.kind is not JointKind.REVOLUTE:
        raise ValueError("rotate_about_axis needs a revolute axis")
    k = axis.direction
    v = np.asarray(p, dtype=float) - axis.pivot
    c, s = math.cos(angle), math.sin(angle)
    rotated = v * c + np.cross(k, v) * s + np.multiply.outer(v @ k, k) * (1.0 - c)
    return rotated + axis.pivot
