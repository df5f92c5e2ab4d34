"""Point-cloud filtering, neighbor search and oriented bounding boxes.

The radius filter keeps a point ``p`` of cloud ``P`` iff
``|{q in P : 0 < |p - q| <= r}| >= epsilon``. Neighbor queries go through a
uniform hash grid with cell size ``r`` so only the 27 surrounding cells are
scanned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateCloud, EmptyMotionPart
from .geometry import OrientedBoundingBox, PointCloud, Rect2

_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)
_FORWARD_OFFSETS = _OFFSETS[len(_OFFSETS) // 2 + 1 :]
_CHUNK = 4096
_PAIR_BLOCK = 1 << 21
_CELL_PAD = 1e-9


@dataclass(frozen=True)
class FilterParams:
    """Neighborhood radius ``r`` (m) and minimum neighbor count ``epsilon``."""

    r: float = 0.05
    epsilon: int = 100

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("filter radius must be positive")
        if int(self.epsilon) != self.epsilon or self.epsilon < 1:
            raise ValueError("epsilon must be an integer >= 1")
        object.__setattr__(self, "epsilon", int(self.epsilon))

    @classmethod
    def real_world(cls) -> FilterParams:
        """Setting for sparse clouds reconstructed from a real depth camera."""
        return cls(r=1.3, epsilon=1)


@dataclass(frozen=True)
class MotionExtractionParams:
    margin: float = 0.01
    refilter: FilterParams = field(default_factory=FilterParams)

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


class SpatialGrid:
    """Uniform hash grid over a fixed point set.

    Each point lands in cell ``floor(coord / cell_size)``. Cells are stored as
    sorted integer codes so lookups are a single ``searchsorted``. The cell
    size is padded by a relative ``1e-9`` over the requested radius: a pair
    whose rounded distance equals ``r`` can otherwise sit two cells apart.
    """

    def __init__(self, points, cell_size: float):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.radius = float(cell_size)
        self.cell_size = self.radius * (1.0 + _CELL_PAD)
        n = len(self.points)
        keys = np.floor(self.points / self.cell_size).astype(np.int64)
        if n:
            self._lo = keys.min(axis=0) - 1
            self._shape = keys.max(axis=0) - self._lo + 2
        else:
            self._lo = np.zeros(3, dtype=np.int64)
            self._shape = np.ones(3, dtype=np.int64)
        if float(np.prod(self._shape.astype(float))) > 2.0**62:
            raise ValueError("point extent too large for the grid resolution")
        self._keys = keys
        self._xyz = tuple(np.ascontiguousarray(self.points[:, k]) for k in range(3))
        codes = self._encode(keys)
        order = np.argsort(codes, kind="stable")
        self._order = order
        self._codes, self._starts, self._counts = np.unique(
            codes[order], return_index=True, return_counts=True
        )

    def _encode(self, keys: np.ndarray) -> np.ndarray:
        k = keys - self._lo
        valid = np.all((k >= 0) & (k < self._shape), axis=-1)
        k = np.where(valid[..., None], k, 0)
        codes = (k[..., 0] * self._shape[1] + k[..., 1]) * self._shape[2] + k[..., 2]
        return np.where(valid, codes, -1)

    @property
    def cells(self) -> dict[tuple[int, int, int], np.ndarray]:
        """Map from integer cell index to the indices of contained points."""
        out = {}
        for code, start, count in zip(self._codes, self._starts, self._counts):
            members = np.sort(self._order[start : start + count])
            out[tuple(int(v) for v in self._keys[members[0]])] = members
        return out

    def _candidates(self, queries: np.ndarray):
        """All (query, point) index pairs sharing a cell neighborhood."""
        qkeys = np.floor(queries / self.cell_size).astype(np.int64)
        codes = self._encode(qkeys[:, None, :] + _OFFSETS[None, :, :]).reshape(-1)
        if len(self._codes) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        idx = np.searchsorted(self._codes, codes)
        idx = np.minimum(idx, len(self._codes) - 1)
        found = (codes >= 0) & (self._codes[idx] == codes)
        cnt = np.where(found, self._counts[idx], 0)
        total = int(cnt.sum())
        qidx = np.repeat(np.arange(codes.size) // len(_OFFSETS), cnt)
        offset_in_cell = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        pidx = self._order[np.repeat(self._starts[idx], cnt) + offset_in_cell]
        return qidx, pidx

    def _check_radius(self, r: float):
        if r > self.radius:
            raise ValueError("query radius exceeds grid cell size")

    def count_within(self, queries, r: float) -> np.ndarray:
        """Number of grid points ``q`` with ``0 < |p - q| <= r`` per query ``p``."""
        self._check_radius(r)
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        counts = np.zeros(len(queries), dtype=np.int64)
        r2 = r * r
        for lo in range(0, len(queries), _CHUNK):
            q = queries[lo : lo + _CHUNK]
            qidx, pidx = self._candidates(q)
            dx, dy, dz = (q[:, k][qidx] - self._xyz[k][pidx] for k in range(3))
            d2 = dx * dx + dy * dy + dz * dz
            hit = (d2 > 0.0) & (d2 <= r2)
            counts[lo : lo + len(q)] += np.bincount(qidx[hit], minlength=len(q))
        return counts

    def _self_pair_blocks(self, r: float):
        """Yield ``(i, j, d2)`` for candidate pairs ``i < j`` of grid points.

        Cells are paired with themselves and with the 13 forward neighbors of
        the 27-cell stencil, so each unordered pair is visited once.
        """
        self._check_radius(r)
        ncell = len(self._codes)
        if ncell == 0:
            return
        sx, sy, sz_ = (c[self._order] for c in self._xyz)
        cell_keys = self._keys[self._order[self._starts]]
        a_parts, b_parts = [np.arange(ncell)], [np.arange(ncell)]
        for off in _FORWARD_OFFSETS:
            codes = self._encode(cell_keys + off)
            idx = np.minimum(np.searchsorted(self._codes, codes), ncell - 1)
            found = (codes >= 0) & (self._codes[idx] == codes)
            a_parts.append(np.flatnonzero(found))
            b_parts.append(idx[found])
        ca, cb = np.concatenate(a_parts), np.concatenate(b_parts)
        sizes = self._counts[ca] * self._counts[cb]
        bounds = np.searchsorted(np.cumsum(sizes), np.arange(1, 1 + sizes.sum() // _PAIR_BLOCK) * _PAIR_BLOCK)
        for blk_a, blk_b in zip(np.split(ca, bounds), np.split(cb, bounds)):
            if len(blk_a) == 0:
                continue
            na, nb = self._counts[blk_a], self._counts[blk_b]
            sz = na * nb
            total = int(sz.sum())
            rep = np.repeat(np.arange(len(blk_a)), sz)
            local = np.arange(total) - np.repeat(np.cumsum(sz) - sz, sz)
            nb_rep = nb[rep]
            i = self._starts[blk_a][rep] + local // nb_rep
            j = self._starts[blk_b][rep] + local % nb_rep
            same = blk_a[rep] == blk_b[rep]
            keep = ~same | (i < j)
            i, j = i[keep], j[keep]
            dx, dy, dz = sx[i] - sx[j], sy[i] - sy[j], sz_[i] - sz_[j]
            d2 = dx * dx + dy * dy + dz * dz
            yield self._order[i], self._order[j], d2

    def self_counts(self, r: float) -> np.ndarray:
        """``count_within(self.points, r)`` computed from unordered cell pairs."""
        counts = np.zeros(len(self.points), dtype=np.int64)
        r2 = r * r
        for i, j, d2 in self._self_pair_blocks(r):
            hit = (d2 > 0.0) & (d2 <= r2)
            counts += np.bincount(i[hit], minlength=len(counts))
            counts += np.bincount(j[hit], minlength=len(counts))
        return counts

    def pairs_within(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs of distinct grid points with ``|p_i - p_j| <= r``."""
        r2 = r * r
        rows, cols = [], []
        for i, j, d2 in self._self_pair_blocks(r):
            hit = d2 <= r2
            rows.append(i[hit])
            cols.append(j[hit])
        if not rows:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(rows), np.concatenate(cols)


def neighbor_count(cloud: PointCloud, p, r: float) -> int:
    """Size of the punctured radius neighborhood of ``p`` within ``cloud``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    grid = SpatialGrid(cloud.points, r)
    return int(grid.count_within(np.asarray(p, dtype=float).reshape(1, 3), r)[0])


def neighbor_counts(cloud: PointCloud, r: float) -> np.ndarray:
    """Punctured-neighborhood size of every point of ``cloud`` against itself."""
    return SpatialGrid(cloud.points, r).self_counts(r)


def filter_cloud(cloud: PointCloud, params: FilterParams) -> PointCloud:
    """Keep points having at least ``params.epsilon`` neighbors within ``params.r``.

    One pass; every count is taken against the unfiltered input. Order and
    labels of the surviving points are preserved.
    """
    if len(cloud) == 0:
        return cloud
    keep = neighbor_counts(cloud, params.r) >= params.epsilon
    return cloud.subset(keep)


def _hull_points(xy: np.ndarray) -> np.ndarray:
    try:
        hull = ConvexHull(xy)
    except (QhullError, ValueError) as exc:
        raise DegenerateCloud(f"top-down projection is degenerate: {exc}") from None
    return xy[hull.vertices]


def min_area_rect(xy) -> Rect2:
    """Minimum-area rectangle enclosing 2D points.

    The optimal rectangle has one side flush with a convex-hull edge, so every
    hull edge orientation is evaluated and the smallest area kept. The final
    extents are measured over all input points, which guarantees containment.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if len(xy) < 3:
        raise DegenerateCloud("need at least 3 points for an OBB")
    hull = _hull_points(xy)
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2))
    cos, sin = np.cos(angles), np.sin(angles)
    # projections of hull vertices on each candidate frame, shape (h, k)
    u = hull[:, :1] * cos + hull[:, 1:] * sin
    v = -hull[:, :1] * sin + hull[:, 1:] * cos
    areas = (u.max(axis=0) - u.min(axis=0)) * (v.max(axis=0) - v.min(axis=0))
    best = int(np.argmin(areas))
    theta = float(angles[best])
    eu = np.array([math.cos(theta), math.sin(theta)])
    ev = np.array([-math.sin(theta), math.cos(theta)])
    pu, pv = xy @ eu, xy @ ev
    umin, umax, vmin, vmax = pu.min(), pu.max(), pv.min(), pv.max()
    half = (0.5 * (umax - umin), 0.5 * (vmax - vmin))
    scale = max(half[0], half[1], 1e-300)
    if min(half) <= 1e-12 * scale:
        raise DegenerateCloud("top-down projection is collinear")
    center = 0.5 * (umin + umax) * eu + 0.5 * (vmin + vmax) * ev
    return Rect2(center, half, theta)


def fit_obb(cloud: PointCloud) -> OrientedBoundingBox:
    """Top-down minimum-area rectangle extruded over the cloud's z range."""
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateCloud("need at least 3 points for an OBB")
    rect = min_area_rect(pts[:, :2])
    return OrientedBoundingBox(rect, float(pts[:, 2].min()), float(pts[:, 2].max()))


def radius_clusters(cloud: PointCloud, r: float) -> np.ndarray:
    """Connected-component label per point; points link iff ``|p - q| <= r``."""
    n = len(cloud)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    rows, cols = SpatialGrid(cloud.points, r).pairs_within(r)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def largest_cluster(cloud: PointCloud, r: float) -> PointCloud:
    """Largest radius-connected component.

    Ties go to the cluster with the larger z extent, then to the cluster whose
    first point comes earliest in the cloud.
    """
    labels = radius_clusters(cloud, r)
    if len(labels) == 0:
        return cloud
    sizes = np.bincount(labels)
    candidates = np.flatnonzero(sizes == sizes.max())
    if len(candidates) > 1:
        z = cloud.points[:, 2]
        z_ext = np.array([np.ptp(z[labels == c]) for c in candidates])
        candidates = candidates[z_ext == z_ext.max()]
        first = [np.flatnonzero(labels == c)[0] for c in candidates]
        chosen = candidates[int(np.argmin(first))]
    else:
        chosen = candidates[0]
    return cloud.subset(labels == chosen)


def refine_body_obb(cloud: PointCloud, params: FilterParams) -> OrientedBoundingBox:
    """OBB of the largest radius-``r`` cluster, dropping protrusions such as handles."""
    if len(cloud) == 0:
        raise DegenerateCloud("cannot refine the OBB of an empty cloud")
    return fit_obb(largest_cluster(cloud, params.r))


def extract_motion_part(
    frame: PointCloud, body_obb: OrientedBoundingBox, params: MotionExtractionParams
) -> PointCloud:
    """Points strictly outside the inflated body box, refiltered for noise.

    Raises:
        EmptyMotionPart: nothing survives, i.e. the part has not moved enough.
    """
    outside = ~body_obb.inside_mask(frame.points, params.margin)
    if not outside.any():
        raise EmptyMotionPart("no point lies outside the body box")
    part = filter_cloud(frame.subset(outside), params.refilter)
    if len(part) == 0:
        raise EmptyMotionPart("no point outside the body box survived refiltering")
    return part
