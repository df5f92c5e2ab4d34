"""Shared brute-force oracles and scene helpers for the test suite."""

import math

import numpy as np
import pytest

from axisloop.geometry import OrientedBoundingBox, Rect2


def brute_counts(points, queries=None, r=1.0):
    """O(n^2) punctured-neighborhood sizes, same arithmetic as the grid."""
    points = np.asarray(points, dtype=float)
    queries = points if queries is None else np.asarray(queries, dtype=float)
    out = np.zeros(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        dx, dy, dz = (q[k] - points[:, k] for k in range(3))
        d2 = dx * dx + dy * dy + dz * dz
        out[i] = int(((d2 > 0.0) & (d2 <= r * r)).sum())
    return out


def brute_filter_mask(points, r, epsilon):
    return brute_counts(points, None, r) >= epsilon


def sweep_min_area(xy, step_deg=0.1):
    """Smallest axis-aligned bounding area over headings in [0, 90) degrees."""
    xy = np.asarray(xy, dtype=float)
    best = math.inf
    for theta in np.radians(np.arange(0.0, 90.0, step_deg)):
        c, s = math.cos(theta), math.sin(theta)
        u = xy[:, 0] * c + xy[:, 1] * s
        v = -xy[:, 0] * s + xy[:, 1] * c
        best = min(best, float(np.ptp(u) * np.ptp(v)))
    return best


def panel_obb(hinge, width, thickness, angle, z=(0.0, 1.0)):
    """Top-down box of a panel hinged at ``hinge`` along its midline, turned by ``angle``."""
    u = np.array([math.cos(angle), math.sin(angle)])
    center = np.asarray(hinge, dtype=float) + 0.5 * width * u
    return OrientedBoundingBox(Rect2(center, (width / 2, thickness / 2), angle), *z)


def random_clusters(rng, n_max=500):
    """Mixed clusters plus uniform outliers, with at least 5 points."""
    n_clusters = int(rng.integers(1, 5))
    chunks = []
    for _ in range(n_clusters):
        center = rng.uniform(0, 1, 3)
        spread = rng.uniform(0.01, 0.1)
        chunks.append(center + rng.normal(0, spread, (int(rng.integers(5, 100)), 3)))
    chunks.append(rng.uniform(-0.5, 1.5, (int(rng.integers(0, 30)), 3)))
    pts = np.concatenate(chunks)
    return pts[: n_max]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; asserts on failure."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def check(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
