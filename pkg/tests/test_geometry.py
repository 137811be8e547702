import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sublinlab.geometry import (Disk, GeometryError, Interval, Rectangle, build_grid, clearance, distance_field,
                                enumerate_nonpositive_balls, make_partition, parse_shape)


def test_interval_resolution_4():
    g = build_grid(Interval(0, 1), 4)
    assert np.allclose(np.sort(g.coords[:, 0]), [0, 0.25, 0.5, 0.75, 1])
    assert len(g.interior) == 3
    assert math.isclose(g.volume.sum(), 1.0)


def test_square_resolution_4():
    g = build_grid(Rectangle(0, 1, 0, 1), 4)
    assert len(g.interior) == 9
    assert math.isclose(g.volume.sum(), 1.0)


def test_disk_interior_count_matches_enumeration():
    g = build_grid(Disk(0, 0, 1), 4)
    assert math.isclose(g.h, 0.5)
    lattice = [(i * 0.5, j * 0.5) for i, j in itertools.product(range(-3, 4), repeat=2)]
    expected = sum(1 for x, y in lattice if math.hypot(x, y) < 1 - 1e-12)
    assert len(g.interior) == expected


def test_disk_boundary_nodes_lie_on_circle():
    g = build_grid(Disk(0.5, -0.25, 0.75), 32)
    r = np.hypot(g.coords[g.boundary, 0] - 0.5, g.coords[g.boundary, 1] + 0.25)
    assert np.allclose(r, 0.75, atol=1e-12)
    assert np.all(g.arms > 0) and np.all(g.arms <= g.h * (1 + 1e-12))


def test_distance_examples():
    g = build_grid(Interval(0, 1), 8)
    d = distance_field(g)
    assert math.isclose(d.values[g.locate([[0.25]])[0]], 0.25)
    g = build_grid(Rectangle(0, 1, 0, 1), 8)
    assert math.isclose(distance_field(g).values[g.locate([[0.5, 0.25]])[0]], 0.25)
    g = build_grid(Disk(0, 0, 1), 8)
    assert math.isclose(distance_field(g).values[g.locate([[0.0, 0.0]])[0]], 1.0)


def test_distance_independent_of_h_at_shared_nodes():
    coarse, fine = build_grid(Rectangle(0, 2, 0, 1), 8), build_grid(Rectangle(0, 2, 0, 1), 16)
    idx = fine.locate(coarse.coords)
    assert np.array_equal(coarse.delta, fine.delta[idx])


def test_partition_interval():
    g = build_grid(Interval(0, 1), 10)
    p = make_partition(g, Interval(0.3, 0.7))
    x = p.cut.coords[:, 0]
    assert np.allclose(np.sort(x[p.interface]), [0.3, 0.7])
    nu = {round(float(x[i]), 6): n[0] for i, n in zip(p.iface_nodes, p.normals)}
    assert nu == {0.3: -1.0, 0.7: 1.0}
    assert len(p.inner) + len(p.outer) + len(p.interface) == len(g.interior)


def test_partition_nested_rectangles():
    g = build_grid(Rectangle(0, 1, 0, 1), 8)
    p = make_partition(g, Rectangle(0.25, 0.75, 0.25, 0.75))
    assert len(p.inner) == 9
    assert len(p.interface) == 16
    assert len(p.inner) + len(p.outer) + len(p.interface) == len(g.interior)
    faces = {tuple(n) for n in p.normals}
    assert faces == {(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)}


def test_partition_touching_boundary_rejected():
    with pytest.raises(GeometryError):
        make_partition(build_grid(Interval(0, 1), 64), Interval(0, 0.7))


def test_partition_disk_normals_radial():
    g = build_grid(Disk(0, 0, 1), 32)
    p = make_partition(g, Disk(0, 0, 0.5))
    pts = p.cut.coords[p.iface_nodes]
    assert np.allclose(np.hypot(pts[:, 0], pts[:, 1]), 0.5)
    assert np.allclose(p.normals, pts / 0.5)
    assert clearance(g.domain, p.omega0) == pytest.approx(0.5)


def test_parse_shape_errors():
    assert parse_shape("disk 0 0 2").radius == 2
    for bad in ("square 0 1", "interval 1 0", "disk 0 0 -1", "rectangle 0 1 0"):
        with pytest.raises(GeometryError):
            parse_shape(bad)


def test_balls_linear_weight_top_score():
    scores = []
    for n in (64, 128, 256):
        g = build_grid(Interval(0, 1), n)
        balls = enumerate_nonpositive_balls(g, g.coords[:, 0] - 0.5, top=1)
        scores.append(balls[0].score)
    assert abs(scores[-1] - 1 / 216) < 0.02 / 216
    assert abs(balls[0].radius - 1 / 6) < 2 / 256


def test_balls_positive_weight_empty():
    g = build_grid(Interval(0, 1), 32)
    assert enumerate_nonpositive_balls(g, np.ones(g.n_nodes)) == []


def test_balls_constant_negative_on_disk():
    g = build_grid(Disk(0, 0, 1), 16)
    best = enumerate_nonpositive_balls(g, -np.ones(g.n_nodes), top=1)[0]
    assert best.center == (0.0, 0.0)
    assert best.score == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 48), st.floats(-0.45, 0.45), st.floats(0.05, 0.5))
def test_balls_are_nonpositive(n, shift, slope):
    g = build_grid(Interval(0, 1), n)
    m = slope * np.sin(7 * g.coords[:, 0]) + shift
    for ball in enumerate_nonpositive_balls(g, m, top=20):
        assert np.all(m[ball.nodes(g)] <= 0)
        assert ball.score == pytest.approx(ball.m_R * ball.radius**2)
