import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from geop2p.geometry import (
    Circle,
    Point,
    Rect,
    circle_contains_point,
    circle_intersects_rect,
    distance,
    rect_contains_point,
    rect_intersection,
    rect_intersects_rect,
    rect_union,
    rect_within_rect,
    rects_tile,
    universe_rect,
)

U = Rect.from_bounds(0, 0, 1, 1)


def R(x0, y0, x1, y1):
    return Rect.from_bounds(x0, y0, x1, y1)


class TestRect:
    @pytest.mark.parametrize("p, want", [
        ((0.5, 0.5), True),
        ((1.0, 0.5), False),   # max edge is open
        ((0.0, 0.0), True),    # min edge is closed
        ((0.5, 1.0), False),
        ((-1e-12, 0.5), False),
    ])
    def test_contains_half_open(self, p, want):
        assert rect_contains_point(U, Point(*p)) is want

    def test_universe_far_edges_closed(self):
        u = universe_rect(0, 0, 1, 1)
        assert rect_contains_point(u, Point(1.0, 1.0))
        assert rect_contains_point(u, Point(1.0, 0.3))
        assert not rect_contains_point(u, Point(1.0 + 1e-9, 0.3))

    @pytest.mark.parametrize("bad", [(0, 0, 0, 1), (0, 0, 1, 0), (1, 0, 0, 1), (0, 0, math.inf, 1)])
    def test_degenerate_rejected(self, bad):
        with pytest.raises(ValueError):
            R(*bad)

    def test_intersects_examples(self):
        assert rect_intersects_rect(U, U)
        assert not rect_intersects_rect(R(0, 0, 1, 1), R(1, 0, 2, 1))
        assert rect_intersects_rect(R(0, 0, 2, 2), R(1, 1, 3, 3))

    def test_closed_edge_touch_counts(self):
        # a closed max edge shares its points with a rect starting there
        a = Rect.from_bounds(0, 0, 1, 1, closed_x=True)
        assert rect_intersects_rect(a, R(1, 0, 2, 1))

    def test_within(self):
        assert rect_within_rect(R(0.2, 0.2, 0.5, 0.5), U)
        assert rect_within_rect(U, U)
        assert not rect_within_rect(universe_rect(0, 0, 1, 1), U)
        assert rect_within_rect(U, universe_rect(0, 0, 1, 1))

    def test_union_and_tile(self):
        a, b = R(0, 0, 1, 1), R(1, 0, 2, 1)
        assert rects_tile(a, b) and rects_tile(b, a)
        assert rect_union(a, b) == R(0, 0, 2, 1)
        assert not rects_tile(a, R(1, 0, 2, 2))
        assert not rects_tile(a, R(2, 0, 3, 1))

    def test_intersection(self):
        assert rect_intersection(R(0, 0, 2, 2), R(1, 1, 3, 3)) == R(1, 1, 2, 2)
        assert rect_intersection(R(0, 0, 1, 1), R(1, 0, 2, 1)) is None
        u = universe_rect(0, 0, 1, 1)
        assert rect_intersection(u, R(0.5, 0.5, 1, 1)) == R(0.5, 0.5, 1, 1)
        assert rect_intersection(u, u) == u


class TestCircle:
    def test_intersects_examples(self):
        assert circle_intersects_rect(Circle(Point(0.5, 0.5), 1.0), U)
        assert not circle_intersects_rect(Circle(Point(3, 3), 0.5), U)
        # clamp (2, 0.5) -> (1, 0.5): distance 1.0 < 1.01
        assert circle_intersects_rect(Circle(Point(2, 0.5), 1.01), U)
        assert not circle_intersects_rect(Circle(Point(2, 0.5), 0.99), U)

    def test_contains_examples(self):
        c = Circle(Point(0, 0), 1)
        assert circle_contains_point(c, Point(0, 0))
        assert circle_contains_point(c, Point(1, 0))
        assert not circle_contains_point(c, Point(1, 1))

    def test_touching_min_edge_is_a_hit(self):
        # the closed circle and the closed min edge share (0, 0.5)
        c = Circle(Point(-1, 0.5), 1.0)
        assert circle_contains_point(c, Point(0, 0.5)) and rect_contains_point(U, Point(0, 0.5))
        assert circle_intersects_rect(c, U)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            Circle(Point(0, 0), -1)
        with pytest.raises(ValueError):
            Circle(Point(0, 0), math.nan)


@pytest.mark.parametrize("p, q, want", [
    ((0, 0), (0, 0), 0.0),
    ((0, 0), (3, 4), 5.0),
    ((1, 1), (2, 2), math.sqrt(2)),
])
def test_distance(p, q, want):
    assert distance(Point(*p), Point(*q)) == pytest.approx(want)
    assert distance(Point(*q), Point(*p)) == distance(Point(*p), Point(*q))


# -- properties ---------------------------------------------------------------------------

coord = st.floats(-100, 100, allow_nan=False)


@st.composite
def rects(draw):
    x0, x1 = sorted(draw(st.lists(coord, min_size=2, max_size=2, unique=True)))
    y0, y1 = sorted(draw(st.lists(coord, min_size=2, max_size=2, unique=True)))
    return R(x0, y0, x1, y1)


@settings(max_examples=200)
@given(rects(), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5, unique=True),
       st.floats(0, 1), st.floats(0, 1), st.booleans())
def test_cut_partition(r, fracs, fx, fy, along_x):
    lo, hi = (r.min.x, r.max.x) if along_x else (r.min.y, r.max.y)
    cuts = sorted({lo + f * (hi - lo) for f in fracs} - {lo, hi})
    edges = [lo, *cuts, hi]
    parts = []
    for a, b in zip(edges, edges[1:]):
        if not a < b:
            continue
        parts.append(R(a, r.min.y, b, r.max.y) if along_x else R(r.min.x, a, r.max.x, b))
    p = Point(r.min.x + fx * r.width, r.min.y + fy * r.height)
    assume(rect_contains_point(r, p))
    assert sum(rect_contains_point(s, p) for s in parts) == 1


@given(rects(), rects())
def test_intersects_symmetric_reflexive(a, b):
    assert rect_intersects_rect(a, a)
    assert rect_intersects_rect(a, b) == rect_intersects_rect(b, a)
    assert rect_intersects_rect(a, b) == (rect_intersection(a, b) is not None)


@settings(max_examples=150)
@given(st.floats(-2, 3), st.floats(-2, 3), st.floats(0, 2))
def test_circle_rect_against_sampling(cx, cy, rad):
    c = Circle(Point(cx, cy), rad)
    n = 60
    hit = any(circle_contains_point(c, Point(i / n, j / n)) for i in range(n) for j in range(n))
    got = circle_intersects_rect(c, U)
    if hit:
        assert got  # never a false negative
    # a miss by more than the sampling pitch must be reported as a miss
    gap = math.hypot(cx - min(max(cx, 0), 1), cy - min(max(cy, 0), 1)) - rad
    if gap > 0:
        assert not got
