"""2-D points, rectangles and circles with exact predicates.

Rectangles are half-open, ``[min, max)`` on each axis, unless flagged closed
on an axis. Only rectangles touching the far edge of the universe carry the
closed flags, so peers sitting on that edge still belong to some zone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True, slots=True)
class Rect:
    min: Point
    max: Point
    closed_x: bool = False
    closed_y: bool = False

    def __post_init__(self):
        for v in (*self.min, *self.max):
            if not math.isfinite(v):
                raise ValueError(f"non-finite coordinate in {self!r}")
        if not (self.min.x < self.max.x and self.min.y < self.max.y):
            raise ValueError(f"degenerate rectangle {self!r}")

    @classmethod
    def from_bounds(cls, x0, y0, x1, y1, closed_x=False, closed_y=False) -> "Rect":
        return cls(Point(float(x0), float(y0)), Point(float(x1), float(y1)), closed_x, closed_y)

    @property
    def width(self) -> float:
        return self.max.x - self.min.x

    @property
    def height(self) -> float:
        return self.max.y - self.min.y

    @property
    def area(self) -> float:
        return self.width * self.height

    def __repr__(self):
        rx = "]" if self.closed_x else ")"
        ry = "]" if self.closed_y else ")"
        return (f"[{self.min.x:g},{self.max.x:g}{rx}x"
                f"[{self.min.y:g},{self.max.y:g}{ry}")


@dataclass(frozen=True, slots=True)
class Circle:
    center: Point
    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise ValueError(f"bad radius {self.radius!r}")
        if not all(math.isfinite(v) for v in self.center):
            raise ValueError("non-finite circle center")


Area = Union[Rect, Circle]


def universe_rect(x0: float, y0: float, x1: float, y1: float) -> Rect:
    """The top-level rectangle; its far edges are closed."""
    return Rect.from_bounds(x0, y0, x1, y1, closed_x=True, closed_y=True)


def _in_interval(v, lo, hi, closed) -> bool:
    return lo <= v < hi or (closed and v == hi)


def rect_contains_point(r: Rect, p: Point) -> bool:
    return (_in_interval(p.x, r.min.x, r.max.x, r.closed_x)
            and _in_interval(p.y, r.min.y, r.max.y, r.closed_y))


def _intervals_meet(a0, a1, ac, b0, b1, bc) -> bool:
    lo = a0 if a0 > b0 else b0
    if a1 < b1:
        hi, closed = a1, ac
    elif b1 < a1:
        hi, closed = b1, bc
    else:
        hi, closed = a1, ac and bc
    return lo < hi or (closed and lo == hi)


def rect_intersects_rect(a: Rect, b: Rect) -> bool:
    """True iff the two point sets share at least one point.

    For plain half-open rectangles this is the positive-area overlap test.
    """
    return (_intervals_meet(a.min.x, a.max.x, a.closed_x, b.min.x, b.max.x, b.closed_x)
            and _intervals_meet(a.min.y, a.max.y, a.closed_y, b.min.y, b.max.y, b.closed_y))


def rect_within_rect(inner: Rect, outer: Rect) -> bool:
    """True iff every point of ``inner`` is a point of ``outer``."""
    def axis(i0, i1, ic, o0, o1, oc):
        if i0 < o0:
            return False
        return i1 < o1 or (i1 == o1 and (oc or not ic))
    return (axis(inner.min.x, inner.max.x, inner.closed_x, outer.min.x, outer.max.x, outer.closed_x)
            and axis(inner.min.y, inner.max.y, inner.closed_y, outer.min.y, outer.max.y, outer.closed_y))


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def circle_intersects_rect(c: Circle, r: Rect) -> bool:
    # Clamping into the closure of r: sound for open max edges (may say True
    # for a circle that only touches an open edge, never False for a hit).
    cx = _clamp(c.center.x, r.min.x, r.max.x)
    cy = _clamp(c.center.y, r.min.y, r.max.y)
    return math.hypot(c.center.x - cx, c.center.y - cy) <= c.radius


def circle_contains_point(c: Circle, p: Point) -> bool:
    return distance(c.center, p) <= c.radius


def circle_within_rect(c: Circle, r: Rect) -> bool:
    cx, cy, rad = c.center.x, c.center.y, c.radius
    if cx - rad < r.min.x or cy - rad < r.min.y:
        return False
    right = cx + rad < r.max.x or (r.closed_x and cx + rad == r.max.x)
    top = cy + rad < r.max.y or (r.closed_y and cy + rad == r.max.y)
    return right and top


def distance(p: Point, q: Point) -> float:
    return math.hypot(p.x - q.x, p.y - q.y)


def area_contains_point(area: Area, p: Point) -> bool:
    if isinstance(area, Rect):
        return rect_contains_point(area, p)
    return circle_contains_point(area, p)


def area_intersects_rect(area: Area, r: Rect) -> bool:
    if isinstance(area, Rect):
        return rect_intersects_rect(area, r)
    return circle_intersects_rect(area, r)


def area_within_rect(area: Area, r: Rect) -> bool:
    if isinstance(area, Rect):
        return rect_within_rect(area, r)
    return circle_within_rect(area, r)


def rect_union(a: Rect, b: Rect) -> Rect:
    """Bounding rectangle of ``a`` and ``b``; closed flags follow the far edges."""
    def far(a1, ac, b1, bc):
        if a1 > b1:
            return a1, ac
        if b1 > a1:
            return b1, bc
        return a1, ac or bc
    x1, cx = far(a.max.x, a.closed_x, b.max.x, b.closed_x)
    y1, cy = far(a.max.y, a.closed_y, b.max.y, b.closed_y)
    return Rect(Point(min(a.min.x, b.min.x), min(a.min.y, b.min.y)), Point(x1, y1), cx, cy)


def rect_intersection(a: Rect, b: Rect) -> Optional[Rect]:
    """The common part of ``a`` and ``b``, or None when it has no area."""
    x0, y0 = max(a.min.x, b.min.x), max(a.min.y, b.min.y)
    x1, y1 = min(a.max.x, b.max.x), min(a.max.y, b.max.y)
    if not (x0 < x1 and y0 < y1):
        return None

    def closed(v, r1, rc, s1, sc):
        return (rc or r1 > v) and (sc or s1 > v)
    return Rect(Point(x0, y0), Point(x1, y1),
                closed(x1, a.max.x, a.closed_x, b.max.x, b.closed_x),
                closed(y1, a.max.y, a.closed_y, b.max.y, b.closed_y))


def rects_tile(a: Rect, b: Rect) -> bool:
    """True iff ``a`` and ``b`` share a full edge, so their union is a rectangle."""
    if a.min.y == b.min.y and a.max.y == b.max.y and a.closed_y == b.closed_y:
        return a.max.x == b.min.x or b.max.x == a.min.x
    if a.min.x == b.min.x and a.max.x == b.max.x and a.closed_x == b.closed_x:
        return a.max.y == b.min.y or b.max.y == a.min.y
    return False
