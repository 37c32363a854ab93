"""Zone identifiers, zone geometry and the two division schemes."""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .geometry import (
    Area,
    Point,
    Rect,
    area_intersects_rect,
    distance,
    area_within_rect,
    rect_contains_point,
    rect_intersection,
    rect_intersects_rect,
    rect_union,
    rect_within_rect,
)

ZoneId = tuple  # tuple[int, ...]; () is the universe


class ZoningError(Exception):
    pass


class UnsplittableZone(ZoningError):
    pass


class NoViableClustering(ZoningError):
    pass


class OutOfRange(ZoningError, IndexError):
    pass


class ConfigError(ZoningError, ValueError):
    pass


# -- zone ids ---------------------------------------------------------------

def parent(z: ZoneId) -> ZoneId:
    if not z:
        raise OutOfRange("the universe has no parent")
    return z[:-1]


def child(z: ZoneId, branch: int) -> ZoneId:
    return (*z, branch)


def level_segment(z: ZoneId, level: int) -> int:
    """Branch index at 1-based ``level``."""
    if not 1 <= level <= len(z):
        raise OutOfRange(f"level {level} outside zone id of length {len(z)}")
    return z[level - 1]


def common_depth(a: ZoneId, b: ZoneId) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def encode_zone_id(z: ZoneId) -> bytes:
    if len(z) > 255 or any(not 0 <= s < 256 for s in z):
        raise ValueError(f"zone id {z!r} not encodable")
    return bytes([len(z), *z])


def decode_zone_id(buf: bytes, offset: int = 0) -> tuple[ZoneId, int]:
    n = buf[offset]
    end = offset + 1 + n
    if end > len(buf):
        raise ValueError("truncated zone id")
    return tuple(buf[offset + 1:end]), end


# -- regions ----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Rectangular:
    bounds: Rect

    @property
    def bbox(self) -> Rect:
        return self.bounds


@dataclass(frozen=True, slots=True)
class Remainder:
    """``parent`` minus the union of the ``excluded`` rectangles."""
    parent: Rect
    excluded: tuple

    def __post_init__(self):
        ex = self.excluded
        for i, e in enumerate(ex):
            if not rect_within_rect(e, self.parent):
                raise ValueError(f"excluded {e!r} outside {self.parent!r}")
            for f in ex[i + 1:]:
                if rect_intersects_rect(e, f):
                    raise ValueError(f"excluded rects {e!r} and {f!r} overlap")

    @property
    def bbox(self) -> Rect:
        return self.parent


Region = Union[Rectangular, Remainder]


def is_remainder(region: Region) -> bool:
    return isinstance(region, Remainder)


def region_contains_point(z: Region, p: Point) -> bool:
    if isinstance(z, Rectangular):
        return rect_contains_point(z.bounds, p)
    if not rect_contains_point(z.parent, p):
        return False
    return not any(rect_contains_point(e, p) for e in z.excluded)


def region_intersects_area(z: Region, area: Area) -> bool:
    """Exact for rectangles; over-approximates for remainder regions."""
    if isinstance(z, Rectangular):
        return area_intersects_rect(area, z.bounds)
    if not area_intersects_rect(area, z.parent):
        return False
    return not any(area_within_rect(area, e) for e in z.excluded)


def merge_regions(keep: Region, absorbed: Region) -> Region:
    """Geometry of the zone formed when ``absorbed`` merges into ``keep``.

    Rectangle + rectangle must tile; a remainder absorbs a rectangle by
    dropping it from its excluded list.
    """
    if isinstance(keep, Remainder) and isinstance(absorbed, Rectangular):
        if absorbed.bounds not in keep.excluded:
            raise ZoningError("absorbed rectangle is not carved out of the remainder")
        rest = tuple(e for e in keep.excluded if e != absorbed.bounds)
        if not rest:
            return Rectangular(keep.parent)
        return Remainder(keep.parent, rest)
    if isinstance(keep, Rectangular) and isinstance(absorbed, Remainder):
        return merge_regions(absorbed, keep)
    if isinstance(keep, Rectangular) and isinstance(absorbed, Rectangular):
        return Rectangular(rect_union(keep.bounds, absorbed.bounds))
    raise ZoningError("cannot merge two remainder regions")


# -- configuration ----------------------------------------------------------

class Scheme(str, enum.Enum):
    SPLITTING = "splitting"
    CLUSTERING = "clustering"


class DivisionMode(str, enum.Enum):
    COMPLETE = "complete"
    INCREMENTAL = "incremental"


@dataclass(frozen=True)
class ZoningConfig:
    k: int = 4
    theta_h: int = 16
    theta_l: int = 4
    scheme: Scheme = Scheme.SPLITTING
    division_mode: DivisionMode = DivisionMode.COMPLETE

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "division_mode", DivisionMode(self.division_mode))
        if not 2 <= self.k <= 256:
            raise ConfigError(f"k must be in [2, 256], got {self.k}")
        if self.theta_l < 1:
            raise ConfigError("theta_l must be >= 1")
        if self.division_mode is DivisionMode.COMPLETE:
            if self.theta_h < self.k * self.theta_l:
                raise ConfigError("complete division needs theta_h >= k * theta_l")
        elif self.theta_h <= 2 * self.theta_l:
            raise ConfigError("incremental division needs theta_h > 2 * theta_l")

    def split_parts(self, n: int) -> int:
        if self.division_mode is DivisionMode.COMPLETE:
            return self.k
        return max(2, min(self.k, n // self.theta_l))


# -- splitting --------------------------------------------------------------

def split_zone(bounds: Rect, peers: Sequence[Point], k: int) -> list[Rect]:
    """Cut ``bounds`` into ``k`` strips with balanced peer counts.

    Cuts are perpendicular to the longer side (ties cut at x-coordinates) and
    sit midway between the two peers adjacent to each quantile boundary.
    """
    n = len(peers)
    if n == 0:
        raise ValueError("split_zone needs at least one peer")
    if k < 2:
        raise ValueError("k must be >= 2")
    m = min(k, n)
    if m < 2:
        raise UnsplittableZone("a single peer cannot be split")
    along_x = bounds.width >= bounds.height
    coords = sorted(p.x if along_x else p.y for p in peers)
    lo, hi = (bounds.min.x, bounds.max.x) if along_x else (bounds.min.y, bounds.max.y)
    cuts = []
    for i in range(1, m):
        q = (i * n) // m
        a, b = coords[q - 1], coords[q]
        if a == b:
            raise UnsplittableZone(f"peers share cut coordinate {a!r}")
        cut = (a + b) / 2
        if not a < cut <= b:
            cut = b
        cuts.append(cut)
    edges = [lo, *cuts, hi]
    out = []
    for i in range(m):
        last = i == m - 1
        if along_x:
            out.append(Rect(Point(edges[i], bounds.min.y), Point(edges[i + 1], bounds.max.y),
                            bounds.closed_x and last, bounds.closed_y))
        else:
            out.append(Rect(Point(bounds.min.x, edges[i]), Point(bounds.max.x, edges[i + 1]),
                            bounds.closed_x, bounds.closed_y and last))
    return out


# -- clustering -------------------------------------------------------------

def _lower_edge(v: float, coords: list[float]) -> float:
    """An edge below ``v`` sitting midway to the next smaller coordinate."""
    i = bisect.bisect_left(coords, v)
    if i == 0:
        return v
    prev = coords[i - 1]
    mid = (prev + v) / 2
    return mid if prev < mid <= v else v


def _upper_edge(v: float, coords: list[float], ceil_: float, closed: bool) -> tuple[float, bool]:
    """An open edge above ``v`` midway to the next larger coordinate."""
    i = bisect.bisect_right(coords, v)
    nxt = coords[i] if i < len(coords) else ceil_
    if v < nxt:
        mid = (v + nxt) / 2
        return (mid if v < mid <= nxt else nxt), False
    # v sits on the region's closed far edge
    return ceil_, closed


NATURAL_GAP = 2.0  # isolation, in units of mean member spacing, that marks a natural group


def _separation(members: list[Point], outside: list[Point]) -> float:
    """Distance from the members' bounding box to the nearest outsider, per member spacing."""
    if not outside:
        return math.inf
    x0 = min(p.x for p in members)
    x1 = max(p.x for p in members)
    y0 = min(p.y for p in members)
    y1 = max(p.y for p in members)
    w, h = x1 - x0, y1 - y0
    spacing = math.sqrt(w * h / len(members)) if w * h > 0 else max(w, h) / len(members)
    gap = min(math.hypot(max(x0 - p.x, 0, p.x - x1), max(y0 - p.y, 0, p.y - y1)) for p in outside)
    if spacing == 0:
        return math.inf if gap > 0 else 0.0
    return gap / spacing


def _cluster_box(members: list[Point], xs: list[float], ys: list[float], bb: Rect) -> Optional[Rect]:
    x0 = min(p.x for p in members)
    x1 = max(p.x for p in members)
    y0 = min(p.y for p in members)
    y1 = max(p.y for p in members)
    lx = _lower_edge(x0, xs)
    ly = _lower_edge(y0, ys)
    hx, cx = _upper_edge(x1, xs, bb.max.x, bb.closed_x)
    hy, cy = _upper_edge(y1, ys, bb.max.y, bb.closed_y)
    if lx >= hx:
        lx = (bb.min.x + x0) / 2
    if ly >= hy:
        ly = (bb.min.y + y0) / 2
    if not (bb.min.x <= lx < hx and bb.min.y <= ly < hy):
        return None
    return Rect(Point(lx, ly), Point(hx, hy), cx, cy)


def _expand(box: Rect, others: list[Point], blocked: list[Rect], bb: Rect, x_first: bool) -> Rect:
    """Grow ``box`` side by side until it meets a foreign peer, a blocked rect or ``bb``."""
    x0, y0, x1, y1 = box.min.x, box.min.y, box.max.x, box.max.y
    cx, cy = box.closed_x, box.closed_y

    def grow_x():
        nonlocal x0, x1, cx
        band = [p.x for p in others if y0 <= p.y <= y1]
        walls = [b for b in blocked if b.min.y <= y1 and y0 <= b.max.y]
        left = [v for v in band if v < x0]
        floor = [bb.min.x] + [b.max.x for b in walls if b.max.x <= x0]
        if left:
            floor.append((max(left) + x0) / 2)
        lo = max(floor)
        right = [v for v in band if v >= x1]
        stops = [b.min.x for b in walls if b.min.x >= x1]
        if right:
            stops.append((min(right) + x1) / 2 if min(right) > x1 else x1)
        hi = min(stops) if stops else bb.max.x
        if hi > x1:
            x1, cx = hi, bb.closed_x and hi == bb.max.x and not stops
        if lo < x0:
            x0 = lo

    def grow_y():
        nonlocal y0, y1, cy
        band = [p.y for p in others if x0 <= p.x <= x1]
        walls = [b for b in blocked if b.min.x <= x1 and x0 <= b.max.x]
        below = [v for v in band if v < y0]
        floor = [bb.min.y] + [b.max.y for b in walls if b.max.y <= y0]
        if below:
            floor.append((max(below) + y0) / 2)
        lo = max(floor)
        above = [v for v in band if v >= y1]
        stops = [b.min.y for b in walls if b.min.y >= y1]
        if above:
            stops.append((min(above) + y1) / 2 if min(above) > y1 else y1)
        hi = min(stops) if stops else bb.max.y
        if hi > y1:
            y1, cy = hi, bb.closed_y and hi == bb.max.y and not stops
        if lo < y0:
            y0 = lo

    for step in ((grow_x, grow_y) if x_first else (grow_y, grow_x)):
        step()
    grown = Rect(Point(x0, y0), Point(x1, y1), cx, cy)
    if (rect_within_rect(grown, bb) and not any(rect_contains_point(grown, p) for p in others)
            and not any(rect_intersects_rect(grown, b) for b in blocked)):
        return grown
    return box


def cluster_zone(region: Region, peers: Sequence[tuple[int, Point]],
                 cfg: ZoningConfig) -> tuple[list[Rect], list[int]]:
    """Carve up to k-1 disjoint rectangular clusters out of ``region``.

    Returns the cluster rectangles and the addresses left to the remainder.
    Candidate clusters are the tight boxes around a peer and its nearest
    neighbours. Each holds between theta_l and theta_h - 1 peers. A group
    set well apart from every other peer wins outright (the most isolated
    first); otherwise sizes near n/k win, then smaller area.
    """
    n = len(peers)
    lo, hi = cfg.theta_l, cfg.theta_h - 1
    target = min(hi, max(lo, math.ceil(n / cfg.k)))
    bb = region.bbox
    blocked = list(region.excluded) if isinstance(region, Remainder) else []
    order = sorted(peers)
    pts = [p for _, p in order]
    xs = sorted(p.x for p in pts)
    ys = sorted(p.y for p in pts)
    rects: list[Rect] = []
    free = list(range(n))
    while len(rects) < cfg.k - 1 and len(free) >= lo:
        best = None
        for s in free:
            near = sorted(free, key=lambda j: (distance(pts[s], pts[j]), order[j][0]))
            for m in range(lo, min(hi, len(near)) + 1):
                box = _cluster_box([pts[j] for j in near[:m]], xs, ys, bb)
                if box is None or any(rect_intersects_rect(box, b) for b in blocked):
                    continue
                inside = [j for j in free if rect_contains_point(box, pts[j])]
                if not lo <= len(inside) <= hi:
                    continue
                sep = _separation([pts[j] for j in inside],
                                  [pts[j] for j in range(n) if j not in inside])
                if sep >= NATURAL_GAP:
                    key = (0, -sep, box.area, order[s][0], m)
                else:
                    key = (1, abs(len(inside) - target), box.area, order[s][0], m)
                if best is None or key < best[0]:
                    best = (key, box, inside)
        if best is None:
            break
        _, box, inside = best
        taken = set(inside)
        others = [pts[j] for j in range(n) if j not in taken]
        box = max((_expand(box, others, blocked, bb, xf) for xf in (True, False)),
                  key=lambda r: r.area)
        rects.append(box)
        blocked.append(box)
        free = [j for j in free if j not in taken]
    if not rects:
        raise NoViableClustering(f"no cluster of {lo}..{hi} peers found")
    rest = [order[j][0] for j in free]
    return rects, rest


def _split_remainder(region: Remainder, peers, cfg: ZoningConfig) -> list[Region]:
    """Strips of a remainder; each strip keeps its share of the excluded rects."""
    strips = split_zone(region.parent, [p for _, p in peers], cfg.split_parts(len(peers)))
    out = []
    for s in strips:
        cut = tuple(c for c in (rect_intersection(e, s) for e in region.excluded) if c is not None)
        out.append(Remainder(s, cut))
    return out


def divide_region(region: Region, peers: Sequence[tuple[int, Point]],
                  cfg: ZoningConfig) -> list[Region]:
    """Sub-zone regions for a division, ordered by branch index.

    Clustering yields the clusters followed by the remainder. When no
    cluster exists the region is cut into strips instead; strips of a
    remainder are remainders themselves.
    """
    if cfg.scheme is Scheme.CLUSTERING:
        try:
            rects, _ = cluster_zone(region, peers, cfg)
        except NoViableClustering:
            if isinstance(region, Remainder):
                return _split_remainder(region, peers, cfg)
        else:
            subs = [Rectangular(r) for r in rects]
            if isinstance(region, Remainder):
                rem = Remainder(region.parent, (*region.excluded, *rects))
            else:
                rem = Remainder(region.bounds, tuple(rects))
            return [*subs, rem]
    if isinstance(region, Remainder):
        return _split_remainder(region, peers, cfg)
    parts = cfg.split_parts(len(peers))
    return [Rectangular(r) for r in split_zone(region.bounds, [p for _, p in peers], parts)]
