import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geop2p.geometry import Circle, Point, Rect, rect_contains_point, universe_rect
from geop2p.zoning import (
    ConfigError,
    NoViableClustering,
    OutOfRange,
    Rectangular,
    Remainder,
    UnsplittableZone,
    ZoningConfig,
    child,
    cluster_zone,
    common_depth,
    decode_zone_id,
    divide_region,
    encode_zone_id,
    level_segment,
    merge_regions,
    parent,
    region_contains_point,
    region_intersects_area,
    split_zone,
)


def R(x0, y0, x1, y1):
    return Rect.from_bounds(x0, y0, x1, y1)


SQ4 = R(0, 0, 4, 4)
INC = ZoningConfig(4, 12, 4, division_mode="incremental")


class TestZoneId:
    def test_path_ops(self):
        assert parent((2, 0, 1)) == (2, 0)
        assert child((2, 0), 1) == (2, 0, 1)
        assert level_segment((2, 0, 1), 2) == 0
        assert common_depth((2, 0, 1), (2, 3)) == 1
        assert common_depth((), (1,)) == 0

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            level_segment((2, 0, 1), 4)
        with pytest.raises(OutOfRange):
            parent(())

    @given(st.lists(st.integers(0, 255), max_size=40))
    def test_encoding_round_trip(self, z):
        z = tuple(z)
        buf = encode_zone_id(z)
        assert buf[0] == len(z)
        assert decode_zone_id(buf + b"tail") == (z, len(z) + 1)

    def test_encoding_rejects_wide_branch(self):
        with pytest.raises(ValueError):
            encode_zone_id((256,))


class TestRegion:
    def test_contains(self):
        assert region_contains_point(Rectangular(R(0, 0, 1, 1)), Point(0.5, 0.5))
        rem = Remainder(SQ4, (R(0, 0, 2, 2),))
        assert not region_contains_point(rem, Point(1, 1))
        assert region_contains_point(rem, Point(3, 3))

    def test_intersects(self):
        assert region_intersects_area(Rectangular(R(0, 0, 1, 1)), R(0.5, 0, 2, 1))
        rem = Remainder(SQ4, (R(0, 0, 2, 2),))
        assert not region_intersects_area(rem, R(0.5, 0.5, 1, 1))
        # the query spans two excluded rects: empty true intersection, reported as a hit
        rem2 = Remainder(SQ4, (R(0, 0, 2, 2), R(2, 0, 4, 2)))
        assert region_intersects_area(rem2, R(1, 0.5, 3, 1.5))

    def test_remainder_validation(self):
        with pytest.raises(ValueError):
            Remainder(SQ4, (R(3, 3, 5, 5),))
        with pytest.raises(ValueError):
            Remainder(SQ4, (R(0, 0, 2, 2), R(1, 1, 3, 3)))

    def test_merge_regions(self):
        a, b = Rectangular(R(0, 0, 2, 4)), Rectangular(R(2, 0, 4, 4))
        assert merge_regions(a, b) == Rectangular(SQ4)
        rem = Remainder(SQ4, (R(0, 0, 2, 2), R(2, 2, 4, 4)))
        left = merge_regions(rem, Rectangular(R(0, 0, 2, 2)))
        assert left == Remainder(SQ4, (R(2, 2, 4, 4),))
        assert merge_regions(Rectangular(R(2, 2, 4, 4)), left) == Rectangular(SQ4)


@settings(max_examples=60)
@given(st.floats(-1, 5), st.floats(-1, 5), st.floats(0.01, 3), st.booleans(), st.integers(0, 2**31))
def test_remainder_intersection_sound(cx, cy, size, circle, seed):
    rng = random.Random(seed)
    rem = Remainder(SQ4, (R(0, 0, 2, 2), R(2, 2, 4, 3)))
    area = Circle(Point(cx, cy), size) if circle else R(cx, cy, cx + size, cy + size)
    n = 40
    hit = False
    for i in range(n):
        for j in range(n):
            p = Point(4 * (i + rng.random()) / n, 4 * (j + rng.random()) / n)
            if region_contains_point(rem, p) and (rect_contains_point(area, p) if not circle
                                                  else (p.x - cx) ** 2 + (p.y - cy) ** 2 <= size ** 2):
                hit = True
                break
        if hit:
            break
    if hit:
        assert region_intersects_area(rem, area)


class TestConfig:
    def test_complete_needs_room(self):
        with pytest.raises(ConfigError):
            ZoningConfig(4, 15, 4)
        ZoningConfig(4, 16, 4)

    def test_incremental(self):
        with pytest.raises(ConfigError):
            ZoningConfig(4, 8, 4, division_mode="incremental")
        ZoningConfig(4, 9, 4, division_mode="incremental")

    def test_bad_values(self):
        for args in ((1, 16, 4), (4, 16, 0), (300, 10**4, 1)):
            with pytest.raises(ConfigError):
                ZoningConfig(*args)


class TestSplit:
    def test_quantile_midpoint(self):
        pts = [Point(x, 0.5) for x in (0.5, 1.5, 2.5, 3.5)]
        assert split_zone(R(0, 0, 4, 1), pts, 2) == [R(0, 0, 2, 1), R(2, 0, 4, 1)]

    def test_square_cuts_x(self):
        out = split_zone(R(0, 0, 1, 1), [Point(0.25, 0.9), Point(0.75, 0.1)], 2)
        assert out == [R(0, 0, 0.5, 1), R(0.5, 0, 1, 1)]

    def test_longer_side_y(self):
        pts = [Point(0.5, y) for y in (0.5, 1.5, 2.5, 3.5)]
        out = split_zone(R(0, 0, 1, 4), pts, 4)
        assert [r.min.y for r in out] == [0, 1, 2, 3]
        assert all(r.min.x == 0 and r.max.x == 1 for r in out)

    def test_shared_coordinate_unsplittable(self):
        with pytest.raises(UnsplittableZone):
            split_zone(R(0, 0, 4, 1), [Point(2, 0.1), Point(2, 0.9)], 2)

    def test_universe_edge_kept_closed(self):
        out = split_zone(universe_rect(0, 0, 1, 1), [Point(0.2, 0.5), Point(1.0, 1.0)], 2)
        assert not out[0].closed_x and out[1].closed_x
        assert rect_contains_point(out[1], Point(1.0, 1.0))


@settings(max_examples=150)
@given(st.lists(st.tuples(st.floats(0, 0.999), st.floats(0, 0.999)), min_size=2, max_size=60,
                unique_by=(lambda t: t[0], lambda t: t[1])),
       st.integers(2, 8), st.floats(0.2, 5))
def test_split_partition_and_balance(raw, k, aspect):
    bounds = R(0, 0, 1, aspect)
    pts = [Point(x, y * aspect) for x, y in raw]
    subs = split_zone(bounds, pts, k)
    m = len(subs)
    assert m == min(k, len(pts))
    counts = [sum(rect_contains_point(s, p) for p in pts) for s in subs]
    assert all(sum(rect_contains_point(s, p) for s in subs) == 1 for p in pts)
    assert max(counts) - min(counts) <= 1
    assert sum(s.area for s in subs) == pytest.approx(bounds.area)


class TestCluster:
    def two_blobs(self):
        r = random.Random(1)
        pts = [Point(r.uniform(0.05, 0.2), r.uniform(0.05, 0.2)) for _ in range(10)]
        pts += [Point(r.uniform(0.8, 0.95), r.uniform(0.8, 0.95)) for _ in range(10)]
        pts += [Point(0.5, 0.1), Point(0.1, 0.6), Point(0.6, 0.5)]
        return list(enumerate(pts, 1))

    def test_two_blobs(self):
        peers = self.two_blobs()
        rects, rest = cluster_zone(Rectangular(R(0, 0, 1, 1)), peers, INC)
        counts = sorted(sum(rect_contains_point(b, p) for _, p in peers) for b in rects)
        assert counts == [10, 10]
        assert sorted(rest) == [21, 22, 23]

    def test_tight_group_of_thirteen(self):
        r = random.Random(5)
        peers = [(i, Point(r.uniform(0.4, 0.45), r.uniform(0.4, 0.45))) for i in range(13)]
        rects, rest = cluster_zone(Rectangular(R(0, 0, 1, 1)), peers, INC)
        assert 1 <= len(rects) <= 3
        for b in rects:
            assert 4 <= sum(rect_contains_point(b, p) for _, p in peers) <= 12
        assert len(rest) >= 1

    def test_too_few_peers(self):
        peers = [(1, Point(0.1, 0.1)), (2, Point(0.9, 0.9)), (3, Point(0.5, 0.5))]
        with pytest.raises(NoViableClustering):
            cluster_zone(Rectangular(R(0, 0, 1, 1)), peers, INC)


def _check_clusters(region, peers, cfg):
    rects, rest = cluster_zone(region, peers, cfg)
    assert 1 <= len(rects) <= cfg.k - 1
    for i, a in enumerate(rects):
        assert rect_contains_point(region.bbox, a.min)
        for b in rects[i + 1:]:
            assert not any(rect_contains_point(a, p) and rect_contains_point(b, p) for _, p in peers)
    inside = []
    for b in rects:
        got = [a for a, p in peers if rect_contains_point(b, p)]
        assert cfg.theta_l <= len(got) <= cfg.theta_h
        inside += got
    assert sorted(inside + list(rest)) == sorted(a for a, _ in peers)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(13, 40))
def test_cluster_soundness_uniform(seed, n):
    r = random.Random(seed)
    peers = [(i, Point(r.random(), r.random())) for i in range(n)]
    _check_clusters(Rectangular(R(0, 0, 1, 1)), peers, INC)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_divide_region_tiles(seed):
    """Every point of the divided region lies in exactly one sub-region."""
    r = random.Random(seed)
    cfg = ZoningConfig(4, 16, 4, scheme="clustering")
    centers = [Point(r.random(), r.random()) for _ in range(3)]
    peers = []
    for i in range(20):
        c = centers[i % 3]
        peers.append((i, Point(min(max(r.gauss(c.x, 0.05), 0), 0.999),
                               min(max(r.gauss(c.y, 0.05), 0), 0.999))))
    region = Rectangular(universe_rect(0, 0, 1, 1))
    subs = divide_region(region, peers, cfg)
    assert 2 <= len(subs) <= 4
    probes = [p for _, p in peers] + [Point(r.random(), r.random()) for _ in range(300)]
    probes.append(Point(1.0, 1.0))
    for p in probes:
        assert sum(region_contains_point(s, p) for s in subs) == 1
    # a second-level division of the remainder also tiles it
    rem = subs[-1]
    if isinstance(rem, Remainder):
        mine = [(a, p) for a, p in peers if region_contains_point(rem, p)]
        if len(mine) >= 2:
            try:
                sub2 = divide_region(rem, mine, cfg)
            except UnsplittableZone:
                return
            for p in probes:
                if region_contains_point(rem, p):
                    assert sum(region_contains_point(s, p) for s in sub2) == 1
