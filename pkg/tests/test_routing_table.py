import random

import pytest

from geop2p.geometry import Point, Rect, universe_rect
from geop2p.routing_table import (
    Bucket,
    Contact,
    InconsistentAssignment,
    RoutingTable,
    SelfColumn,
    SelfMarker,
    SiblingEntry,
    UnknownColumn,
)
from geop2p.zoning import Rectangular, Remainder


def R(x0, y0, x1, y1):
    return Rect.from_bounds(x0, y0, x1, y1)


def Z(*b):
    return Rectangular(R(*b))


UNI = Rectangular(universe_rect(0, 0, 4, 4))


def three_level():
    """Own leaf zone (0, 1) inside [0,2)x[0,4); d = 3."""
    rt = RoutingTable.for_universe(UNI, bucket_size=3)
    rt.rows.append({0: SelfMarker(Z(0, 0, 2, 4)), 1: SiblingEntry(Z(2, 0, 4, 4), Bucket(3))})
    rt.rows.append({0: SiblingEntry(Z(0, 0, 2, 2), Bucket(3)), 1: SelfMarker(Z(0, 2, 2, 4))})
    rt.zone_id = (0, 1)
    rt.self_leaf_boundary = Z(0, 2, 2, 4)
    rt.touch(10, 1, 1, 0.0)
    rt.touch(20, 2, 0, 0.0)
    rt.touch_leaf(30, Point(1, 3), 0.0)
    return rt


class TestBucket:
    def test_full_bucket_evicts_tail(self):
        b = Bucket(3)
        for a, t in ((1, 1), (2, 2), (3, 3)):
            b.touch(a, t)
        b.touch(4, 4)
        assert b.addrs() == [4, 3, 2]

    def test_mid_bucket_moves_to_front(self):
        b = Bucket(3, [Contact(1, 3), Contact(2, 2), Contact(3, 1)])
        b.touch(2, 5)
        assert b.addrs() == [2, 1, 3] and b.freshest == 5

    def test_empty_bucket(self):
        b = Bucket(3)
        b.touch(7, 1)
        assert len(b) == 1

    def test_capacity(self):
        with pytest.raises(ValueError):
            Bucket(0)


class TestForwarding:
    def test_universe_area(self):
        rt = three_level()
        got = rt.forwarding_candidates(universe_rect(0, 0, 4, 4), 1)
        assert [(lvl, c) for lvl, c, _ in got] == [(3, 0), (2, 1)]

    def test_disjoint_area(self):
        rt = three_level()
        assert rt.forwarding_candidates(R(0.5, 2.5, 1, 3), 1) == []

    def test_one_level_two_sibling(self):
        rt = three_level()
        got = rt.forwarding_candidates(R(0.5, 0.5, 1, 1), 1)
        assert [(lvl, c) for lvl, c, _ in got] == [(3, 0)]

    def test_from_level_limits_rows(self):
        rt = three_level()
        got = rt.forwarding_candidates(universe_rect(0, 0, 4, 4), 2)
        assert [(lvl, c) for lvl, c, _ in got] == [(3, 0)]

    def test_find_zone_of_point(self):
        rt = three_level()
        assert rt.find_zone_of_point(Point(3, 3))[:2] == (1, 1)
        assert rt.find_zone_of_point(Point(1, 1))[:2] == (2, 0)
        assert rt.find_zone_of_point(Point(1, 3)) is None


class TestTouch:
    def test_self_column(self):
        with pytest.raises(SelfColumn):
            three_level().touch(5, 1, 0, 1.0)

    def test_unknown_column(self):
        with pytest.raises(UnknownColumn):
            three_level().touch(5, 1, 3, 1.0)

    def test_locate(self):
        rt = three_level()
        assert rt.locate((0, 1)) == (3, None)
        assert rt.locate((1, 2, 0)) == (1, 1)
        assert rt.locate((0, 0)) == (2, 0)
        assert rt.locate((0,)) is None

    def test_remove_peer_reports_emptied(self):
        rt = three_level()
        assert rt.remove_peer(20) == [(2, 0)]
        assert rt.remove_peer(30) == [] and 30 not in rt.leaf


class TestSplit:
    def leaf_of_16(self):
        rt = RoutingTable.for_universe(UNI, bucket_size=3)
        pts = {a: Point(0.1 + 0.2 * a, 1.0) for a in range(1, 16)}
        for a, p in pts.items():
            rt.touch_leaf(a, p, 0.0)
        return rt, pts

    def test_two_way(self):
        rt, pts = self.leaf_of_16()
        subs = [(0, Z(0, 0, 1.7, 4)), (1, Rectangular(Rect.from_bounds(1.7, 0, 4, 4, True, True)))]
        assign = {a: (0 if p.x < 1.7 else 1, p) for a, p in pts.items()}
        rt.apply_split(subs, 0, assign)
        assert rt.zone_id == (0,) and rt.d == 2
        assert len(rt.leaf) == 7  # 8 peers in branch 0, self included
        e = rt.entry(1, 1)
        assert isinstance(e, SiblingEntry) and e.bucket.addrs() == [8, 9, 10]
        assert rt.sibling_count() == 1

    def test_empty_remainder_kept_and_retried(self):
        rt, pts = self.leaf_of_16()
        rem = Remainder(universe_rect(0, 0, 4, 4), (R(0, 0, 4, 2),))
        rt.apply_split([(0, Z(0, 0, 4, 2)), (1, rem)], 0, {a: (0, p) for a, p in pts.items()})
        e = rt.entry(1, 1)
        assert isinstance(e, SiblingEntry) and not e.bucket.contacts
        # it may fill later, so refresh keeps looking for a contact
        assert rt.stale_buckets(0.0, 500) == [(1, 1)]

    def test_own_branch_missing(self):
        rt, pts = self.leaf_of_16()
        with pytest.raises(InconsistentAssignment):
            rt.apply_split([(0, Z(0, 0, 2, 4)), (1, Z(2, 0, 4, 4))], 2, {})


class TestMerge:
    def test_absorb_partner(self):
        rt = three_level()
        for a in (31, 32):
            rt.touch_leaf(a, Point(1, 3.5), 0.0)
        absorbed = [(40, Point(1, 1)), (41, Point(1.5, 1)), (42, Point(0.5, 0.5))]
        gone = rt.apply_merge(absorbed, 0, Z(0, 0, 2, 4))
        # the parent row held only the two merged zones, so it retracts
        assert gone and rt.d == 2 and rt.zone_id == (0,)
        assert len(rt.leaf) == 6
        assert rt.self_leaf_boundary == Z(0, 0, 2, 4)

    def test_partial_merge_keeps_row(self):
        rt = three_level()
        rt.rows[1][2] = SiblingEntry(Z(1, 0, 2, 2), Bucket(3))
        rt.rows[1][0] = SiblingEntry(Z(0, 0, 1, 2), Bucket(3))
        gone = rt.apply_merge([(40, Point(0.5, 1))], 0, Z(0, 0, 2, 4))
        assert not gone and rt.d == 3 and sorted(rt.rows[1]) == [1, 2]

    def test_dedup(self):
        rt = three_level()
        rt.apply_merge([(30, Point(1, 2.5))], 0, Z(0, 0, 2, 4))
        assert rt.leaf[30].coord == Point(1, 2.5)

    def test_unknown_column(self):
        with pytest.raises(UnknownColumn):
            three_level().apply_merge([], 3, Z(0, 0, 2, 4))


class TestStaleAndSample:
    def test_all_fresh(self):
        rt = three_level()
        assert rt.stale_buckets(0.0, 500) == []

    def test_one_stale(self):
        rt = three_level()
        rt.touch(10, 1, 1, 1000.0)
        assert rt.stale_buckets(1000.0, 500) == [(2, 0)]

    def test_empty_non_remainder_is_stale(self):
        rt = three_level()
        rt.remove_peer(20)
        assert rt.stale_buckets(0.0, 500) == [(2, 0)]

    def test_sample(self):
        rt = three_level()
        assert rt.sample_entries(1, 0, 1) == []
        assert rt.sample_entries(4, 5, 1) == []
        assert sorted(a for *_, a in rt.sample_entries(1, 10, 1)) == [10, 20, 30]
        a = rt.sample_entries(1, 2, random.Random(3))
        b = rt.sample_entries(1, 2, random.Random(3))
        assert a == b and len(a) == 2


def test_copy_is_deep():
    rt = three_level()
    cp = rt.copy()
    assert cp == rt
    cp.touch(99, 1, 1, 5.0)
    assert 99 not in rt.entry(1, 1).bucket
