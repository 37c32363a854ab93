import random

import pytest

from geop2p.geometry import Circle, Point, Rect, universe_rect
from geop2p.messages import AreaMsgAll, Envelope, Mode
from geop2p.oracle import brute_nearest, brute_range
from geop2p.protocol import Peer, PeerParams
from geop2p.routing_table import Bucket, RoutingTable, SelfMarker, SiblingEntry
from geop2p.simnet import NetModel
from geop2p.zoning import Rectangular, ZoningConfig

from conftest import QID, Overlay, grid

UNIV = universe_rect(0, 0, 100, 100)


def R(x0, y0, x1, y1):
    return Rect.from_bounds(x0, y0, x1, y1)


@pytest.fixture(scope="module")
def net64():
    ov = Overlay(grid(64), seed=2)
    ov.settle()
    return ov


class TestAreaAll:
    def test_single_peer(self):
        ov = Overlay([(50, 50)])
        got, hops = ov.query(ov.addrs[0], "issue_area_all", UNIV, QID)
        assert got == ov.addrs and hops == [0] and ov.last_sent == 0

    def test_universe_reaches_all_once(self, net64):
        d = net64.gt.depth() + 1
        assert d >= 3
        for src in net64.addrs[::13]:
            got, hops = net64.query(src, "issue_area_all", UNIV, QID)
            assert sorted(got) == sorted(net64.addrs)
            assert max(hops) <= d

    def test_matches_oracle(self, net64):
        rng = random.Random(4)
        for _ in range(40):
            x, y = rng.uniform(0, 80), rng.uniform(0, 80)
            area = R(x, y, x + rng.uniform(1, 30), y + rng.uniform(1, 30))
            got, _ = net64.query(rng.choice(net64.addrs), "issue_area_all", area, QID)
            assert sorted(got) == sorted(brute_range(net64.gt.coords, area))

    def test_circle(self, net64):
        c = Circle(Point(40, 60), 22)
        got, _ = net64.query(net64.addrs[5], "issue_area_all", c, QID)
        assert sorted(got) == sorted(brute_range(net64.gt.coords, c))


class TestAreaAny:
    def test_issuer_inside(self, net64):
        a = net64.addrs[0]
        p = net64.gt.coords[a]
        got, _ = net64.query(a, "issue_area_any", Circle(p, 0.1), QID)
        assert got == [a] and net64.last_sent == 0

    def test_remote_leaf(self, net64):
        z = max(net64.gt.leaf_members().items(), key=lambda kv: len(kv[1]))[0]
        area = net64.gt.regions[z].bounds
        members = brute_range(net64.gt.coords, area)
        src = next(a for a in net64.addrs if a not in members)
        got, _ = net64.query(src, "issue_area_any", area, QID)
        assert len(got) == 1 and got[0] in members

    def test_empty_area(self, net64):
        area = R(99.5, 99.5, 99.9, 99.9)
        assert not brute_range(net64.gt.coords, area)
        got, _ = net64.query(net64.addrs[3], "issue_area_any", area, QID)
        assert got == []


class TestZoneBroadcast:
    def test_own_level_only(self, net64):
        a = net64.addrs[7]
        d = net64.sim.peers[a].rt.d
        got, _ = net64.query(a, "issue_zone_broadcast", d + 1, QID)
        assert got == [a]

    def test_level_one_everyone(self, net64):
        got, _ = net64.query(net64.addrs[9], "issue_zone_broadcast", 1, QID)
        assert sorted(got) == sorted(net64.addrs)

    def test_leaf_zone(self, net64):
        a = net64.addrs[11]
        rt = net64.sim.peers[a].rt
        got, _ = net64.query(a, "issue_zone_broadcast", rt.d, QID)
        assert sorted(got) == sorted(net64.gt.leaf_members()[rt.zone_id])


class TestPoint:
    def test_own_coordinate(self, net64):
        a = net64.addrs[2]
        got, _ = net64.query(a, "issue_point", net64.gt.coords[a], Mode.ANY, QID)
        assert got == [a]

    def test_remote_zone_all(self, net64):
        rng = random.Random(8)
        for _ in range(15):
            p = Point(rng.uniform(0, 100), rng.uniform(0, 100))
            z = net64.gt.leaf_of(p)
            got, _ = net64.query(net64.addrs[0], "issue_point", p, Mode.ALL, QID)
            assert sorted(got) == sorted(net64.gt.leaf_members()[z])

    def test_point_on_shared_edge(self, net64):
        z = net64.gt.leaves()[0]
        b = net64.gt.regions[z].bounds
        p = Point(b.max.x, (b.min.y + b.max.y) / 2)
        if p.x >= 100:
            p = Point(b.min.x, p.y)
        owner = net64.gt.leaf_of(p)
        got, _ = net64.query(net64.addrs[4], "issue_point", p, Mode.ALL, QID)
        assert sorted(got) == sorted(net64.gt.leaf_members()[owner])


class TestNearest:
    def test_matches_oracle(self, net64):
        rng = random.Random(12)
        for _ in range(40):
            p = Point(rng.uniform(0, 100), rng.uniform(0, 100))
            got, _ = net64.query(rng.choice(net64.addrs), "issue_nearest", p, QID)
            assert got == [brute_nearest(net64.gt.coords, p)]

    def test_exact_coordinate(self, net64):
        a = net64.addrs[20]
        got, _ = net64.query(net64.addrs[0], "issue_nearest", net64.gt.coords[a], QID)
        assert got == [a]

    def test_across_boundary(self, net64):
        z = net64.gt.leaves()[0]
        b = net64.gt.regions[z].bounds
        # a point just inside the zone's far edge, next to the peers beyond it
        inside = [a for a in net64.gt.leaf_members()[z]]
        for edge_x in (b.max.x - 1e-6,):
            p = Point(edge_x, (b.min.y + b.max.y) / 2)
            want = brute_nearest(net64.gt.coords, p)
            got, _ = net64.query(inside[0], "issue_nearest", p, QID)
            assert got == [want]


class TestJoin:
    def test_two_peers(self):
        ov = Overlay([(20, 20), (80, 80)])
        a, b = ov.addrs
        assert set(ov.sim.peers[a].rt.leaf) == {b}
        assert set(ov.sim.peers[b].rt.leaf) == {a}

    def test_announce_reaches_zone(self):
        ov = Overlay(grid(10))
        assert ov.audit().ok
        for a in ov.addrs:
            assert len(ov.sim.peers[a].rt.leaf) == 9

    def test_threshold_join_splits(self):
        pts = grid(16)
        ov = Overlay(pts[:15], k=4, theta_h=16, theta_l=4)
        assert ov.events("split") == []
        ov.add(pts[15])
        assert len(ov.events("split")) == 1
        assert ov.leaf_sizes() == [4, 4, 4, 4]
        assert ov.audit().ok

    def test_join_via_dead_bootstrap_retries(self):
        ov = Overlay(grid(6))
        dead = ov.addrs[0]
        ov.sim.crash(dead)
        a = ov.sim.join(Point(33, 44), bootstrap=dead)
        ov.sim.run_until_quiescent()
        assert ov.sim.peers[a].active
        assert ov.sim.join_retries[a] >= 1


class TestDiversify:
    def test_buckets_fill(self):
        ov = Overlay(grid(120), seed=5)
        sizes = [len(e.bucket) for a in ov.addrs for _, _, e in ov.sim.peers[a].rt.sibling_entries()]
        assert max(sizes) == 3
        assert sum(s >= 2 for s in sizes) > len(sizes) // 2

    def test_seed_changes_buckets(self):
        def buckets(seed):
            ov = Overlay(grid(80), seed=seed)
            return {a: [tuple(e.bucket.addrs()) for _, _, e in ov.sim.peers[a].rt.sibling_entries()]
                    for a in ov.addrs}
        assert buckets(1) != buckets(2)


class TestSplit:
    def test_k2_sixteen(self):
        ov = Overlay(grid(16), k=2, theta_h=16, theta_l=4)
        assert ov.leaf_sizes() == [8, 8]
        assert ov.audit().ok
        (ev,) = ov.events("split")
        assert ev[3] <= 15

    def test_simultaneous_detectors(self):
        ov = Overlay(grid(12), k=2, theta_h=16, theta_l=4)
        assert 7 in ov.addrs and 9 in ov.addrs
        ov.sim.issue(7, "trigger_split")
        ov.sim.issue(9, "trigger_split")
        ov.settle()
        splits = ov.events("split")
        assert len(splits) == 1
        assert [ev[1] for ev in ov.events("stand_down")] == [7]
        assert ov.sim.msg_kinds["SplitAnnounce"] == 11
        assert ov.leaf_sizes() == [6, 6]
        assert ov.audit().ok


# left zone x < 50, right zone x > 50; k = 2 so the universe splits in two
LEFT = [(10, 15), (20, 35), (30, 55), (40, 75)]
RIGHT = [(60, 20), (70, 40), (80, 60), (90, 80)]


class TestMerge:
    def test_two_into_five_retracts(self):
        ov = Overlay(LEFT + RIGHT, k=2, theta_h=8, theta_l=3)
        assert ov.leaf_sizes() == [4, 4]
        ov.add((65, 90))
        assert ov.leaf_sizes() == [4, 5]
        for a in ov.addrs[:2]:
            ov.sim.leave(a)
            ov.settle()
        assert len(ov.events("merge")) == 1
        assert ov.leaf_sizes() == [7]
        assert ov.gt.depth() == 0
        assert all(ov.sim.peers[a].rt.d == 1 for a in ov.sim.alive)
        assert ov.audit().ok

    def test_collapse_partner_subtree(self):
        right = RIGHT + [(55, 10), (75, 30), (85, 50), (95, 70)]
        ov = Overlay(LEFT + right, k=2, theta_h=8, theta_l=3)
        assert ov.leaf_sizes() == [4, 4, 4]
        for a in ov.addrs[:2]:
            ov.sim.leave(a)
            ov.settle()
        assert len(ov.events("collapse")) == 1
        assert ov.audit().ok
        assert sum(ov.leaf_sizes()) == 10

    def test_graceful_leave_purges(self):
        ov = Overlay(grid(10))
        gone = ov.addrs[4]
        ov.sim.leave(gone)
        ov.settle()
        assert all(gone not in ov.sim.peers[a].rt.all_contacts() for a in ov.sim.alive)


class TestRefresh:
    def refreshing(self, n=60, seed=3):
        ov = Overlay(grid(n), seed=seed)
        ov.sim.start_refresh()
        return ov

    def test_live_network_only_pings(self):
        ov = self.refreshing()
        before = dict(ov.sim.msg_kinds)
        ov.sim.run_until(ov.sim.now + 3000)
        grown = {k for k, v in ov.sim.msg_kinds.items() if v != before.get(k, 0)}
        assert grown <= {"Ping", "Pong"}

    def test_crash_detected_within_t(self):
        ov = self.refreshing()
        t = ov.sim.params.refresh_period
        victim = ov.addrs[10]
        mates = [a for a in ov.addrs if victim in ov.sim.peers[a].rt.leaf]
        ov.sim.crash(victim)
        ov.sim.run_until(ov.sim.now + t)
        assert mates and all(victim not in ov.sim.peers[a].rt.leaf for a in mates)

    def test_dead_bucket_repopulated(self):
        ov = self.refreshing(n=90, seed=4)
        t = ov.sim.params.refresh_period
        owner = ov.addrs[0]
        r, c, e = next(ov.sim.peers[owner].rt.sibling_entries())
        for a in e.bucket.addrs():
            ov.sim.crash(a)
        ov.sim.run_until(ov.sim.now + 2 * t)
        ov.settle()
        e = ov.sim.peers[owner].rt.entry(r, c)
        assert e.bucket.contacts and all(a in ov.sim.alive for a in e.bucket.addrs())
        assert ov.audit().ok


class TestPiggyback:
    def peer_with_sibling(self):
        cfg = ZoningConfig(4, 16, 4)
        p = Peer(1, Point(10, 10), cfg, PeerParams(), Rectangular(UNIV))
        rt = RoutingTable.for_universe(Rectangular(UNIV))
        rt.rows.append({0: SelfMarker(Rectangular(R(0, 0, 50, 100))),
                        1: SiblingEntry(Rectangular(Rect.from_bounds(50, 0, 100, 100, True, True)),
                                        Bucket(3))})
        rt.zone_id = (0,)
        rt.self_leaf_boundary = rt.rows[0][0].boundary
        rt.touch(5, 1, 1, 0.0)
        p.rt, p.state = rt, "active"
        return p

    def test_sibling_sender_to_front(self):
        p = self.peer_with_sibling()
        env = Envelope(9, 1, AreaMsgAll(R(0, 0, 1, 1), 2, 77), zone_tag=(1,), src_coord=Point(70, 70))
        p.receive(env, 5.0)
        assert p.rt.entry(1, 1).bucket.addrs() == [9, 5]

    def test_own_column_tag(self):
        p = self.peer_with_sibling()
        env = Envelope(9, 1, AreaMsgAll(R(0, 0, 1, 1), 2, 77), zone_tag=(0,), src_coord=Point(20, 20))
        p.receive(env, 5.0)
        assert p.rt.entry(1, 1).bucket.addrs() == [5]
        assert 9 in p.rt.leaf

    def test_unknown_column_ignored(self):
        p = self.peer_with_sibling()
        env = Envelope(9, 1, AreaMsgAll(R(0, 0, 1, 1), 2, 77), zone_tag=(3,), src_coord=Point(70, 70))
        p.receive(env, 5.0)
        assert p.rt.entry(1, 1).bucket.addrs() == [5]


def test_lossy_build_still_audits():
    ov = Overlay(grid(50), seed=9, net=NetModel(1, 10, loss_rate=0.05))
    assert ov.audit().ok
