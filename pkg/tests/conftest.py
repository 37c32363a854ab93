import itertools

import pytest

from geop2p.geometry import Point, universe_rect
from geop2p.oracle import GroundTruth, audit_tables
from geop2p.protocol import PeerParams
from geop2p.simnet import NetModel, Simulator
from geop2p.zoning import Rectangular, ZoningConfig


class Overlay:
    """A simulator plus mirrored ground truth, built by sequential joins."""

    def __init__(self, coords=(), k=4, theta_h=16, theta_l=4, scheme="splitting", seed=1,
                 net=None, side=100.0):
        net = net or NetModel()
        self.universe = universe_rect(0, 0, side, side)
        params = PeerParams(max_delay=net.delay_hi, mean_delay=net.mean_delay, refresh_enabled=False)
        self.sim = Simulator(ZoningConfig(k, theta_h, theta_l, scheme), self.universe, seed, net, params)
        self.gt = GroundTruth(Rectangular(self.universe))
        self.sim.listeners.append(self.gt.on_event)
        self.qids = itertools.count(1)
        self.addrs = []
        for c in coords:
            self.add(c)

    def add(self, coord) -> int:
        sim = self.sim
        if not self.addrs:
            a = sim.found(Point(*coord))
        else:
            live = [b for b in self.addrs if b in sim.alive]
            a = sim.join(Point(*coord), bootstrap=live[0])
        sim.run_until_quiescent()
        self.addrs.append(a)
        return a

    def settle(self):
        self.sim.run_until_quiescent()
        self.gt.coords = self.sim.live_coords()

    def audit(self):
        self.settle()
        return audit_tables(self.gt, {a: self.sim.peers[a] for a in self.sim.alive})

    def query(self, addr, method, *args):
        """Issue a query carrying a fresh id; returns (recipients, hops) after quiescence."""
        qid = next(self.qids)
        args = [qid if a is QID else a for a in args]
        before = self.sim.counters["sent"]
        self.sim.issue(addr, method, *args)
        self.sim.run_until_quiescent()
        got = self.sim.deliveries.pop(qid, [])
        self.last_sent = self.sim.counters["sent"] - before
        return [a for a, _, _ in got], [h for _, h, _ in got]

    def events(self, kind):
        return [ev for _, ev in self.sim.events if ev[0] == kind]

    def leaf_sizes(self):
        self.settle()
        return sorted(len(m) for m in self.gt.leaf_members().values())


QID = object()  # placeholder replaced by a fresh query id in Overlay.query


def grid(n, side=100.0, jitter=0.37):
    """``n`` distinct points on a skewed lattice; no two share an x or a y."""
    m = int(n ** 0.5) + 1
    pts = []
    for i in range(n):
        r, c = divmod(i, m)
        x = (c + 0.5 + jitter * r / m) * side / m
        y = (r + 0.5 + jitter * c / m) * side / m
        pts.append((x, y))
    return pts


@pytest.fixture
def overlay_factory():
    return Overlay


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
