"""Peer state machine: query routing and overlay maintenance.

A :class:`Peer` is driven by three kinds of input: a received
:class:`~geop2p.messages.Envelope`, a timer firing, or a transport report that
a reliable send could not reach its destination. Each handler mutates the
peer and returns an :class:`Outbox` describing sends, local deliveries, timers
and observable events. Handlers never block; every wait is a timer.
"""
from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .geometry import Circle, Point, area_contains_point, distance, rects_tile
from .messages import (
    UNRELIABLE,
    Announce,
    AreaMsgAll,
    AreaMsgAny,
    CollapseAbort,
    CollapseAccept,
    CollapseComplete,
    CollapseRequest,
    ElectAck,
    ElectProposal,
    ElectRelease,
    Envelope,
    JoinAnnounce,
    JoinReply,
    JoinRequest,
    Leave,
    MergerDone,
    MergerRelay,
    MergerReply,
    MergerRequest,
    MergerUpdate,
    MergeStatus,
    Mode,
    NearestDeliver,
    NearestProbe,
    NearestRangeQuery,
    NearestRangeReply,
    Ping,
    PointMsgLeaf,
    Pong,
    Purpose,
    RefreshQuery,
    RefreshReply,
    RowQuery,
    RowReply,
    SampleReply,
    SampleRequest,
    SplitAnnounce,
    ZoneBroadcast,
)
from .routing_table import LeafEntry, RoutingTable, SelfMarker, SiblingEntry
from .zoning import (
    Rectangular,
    Remainder,
    ZoningConfig,
    ZoningError,
    divide_region,
    merge_regions,
    region_contains_point,
)

log = logging.getLogger(__name__)


@dataclass
class PeerParams:
    bucket_size: int = 3
    refresh_period: float = 1000.0
    max_delay: float = 10.0
    mean_delay: float = 5.5
    ping_attempts: int = 3
    refresh_enabled: bool = True

    @property
    def ping_timeout(self) -> float:
        return 4 * self.mean_delay

    @property
    def election_window(self) -> float:
        return 2 * self.max_delay

    @property
    def lock_timeout(self) -> float:
        return 60 * self.max_delay

    def collect_window(self, d: int) -> float:
        return 2 * max(d, 1) * self.max_delay + 2 * self.max_delay


@dataclass
class Outbox:
    sends: list = field(default_factory=list)       # (Envelope, reliable)
    deliveries: list = field(default_factory=list)  # (qid, hops)
    timers: list = field(default_factory=list)      # (delay, token, periodic)
    events: list = field(default_factory=list)
    cancels: list = field(default_factory=list)    # timer tokens
    need_bootstrap: bool = False


@dataclass
class Lock:
    owner: int
    op_id: int
    purpose: Purpose
    running: bool = False


@dataclass
class Election:
    op_id: int
    purpose: Purpose
    waiting: set
    objected: bool = False
    context: Any = None
    proposals: int = 0


@dataclass
class MergeOp:
    op_id: int
    partner_col: int
    request: MergerRequest
    contacts: list


@dataclass
class CollapseOp:
    op_id: int
    request: Envelope
    peers: dict
    responders: set = field(default_factory=set)
    busy: bool = False


@dataclass
class Probe:
    target: int
    kind: str  # "leaf" or "refresh"
    attempts: int
    key: Any = None


@dataclass
class RefreshJob:
    job_id: int
    row: int
    col: int
    candidates: list
    tried: set
    phase: str = "bucket"
    awaiting: set = field(default_factory=set)
    learned: set = field(default_factory=set)
    probing: Optional[int] = None


@dataclass
class NearestJob:
    qid: int
    point: Point
    best: Optional[tuple]  # (distance, addr)
    hops: int
    fallback_exp: Optional[int] = None


class Peer:
    def __init__(self, addr: int, coord: Point, cfg: ZoningConfig, params: PeerParams,
                 universe: Rectangular, seed: int = 0):
        self.addr = addr
        self.coord = Point(*coord)
        self.cfg = cfg
        self.params = params
        self.universe = universe
        self.rt: Optional[RoutingTable] = None
        self.state = "new"
        self.rng = random.Random(f"{seed}:{addr}")
        self.lock: Optional[Lock] = None
        self.election: Optional[Election] = None
        self.deferred: list = []
        self.merge_ops: dict = {}
        self.collapse_ops: dict = {}
        self.probes: dict = {}
        self.leaf_probes: set = set()
        self.refresh_jobs: dict = {}
        self.jobs_by_id: dict = {}
        self.nearest_jobs: dict = {}
        self.blocked_split_at: Optional[int] = None
        self.blocked_merge_at: Optional[int] = None
        self.retry_pending = False
        self._ids = itertools.count(1)
        self._join_attempt = 0

    def __repr__(self):
        return f"Peer({self.addr}, {self.coord}, {self.state}, {self.rt!r})"

    @property
    def active(self) -> bool:
        return self.state == "active"

    def _new_id(self) -> int:
        return (self.addr << 24) | next(self._ids)

    # -- sending helpers ------------------------------------------------------

    def _send(self, out: Outbox, dst: int, msg, hops: int = 0, hint=None) -> None:
        env = Envelope(self.addr, dst, msg, self.rt.zone_id if self.rt else None,
                       self.coord, hops, hint)
        out.sends.append((env, not isinstance(msg, UNRELIABLE)))

    def _timer(self, out: Outbox, delay: float, token: tuple, periodic: bool = False) -> None:
        out.timers.append((delay, token, periodic))

    def _local(self, msg, now: float, hops: int = 0) -> Outbox:
        out = Outbox()
        env = Envelope(self.addr, self.addr, msg, self.rt.zone_id if self.rt else None,
                       self.coord, hops)
        self._dispatch(env, now, out)
        return out

    # -- lifecycle ------------------------------------------------------------------

    def become_founder(self, now: float) -> Outbox:
        out = Outbox()
        self.rt = RoutingTable.for_universe(self.universe, self.params.bucket_size)
        self.state = "active"
        out.events.append(("joined", self.addr))
        self._arm_refresh(out, now)
        return out

    def start_join(self, bootstrap: int, now: float) -> Outbox:
        out = Outbox()
        self.state = "joining"
        self.rt = None
        self._join_attempt += 1
        msg = PointMsgLeaf(self.coord, 1, Mode.ANY, JoinRequest(self.addr, self.coord))
        self._send(out, bootstrap, msg)
        self._timer(out, 100 * self.params.max_delay, ("join_timeout", self._join_attempt))
        return out

    def leave(self, now: float) -> Outbox:
        """Graceful departure: tell every known contact."""
        out = Outbox()
        if self.active:
            for a in sorted(self.rt.all_contacts()):
                self._send(out, a, Leave())
        self.state = "dead"
        out.events.append(("left", self.addr))
        return out

    def start_refresh(self, now: float) -> Outbox:
        out = Outbox()
        if self.active:
            self._arm_refresh(out, now)
        return out

    def crash(self) -> None:
        self.state = "dead"

    def _arm_refresh(self, out: Outbox, now: float) -> None:
        if not self.params.refresh_enabled:
            return
        half = self.params.refresh_period / 2
        # ticks are aligned to a global grid so refresh traffic comes in bursts
        nxt = (math.floor(now / half) + 1) * half
        self._timer(out, nxt - now, ("tick",), periodic=True)

    def _rejoin(self, out: Outbox, reason: str) -> None:
        log.debug("peer %d re-joins: %s", self.addr, reason)
        out.events.append(("rejoin", self.addr, reason))
        self.rt = None
        self.state = "joining"
        self._set_lock(out, None)
        self.election = None
        self.deferred = []
        self.merge_ops.clear()
        self.collapse_ops.clear()
        self.refresh_jobs.clear()
        self.jobs_by_id.clear()
        out.need_bootstrap = True

    # -- application entry points -----------------------------------------------------

    def issue_area_all(self, area, qid: int, now: float) -> Outbox:
        return self._local(AreaMsgAll(area, 1, qid), now)

    def issue_area_any(self, area, qid: int, now: float) -> Outbox:
        return self._local(AreaMsgAny(area, 1, qid), now)

    def issue_zone_broadcast(self, level: int, qid: int, now: float) -> Outbox:
        return self._local(ZoneBroadcast(level, qid), now)

    def issue_point(self, point: Point, mode: Mode, qid: int, now: float) -> Outbox:
        return self._local(PointMsgLeaf(Point(*point), 1, mode, qid), now)

    def issue_nearest(self, point: Point, qid: int, now: float) -> Outbox:
        p = Point(*point)
        return self._local(PointMsgLeaf(p, 1, Mode.ANY, NearestProbe(p, qid)), now)

    def trigger_split(self, now: float) -> Outbox:
        out = Outbox()
        self._start_election(Purpose.SPLIT, now, out)
        return out

    def trigger_merge(self, now: float) -> Outbox:
        out = Outbox()
        self._start_election(Purpose.MERGE, now, out)
        return out

    # -- inputs -------------------------------------------------------------------------

    def receive(self, env: Envelope, now: float) -> Outbox:
        out = Outbox()
        if self.state == "dead":
            return out
        if self.state != "active":
            if isinstance(env.msg, JoinReply):
                self._on_join_reply(env, now, out)
            elif self.state == "joining":
                self.deferred.append(env)
            return out
        self._piggyback(env, now)
        self._dispatch(env, now, out)
        return out

    def on_timer(self, token: tuple, now: float) -> Outbox:
        out = Outbox()
        if self.state == "dead":
            return out
        kind = token[0]
        if kind == "join_timeout":
            if self.state == "joining" and token[1] == self._join_attempt:
                out.need_bootstrap = True
            return out
        if not self.active:
            return out
        handler = getattr(self, "_t_" + kind)
        handler(token, now, out)
        return out

    def on_send_failed(self, env: Envelope, now: float) -> Outbox:
        """The transport gave up on ``env``: its destination is gone."""
        out = Outbox()
        if not self.active:
            return out
        dead = env.dst
        self._forget(dead, now, out)
        msg = env.msg
        if isinstance(msg, (AreaMsgAll, AreaMsgAny, ZoneBroadcast, PointMsgLeaf, MergerUpdate)):
            if env.hint and env.hint[1] is not None:
                r, c = env.hint
                e = self._entry(r, c)
                if e is not None and e.bucket.contacts:
                    self._send(out, e.bucket.contacts[0].addr, msg, env.hops, env.hint)
        elif isinstance(msg, MergerRequest):
            op = self.merge_ops.get(msg.op_id)
            if op is not None:
                self._merge_try_next(op, now, out)
        elif isinstance(msg, ElectProposal):
            el = self.election
            if el is not None and el.op_id == msg.op_id:
                el.waiting.discard(dead)
                if not el.waiting:
                    self._decide(now, out)
        elif isinstance(msg, RefreshQuery):
            job = self.jobs_by_id.get(msg.job)
            if job is not None:
                job.awaiting.discard(dead)
                if not job.awaiting:
                    self._refresh_collected(job, now, out)
        return out

    def _forget(self, addr: int, now: float, out: Outbox) -> None:
        was_mate = addr in self.rt.leaf
        for r, c in self.rt.remove_peer(addr):
            self._start_refresh(r, c, now, out)
        if was_mate:
            out.events.append(("forgot", self.addr, addr))
            self._check_thresholds(now, out)

    def _entry(self, r: int, c: int) -> Optional[SiblingEntry]:
        if not 1 <= r < self.rt.d:
            return None
        e = self.rt.rows[r - 1].get(c)
        return e if isinstance(e, SiblingEntry) else None

    # -- piggyback refresh ----------------------------------------------------------------

    def _piggyback(self, env: Envelope, now: float) -> None:
        tag = env.zone_tag
        if tag is None or env.src == self.addr or isinstance(env.msg, Leave):
            return
        rt = self.rt
        loc = rt.locate(tag)
        if loc is None:
            return
        r, c = loc
        coord = env.src_coord
        if c is None:
            le = rt.leaf.get(env.src)
            if le is not None:
                le.last_seen = now
            elif coord is not None and region_contains_point(rt.self_leaf_boundary, coord):
                rt.touch_leaf(env.src, coord, now)
            return
        e = rt.rows[r - 1].get(c)
        if isinstance(e, SiblingEntry) and coord is not None and region_contains_point(e.boundary, coord):
            e.bucket.touch(env.src, now)

    # -- dispatch -----------------------------------------------------------------------------

    def _dispatch(self, env: Envelope, now: float, out: Outbox) -> None:
        handler = _HANDLERS.get(type(env.msg))
        if handler is None:
            log.warning("peer %d: no handler for %s", self.addr, env.kind)
            return
        handler(self, env, now, out)

    def _deliver(self, payload, env: Envelope, now: float, out: Outbox) -> None:
        if isinstance(payload, int):
            out.deliveries.append((payload, env.hops))
        else:
            handler = _INTERNAL.get(type(payload))
            if handler is not None:
                handler(self, payload, env, now, out)

    # -- routing ---------------------------------------------------------------------------

    def _on_area_all(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        d = rt.d
        if area_contains_point(m.area, self.coord):
            self._deliver(m.payload, env, now, out)
        if m.level <= d:
            for a in sorted(rt.leaf):
                if area_contains_point(m.area, rt.leaf[a].coord):
                    self._send(out, a, AreaMsgAll(m.area, d + 1, m.payload), env.hops + 1, (d, None))
        for lvl, c, e in rt.forwarding_candidates(m.area, m.level):
            if e.bucket.contacts:
                self._send(out, e.bucket.contacts[0].addr, AreaMsgAll(m.area, lvl, m.payload),
                           env.hops + 1, (lvl - 1, c))

    def _on_area_any(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        d = rt.d
        if area_contains_point(m.area, self.coord):
            self._deliver(m.payload, env, now, out)
            return
        if m.level <= d:
            for a in sorted(rt.leaf):
                if area_contains_point(m.area, rt.leaf[a].coord):
                    self._send(out, a, AreaMsgAny(m.area, d + 1, m.payload), env.hops + 1, (d, None))
                    return
        for lvl, c, e in rt.forwarding_candidates(m.area, m.level):
            if e.bucket.contacts:
                self._send(out, e.bucket.contacts[0].addr, AreaMsgAny(m.area, lvl, m.payload),
                           env.hops + 1, (lvl - 1, c))
                return

    def _on_zone_broadcast(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        d = rt.d
        self._deliver(m.payload, env, now, out)
        if m.level <= d:
            for a in sorted(rt.leaf):
                self._send(out, a, ZoneBroadcast(d + 1, m.payload), env.hops + 1, (d, None))
        for r in range(d - 1, max(m.level, 1) - 1, -1):
            row = rt.rows[r - 1]
            for c in sorted(row):
                e = row[c]
                if isinstance(e, SiblingEntry) and e.bucket.contacts:
                    self._send(out, e.bucket.contacts[0].addr, ZoneBroadcast(r + 1, m.payload),
                               env.hops + 1, (r, c))

    def _on_point(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        if region_contains_point(rt.self_leaf_boundary, m.point):
            if isinstance(m.payload, JoinRequest) and self.lock is not None:
                self.deferred.append(env)
                return
            self._deliver(m.payload, env, now, out)
            if m.mode == Mode.ALL and m.level <= rt.d:
                for a in sorted(rt.leaf):
                    self._send(out, a, PointMsgLeaf(m.point, rt.d + 1, m.mode, m.payload),
                               env.hops + 1, (rt.d, None))
            return
        hit = rt.find_zone_of_point(m.point, m.level)
        if hit is None:
            out.events.append(("unroutable", self.addr, env.kind))
            return
        r, c, e = hit
        if e.bucket.contacts:
            self._send(out, e.bucket.contacts[0].addr,
                       PointMsgLeaf(m.point, r + 1, m.mode, m.payload), env.hops + 1, (r, c))
        else:
            self._empty_zone(env, r, c, e, now, out)

    def _empty_zone(self, env: Envelope, r: int, c: int, e: SiblingEntry,
                    now: float, out: Outbox) -> None:
        payload = env.msg.payload
        if isinstance(payload, JoinRequest) and isinstance(e.boundary, Remainder):
            # first peer of a peer-less remainder zone: hand it a table rooted there
            t = self.rt.copy()
            del t.rows[r:]
            row = t.rows[r - 1]
            mine = self.rt.zone_id[r - 1]
            own = SelfMarker(row[mine].boundary)
            bucket = e.bucket.copy()
            bucket.touch(self.addr, now)
            row[mine] = SiblingEntry(own.boundary, bucket)
            row[c] = SelfMarker(e.boundary)
            t.zone_id = (*self.rt.zone_id[:r - 1], c)
            t.leaf = {}
            t.self_leaf_boundary = e.boundary
            e.bucket.touch(payload.addr, now)
            self._send(out, payload.addr, JoinReply(t, self.addr, self.coord, True))
            return
        if isinstance(payload, NearestProbe):
            self._nearest_fallback(payload, env.hops, now, out)
            return
        out.events.append(("empty_zone", self.addr, r, c))
        self._start_refresh(r, c, now, out)

    # -- nearest peer ----------------------------------------------------------------------

    def _i_nearest_probe(self, p: NearestProbe, env: Envelope, now: float, out: Outbox) -> None:
        best = (distance(self.coord, p.point), self.addr)
        for a, le in self.rt.leaf.items():
            best = min(best, (distance(le.coord, p.point), a))
        job = NearestJob(p.qid, p.point, best, env.hops)
        self.nearest_jobs[p.qid] = job
        self._nearest_search(job, best[0], now, out)

    def _nearest_fallback(self, p: NearestProbe, hops: int, now: float, out: Outbox) -> None:
        job = NearestJob(p.qid, p.point, None, hops, fallback_exp=4)
        self.nearest_jobs[p.qid] = job
        self._nearest_search(job, self._fallback_radius(4), now, out)

    def _fallback_radius(self, j: int) -> float:
        b = self.universe.bounds
        return math.hypot(b.width, b.height) / 2 / 2 ** j

    def _nearest_search(self, job: NearestJob, radius: float, now: float, out: Outbox) -> None:
        sub = self._local(AreaMsgAll(Circle(job.point, radius), 1,
                                     NearestRangeQuery(job.qid, self.addr)), now)
        _merge_out(out, sub)
        self._timer(out, self.params.collect_window(self.rt.d), ("nearest", job.qid))

    def _i_nearest_range_query(self, q: NearestRangeQuery, env: Envelope, now: float, out: Outbox) -> None:
        if q.reply_to == self.addr:
            job = self.nearest_jobs.get(q.qid)
            if job is not None:
                cand = (distance(self.coord, job.point), self.addr)
                job.best = cand if job.best is None else min(job.best, cand)
            return
        self._send(out, q.reply_to, NearestRangeReply(q.qid, ((self.addr, self.coord),)))

    def _on_nearest_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        job = self.nearest_jobs.get(m.qid)
        if job is None:
            return
        for a, p in m.peers:
            cand = (distance(p, job.point), a)
            job.best = cand if job.best is None else min(job.best, cand)

    def _t_nearest(self, token, now: float, out: Outbox) -> None:
        job = self.nearest_jobs.get(token[1])
        if job is None:
            return
        if job.best is None:
            if job.fallback_exp is not None and job.fallback_exp > -1:
                job.fallback_exp -= 1
                self._nearest_search(job, self._fallback_radius(job.fallback_exp), now, out)
            else:
                del self.nearest_jobs[job.qid]
            return
        del self.nearest_jobs[job.qid]
        target = job.best[1]
        if target == self.addr:
            out.deliveries.append((job.qid, job.hops))
        else:
            self._send(out, target, NearestDeliver(job.qid), job.hops + 1)

    def _on_nearest_deliver(self, env: Envelope, now: float, out: Outbox) -> None:
        out.deliveries.append((env.msg.qid, env.hops))

    # -- join -----------------------------------------------------------------------------------

    def _i_join_request(self, j: JoinRequest, env: Envelope, now: float, out: Outbox) -> None:
        if j.addr == self.addr:
            return
        rt = self.rt
        fresh = j.addr not in rt.leaf
        rt.touch_leaf(j.addr, j.coord, now)
        if fresh:
            for a in sorted(rt.leaf):
                if a != j.addr:
                    self._send(out, a, JoinAnnounce(j.addr, j.coord))
        self._send(out, j.addr, JoinReply(rt.copy(), self.addr, self.coord))
        self._check_thresholds(now, out)

    def _on_join_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        if self.state != "joining":
            return
        m = env.msg
        t = m.table.copy()
        t.leaf.pop(self.addr, None)
        if not m.fresh_zone:
            t.leaf[m.replier] = LeafEntry(m.replier, m.replier_coord, now)
        if not region_contains_point(t.self_leaf_boundary, self.coord):
            out.need_bootstrap = True
            return
        self.rt = t
        self.state = "active"
        out.cancels.append(("join_timeout", self._join_attempt))
        out.events.append(("joined", self.addr))
        if m.fresh_zone:
            zid = t.zone_id
            sub = self._local(ZoneBroadcast(len(zid), Announce(self.addr, self.coord, zid)), now)
            _merge_out(out, sub)
        self._diversify(now, out)
        self._arm_refresh(out, now)
        self._drain_deferred(now, out)
        self._check_thresholds(now, out)

    def _diversify(self, now: float, out: Outbox) -> None:
        size = self.params.bucket_size - 1
        if size <= 0:
            return
        for r, c, e in self.rt.sibling_entries():
            if e.bucket.contacts:
                self._send(out, e.bucket.contacts[0].addr, SampleRequest(r, c, r + 1, size), 0, (r, c))

    def _on_join_announce(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        if m.addr != self.addr and region_contains_point(self.rt.self_leaf_boundary, m.coord):
            self.rt.touch_leaf(m.addr, m.coord, now)
            self._check_thresholds(now, out)

    def _i_announce(self, m: Announce, env: Envelope, now: float, out: Outbox) -> None:
        if m.addr == self.addr:
            return
        loc = self.rt.locate(m.zone_id)
        if loc is None:
            return
        r, c = loc
        if c is None:
            if region_contains_point(self.rt.self_leaf_boundary, m.coord):
                self.rt.touch_leaf(m.addr, m.coord, now)
                self._send(out, m.addr, JoinAnnounce(self.addr, self.coord))
            return
        e = self._entry(r, c)
        if e is not None and region_contains_point(e.boundary, m.coord):
            e.bucket.touch(m.addr, now)

    def _on_sample_request(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        picks = self.rt.sample_entries(m.min_row, m.size + 1, self.rng)
        addrs = tuple(a for _, _, a in picks if a != env.src)[:m.size]
        self._send(out, env.src, SampleReply(m.row, m.col, addrs))

    def _on_sample_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        e = self._entry(m.row, m.col)
        if e is None or not e.bucket.contacts:
            return
        for a in m.addrs:
            if a != self.addr:
                e.bucket.add_behind_front(a)

    # -- thresholds and election ---------------------------------------------------------------

    def _check_thresholds(self, now: float, out: Outbox) -> None:
        if not self.active or self.lock is not None or self.election is not None:
            return
        rt = self.rt
        if rt.leaf and max(rt.leaf) > self.addr:
            return
        n = len(rt.leaf) + 1
        if n >= self.cfg.theta_h and self.blocked_split_at != n:
            self._start_election(Purpose.SPLIT, now, out)
        elif (n < self.cfg.theta_l and rt.d > 1 and self.blocked_merge_at != n
              and not isinstance(rt.self_leaf_boundary, Remainder)):
            self._start_election(Purpose.MERGE, now, out)

    def _start_election(self, purpose: Purpose, now: float, out: Outbox, context=None) -> bool:
        if self.lock is not None or not self.active:
            return False
        op_id = self._new_id()
        mates = sorted(self.rt.leaf)
        self._set_lock(out, Lock(self.addr, op_id, purpose))
        self.election = Election(op_id, purpose, set(mates), context=context, proposals=len(mates))
        for a in mates:
            self._send(out, a, ElectProposal(op_id, purpose, self.addr, self.rt.zone_id))
        out.events.append(("election", self.addr, op_id, int(purpose), len(mates)))
        if mates:
            self._timer(out, self.params.election_window, ("elect", op_id))
        else:
            self._decide(now, out)
        return True

    def _on_proposal(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        lk = self.lock
        if m.zone_id != self.rt.zone_id:
            self._send(out, env.src, ElectAck(m.op_id, None, True))
        elif lk is None:
            self._set_lock(out, Lock(m.proposer, m.op_id, m.purpose))
            self._send(out, env.src, ElectAck(m.op_id))
        elif lk.op_id == m.op_id:
            self._send(out, env.src, ElectAck(m.op_id))
        elif not lk.running and m.proposer > lk.owner:
            if lk.owner == self.addr:
                self._stand_down(now, out, retry=False)
            self._set_lock(out, Lock(m.proposer, m.op_id, m.purpose))
            self._send(out, env.src, ElectAck(m.op_id))
        else:
            self._send(out, env.src, ElectAck(m.op_id, lk.owner, True))

    def _on_ack(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        el = self.election
        if el is None or el.op_id != m.op_id:
            return
        out.events.append(("elect_ack", self.addr, m.op_id))
        el.waiting.discard(env.src)
        if m.refused:
            el.objected = True
        if not el.waiting:
            self._decide(now, out)

    def _t_elect(self, token, now: float, out: Outbox) -> None:
        el = self.election
        if el is not None and el.op_id == token[1]:
            self._decide(now, out)

    def _decide(self, now: float, out: Outbox) -> None:
        el = self.election
        self.election = None
        lk = self.lock
        if el is None:
            return
        out.cancels.append(("elect", el.op_id))
        if el.objected or lk is None or lk.op_id != el.op_id:
            self.election = el
            self._stand_down(now, out, retry=el.purpose != Purpose.PARTNER)
            if el.purpose == Purpose.PARTNER:
                self._reply_merge(el.context, MergeStatus.BUSY, out)
            return
        lk.running = True
        if el.purpose == Purpose.SPLIT:
            self._perform_split(now, out)
        elif el.purpose == Purpose.MERGE:
            self._perform_merge(now, out)
        else:
            self._perform_partner(el.context, now, out)

    def _stand_down(self, now: float, out: Outbox, retry: bool) -> None:
        el = self.election
        self.election = None
        if self.lock is not None and self.lock.owner == self.addr:
            op_id = self.lock.op_id
            for a in sorted(self.rt.leaf):
                self._send(out, a, ElectRelease(op_id))
            self._set_lock(out, None)
        if el is not None:
            out.events.append(("stand_down", self.addr, el.op_id))
        if retry:
            self._schedule_retry(out)
        self._drain_deferred(now, out)

    def _schedule_retry(self, out: Outbox) -> None:
        if self.retry_pending:
            return
        self.retry_pending = True
        w = self.params.election_window
        self._timer(out, self.rng.uniform(2 * w, 10 * w), ("retry",))

    def _t_retry(self, token, now: float, out: Outbox) -> None:
        self.retry_pending = False
        self._check_thresholds(now, out)

    def _on_release(self, env: Envelope, now: float, out: Outbox) -> None:
        lk = self.lock
        if lk is not None and lk.op_id == env.msg.op_id and lk.owner != self.addr:
            self._unlock(now, out)

    def _t_lock(self, token, now: float, out: Outbox) -> None:
        lk = self.lock
        if lk is not None and lk.op_id == token[1]:
            out.events.append(("lock_expired", self.addr, lk.op_id))
            self.merge_ops.pop(lk.op_id, None)
            self.collapse_ops.pop(lk.op_id, None)
            if self.election is not None and self.election.op_id == lk.op_id:
                self.election = None
            self._unlock(now, out)

    def _set_lock(self, out: Outbox, lock: Optional[Lock]) -> None:
        if self.lock is not None:
            out.cancels.append(("lock", self.lock.op_id))
        self.lock = lock
        if lock is not None:
            self._timer(out, self.params.lock_timeout, ("lock", lock.op_id))

    def _unlock(self, now: float, out: Outbox) -> None:
        self._set_lock(out, None)
        self._drain_deferred(now, out)
        self._check_thresholds(now, out)

    def _drain_deferred(self, now: float, out: Outbox) -> None:
        if not self.deferred or not self.active:
            return
        items, self.deferred = self.deferred, []
        for env in items:
            m = env.msg
            if isinstance(m, PointMsgLeaf) and isinstance(m.payload, JoinRequest):
                env = Envelope(env.src, env.dst, PointMsgLeaf(m.point, 1, m.mode, m.payload),
                               env.zone_tag, env.src_coord, env.hops, env.hint)
            self._piggyback(env, now)
            self._dispatch(env, now, out)

    # -- split ---------------------------------------------------------------------------------------

    def _members(self) -> list:
        rt = self.rt
        return [(self.addr, self.coord)] + [(a, rt.leaf[a].coord) for a in sorted(rt.leaf)]

    def _perform_split(self, now: float, out: Outbox) -> None:
        rt = self.rt
        members = self._members()
        region = rt.self_leaf_boundary
        try:
            regions = divide_region(region, members, self.cfg)
        except ZoningError as exc:
            out.events.append(("split_failed", self.addr, str(exc)))
            self.blocked_split_at = len(members)
            self._stand_down(now, out, retry=False)
            return
        assignment = []
        for a, p in members:
            for b, reg in enumerate(regions):
                if region_contains_point(reg, p):
                    assignment.append((a, b, p))
                    break
        subzones = tuple(enumerate(regions))
        op_id = self.lock.op_id
        msg = SplitAnnounce(op_id, rt.zone_id, region, subzones, tuple(assignment))
        mates = sorted(rt.leaf)
        for a in mates:
            self._send(out, a, msg)
        out.events.append(("split", rt.zone_id, subzones, len(mates), op_id))
        self._apply_split(msg, now)
        self._unlock(now, out)

    def _apply_split(self, m: SplitAnnounce, now: float) -> None:
        mine = None
        assign = {}
        for a, b, p in m.assignment:
            if a == self.addr:
                mine = b
            else:
                assign[a] = (b, p)
        if mine is None:
            for b, reg in m.subzones:
                if region_contains_point(reg, self.coord):
                    mine = b
                    break
        self.rt.apply_split(list(m.subzones), mine, assign, now)
        self.blocked_split_at = None
        self.blocked_merge_at = None

    def _on_split_announce(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        if rt.zone_id == m.zone_id and rt.self_leaf_boundary == m.region:
            self._apply_split(m, now)
            if self.lock is not None and self.lock.op_id == m.op_id:
                self._unlock(now, out)
            else:
                self._check_thresholds(now, out)
        elif len(rt.zone_id) > len(m.zone_id) and rt.zone_id[:len(m.zone_id)] == m.zone_id:
            return
        else:
            self._rejoin(out, "split announce for a zone this peer is not in")

    # -- merge (initiator side) -----------------------------------------------------------------------

    def _choose_partner(self) -> Optional[int]:
        rt = self.rt
        row = rt.rows[-1]
        mine = rt.zone_id[-1]
        own = rt.self_leaf_boundary
        others = [c for c in sorted(row) if c != mine and isinstance(row[c], SiblingEntry)]
        rem = [c for c in others if isinstance(row[c].boundary, Remainder)]
        if rem and isinstance(own, Rectangular) and own.bounds in row[rem[0]].boundary.excluded:
            return rem[0]
        if isinstance(own, Rectangular):
            for c in others:
                b = row[c].boundary
                if isinstance(b, Rectangular) and rects_tile(own.bounds, b.bounds):
                    return c
        return None

    def _perform_merge(self, now: float, out: Outbox) -> None:
        rt = self.rt
        p = self._choose_partner() if rt.d > 1 else None
        if p is None:
            self.blocked_merge_at = len(rt.leaf) + 1
            out.events.append(("merge_deferred", self.addr, rt.zone_id))
            self._stand_down(now, out, retry=False)
            return
        e = rt.rows[-1][p]
        req = MergerRequest(self.lock.op_id, rt.zone_id, rt.self_leaf_boundary,
                            tuple(self._members()), p)
        op = MergeOp(self.lock.op_id, p, req, e.bucket.addrs())
        self.merge_ops[op.op_id] = op
        if not op.contacts:
            try:
                region = merge_regions(e.boundary, rt.self_leaf_boundary)
            except ZoningError:
                self.merge_ops.pop(op.op_id)
                self._stand_down(now, out, retry=False)
                return
            out.events.append(("merge", rt.zone_id[:-1], rt.zone_id[-1], p, region))
            self._finish_merge(op, (), region, now, out)
            return
        self._merge_try_next(op, now, out)

    def _merge_try_next(self, op: MergeOp, now: float, out: Outbox) -> None:
        while op.contacts:
            a = op.contacts.pop(0)
            if a != self.addr:
                self._send(out, a, op.request, 0, (len(self.rt.zone_id), op.partner_col))
                return
        self.merge_ops.pop(op.op_id, None)
        if self.lock is not None and self.lock.op_id == op.op_id:
            self._stand_down(now, out, retry=True)

    def _on_merger_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        op = self.merge_ops.get(m.op_id)
        if op is None or self.lock is None or self.lock.op_id != m.op_id:
            return
        if m.status == MergeStatus.OK:
            self._finish_merge(op, m.peers, m.region, now, out)
        else:
            self.merge_ops.pop(m.op_id, None)
            self._stand_down(now, out, retry=True)

    def _finish_merge(self, op: MergeOp, partner_peers, region, now: float, out: Outbox) -> None:
        self.merge_ops.pop(op.op_id, None)
        rt = self.rt
        D = len(rt.zone_id)
        mine = rt.zone_id[-1]
        row = rt.rows[-1]
        updates = []
        for c in sorted(row):
            e = row[c]
            if c not in (mine, op.partner_col) and isinstance(e, SiblingEntry) and e.bucket.contacts:
                updates.append((c, e.bucket.contacts[0].addr))
        prefix = rt.zone_id[:-1]
        done = MergerDone(op.op_id, rt.zone_id, op.partner_col, region, tuple(partner_peers))
        for a in sorted(rt.leaf):
            self._send(out, a, done)
        rt.apply_merge([(a, p) for a, p in partner_peers if a != self.addr], mine, region,
                       op.partner_col, now)
        for c, a in updates:
            self._send(out, a, MergerUpdate(prefix, mine, D, op.partner_col, region), 0, (D, c))
        self._unlock(now, out)

    def _on_merger_done(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        if rt.zone_id == m.zone_id:
            rt.apply_merge([(a, p) for a, p in m.peers if a != self.addr], rt.zone_id[-1],
                           m.region, m.partner_col, now)
            if self.lock is not None and self.lock.op_id == m.op_id:
                self._unlock(now, out)
            else:
                self._check_thresholds(now, out)
        elif rt.self_leaf_boundary == m.region or (len(rt.zone_id) < len(m.zone_id)
                                                    and m.zone_id[:len(rt.zone_id)] == rt.zone_id):
            return
        else:
            self._rejoin(out, "merger done for a zone this peer is not in")

    def _on_merger_update(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        self._apply_merger_update(m)
        sub = self._local(ZoneBroadcast(m.level + 1, m), now)
        _merge_out(out, sub)

    def _i_merger_update(self, m: MergerUpdate, env: Envelope, now: float, out: Outbox) -> None:
        self._apply_merger_update(m)

    def _apply_merger_update(self, m: MergerUpdate) -> None:
        zid = self.rt.zone_id
        D = m.level
        if len(zid) >= D and zid[:D - 1] == m.prefix and zid[D - 1] not in (m.removed_col, m.keep_col):
            self.rt.remove_sibling_column(D, m.removed_col)
            e = self._entry(D, m.keep_col)
            if e is not None:
                e.boundary = m.region

    # -- merge (partner side) -------------------------------------------------------------------------

    def _reply_merge(self, env: Optional[Envelope], status: MergeStatus, out: Outbox,
                     peers=(), region=None) -> None:
        if env is not None:
            self._send(out, env.src, MergerReply(env.msg.op_id, status, tuple(peers), region))

    def _on_merger_request(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        zid = self.rt.zone_id
        D = len(m.zone_id)
        valid = (len(zid) >= D and zid[:D - 1] == m.zone_id[:-1] and zid[D - 1] == m.partner_col
                 and self._entry(D, m.zone_id[-1]) is not None)
        if not valid:
            self._reply_merge(env, MergeStatus.REJECT, out)
        elif self.lock is not None:
            self._reply_merge(env, MergeStatus.BUSY, out)
        elif len(zid) == D:
            self._start_election(Purpose.PARTNER, now, out, context=env)
        else:
            self._start_collapse(env, now, out)

    def _perform_partner(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        op_id = self.lock.op_id
        b = m.zone_id[-1]
        try:
            if len(rt.zone_id) != len(m.zone_id) or self._entry(len(rt.zone_id), b) is None:
                raise ZoningError("partner zone changed")
            region = merge_regions(rt.self_leaf_boundary, m.region)
        except ZoningError:
            self._reply_merge(env, MergeStatus.REJECT, out)
            self._stand_down(now, out, retry=False)
            return
        partner_peers = self._members()
        relay = MergerRelay(op_id, rt.zone_id, b, region, m.peers)
        for a in sorted(rt.leaf):
            self._send(out, a, relay)
        prefix = rt.zone_id[:-1]
        keep = rt.zone_id[-1]
        rt.apply_merge([(a, p) for a, p in m.peers if a != self.addr], b, region, None, now)
        self._reply_merge(env, MergeStatus.OK, out, partner_peers, region)
        out.events.append(("merge", prefix, b, keep, region))
        self._unlock(now, out)

    def _on_merger_relay(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        if rt.zone_id == m.zone_id and self._entry(len(rt.zone_id), m.merging_col) is not None:
            rt.apply_merge([(a, p) for a, p in m.peers if a != self.addr], m.merging_col,
                           m.region, None, now)
            if self.lock is not None and self.lock.op_id == m.op_id:
                self._unlock(now, out)
            else:
                self._check_thresholds(now, out)
        elif rt.self_leaf_boundary == m.region:
            return
        else:
            self._rejoin(out, "merger relay for a zone this peer is not in")

    # -- collapse ---------------------------------------------------------------------------------------

    def _start_collapse(self, env: Envelope, now: float, out: Outbox) -> None:
        D = len(env.msg.zone_id)
        op_id = self._new_id()
        self._set_lock(out, Lock(self.addr, op_id, Purpose.PARTNER, running=True))
        op = CollapseOp(op_id, env, dict(self._members()))
        self.collapse_ops[op_id] = op
        req = CollapseRequest(op_id, D, self.addr, self.rt.zone_id[:D])
        _merge_out(out, self._local(ZoneBroadcast(D + 1, req), now))
        self._timer(out, self.params.collect_window(self.rt.d), ("collapse", op_id))

    def _i_collapse_request(self, m: CollapseRequest, env: Envelope, now: float, out: Outbox) -> None:
        if m.coordinator == self.addr or self.rt.zone_id[:m.level] != m.prefix:
            return
        if self.lock is not None:
            ok = self.lock.op_id == m.op_id
        else:
            self._set_lock(out, Lock(m.coordinator, m.op_id, Purpose.PARTNER, running=True))
            ok = True
        peers = tuple(self._members()) if ok else ()
        self._send(out, m.coordinator, CollapseAccept(m.op_id, ok, peers))

    def _on_collapse_accept(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        op = self.collapse_ops.get(m.op_id)
        if op is None:
            return
        if not m.ok:
            op.busy = True
            return
        op.responders.add(env.src)
        for a, p in m.peers:
            op.peers[a] = p

    def _t_collapse(self, token, now: float, out: Outbox) -> None:
        op = self.collapse_ops.pop(token[1], None)
        if op is None or self.lock is None or self.lock.op_id != op.op_id:
            return
        if op.busy:
            for a in sorted(op.responders):
                self._send(out, a, CollapseAbort(op.op_id))
            self._reply_merge(op.request, MergeStatus.BUSY, out)
            self._unlock(now, out)
            return
        D = len(op.request.msg.zone_id)
        prefix = self.rt.zone_id[:D]
        peers = tuple(sorted(op.peers.items()))
        for a in sorted(op.responders):
            self._send(out, a, CollapseComplete(op.op_id, D, prefix, peers))
        self.rt.collapse(D, list(peers), self.addr, now)
        out.events.append(("collapse", prefix, op.op_id))
        self._perform_partner(op.request, now, out)

    def _on_collapse_complete(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        if self.rt.zone_id[:m.level] == m.prefix and len(self.rt.zone_id) >= m.level:
            self.rt.collapse(m.level, list(m.peers), self.addr, now)
        else:
            self._rejoin(out, "collapse for a zone this peer is not in")

    def _on_collapse_abort(self, env: Envelope, now: float, out: Outbox) -> None:
        if self.lock is not None and self.lock.op_id == env.msg.op_id:
            self._unlock(now, out)

    # -- departure ----------------------------------------------------------------------------------------

    def _on_leave(self, env: Envelope, now: float, out: Outbox) -> None:
        self._forget(env.src, now, out)
        el = self.election
        if el is not None and env.src in el.waiting:
            el.waiting.discard(env.src)
            if not el.waiting:
                self._decide(now, out)

    # -- refresh ------------------------------------------------------------------------------------------

    def _t_tick(self, token, now: float, out: Outbox) -> None:
        self._arm_refresh(out, now)
        rt = self.rt
        half = self.params.refresh_period / 2
        for a in sorted(rt.leaf):
            if rt.leaf[a].last_seen < now - half and a not in self.leaf_probes:
                self.leaf_probes.add(a)
                self._probe(a, "leaf", self.params.ping_attempts, None, out)
        for r, c in rt.stale_buckets(now, half):
            self._start_refresh(r, c, now, out)
        self._check_thresholds(now, out)

    def _probe(self, target: int, kind: str, attempts: int, key, out: Outbox) -> None:
        pid = self._new_id()
        self.probes[pid] = Probe(target, kind, attempts, key)
        self._send(out, target, Ping(pid))
        self._timer(out, self.params.ping_timeout, ("probe", pid))

    def _on_ping(self, env: Envelope, now: float, out: Outbox) -> None:
        self._send(out, env.src, Pong(env.msg.probe))

    def _on_pong(self, env: Envelope, now: float, out: Outbox) -> None:
        pr = self.probes.pop(env.msg.probe, None)
        if pr is None:
            return
        out.cancels.append(("probe", env.msg.probe))
        if pr.kind == "leaf":
            self.leaf_probes.discard(pr.target)
            tag = env.zone_tag
            zid = self.rt.zone_id
            if tag is not None and tag != zid and tag[:len(zid)] != zid and zid[:len(tag)] != tag:
                self.rt.leaf.pop(pr.target, None)
                self._check_thresholds(now, out)
        else:
            job = self.refresh_jobs.get(pr.key)
            if job is None or job.probing != pr.target:
                return
            r = job.row
            tag = env.zone_tag
            prefix = self.rt.zone_id[:r - 1]
            if tag is not None and len(tag) >= r and tag[:r - 1] == prefix and tag[r - 1] != job.col:
                # the contact now lives in another column: ours was merged away
                job.probing = None
                e = self._entry(r, job.col)
                if e is not None:
                    e.bucket.remove(pr.target)
                self._send(out, pr.target, RowQuery(r, prefix))
                self._refresh_next(job, now, out)
                return
            self._refresh_success(job, pr.target, now, out)

    def _t_probe(self, token, now: float, out: Outbox) -> None:
        pr = self.probes.pop(token[1], None)
        if pr is None:
            return
        if pr.attempts > 1:
            self._probe(pr.target, pr.kind, pr.attempts - 1, pr.key, out)
            return
        if pr.kind == "leaf":
            self.leaf_probes.discard(pr.target)
            if pr.target in self.rt.leaf:
                out.events.append(("departure_detected", self.addr, pr.target))
                self._forget(pr.target, now, out)
        else:
            job = self.refresh_jobs.get(pr.key)
            if job is None or job.probing != pr.target:
                return
            job.probing = None
            e = self._entry(job.row, job.col)
            if e is not None:
                e.bucket.remove(pr.target)
            self._refresh_next(job, now, out)

    def _start_refresh(self, r: int, c: int, now: float, out: Outbox) -> None:
        if (r, c) in self.refresh_jobs:
            return
        e = self._entry(r, c)
        if e is None:
            return
        job = RefreshJob(self._new_id(), r, c, e.bucket.addrs(), set())
        self.refresh_jobs[(r, c)] = job
        self.jobs_by_id[job.job_id] = job
        self._refresh_next(job, now, out)

    def _end_refresh(self, job: RefreshJob) -> None:
        self.refresh_jobs.pop((job.row, job.col), None)
        self.jobs_by_id.pop(job.job_id, None)

    def _refresh_next(self, job: RefreshJob, now: float, out: Outbox) -> None:
        if self._entry(job.row, job.col) is None:
            self._end_refresh(job)
            return
        while job.candidates:
            a = job.candidates.pop(0)
            if a in job.tried or a == self.addr:
                continue
            job.tried.add(a)
            job.probing = a
            self._probe(a, "refresh", 2, (job.row, job.col), out)
            return
        self._refresh_escalate(job, now, out)

    def _refresh_escalate(self, job: RefreshJob, now: float, out: Outbox) -> None:
        rt = self.rt
        targets = []
        if job.phase == "bucket":
            job.phase = "siblings"
            # anyone in our level-(row-1) zone can answer, so deeper rows count too
            for r, c, e in rt.sibling_entries():
                if r >= job.row and (r, c) != (job.row, job.col) and e.bucket.contacts:
                    targets.append(e.bucket.contacts[0].addr)
            if not targets:
                job.phase = "leaf"
                targets = sorted(rt.leaf)
        elif job.phase == "siblings":
            job.phase = "leaf"
            targets = sorted(rt.leaf)
        if not targets:
            out.events.append(("out_of_contact", self.addr, job.row, job.col))
            self._end_refresh(job)
            self._sync_row(job.row, out)
            return
        prefix = rt.zone_id[:job.row - 1]
        job.awaiting = set(targets)
        for a in targets:
            self._send(out, a, RefreshQuery(job.row, job.col, prefix, job.job_id))
        self._timer(out, self.params.collect_window(1), ("rq", job.job_id))

    def _on_refresh_query(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        addrs = ()
        if len(rt.zone_id) >= m.row and rt.zone_id[:m.row - 1] == m.prefix:
            if rt.zone_id[m.row - 1] == m.col:
                addrs = (self.addr,)
            else:
                e = self._entry(m.row, m.col)
                if e is not None:
                    addrs = tuple(e.bucket.addrs())
        self._send(out, env.src, RefreshReply(m.row, m.col, addrs, m.job))

    def _sync_row(self, r: int, out: Outbox) -> None:
        """Ask some peer sharing our level-(r-1) zone for its view of row r."""
        rt = self.rt
        row = rt.rows[r - 1] if r < rt.d else {}
        for c in sorted(row):
            e = row[c]
            if isinstance(e, SiblingEntry) and e.bucket.contacts:
                self._send(out, e.bucket.contacts[0].addr, RowQuery(r, rt.zone_id[:r - 1]))
                return
        if rt.leaf:
            self._send(out, min(rt.leaf), RowQuery(r, rt.zone_id[:r - 1]))

    def _on_row_query(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        zid = self.rt.zone_id
        entries = ()
        if len(zid) >= m.row and zid[:m.row - 1] == m.prefix:
            entries = tuple((c, e.boundary) for c, e in sorted(self.rt.rows[m.row - 1].items()))
        self._send(out, env.src, RowReply(m.row, m.prefix, entries))

    def _on_row_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        rt = self.rt
        zid = rt.zone_id
        if not m.entries or len(zid) < m.row or zid[:m.row - 1] != m.prefix:
            return
        theirs = dict(m.entries)
        row = rt.rows[m.row - 1]
        # columns of a row only ever disappear, so a strict subset is the newer view
        if not set(theirs) < set(row) or zid[m.row - 1] not in theirs:
            return
        for c in sorted(set(row) - set(theirs)):
            rt.remove_sibling_column(m.row, c)
            self.refresh_jobs.pop((m.row, c), None)
        for c, b in theirs.items():
            e = self._entry(m.row, c)
            if e is not None:
                e.boundary = b
        out.events.append(("row_synced", self.addr, m.row))

    def _on_refresh_reply(self, env: Envelope, now: float, out: Outbox) -> None:
        m = env.msg
        job = self.jobs_by_id.get(m.job)
        if job is None:
            return
        for a in m.addrs:
            if a not in job.tried and a != self.addr:
                job.learned.add(a)
        job.awaiting.discard(env.src)
        if not job.awaiting:
            self._refresh_collected(job, now, out)

    def _t_rq(self, token, now: float, out: Outbox) -> None:
        job = self.jobs_by_id.get(token[1])
        if job is not None and job.awaiting:
            job.awaiting.clear()
            self._refresh_collected(job, now, out)

    def _refresh_collected(self, job: RefreshJob, now: float, out: Outbox) -> None:
        fresh = sorted(job.learned - job.tried)
        job.learned.clear()
        if fresh:
            job.candidates = fresh
            self._refresh_next(job, now, out)
        else:
            self._refresh_escalate(job, now, out)

    def _refresh_success(self, job: RefreshJob, addr: int, now: float, out: Outbox) -> None:
        e = self._entry(job.row, job.col)
        self._end_refresh(job)
        if e is None:
            return
        was_known = addr in e.bucket
        e.bucket.touch(addr, now)
        if not was_known and self.params.bucket_size > 1:
            self._send(out, addr, SampleRequest(job.row, job.col, job.row + 1,
                                                self.params.bucket_size - 1), 0, (job.row, job.col))


def _merge_out(dst: Outbox, src: Outbox) -> None:
    dst.sends.extend(src.sends)
    dst.deliveries.extend(src.deliveries)
    dst.timers.extend(src.timers)
    dst.events.extend(src.events)
    dst.cancels.extend(src.cancels)
    dst.need_bootstrap = dst.need_bootstrap or src.need_bootstrap


_HANDLERS = {
    AreaMsgAll: Peer._on_area_all,
    AreaMsgAny: Peer._on_area_any,
    ZoneBroadcast: Peer._on_zone_broadcast,
    PointMsgLeaf: Peer._on_point,
    NearestRangeReply: Peer._on_nearest_reply,
    NearestDeliver: Peer._on_nearest_deliver,
    JoinAnnounce: Peer._on_join_announce,
    JoinReply: lambda self, env, now, out: None,
    SampleRequest: Peer._on_sample_request,
    SampleReply: Peer._on_sample_reply,
    ElectProposal: Peer._on_proposal,
    ElectAck: Peer._on_ack,
    ElectRelease: Peer._on_release,
    SplitAnnounce: Peer._on_split_announce,
    MergerRequest: Peer._on_merger_request,
    MergerReply: Peer._on_merger_reply,
    MergerRelay: Peer._on_merger_relay,
    MergerDone: Peer._on_merger_done,
    MergerUpdate: Peer._on_merger_update,
    CollapseAccept: Peer._on_collapse_accept,
    CollapseComplete: Peer._on_collapse_complete,
    CollapseAbort: Peer._on_collapse_abort,
    Ping: Peer._on_ping,
    Pong: Peer._on_pong,
    RefreshQuery: Peer._on_refresh_query,
    RefreshReply: Peer._on_refresh_reply,
    RowQuery: Peer._on_row_query,
    RowReply: Peer._on_row_reply,
    Leave: Peer._on_leave,
}

_INTERNAL = {
    JoinRequest: Peer._i_join_request,
    NearestProbe: Peer._i_nearest_probe,
    NearestRangeQuery: Peer._i_nearest_range_query,
    Announce: Peer._i_announce,
    MergerUpdate: Peer._i_merger_update,
    CollapseRequest: Peer._i_collapse_request,
}
