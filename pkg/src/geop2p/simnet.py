"""Deterministic discrete-event network simulator.

Events are ordered by ``(at, seq)``. All randomness comes from one seeded
``random.Random`` owned by the simulator plus one per peer, so a run is fully
determined by the scenario and the seed. Every processed event appends one
line to the trace; the SHA-256 of the trace identifies the run.

Trace file format: optional ``#`` header lines, then one tab-separated line per
event: ``at seq kind src dst tag hops``. Message events carry an eighth column,
the hex of the message's wire encoding (see ``wire``). The hash covers the
first seven columns of event lines only.
"""
from __future__ import annotations

import hashlib
import heapq
import logging
import os
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .geometry import Point, Rect
from .messages import Envelope
from .wire import encode_message
from .protocol import Outbox, Peer, PeerParams
from .zoning import Rectangular, ZoningConfig

log = logging.getLogger(__name__)


class SimError(Exception):
    pass


class RejectedPastEvent(SimError):
    pass


class EventBudgetExceeded(SimError):
    pass


@dataclass
class NetModel:
    """Latency is ``fixed`` when lo == hi, else uniform on [lo, hi]."""
    delay_lo: float = 1.0
    delay_hi: float = 10.0
    loss_rate: float = 0.0
    max_attempts: int = 5

    def __post_init__(self):
        if not 0 <= self.delay_lo <= self.delay_hi:
            raise ValueError("need 0 <= delay_lo <= delay_hi")
        if not 0 <= self.loss_rate <= 1:
            raise ValueError("loss_rate must lie in [0, 1]")

    @property
    def mean_delay(self) -> float:
        return (self.delay_lo + self.delay_hi) / 2

    @property
    def rto(self) -> float:
        return 2 * self.delay_hi

    def sample(self, rng) -> float:
        if self.delay_lo == self.delay_hi:
            return self.delay_lo
        return rng.uniform(self.delay_lo, self.delay_hi)


@dataclass
class ChurnSpec:
    join_rate: float = 0.0
    leave_rate: float = 0.0
    graceful_fraction: float = 1.0
    coords: Optional[Callable] = None  # rng -> Point
    max_leaves: Optional[int] = None

    def __post_init__(self):
        if self.join_rate < 0 or self.leave_rate < 0:
            raise ValueError("churn rates must be >= 0")
        if not 0 <= self.graceful_fraction <= 1:
            raise ValueError("graceful_fraction must lie in [0, 1]")


@dataclass(order=True)
class _Event:
    at: float
    seq: int
    kind: str = field(compare=False)
    data: tuple = field(compare=False)
    background: bool = field(compare=False, default=False)
    cancelled: bool = field(compare=False, default=False)


class Simulator:
    def __init__(self, cfg: ZoningConfig, universe: Rect, seed: int = 0,
                 net: Optional[NetModel] = None, params: Optional[PeerParams] = None,
                 trace_path: Optional[str] = None, event_budget: Optional[int] = None,
                 trace_header: Optional[str] = None):
        self.cfg = cfg
        self.universe = Rectangular(universe)
        self.seed = seed
        self.net = net or NetModel()
        self.params = params or PeerParams(max_delay=self.net.delay_hi,
                                           mean_delay=self.net.mean_delay)
        self.rng = random.Random(seed)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._background = 0
        self._cancelled = 0
        self._timers: dict = {}  # (addr, token) -> _Event
        self.peers: dict = {}
        self.alive: set = set()
        self.counters = Counter()
        self.msg_kinds = Counter()
        self.deliveries = defaultdict(list)  # qid -> [(addr, hops, at)]
        self.events: list = []                # (at, event tuple)
        self.listeners: list = []
        self._channel_tail: dict = {}
        self._hash = hashlib.sha256()
        self._trace_file = open(trace_path, "w") if trace_path else None
        if self._trace_file and trace_header:
            for h in trace_header.splitlines():
                self._trace_file.write(f"# {h}\n")
        budget = event_budget if event_budget is not None else os.environ.get("GEOP2P_EVENT_BUDGET")
        self.event_budget = int(budget) if budget else None
        self.processed = 0
        self.next_addr = 1
        self.join_retries = Counter()

    def close(self):
        if self._trace_file:
            self._trace_file.close()
            self._trace_file = None

    # -- scheduling -----------------------------------------------------------------

    def schedule(self, at: float, kind: str, data: tuple, background: bool = False) -> _Event:
        if at < self.now:
            raise RejectedPastEvent(f"event at {at} is before now={self.now}")
        self._seq += 1
        if background:
            self._background += 1
        ev = _Event(at, self._seq, kind, data, background)
        heapq.heappush(self._heap, ev)
        return ev

    def cancel_timer(self, addr: int, token: tuple) -> None:
        ev = self._timers.pop((addr, token), None)
        if ev is not None and not ev.cancelled:
            ev.cancelled = True
            if not ev.background:
                self._cancelled += 1

    def call_at(self, at: float, fn: Callable, *args) -> None:
        self.schedule(at, "call", (fn, args))

    @property
    def trace_hash(self) -> str:
        return self._hash.hexdigest()

    def _trace(self, ev: _Event, src="-", dst="-", tag="-", hops="-", msg=None) -> None:
        line = f"{ev.at!r}\t{ev.seq}\t{ev.kind}\t{src}\t{dst}\t{tag}\t{hops}"
        self._hash.update(line.encode() + b"\n")
        if self._trace_file:
            if msg is not None:
                line += "\t" + encode_message(msg).hex()
            self._trace_file.write(line + "\n")

    # -- peers ----------------------------------------------------------------------------

    def new_addr(self) -> int:
        a = self.next_addr
        self.next_addr += 1
        return a

    def _make_peer(self, addr: int, coord: Point) -> Peer:
        p = Peer(addr, Point(*coord), self.cfg, self.params, self.universe, self.seed)
        self.peers[addr] = p
        self.alive.add(addr)
        return p

    def found(self, coord: Point, addr: Optional[int] = None) -> int:
        addr = addr if addr is not None else self.new_addr()
        p = self._make_peer(addr, coord)
        self._apply(addr, p.become_founder(self.now))
        return addr

    def join(self, coord: Point, bootstrap: Optional[int] = None, addr: Optional[int] = None) -> int:
        addr = addr if addr is not None else self.new_addr()
        p = self._make_peer(addr, coord)
        if bootstrap is None:
            bootstrap = self._pick_bootstrap(addr)
        if bootstrap is None:
            self._apply(addr, p.become_founder(self.now))
        else:
            self._apply(addr, p.start_join(bootstrap, self.now))
        return addr

    def _pick_bootstrap(self, exclude: int) -> Optional[int]:
        cands = sorted(a for a in self.alive if a != exclude and self.peers[a].active)
        return self.rng.choice(cands) if cands else None

    def crash(self, addr: int) -> None:
        if addr in self.alive:
            self.alive.discard(addr)
            self.peers[addr].crash()
            self._notify(("crashed", addr))

    def leave(self, addr: int) -> None:
        if addr in self.alive:
            out = self.peers[addr].leave(self.now)
            self._apply(addr, out)
            self.alive.discard(addr)

    def start_refresh(self) -> None:
        """Switch periodic refresh on for every live peer."""
        self.params.refresh_enabled = True
        for a in sorted(self.alive):
            self._apply(a, self.peers[a].start_refresh(self.now))

    def live_coords(self) -> dict:
        return {a: self.peers[a].coord for a in sorted(self.alive)}

    # -- queries --------------------------------------------------------------------------

    def issue(self, addr: int, method: str, *args) -> None:
        peer = self.peers[addr]
        out = getattr(peer, method)(*args, self.now)
        self._apply(addr, out)

    # -- outbox handling ------------------------------------------------------------------

    def _notify(self, ev: tuple) -> None:
        self.events.append((self.now, ev))
        for fn in self.listeners:
            fn(ev)

    def _apply(self, addr: int, out: Outbox) -> None:
        for ev in out.events:
            self._notify(ev)
        for qid, hops in out.deliveries:
            self.deliveries[qid].append((addr, hops, self.now))
        for token in out.cancels:
            self.cancel_timer(addr, token)
        for delay, token, periodic in out.timers:
            self.cancel_timer(addr, token)
            ev = self.schedule(self.now + delay, "timer", (addr, token), background=periodic)
            self._timers[(addr, token)] = ev
        for env, reliable in out.sends:
            self._transmit(env, reliable)
        if out.need_bootstrap:
            self._rebootstrap(addr)

    def _rebootstrap(self, addr: int) -> None:
        if addr not in self.alive:
            return
        self.join_retries[addr] += 1
        b = self._pick_bootstrap(addr)
        peer = self.peers[addr]
        if b is None:
            self._apply(addr, peer.become_founder(self.now))
        else:
            self._apply(addr, peer.start_join(b, self.now))

    def send(self, env: Envelope, reliable: bool = True) -> None:
        """Inject a message as if ``env.src`` had sent it."""
        self._transmit(env, reliable)

    def _transmit(self, env: Envelope, reliable: bool) -> None:
        self.counters["sent"] += 1
        self.msg_kinds[env.kind] += 1
        t = self.now
        attempts = self.net.max_attempts if reliable else 1
        for _ in range(attempts):
            if self.net.loss_rate and self.rng.random() < self.net.loss_rate:
                self.counters["lost_attempts"] += 1
                t += self.net.rto
                continue
            at = t + self.net.sample(self.rng)
            if reliable:
                # a reliable channel never reorders
                key = (env.src, env.dst)
                at = max(at, self._channel_tail.get(key, at))
                self._channel_tail[key] = at
            self.schedule(at, "deliver", (env, reliable))
            return
        self.counters["dropped_loss"] += 1
        if reliable:
            self.schedule(t, "send_failed", (env,))

    # -- main loop ------------------------------------------------------------------------

    def pending(self) -> int:
        """Queued events that are neither periodic refresh timers nor cancelled."""
        return len(self._heap) - self._background - self._cancelled

    def step(self) -> bool:
        if not self._heap:
            return False
        ev = heapq.heappop(self._heap)
        if ev.background:
            self._background -= 1
        if ev.cancelled:
            if not ev.background:
                self._cancelled -= 1
            return True
        self.processed += 1
        if self.event_budget is not None and self.processed > self.event_budget:
            raise EventBudgetExceeded(f"more than {self.event_budget} events")
        self.now = ev.at
        getattr(self, "_ev_" + ev.kind)(ev)
        return True

    def run_until(self, t_end: float) -> None:
        while self._heap and self._heap[0].at <= t_end:
            self.step()
        self.now = max(self.now, t_end)

    def run_until_quiescent(self, limit: Optional[float] = None) -> None:
        while self.pending() > 0:
            if limit is not None and self._heap[0].at > limit:
                break
            self.step()

    def _ev_deliver(self, ev: _Event) -> None:
        env, reliable = ev.data
        self._trace(ev, env.src, env.dst, env.kind, env.hops, env.msg)
        if env.dst not in self.alive:
            self.counters["dropped_dead"] += 1
            if reliable and env.src in self.alive:
                # the sender's transport notices after its retransmission timer
                self.schedule(self.now + self.net.rto, "send_failed", (env,))
            return
        self.counters["delivered"] += 1
        self._apply(env.dst, self.peers[env.dst].receive(env, self.now))

    def _ev_timer(self, ev: _Event) -> None:
        addr, token = ev.data
        self._timers.pop((addr, token), None)
        if addr not in self.alive:
            return
        self._trace(ev, addr, addr, token[0])
        self._apply(addr, self.peers[addr].on_timer(token, self.now))

    def _ev_send_failed(self, ev: _Event) -> None:
        (env,) = ev.data
        if env.src not in self.alive:
            return
        self._trace(ev, env.src, env.dst, env.kind)
        self._apply(env.src, self.peers[env.src].on_send_failed(env, self.now))

    def _ev_call(self, ev: _Event) -> None:
        fn, args = ev.data
        self._trace(ev, tag=getattr(fn, "__name__", "call"))
        fn(*args)

    def conservation_ok(self) -> bool:
        """Every logical send was delivered or dropped, once nothing is in flight."""
        inflight = sum(1 for e in self._heap if e.kind == "deliver")
        c = self.counters
        return c["sent"] == c["delivered"] + c["dropped_loss"] + c["dropped_dead"] + inflight


def churn_driver(sim: Simulator, spec: ChurnSpec, duration: float,
                 on_join: Optional[Callable] = None, on_leave: Optional[Callable] = None) -> int:
    """Schedule Poisson join and leave arrivals over ``[now, now + duration)``.

    Leave victims are drawn uniformly over peers live at the time of the event.
    Returns the number of arrival events scheduled.
    """
    rng = sim.rng
    start = sim.now
    n = 0

    def _join():
        coord = spec.coords(rng)
        a = sim.join(coord)
        if on_join:
            on_join(a)

    def _leave(graceful):
        live = sorted(a for a in sim.alive if sim.peers[a].active)
        if len(live) <= 1:
            return
        victim = rng.choice(live)
        if graceful:
            sim.leave(victim)
        else:
            sim.crash(victim)
        if on_leave:
            on_leave(victim, graceful)

    if spec.join_rate > 0:
        t = start + rng.expovariate(spec.join_rate)
        while t < start + duration:
            sim.call_at(t, _join)
            n += 1
            t += rng.expovariate(spec.join_rate)
    if spec.leave_rate > 0:
        t = start + rng.expovariate(spec.leave_rate)
        left = 0
        while t < start + duration and (spec.max_leaves is None or left < spec.max_leaves):
            sim.call_at(t, _leave, rng.random() < spec.graceful_fraction)
            n += 1
            left += 1
            t += rng.expovariate(spec.leave_rate)
    return n
