"""Scenario runner: build an overlay, drive workloads and churn, check results."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .geometry import Circle, Point, Rect, universe_rect
from .messages import Mode
from .oracle import (
    GroundTruth,
    QueryResult,
    audit_tables,
    brute_nearest,
    brute_range,
    metrics,
)
from .protocol import PeerParams
from .routing_table import SiblingEntry
from .simnet import ChurnSpec, NetModel, Simulator, churn_driver
from .zoning import DivisionMode, Rectangular, Remainder, Scheme, ZoningConfig

QUERY_KINDS = ("area_all", "area_any", "point_all", "point_any", "nearest", "zone_broadcast")


class ScenarioError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


@dataclass
class CoordSpec:
    kind: str = "uniform"  # or "blobs"
    blobs: int = 5
    spread: float = 0.04   # blob standard deviation, as a fraction of the universe side

    def sampler(self, universe: Rect, rng: random.Random):
        u = universe
        if self.kind == "uniform":
            def draw(r):
                return Point(r.uniform(u.min.x, u.max.x), r.uniform(u.min.y, u.max.y))
            return draw
        if self.kind != "blobs":
            raise ScenarioError(f"unknown coordinate distribution {self.kind!r}")
        centers = [Point(rng.uniform(u.min.x + 0.15 * u.width, u.max.x - 0.15 * u.width),
                         rng.uniform(u.min.y + 0.15 * u.height, u.max.y - 0.15 * u.height))
                   for _ in range(self.blobs)]
        sx, sy = self.spread * u.width, self.spread * u.height

        def draw(r):
            c = centers[r.randrange(len(centers))]
            while True:
                x, y = r.gauss(c.x, sx), r.gauss(c.y, sy)
                if u.min.x <= x < u.max.x and u.min.y <= y < u.max.y:
                    return Point(x, y)
        return draw


@dataclass
class QuerySpec:
    kind: str
    count: int
    max_side: float = 0.3  # query rectangle sides, as a fraction of the universe
    shape: str = "rect"    # or "circle", for area queries
    level: int = 1         # for zone_broadcast

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ScenarioError(f"unknown query kind {self.kind!r}")


@dataclass
class ChurnPlan:
    join_rate: float = 0.0
    leave_rate: float = 0.0
    graceful_fraction: float = 1.0
    duration: float = 0.0
    max_leaves: Optional[int] = None
    quiet: float = 0.0
    queries_per_period: int = 0


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 1
    universe: tuple = (0.0, 0.0, 1000.0, 1000.0)
    n_initial: int = 100
    k: int = 4
    theta_h: int = 16
    theta_l: int = 4
    scheme: str = "splitting"
    division_mode: str = "complete"
    delay_lo: float = 1.0
    delay_hi: float = 10.0
    loss_rate: float = 0.0
    refresh_period: float = 1000.0
    bucket_size: int = 3
    coords: CoordSpec = field(default_factory=CoordSpec)
    churn: Optional[ChurnPlan] = None
    workload: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.coords, dict):
            self.coords = CoordSpec(**self.coords)
        if isinstance(self.churn, dict):
            self.churn = ChurnPlan(**self.churn)
        self.workload = [QuerySpec(**w) if isinstance(w, dict) else w for w in self.workload]
        self.universe = tuple(float(v) for v in self.universe)
        if self.n_initial < 1:
            raise ScenarioError("n_initial must be >= 1")
        self.zoning_config()
        self.net_model()

    def zoning_config(self) -> ZoningConfig:
        return ZoningConfig(self.k, self.theta_h, self.theta_l, Scheme(self.scheme),
                            DivisionMode(self.division_mode))

    def net_model(self) -> NetModel:
        return NetModel(self.delay_lo, self.delay_hi, self.loss_rate)

    def universe_rect(self) -> Rect:
        return universe_rect(*self.universe)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, text: Optional[str] = None) -> "Scenario":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ScenarioError(f"unknown field {key!r}", _line_of(text, key))
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            bad = next((k for k in d if k in str(exc)), None)
            raise ScenarioError(str(exc), _line_of(text, bad)) from exc

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(exc.msg, exc.lineno) from exc
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object", 1)
        return cls.from_dict(d, text)

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path) as fh:
            return cls.loads(fh.read())


def _line_of(text: Optional[str], key: Optional[str]) -> Optional[int]:
    if not text or not key:
        return None
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        extra = " ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {extra}".rstrip()


class Run:
    """One scenario's simulator, ground truth and collected results."""

    def __init__(self, sc: Scenario, trace_path: Optional[str] = None):
        self.sc = sc
        net = sc.net_model()
        params = PeerParams(bucket_size=sc.bucket_size, refresh_period=sc.refresh_period,
                            max_delay=net.delay_hi, mean_delay=net.mean_delay,
                            refresh_enabled=False)
        self.sim = Simulator(sc.zoning_config(), sc.universe_rect(), sc.seed, net, params,
                             trace_path=trace_path,
                             trace_header="scenario " + json.dumps(sc.to_dict(), sort_keys=True))
        self.gt = GroundTruth(Rectangular(sc.universe_rect()))
        self.sim.listeners.append(self.gt.on_event)
        self.wrng = random.Random(f"{sc.seed}:workload")
        self.draw = sc.coords.sampler(sc.universe_rect(), random.Random(f"{sc.seed}:blobs"))
        self.crng = random.Random(f"{sc.seed}:coords")
        self.results: list = []
        self.maintenance: list = []
        self.peak_depth = 0
        self._qid = 0
        self.sim.listeners.append(self._on_event)

    def _on_event(self, ev: tuple) -> None:
        if ev[0] in ("split", "merge", "collapse"):
            self.maintenance.append((self.sim.now, ev))
            if ev[0] == "split":
                self.peak_depth = max(self.peak_depth, self.gt.depth())

    # -- building ----------------------------------------------------------------------

    def build(self) -> None:
        sim = self.sim
        founder = sim.found(self.draw(self.crng))
        for _ in range(self.sc.n_initial - 1):
            boot = founder if founder in sim.alive else None
            sim.join(self.draw(self.crng), bootstrap=boot)
            sim.run_until_quiescent()
        self.sync()

    def sync(self) -> None:
        self.gt.coords = self.sim.live_coords()

    def audit(self):
        self.sync()
        return audit_tables(self.gt, {a: self.sim.peers[a] for a in self.sim.alive},
                            in_flight=self.sim.pending() > 0)

    def hierarchy_depth(self) -> int:
        """Rows of the deepest routing table, the leaf row included."""
        return self.gt.depth() + 1

    # -- queries ------------------------------------------------------------------------

    def _random_area(self, spec: QuerySpec):
        u = self.sc.universe_rect()
        r = self.wrng
        if spec.shape == "circle":
            c = Point(r.uniform(u.min.x, u.max.x), r.uniform(u.min.y, u.max.y))
            return Circle(c, r.uniform(0, spec.max_side / 2) * min(u.width, u.height))
        w = max(r.uniform(0, spec.max_side) * u.width, 1e-6 * u.width)
        h = max(r.uniform(0, spec.max_side) * u.height, 1e-6 * u.height)
        x = r.uniform(u.min.x, u.max.x - w)
        y = r.uniform(u.min.y, u.max.y - h)
        return Rect.from_bounds(x, y, x + w, y + h)

    def _random_point(self) -> Point:
        u = self.sc.universe_rect()
        return Point(self.wrng.uniform(u.min.x, u.max.x), self.wrng.uniform(u.min.y, u.max.y))

    def _issuer(self) -> int:
        live = sorted(a for a in self.sim.alive if self.sim.peers[a].active)
        return self.wrng.choice(live)

    def prepare(self, spec: QuerySpec):
        """Draw a query; returns (qid, kind, issuer, method, args, expected-fn)."""
        self._qid += 1
        qid = self._qid
        issuer = self._issuer()
        kind = spec.kind
        gt = self.gt
        if kind in ("area_all", "area_any"):
            area = self._random_area(spec)
            method = "issue_area_all" if kind == "area_all" else "issue_area_any"
            return qid, kind, issuer, method, (area, qid), lambda c: brute_range(c, area)
        if kind in ("point_all", "point_any"):
            p = self._random_point()
            mode = Mode.ALL if kind == "point_all" else Mode.ANY

            def expect(c, p=p):
                z = gt.leaf_of(p)
                return {a for a, q in c.items() if gt.leaf_of(q) == z}
            return qid, kind, issuer, "issue_point", (p, mode, qid), expect
        if kind == "nearest":
            p = self._random_point()
            return qid, kind, issuer, "issue_nearest", (p, qid), lambda c: {brute_nearest(c, p)}
        level = spec.level
        z = gt.leaf_of(self.sim.peers[issuer].coord)[:level - 1]

        def expect(c):
            return {a for a, q in c.items() if gt.leaf_of(q)[:level - 1] == z}
        return qid, kind, issuer, "issue_zone_broadcast", (level, qid), expect

    def query_quiescent(self, spec: QuerySpec) -> QueryResult:
        self.sync()
        qid, kind, issuer, method, args, expect = self.prepare(spec)
        expected = frozenset(expect(self.gt.coords))
        depth = self.hierarchy_depth()
        self.sim.issue(issuer, method, *args)
        self.sim.run_until_quiescent()
        got = self.sim.deliveries.pop(qid, [])
        res = QueryResult(qid, kind, expected, tuple(a for a, _, _ in got),
                          tuple(h for _, h, _ in got), depth)
        self.results.append(res)
        return res

    def run_workload(self, workload=None) -> list:
        out = []
        for spec in workload or self.sc.workload:
            for _ in range(spec.count):
                out.append(self.query_quiescent(spec))
        return out

    def query_in_flight(self, spec: QuerySpec, window: float, sink: list) -> None:
        """Issue now; judge the outcome ``window`` later without pausing churn."""
        self.sync()
        qid, kind, issuer, method, args, expect = self.prepare(spec)
        before = frozenset(expect(self.gt.coords))
        depth = self.hierarchy_depth()
        self.sim.issue(issuer, method, *args)

        def judge():
            self.sync()
            after = frozenset(expect(self.gt.coords))
            got = self.sim.deliveries.pop(qid, [])
            # peers present throughout must be reached; churned ones are tolerated
            stable = before & after & frozenset(self.gt.coords)
            if kind == "nearest":
                stable = after if after == before else frozenset()
            res = QueryResult(qid, kind, stable, tuple(a for a, _, _ in got),
                              tuple(h for _, h, _ in got), depth, before | after)
            sink.append((self.sim.now, res))
        self.sim.call_at(self.sim.now + window, judge)

    # -- churn --------------------------------------------------------------------------

    def churn(self, plan: ChurnPlan, sink: Optional[list] = None, qspec: Optional[QuerySpec] = None) -> None:
        spec = ChurnSpec(plan.join_rate, plan.leave_rate, plan.graceful_fraction,
                         self.draw, plan.max_leaves)
        start = self.sim.now
        churn_driver(self.sim, spec, plan.duration)
        if sink is not None and qspec is not None and plan.queries_per_period:
            t = self.sc.refresh_period
            step = t / plan.queries_per_period
            window = 4 * self.sim.params.collect_window(self.hierarchy_depth())
            n = int(plan.duration / step)
            for i in range(n):
                self.sim.call_at(start + (i + 0.5) * step, self.query_in_flight, qspec, window, sink)
        self.sim.run_until(start + plan.duration)
        self.sim.run_until(start + plan.duration + plan.quiet)
        self.sim.run_until_quiescent()
        self.sync()

    # -- reporting ----------------------------------------------------------------------

    def table_sizes(self) -> list:
        return [self.sim.peers[a].rt.sibling_count() for a in sorted(self.sim.alive)
                if self.sim.peers[a].active]

    def summary(self) -> dict:
        m = metrics(self.results, self.gt.split_announces, self.table_sizes())
        m.update(peers=len(self.sim.alive), depth=self.hierarchy_depth(),
                 peak_depth=self.peak_depth + 1, events=self.sim.processed,
                 trace_sha256=self.sim.trace_hash,
                 messages=dict(sorted(self.sim.msg_kinds.items())))
        return m

    def write_metrics(self, csv_path: str, json_path: Optional[str] = None, extra: Optional[dict] = None) -> dict:
        cols = ["qid", "kind", "expected", "delivered", "duplicates", "missing", "extra",
                "max_hops", "depth", "exact", "time", "event"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.results:
                w.writerow(r.row())
            for at, ev in self.maintenance:
                w.writerow({"kind": ev[0], "time": repr(at), "event": repr(ev[1:])})
        s = self.summary()
        if extra:
            s.update(extra)
        if json_path:
            with open(json_path, "w") as fh:
                json.dump(s, fh, indent=2, sort_keys=True, default=str)
        return s


# -- named checks -----------------------------------------------------------------------------

def check_exactly_once(run: Run, n_queries: int = 500) -> CheckResult:
    res = run.run_workload([QuerySpec("area_all", n_queries)])
    exact = sum(r.exact for r in res)
    return CheckResult("exactly_once", exact == len(res),
                       {"exact": exact, "queries": len(res),
                        "duplicates": sum(r.duplicates for r in res),
                        "missed": sum(len(r.missing) for r in res)})


def check_hop_bound(run: Run) -> CheckResult:
    res = [r for r in run.results if r.kind == "area_all"]
    d = run.hierarchy_depth()
    n = len(run.sim.alive)
    ref = math.ceil(math.log(n, run.sc.k)) if n > 1 else 0
    bad = sum(r.max_hops > r.depth for r in res)
    return CheckResult("hop_bound", bool(res) and bad == 0,
                       {"violations": bad, "max_hops": max((r.max_hops for r in res), default=0),
                        "d": d, "log_k_n": ref})


def check_table_size(run: Run) -> CheckResult:
    k, th = run.sc.k, run.sc.theta_h
    bad = 0
    for a in sorted(run.sim.alive):
        rt = run.sim.peers[a].rt
        if rt.sibling_count() > (k - 1) * rt.d or len(rt.leaf) > th - 1:
            bad += 1
    return CheckResult("table_size", bad == 0, {"violations": bad, "peers": len(run.sim.alive)})


def check_split_cost(run: Run) -> CheckResult:
    th = run.sc.theta_h
    ann = run.gt.split_announces
    elections = [ev for _, ev in run.sim.events if ev[0] == "election"]
    elect_msgs = max((2 * ev[4] for ev in elections), default=0)
    bad = sum(a > th - 1 for a in ann)
    return CheckResult("split_cost", bool(ann) and bad == 0,
                       {"splits": len(ann), "max_announces": max(ann, default=0),
                        "bound": th - 1, "max_election_msgs": elect_msgs})


def check_zone_population(run: Run) -> CheckResult:
    run.sync()
    members = run.gt.leaf_members()
    bad = []
    remainders = 0
    for z in run.gt.leaves():
        n = len(members.get(z, ()))
        if isinstance(run.gt.regions[z], Remainder):
            remainders += 1
            continue
        if len(run.gt.coords) >= run.sc.theta_l and not run.sc.theta_l <= n <= run.sc.theta_h:
            bad.append((z, n))
    return CheckResult("zone_population", not bad,
                       {"leaves": len(run.gt.leaves()), "remainders": remainders,
                        "violations": len(bad), "first": bad[:3]})


def check_nearest(run: Run, n_queries: int = 200) -> CheckResult:
    res = run.run_workload([QuerySpec("nearest", n_queries)])
    exact = sum(r.exact for r in res)
    return CheckResult("nearest", exact == len(res), {"exact": exact, "queries": len(res)})


def check_workload(run: Run) -> CheckResult:
    """Every workload query was oracle-exact, any-queries that found nobody aside."""
    res = run.results
    exact = sum(r.exact for r in res)
    kinds = sorted({r.kind for r in res if not r.sound})
    return CheckResult("workload", not kinds,
                       {"exact": exact, "queries": len(res),
                        "any_unreached": sum(r.unreached for r in res), "failed_kinds": kinds})


def check_audit(run: Run, name: str = "audit") -> CheckResult:
    rep = run.audit()
    return CheckResult(name, rep.ok, {"peers": rep.peers, "violations": len(rep.violations),
                                      "first": [str(v) for v in rep.violations[:3]]})


def check_retraction(run: Run, removals: int = 900, gap: float = 40.0, n_queries: int = 500) -> CheckResult:
    peak = run.hierarchy_depth()
    run.sim.start_refresh()
    plan = ChurnPlan(leave_rate=1.0 / gap, graceful_fraction=1.0,
                     duration=gap * removals * 2, max_leaves=removals)
    run.churn(plan)
    # let refresh sweep contacts that are now stale
    run.sim.run_until(run.sim.now + 2 * run.sc.refresh_period)
    run.sim.run_until_quiescent()
    after = run.hierarchy_depth()
    rep = run.audit()
    res = run.run_workload([QuerySpec("area_all", n_queries)])
    exact = sum(r.exact for r in res)
    ok = after < peak and rep.ok and exact == len(res)
    return CheckResult("retraction", ok, {"peak_depth": peak, "final_depth": after,
                                          "peers": len(run.sim.alive),
                                          "audit_violations": len(rep.violations),
                                          "exact": exact, "queries": len(res),
                                          "first": [str(v) for v in rep.violations[:3]]})


def check_churn_recovery(run: Run, periods: int = 20, n_queries: int = 100,
                         per_period: int = 10) -> CheckResult:
    t = run.sc.refresh_period
    run.sim.start_refresh()
    plan = ChurnPlan(join_rate=1.0 / t, leave_rate=1.0 / t, graceful_fraction=0.0,
                     duration=periods * t, quiet=2 * t, queries_per_period=per_period)
    during: list = []
    start = run.sim.now
    run.churn(plan, during, QuerySpec("area_all", 0))
    by_period = {}
    for at, r in during:
        p = int((at - start) // t)
        ok, n = by_period.get(p, (0, 0))
        by_period[p] = (ok + r.exact, n + 1)
    rates = [ok / n for _, (ok, n) in sorted(by_period.items())]
    rep = run.audit()
    res = run.run_workload([QuerySpec("area_all", n_queries)])
    exact = sum(r.exact for r in res)
    ok = rep.ok and exact == len(res) and bool(rates) and min(rates) >= 0.95
    return CheckResult("churn_recovery", ok,
                       {"audit_violations": len(rep.violations), "exact": exact,
                        "queries": len(res), "min_period_success": min(rates, default=0.0),
                        "mean_period_success": sum(rates) / len(rates) if rates else 0.0,
                        "first": [str(v) for v in rep.violations[:3]]})


STATIC_CHECKS = {
    "exactly_once": check_exactly_once,
    "hop_bound": check_hop_bound,
    "table_size": check_table_size,
    "split_cost": check_split_cost,
    "zone_population": check_zone_population,
    "nearest": check_nearest,
    "audit": check_audit,
    "workload": check_workload,
}
DYNAMIC_CHECKS = {
    "retraction": check_retraction,
    "churn_recovery": check_churn_recovery,
}


def run_scenario(sc: Scenario, trace_path: Optional[str] = None) -> tuple:
    """Build, run the workload, then every named check in order."""
    run = Run(sc, trace_path)
    run.build()
    results = []
    if sc.churn is not None:
        run.sim.start_refresh()
        run.churn(sc.churn)
    run.run_workload()
    for name in sc.checks:
        fn = STATIC_CHECKS.get(name) or DYNAMIC_CHECKS.get(name)
        if fn is None:
            raise ScenarioError(f"unknown check {name!r}")
        results.append(fn(run))
    run.sim.close()
    return run, results


# -- traces ----------------------------------------------------------------------------------

class TraceError(ValueError):
    pass


def read_trace(path: str) -> tuple:
    """Return the scenario recorded in a trace header and its event lines."""
    sc = None
    events = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("# scenario "):
                try:
                    sc = Scenario.from_dict(json.loads(line[len("# scenario "):]))
                except (ValueError, TypeError) as exc:
                    raise TraceError(f"line {i}: bad scenario header: {exc}") from exc
            elif line.startswith("#") or not line:
                continue
            else:
                cols = line.split("\t")
                if len(cols) not in (7, 8):
                    raise TraceError(f"line {i}: expected 7 or 8 columns, got {len(cols)}")
                events.append((i, cols))
    if sc is None:
        raise TraceError("trace has no scenario header")
    return sc, events


def audit_trace(path: str) -> dict:
    """Re-run the recorded scenario and compare it with the trace, event by event."""
    from .wire import WireError, decode_message

    sc, events = read_trace(path)
    h = hashlib.sha256()
    bad_wire = []
    for i, cols in events:
        h.update("\t".join(cols[:7]).encode() + b"\n")
        if len(cols) == 8:
            try:
                msg = decode_message(bytes.fromhex(cols[7]))
            except (ValueError, WireError) as exc:
                bad_wire.append((i, str(exc)))
                continue
            if type(msg).__name__ != cols[5]:
                bad_wire.append((i, f"decodes to {type(msg).__name__}, tagged {cols[5]}"))
    run, results = run_scenario(sc)
    recorded = h.hexdigest()
    return {
        "scenario": sc.name,
        "events": len(events),
        "recorded_sha256": recorded,
        "replayed_sha256": run.sim.trace_hash,
        "replayed_events": run.sim.processed,
        "match": recorded == run.sim.trace_hash and not bad_wire,
        "bad_wire": bad_wire[:20],
        "checks": [r.line() for r in results],
    }
