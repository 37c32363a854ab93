"""Brute-force ground truth and table auditor.

Nothing here reads a routing table to decide what is true. Membership comes
from the simulator, geometry from the regions the dividing peers announced.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from statistics import mean
from typing import Iterable, Optional

from .geometry import Point, area_contains_point, distance
from .routing_table import SelfMarker, SiblingEntry
from .zoning import Rectangular, Region, ZoneId, region_contains_point


class NoPeers(Exception):
    pass


class OracleError(Exception):
    pass


def brute_range(coords: dict, area) -> set:
    return {a for a, p in coords.items() if area_contains_point(area, p)}


def brute_nearest(coords: dict, p: Point) -> int:
    if not coords:
        raise NoPeers("no live peers")
    return min(coords, key=lambda a: (distance(coords[a], p), a))


class GroundTruth:
    """Zone hierarchy mirrored from split, merge and collapse events."""

    def __init__(self, universe: Region):
        self.regions: dict = {(): universe}
        self.children: dict = defaultdict(set)
        self.coords: dict = {}
        self.split_announces: list = []
        self.max_depth = 0

    # -- event mirroring ----------------------------------------------------------------

    def on_event(self, ev: tuple) -> None:
        kind = ev[0]
        if kind == "split":
            _, zid, subzones, announces, _op = ev
            if zid not in self.regions or self.children.get(zid):
                raise OracleError(f"split of unknown or inner zone {zid}")
            for b, reg in subzones:
                self.regions[(*zid, b)] = reg
                self.children[zid].add(b)
            self.split_announces.append(announces)
            self.max_depth = max(self.max_depth, self.depth())
        elif kind == "merge":
            _, prefix, removed, keep, region = ev
            self._drop_subtree((*prefix, removed))
            self.children[prefix].discard(removed)
            kz = (*prefix, keep)
            self._drop_subtree(kz, keep_root=True)
            self.regions[kz] = region
            if self.children[prefix] == {keep}:
                del self.regions[kz]
                self.children[prefix].clear()
        elif kind == "collapse":
            self._drop_subtree(ev[1], keep_root=True)

    def _drop_subtree(self, z: ZoneId, keep_root: bool = False) -> None:
        for b in list(self.children.get(z, ())):
            self._drop_subtree((*z, b))
        self.children.pop(z, None)
        if not keep_root:
            self.regions.pop(z, None)

    # -- queries -------------------------------------------------------------------------

    def is_leaf(self, z: ZoneId) -> bool:
        return z in self.regions and not self.children.get(z)

    def leaves(self) -> list:
        return sorted(z for z in self.regions if self.is_leaf(z))

    def depth(self) -> int:
        return max(len(z) for z in self.leaves())

    def leaf_of(self, p: Point) -> ZoneId:
        z = ()
        while self.children.get(z):
            for b in sorted(self.children[z]):
                if region_contains_point(self.regions[(*z, b)], p):
                    z = (*z, b)
                    break
            else:
                raise OracleError(f"{p} lies in no child of {z}")
        return z

    def populations(self) -> Counter:
        """Live-peer count of every zone on the path of some peer."""
        c = Counter()
        for p in self.coords.values():
            z = self.leaf_of(p)
            for i in range(len(z) + 1):
                c[z[:i]] += 1
        return c

    def leaf_members(self) -> dict:
        m = defaultdict(set)
        for a, p in self.coords.items():
            m[self.leaf_of(p)].add(a)
        return m


@dataclass
class Violation:
    addr: int
    row: Optional[int]
    col: Optional[int]
    what: str

    def __str__(self):
        return f"peer {self.addr} row {self.row} col {self.col}: {self.what}"


@dataclass
class AuditReport:
    peers: int = 0
    violations: list = field(default_factory=list)
    transient: bool = False  # taken while splits, merges or joins were in flight

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        head = f"audited {self.peers} peers, {len(self.violations)} violations"
        if self.transient:
            head += " (transient: operations in flight)"
        return "\n".join([head, *map(str, self.violations[:20])])


def audit_tables(gt: GroundTruth, peers: dict, in_flight: Optional[bool] = None) -> AuditReport:
    """Check every live peer's table against the mirrored hierarchy.

    ``peers`` maps addr -> Peer for live peers; ``gt.coords`` must hold the
    same membership. ``in_flight`` marks the report transient; when omitted it
    is inferred from peers holding locks or still joining.
    """
    if in_flight is None:
        in_flight = any(getattr(p, "lock", None) is not None or not p.active for p in peers.values())
    rep = AuditReport(transient=in_flight)
    pops = gt.populations()
    members = gt.leaf_members()
    for a in sorted(peers):
        peer = peers[a]
        rep.peers += 1
        v = rep.violations
        rt = peer.rt
        if rt is None or not peer.active:
            v.append(Violation(a, None, None, f"not active ({peer.state})"))
            continue
        z = gt.leaf_of(peer.coord)
        if rt.zone_id != z:
            v.append(Violation(a, None, None, f"zone id {rt.zone_id} != {z}"))
            continue
        if len(rt.rows) != len(z):
            v.append(Violation(a, None, None, f"{len(rt.rows)} rows for depth {len(z)}"))
            continue
        for r in range(1, len(z) + 1):
            pre = z[:r - 1]
            row = rt.rows[r - 1]
            want = gt.children.get(pre, set())
            if set(row) != want:
                v.append(Violation(a, r, None, f"columns {sorted(row)} != {sorted(want)}"))
            for c in sorted(row):
                e = row[c]
                zc = (*pre, c)
                truth = gt.regions.get(zc)
                if c == z[r - 1]:
                    if not isinstance(e, SelfMarker):
                        v.append(Violation(a, r, c, "own column is not a self marker"))
                elif not isinstance(e, SiblingEntry):
                    v.append(Violation(a, r, c, "stray self marker"))
                    continue
                if truth is not None and e.boundary != truth:
                    v.append(Violation(a, r, c, f"boundary {e.boundary} != {truth}"))
                if isinstance(e, SelfMarker) or truth is None:
                    continue
                f = e.bucket.front()
                if f is None:
                    if pops.get(zc, 0):
                        v.append(Violation(a, r, c, "empty bucket for a populated zone"))
                    continue
                if f.addr not in gt.coords:
                    v.append(Violation(a, r, c, f"front {f.addr} is not live"))
                elif not region_contains_point(truth, gt.coords[f.addr]):
                    v.append(Violation(a, r, c, f"front {f.addr} lies outside the zone"))
        mates = members.get(z, set()) - {a}
        if set(rt.leaf) != mates:
            missing = sorted(mates - set(rt.leaf))[:5]
            extra = sorted(set(rt.leaf) - mates)[:5]
            v.append(Violation(a, len(z) + 1, None, f"leaf row missing {missing} extra {extra}"))
        for m, le in rt.leaf.items():
            if m in gt.coords and le.coord != gt.coords[m]:
                v.append(Violation(a, len(z) + 1, None, f"wrong coordinate for {m}"))
        if rt.self_leaf_boundary != gt.regions[z]:
            v.append(Violation(a, None, None, "self leaf boundary differs"))
    return rep


# -- metrics -------------------------------------------------------------------------------

@dataclass
class QueryResult:
    qid: int
    kind: str
    expected: frozenset
    delivered: tuple  # addrs in delivery order, duplicates kept
    hops: tuple
    depth: int
    allowed: Optional[frozenset] = None  # recipients tolerated under churn

    @property
    def _allowed(self) -> frozenset:
        return self.expected if self.allowed is None else self.allowed

    @property
    def duplicates(self) -> int:
        return len(self.delivered) - len(set(self.delivered))

    @property
    def missing(self) -> set:
        return set(self.expected) - set(self.delivered)

    @property
    def extra(self) -> set:
        return set(self.delivered) - set(self._allowed)

    @property
    def exact(self) -> bool:
        if self.kind in ("area_any", "point_any"):
            if not self._allowed:
                return not self.delivered
            return len(self.delivered) == 1 and self.delivered[0] in self._allowed
        return not self.duplicates and not self.missing and not self.extra

    @property
    def unreached(self) -> bool:
        """An any-query that found nobody although the area was populated.

        Forwarding to the first intersecting sibling can dead-end in a zone with no
        peer inside the area; the protocol has no negative reply for this.
        """
        return self.kind == "area_any" and not self.delivered and bool(self._allowed)

    @property
    def sound(self) -> bool:
        """Exact, or an unreached any-query that delivered nothing wrong."""
        return self.exact or self.unreached

    @property
    def max_hops(self) -> int:
        return max(self.hops, default=0)

    def row(self) -> dict:
        return {"qid": self.qid, "kind": self.kind, "expected": len(self.expected),
                "delivered": len(self.delivered), "duplicates": self.duplicates,
                "missing": len(self.missing), "extra": len(self.extra),
                "max_hops": self.max_hops, "depth": self.depth, "exact": int(self.exact)}


def metrics(results: Iterable[QueryResult], split_announces: Iterable[int] = (),
            table_sizes: Iterable[int] = ()) -> dict:
    results = list(results)
    hops = [r.max_hops for r in results]
    splits = list(split_announces)
    sizes = list(table_sizes)
    return {
        "queries": len(results),
        "exact": sum(r.exact for r in results),
        "duplicates": sum(r.duplicates for r in results),
        "hops_max": max(hops, default=0),
        "hops_mean": mean(hops) if hops else 0.0,
        "hop_violations": sum(r.max_hops > r.depth for r in results),
        "splits": len(splits),
        "split_announces_max": max(splits, default=0),
        "table_size_max": max(sizes, default=0),
        "table_size_mean": mean(sizes) if sizes else 0.0,
    }
