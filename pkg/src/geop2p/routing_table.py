"""Per-peer leveled routing table.

Rows 1..d-1 hold sibling zones (one column per branch index, the own branch
holding a :class:`SelfMarker`); row ``d`` is the leaf row of zone-mates with
their coordinates. ``d == len(zone_id) + 1``.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .geometry import Area, Point
from .zoning import Region, Remainder, ZoneId, region_contains_point, region_intersects_area

PeerAddr = int


class RoutingTableError(Exception):
    pass


class SelfColumn(RoutingTableError):
    pass


class UnknownColumn(RoutingTableError):
    pass


class InconsistentAssignment(RoutingTableError):
    pass


@dataclass(slots=True)
class Contact:
    addr: PeerAddr
    last_seen: float


@dataclass(slots=True)
class Bucket:
    """Contacts ordered most recently seen first."""
    capacity: int
    contacts: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("bucket capacity must be >= 1")

    def __len__(self):
        return len(self.contacts)

    def __contains__(self, addr):
        return any(c.addr == addr for c in self.contacts)

    def front(self) -> Optional[Contact]:
        return self.contacts[0] if self.contacts else None

    @property
    def freshest(self) -> Optional[float]:
        return self.contacts[0].last_seen if self.contacts else None

    def addrs(self) -> list[PeerAddr]:
        return [c.addr for c in self.contacts]

    def touch(self, addr: PeerAddr, now: float) -> None:
        self.remove(addr)
        self.contacts.insert(0, Contact(addr, now))
        del self.contacts[self.capacity:]

    def add_behind_front(self, addr: PeerAddr) -> None:
        if addr in self or not self.contacts:
            if not self.contacts:
                raise RoutingTableError("no front to insert behind")
            return
        # inherits the front's timestamp so MRU order is kept
        self.contacts.insert(1, Contact(addr, self.contacts[0].last_seen))
        del self.contacts[self.capacity:]

    def remove(self, addr: PeerAddr) -> bool:
        for i, c in enumerate(self.contacts):
            if c.addr == addr:
                del self.contacts[i]
                return True
        return False

    def copy(self) -> "Bucket":
        return Bucket(self.capacity, [Contact(c.addr, c.last_seen) for c in self.contacts])


@dataclass(slots=True)
class SiblingEntry:
    boundary: Region
    bucket: Bucket


@dataclass(slots=True)
class SelfMarker:
    boundary: Region


@dataclass(slots=True)
class LeafEntry:
    addr: PeerAddr
    coord: Point
    last_seen: float


RowEntry = Union[SiblingEntry, SelfMarker]


class RoutingTable:
    def __init__(self, zone_id: ZoneId, rows: list, leaf: dict,
                 self_leaf_boundary: Region, universe: Region, bucket_size: int = 3):
        self.zone_id = tuple(zone_id)
        self.rows = rows
        self.leaf = leaf
        self.self_leaf_boundary = self_leaf_boundary
        self.universe = universe
        self.bucket_size = bucket_size

    @classmethod
    def for_universe(cls, universe: Region, bucket_size: int = 3) -> "RoutingTable":
        return cls((), [], {}, universe, universe, bucket_size)

    @property
    def d(self) -> int:
        return len(self.zone_id) + 1

    def copy(self) -> "RoutingTable":
        rows = []
        for row in self.rows:
            rows.append({c: SiblingEntry(e.boundary, e.bucket.copy()) if isinstance(e, SiblingEntry)
                         else SelfMarker(e.boundary) for c, e in row.items()})
        leaf = {a: LeafEntry(e.addr, e.coord, e.last_seen) for a, e in self.leaf.items()}
        return RoutingTable(self.zone_id, rows, leaf, self.self_leaf_boundary,
                            self.universe, self.bucket_size)

    def __eq__(self, other):
        if not isinstance(other, RoutingTable):
            return NotImplemented
        return (self.zone_id == other.zone_id and self.rows == other.rows
                and self.leaf == other.leaf
                and self.self_leaf_boundary == other.self_leaf_boundary
                and self.bucket_size == other.bucket_size)

    def __repr__(self):
        return f"RoutingTable(zone_id={self.zone_id}, d={self.d}, leaf={sorted(self.leaf)})"

    # -- lookup ---------------------------------------------------------------

    def row(self, r: int) -> dict:
        if not 1 <= r < self.d:
            raise UnknownColumn(f"no sibling row {r} (d={self.d})")
        return self.rows[r - 1]

    def entry(self, r: int, col: int) -> RowEntry:
        try:
            return self.row(r)[col]
        except KeyError:
            raise UnknownColumn(f"row {r} has no column {col}") from None

    def self_column(self, r: int) -> int:
        return self.zone_id[r - 1]

    def sibling_entries(self) -> Iterator[tuple[int, int, SiblingEntry]]:
        for r, row in enumerate(self.rows, 1):
            for c in sorted(row):
                e = row[c]
                if isinstance(e, SiblingEntry):
                    yield r, c, e

    def sibling_count(self) -> int:
        return sum(1 for _ in self.sibling_entries())

    def zone_boundary(self, level: int) -> Region:
        """Own zone's region at ``level``; level 0 is the universe."""
        if level == 0:
            return self.universe
        return self.rows[level - 1][self.zone_id[level - 1]].boundary

    def locate(self, other: ZoneId) -> Optional[tuple[int, Optional[int]]]:
        """Row/column where a peer in zone ``other`` fits; column None means leaf row."""
        cd = _common(self.zone_id, other)
        if cd == len(self.zone_id) == len(other):
            return self.d, None
        if cd < len(self.zone_id) and cd < len(other):
            return cd + 1, other[cd]
        return None

    def all_contacts(self) -> set:
        out = set(self.leaf)
        for _, _, e in self.sibling_entries():
            out.update(e.bucket.addrs())
        return out

    # -- forwarding -----------------------------------------------------------

    def forwarding_candidates(self, area: Area, from_level: int) -> list[tuple[int, int, SiblingEntry]]:
        """Non-self entries of rows d-1 .. from_level whose zone meets ``area``.

        Each result is (forward_level, column, entry); the row is forward_level - 1.
        """
        out = []
        for r in range(self.d - 1, max(from_level, 1) - 1, -1):
            row = self.rows[r - 1]
            for c in sorted(row):
                e = row[c]
                if isinstance(e, SiblingEntry) and region_intersects_area(e.boundary, area):
                    out.append((r + 1, c, e))
        return out

    def find_zone_of_point(self, p: Point, from_level: int = 1) -> Optional[tuple[int, int, RowEntry]]:
        """First non-self entry (deepest row first) whose zone contains ``p``."""
        for r in range(self.d - 1, max(from_level, 1) - 1, -1):
            row = self.rows[r - 1]
            for c in sorted(row):
                e = row[c]
                if isinstance(e, SiblingEntry) and region_contains_point(e.boundary, p):
                    return r, c, e
        return None

    # -- maintenance ------------------------------------------------------------

    def touch(self, addr: PeerAddr, row: int, col: int, now: float) -> None:
        e = self.entry(row, col)
        if isinstance(e, SelfMarker):
            raise SelfColumn(f"({row}, {col}) is the self zone")
        e.bucket.touch(addr, now)

    def touch_leaf(self, addr: PeerAddr, coord: Point, now: float) -> None:
        self.leaf[addr] = LeafEntry(addr, coord, now)

    def remove_peer(self, addr: PeerAddr) -> list[tuple[int, int]]:
        """Purge ``addr`` everywhere; returns sibling entries left empty by it."""
        emptied = []
        self.leaf.pop(addr, None)
        for r, c, e in self.sibling_entries():
            if e.bucket.remove(addr) and not e.bucket.contacts:
                emptied.append((r, c))
        return emptied

    def apply_split(self, new_subzones: list[tuple[int, Region]], my_branch: int,
                    peer_assignment: dict, now: float = 0.0) -> None:
        """Turn the leaf row into a sibling row after the own zone divides.

        ``peer_assignment`` maps addr -> (branch, coord) for the divided zone's
        peers. Buckets of new siblings are seeded in ascending address order.
        """
        regions = dict(new_subzones)
        if my_branch not in regions:
            raise InconsistentAssignment(f"own branch {my_branch} not among sub-zones")
        old_leaf = self.leaf
        row = {}
        for b in sorted(regions):
            if b == my_branch:
                row[b] = SelfMarker(regions[b])
            else:
                row[b] = SiblingEntry(regions[b], Bucket(self.bucket_size))
        new_leaf = {}
        members = dict(peer_assignment)
        for a, le in old_leaf.items():
            if a not in members:
                for b, reg in regions.items():
                    if region_contains_point(reg, le.coord):
                        members[a] = (b, le.coord)
                        break
        for a in sorted(members):
            b, coord = members[a]
            if a in old_leaf:
                seen = old_leaf[a].last_seen
            else:
                seen = now
            if b == my_branch:
                new_leaf[a] = LeafEntry(a, coord, seen)
            elif b in row:
                bucket = row[b].bucket
                if len(bucket) < bucket.capacity:
                    bucket.contacts.append(Contact(a, seen))
        for e in row.values():
            if isinstance(e, SiblingEntry):
                e.bucket.contacts.sort(key=lambda c: -c.last_seen)
        self.rows.append(row)
        self.zone_id = (*self.zone_id, my_branch)
        self.leaf = new_leaf
        self.self_leaf_boundary = regions[my_branch]

    def apply_merge(self, absorbed: list, removed_sibling_col: int, new_boundary: Region,
                    keep_col: Optional[int] = None, now: float = 0.0) -> bool:
        """Merge a sibling leaf zone into the own leaf zone (or vice versa).

        ``absorbed`` holds (addr, coord) of the peers joining the leaf row,
        excluding the table owner.
        When ``removed_sibling_col`` is the own column, the own zone is the one
        being absorbed and ``keep_col`` names the partner whose column survives.
        Returns True when the parent row vanished (hierarchy retraction).
        """
        if self.d < 2:
            raise UnknownColumn("a universe leaf has no siblings")
        r = self.d - 1
        row = self.rows[r - 1]
        if removed_sibling_col not in row:
            raise UnknownColumn(f"row {r} has no column {removed_sibling_col}")
        mine = self.zone_id[-1]
        if removed_sibling_col == mine:
            if keep_col is None or keep_col == mine or keep_col not in row:
                raise UnknownColumn(f"bad partner column {keep_col}")
            del row[mine]
            row[keep_col] = SelfMarker(new_boundary)
            self.zone_id = (*self.zone_id[:-1], keep_col)
        else:
            del row[removed_sibling_col]
            row[mine] = SelfMarker(new_boundary)
        for a, coord in absorbed:
            prev = self.leaf.get(a)
            self.leaf[a] = LeafEntry(a, coord, prev.last_seen if prev else now)
        self.self_leaf_boundary = new_boundary
        if len(row) == 1:
            self.rows.pop()
            self.zone_id = self.zone_id[:-1]
            self.self_leaf_boundary = self.zone_boundary(len(self.zone_id)) if self.rows else self.universe
            return True
        return False

    def remove_sibling_column(self, row: int, col: int) -> bool:
        if not 1 <= row < self.d:
            return False
        rw = self.rows[row - 1]
        e = rw.get(col)
        if not isinstance(e, SiblingEntry):
            return False
        del rw[col]
        return True

    def collapse(self, level: int, peers: list, own_addr: PeerAddr, now: float = 0.0) -> None:
        """Flatten every row below ``level`` so the level-``level`` zone becomes the leaf."""
        if level > len(self.zone_id):
            raise UnknownColumn(f"cannot collapse to level {level} from depth {len(self.zone_id)}")
        boundary = self.zone_boundary(level)
        del self.rows[level:]
        self.zone_id = self.zone_id[:level]
        old = self.leaf
        self.leaf = {}
        for a, coord in peers:
            if a == own_addr:
                continue
            prev = old.get(a)
            self.leaf[a] = LeafEntry(a, coord, prev.last_seen if prev else now)
        self.self_leaf_boundary = boundary

    def stale_buckets(self, now: float, half_period: float) -> list[tuple[int, int]]:
        out = []
        for r, c, e in self.sibling_entries():
            f = e.bucket.freshest
            # an empty remainder may fill later through merges, so it is retried too
            if f is None or f < now - half_period:
                out.append((r, c))
        return out

    def sample_entries(self, min_row: int, sample_size: int,
                       rng_seed) -> list[tuple[int, Optional[int], PeerAddr]]:
        """Uniform sample of bucket fronts (and leaf peers) in rows >= ``min_row``."""
        if sample_size <= 0 or min_row < 1:
            return []
        pop = []
        seen = set()
        for r, c, e in self.sibling_entries():
            f = e.bucket.front()
            if r >= min_row and f is not None and f.addr not in seen:
                seen.add(f.addr)
                pop.append((r, c, f.addr))
        if self.d >= min_row:
            for a in sorted(self.leaf):
                if a not in seen:
                    seen.add(a)
                    pop.append((self.d, None, a))
        rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
        if sample_size >= len(pop):
            return pop
        return rng.sample(pop, sample_size)


def _common(a, b):
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n
