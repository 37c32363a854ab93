"""Protocol messages exchanged between peers.

Application payloads are plain integers (query ids); every other payload
carried inside a routed message is one of the message classes below.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Optional

from .geometry import Area, Point
from .zoning import Region, ZoneId


class Mode(enum.IntEnum):
    ALL = 0
    ANY = 1


class Purpose(enum.IntEnum):
    SPLIT = 0
    MERGE = 1
    PARTNER = 2


class MergeStatus(enum.IntEnum):
    OK = 0
    BUSY = 1
    REJECT = 2


_m = dataclass(frozen=True, slots=True)


# -- routed messages ---------------------------------------------------------

@_m
class AreaMsgAll:
    area: Area
    level: int
    payload: Any


@_m
class AreaMsgAny:
    area: Area
    level: int
    payload: Any


@_m
class ZoneBroadcast:
    level: int
    payload: Any


@_m
class PointMsgLeaf:
    point: Point
    level: int
    mode: Mode
    payload: Any


# -- nearest peer --------------------------------------------------------------

@_m
class NearestProbe:
    point: Point
    qid: int


@_m
class NearestRangeQuery:
    qid: int
    reply_to: int


@_m
class NearestRangeReply:
    qid: int
    peers: tuple  # ((addr, Point), ...)


@_m
class NearestDeliver:
    qid: int


# -- join and diversification -----------------------------------------------------

@_m
class JoinRequest:
    addr: int
    coord: Point


@_m
class JoinReply:
    table: Any  # RoutingTable, copied
    replier: int
    replier_coord: Point
    fresh_zone: bool = False


@_m
class JoinAnnounce:
    addr: int
    coord: Point


@_m
class Announce:
    """Makes a newly populated zone known to every peer of its parent zone."""
    addr: int
    coord: Point
    zone_id: ZoneId


@_m
class SampleRequest:
    row: int
    col: int
    min_row: int
    size: int


@_m
class SampleReply:
    row: int
    col: int
    addrs: tuple


# -- election, split --------------------------------------------------------------

@_m
class ElectProposal:
    op_id: int
    purpose: Purpose
    proposer: int
    zone_id: ZoneId


@_m
class ElectAck:
    op_id: int
    higher_seen: Optional[int] = None
    refused: bool = False


@_m
class ElectRelease:
    op_id: int


@_m
class SplitAnnounce:
    op_id: int
    zone_id: ZoneId
    region: Region
    subzones: tuple  # ((branch, Region), ...)
    assignment: tuple  # ((addr, branch, Point), ...)


# -- merge, collapse ----------------------------------------------------------------

@_m
class MergerRequest:
    op_id: int
    zone_id: ZoneId
    region: Region
    peers: tuple  # ((addr, Point), ...)
    partner_col: int


@_m
class MergerReply:
    op_id: int
    status: MergeStatus
    peers: tuple = ()
    region: Optional[Region] = None


@_m
class MergerRelay:
    op_id: int
    zone_id: ZoneId  # partner zone id before the merge
    merging_col: int
    region: Region
    peers: tuple


@_m
class MergerDone:
    op_id: int
    zone_id: ZoneId  # merging zone id before the merge
    partner_col: int
    region: Region
    peers: tuple


@_m
class MergerUpdate:
    prefix: ZoneId
    removed_col: int
    level: int
    keep_col: int
    region: Region  # the surviving zone's new geometry


@_m
class CollapseRequest:
    op_id: int
    level: int
    coordinator: int
    prefix: ZoneId


@_m
class CollapseAccept:
    op_id: int
    ok: bool
    peers: tuple


@_m
class CollapseComplete:
    op_id: int
    level: int
    prefix: ZoneId
    peers: tuple


@_m
class CollapseAbort:
    op_id: int


# -- liveness and refresh --------------------------------------------------------------

@_m
class Ping:
    probe: int


@_m
class Pong:
    probe: int


@_m
class RefreshQuery:
    row: int
    col: int
    prefix: ZoneId
    job: int


@_m
class RefreshReply:
    row: int
    col: int
    addrs: tuple
    job: int


@_m
class RowQuery:
    row: int
    prefix: ZoneId


@_m
class RowReply:
    row: int
    prefix: ZoneId
    entries: tuple  # ((col, Region), ...), the replier's own column included


@_m
class Leave:
    pass


ROUTED = (AreaMsgAll, AreaMsgAny, ZoneBroadcast, PointMsgLeaf)
UNRELIABLE = (Ping, Pong)


@dataclass(slots=True)
class Envelope:
    """A message in transit plus the transport-level metadata tagged onto it."""
    src: int
    dst: int
    msg: Any
    zone_tag: Optional[ZoneId] = None
    src_coord: Optional[Point] = None
    hops: int = 0
    hint: Optional[tuple] = None  # sender-local (row, col) the contact came from

    @property
    def kind(self) -> str:
        return type(self.msg).__name__
