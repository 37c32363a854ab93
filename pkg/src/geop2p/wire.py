"""Binary encoding of messages and envelopes.

Layout
------
A message is one tag byte (see ``TAGS``) followed by its fields in
declaration order. Field encodings:

* int: little-endian signed 64-bit; float: little-endian IEEE double
* bool, enum: one unsigned byte
* Point: two floats
* ZoneId: one length byte, then one byte per branch index
* Rect: four floats (min x, min y, max x, max y), then a flag byte
  (bit 0 closed in x, bit 1 closed in y)
* Region: a byte (0 rectangular, 1 remainder), then the rect, or the parent
  rect plus an int count and that many excluded rects
* Area: a byte (0 rect, 1 circle); a circle is a Point and a float radius
* sequences: an int count, then the items
* optional values: a presence byte, then the value if present
* payload: a byte (0 query id as int, 1 nested message)
* RoutingTable: zone id, bucket size, universe region, own leaf region,
  row count, per row an entry count and per entry column, kind byte
  (0 self marker, 1 sibling), region and for siblings the contacts
  (addr, last seen); finally the leaf row (addr, Point, last seen).

An envelope is src, dst, optional zone tag, optional coordinate, hops,
optional hint (row, optional column), then the message.
"""
from __future__ import annotations

import struct
from typing import Any

from . import messages as M
from .geometry import Circle, Point, Rect
from .routing_table import Bucket, Contact, LeafEntry, RoutingTable, SelfMarker, SiblingEntry
from .zoning import Rectangular, Remainder, decode_zone_id, encode_zone_id


class WireError(ValueError):
    pass


_I = struct.Struct("<q")
_F = struct.Struct("<d")


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise WireError("truncated input")
        b = self.buf[self.pos:end]
        self.pos = end
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def int(self) -> int:
        return _I.unpack(self.take(8))[0]

    def float(self) -> float:
        return _F.unpack(self.take(8))[0]


# -- primitive codecs: (write(out, v), read(reader)) ---------------------------------

def _w_int(out, v):
    out += _I.pack(v)


def _w_float(out, v):
    out += _F.pack(v)


def _w_u8(out, v):
    out.append(int(v))


def _w_point(out, p):
    out += _F.pack(p.x) + _F.pack(p.y)


def _r_point(r):
    return Point(r.float(), r.float())


def _w_zid(out, z):
    out += encode_zone_id(z)


def _r_zid(r):
    if r.pos >= len(r.buf):
        raise WireError("truncated input")
    try:
        z, end = decode_zone_id(r.buf, r.pos)
    except ValueError as e:
        raise WireError(str(e)) from None
    r.pos = end
    return z


def _w_rect(out, b):
    for v in (b.min.x, b.min.y, b.max.x, b.max.y):
        out += _F.pack(v)
    out.append(int(b.closed_x) | int(b.closed_y) << 1)


def _r_rect(r):
    x0, y0, x1, y1 = r.float(), r.float(), r.float(), r.float()
    f = r.u8()
    return Rect(Point(x0, y0), Point(x1, y1), bool(f & 1), bool(f & 2))


def _w_region(out, z):
    if isinstance(z, Rectangular):
        out.append(0)
        _w_rect(out, z.bounds)
    else:
        out.append(1)
        _w_rect(out, z.parent)
        _w_int(out, len(z.excluded))
        for e in z.excluded:
            _w_rect(out, e)


def _r_region(r):
    kind = r.u8()
    if kind == 0:
        return Rectangular(_r_rect(r))
    if kind != 1:
        raise WireError(f"bad region kind {kind}")
    parent = _r_rect(r)
    return Remainder(parent, tuple(_r_rect(r) for _ in range(r.int())))


def _w_area(out, a):
    if isinstance(a, Rect):
        out.append(0)
        _w_rect(out, a)
    else:
        out.append(1)
        _w_point(out, a.center)
        _w_float(out, a.radius)


def _r_area(r):
    kind = r.u8()
    if kind == 0:
        return _r_rect(r)
    if kind != 1:
        raise WireError(f"bad area kind {kind}")
    return Circle(_r_point(r), r.float())


def _seq(w_item, r_item):
    def w(out, items):
        _w_int(out, len(items))
        for it in items:
            w_item(out, it)

    def rd(r):
        n = r.int()
        if n < 0:
            raise WireError("negative count")
        return tuple(r_item(r) for _ in range(n))
    return w, rd


def _tup(*codecs):
    def w(out, v):
        for (wi, _), x in zip(codecs, v):
            wi(out, x)

    def rd(r):
        return tuple(ri(r) for _, ri in codecs)
    return w, rd


def _opt(codec):
    wi, ri = codec

    def w(out, v):
        if v is None:
            out.append(0)
        else:
            out.append(1)
            wi(out, v)

    def rd(r):
        return ri(r) if r.u8() else None
    return w, rd


def _enum(cls):
    return _w_u8, lambda r: cls(r.u8())


INT = (_w_int, lambda r: r.int())
FLOAT = (_w_float, lambda r: r.float())
BOOL = (_w_u8, lambda r: bool(r.u8()))
POINT = (_w_point, _r_point)
ZID = (_w_zid, _r_zid)
REGION = (_w_region, _r_region)
AREA = (_w_area, _r_area)
INTS = _seq(*INT)
PEERS = _seq(*_tup(INT, POINT))
BRANCHES = _seq(*_tup(INT, REGION))
ASSIGN = _seq(*_tup(INT, INT, POINT))


def _w_table(out, t: RoutingTable):
    _w_zid(out, t.zone_id)
    _w_int(out, t.bucket_size)
    _w_region(out, t.universe)
    _w_region(out, t.self_leaf_boundary)
    _w_int(out, len(t.rows))
    for row in t.rows:
        _w_int(out, len(row))
        for c in sorted(row):
            e = row[c]
            _w_int(out, c)
            if isinstance(e, SelfMarker):
                out.append(0)
                _w_region(out, e.boundary)
            else:
                out.append(1)
                _w_region(out, e.boundary)
                _w_int(out, e.bucket.capacity)
                _w_int(out, len(e.bucket.contacts))
                for ct in e.bucket.contacts:
                    _w_int(out, ct.addr)
                    _w_float(out, ct.last_seen)
    _w_int(out, len(t.leaf))
    for a in sorted(t.leaf):
        le = t.leaf[a]
        _w_int(out, a)
        _w_point(out, le.coord)
        _w_float(out, le.last_seen)


def _r_table(r) -> RoutingTable:
    zid = _r_zid(r)
    bsize = r.int()
    universe = _r_region(r)
    own = _r_region(r)
    rows = []
    for _ in range(r.int()):
        row = {}
        for _ in range(r.int()):
            c = r.int()
            kind = r.u8()
            b = _r_region(r)
            if kind == 0:
                row[c] = SelfMarker(b)
            else:
                cap = r.int()
                contacts = [Contact(r.int(), r.float()) for _ in range(r.int())]
                row[c] = SiblingEntry(b, Bucket(cap, contacts))
        rows.append(row)
    leaf = {}
    for _ in range(r.int()):
        a = r.int()
        leaf[a] = LeafEntry(a, _r_point(r), r.float())
    return RoutingTable(zid, rows, leaf, own, universe, bsize)


TABLE = (_w_table, _r_table)


def _w_payload(out, v):
    if isinstance(v, int):
        out.append(0)
        _w_int(out, v)
    else:
        out.append(1)
        _w_msg(out, v)


def _r_payload(r):
    kind = r.u8()
    if kind == 0:
        return r.int()
    if kind != 1:
        raise WireError(f"bad payload kind {kind}")
    return _r_msg(r)


PAYLOAD = (_w_payload, _r_payload)
MODE = _enum(M.Mode)
PURPOSE = _enum(M.Purpose)
STATUS = _enum(M.MergeStatus)

SCHEMA: dict = {
    M.AreaMsgAll: (1, (AREA, INT, PAYLOAD)),
    M.AreaMsgAny: (2, (AREA, INT, PAYLOAD)),
    M.ZoneBroadcast: (3, (INT, PAYLOAD)),
    M.PointMsgLeaf: (4, (POINT, INT, MODE, PAYLOAD)),
    M.NearestProbe: (5, (POINT, INT)),
    M.NearestRangeQuery: (6, (INT, INT)),
    M.NearestRangeReply: (7, (INT, PEERS)),
    M.NearestDeliver: (8, (INT,)),
    M.JoinRequest: (9, (INT, POINT)),
    M.JoinReply: (10, (TABLE, INT, POINT, BOOL)),
    M.JoinAnnounce: (11, (INT, POINT)),
    M.Announce: (12, (INT, POINT, ZID)),
    M.SampleRequest: (13, (INT, INT, INT, INT)),
    M.SampleReply: (14, (INT, INT, INTS)),
    M.ElectProposal: (15, (INT, PURPOSE, INT, ZID)),
    M.ElectAck: (16, (INT, _opt(INT), BOOL)),
    M.ElectRelease: (17, (INT,)),
    M.SplitAnnounce: (18, (INT, ZID, REGION, BRANCHES, ASSIGN)),
    M.MergerRequest: (19, (INT, ZID, REGION, PEERS, INT)),
    M.MergerReply: (20, (INT, STATUS, PEERS, _opt(REGION))),
    M.MergerRelay: (21, (INT, ZID, INT, REGION, PEERS)),
    M.MergerDone: (22, (INT, ZID, INT, REGION, PEERS)),
    M.MergerUpdate: (23, (ZID, INT, INT, INT, REGION)),
    M.CollapseRequest: (24, (INT, INT, INT, ZID)),
    M.CollapseAccept: (25, (INT, BOOL, PEERS)),
    M.CollapseComplete: (26, (INT, INT, ZID, PEERS)),
    M.CollapseAbort: (27, (INT,)),
    M.Ping: (28, (INT,)),
    M.Pong: (29, (INT,)),
    M.RefreshQuery: (30, (INT, INT, ZID, INT)),
    M.RefreshReply: (31, (INT, INT, INTS, INT)),
    M.RowQuery: (32, (INT, ZID)),
    M.RowReply: (33, (INT, ZID, BRANCHES)),
    M.Leave: (34, ()),
}
TAGS = {cls: tag for cls, (tag, _) in SCHEMA.items()}
_BY_TAG = {tag: (cls, codecs) for cls, (tag, codecs) in SCHEMA.items()}


def _w_msg(out, msg):
    try:
        tag, codecs = SCHEMA[type(msg)]
    except KeyError:
        raise WireError(f"no wire layout for {type(msg).__name__}") from None
    out.append(tag)
    for (w, _), v in zip(codecs, (getattr(msg, f) for f in msg.__dataclass_fields__)):
        w(out, v)


def _r_msg(r):
    tag = r.u8()
    if tag not in _BY_TAG:
        raise WireError(f"unknown message tag {tag}")
    cls, codecs = _BY_TAG[tag]
    return cls(*(rd(r) for _, rd in codecs))


def encode_message(msg) -> bytes:
    out = bytearray()
    _w_msg(out, msg)
    return bytes(out)


def _guard(fn, r):
    try:
        return fn(r)
    except WireError:
        raise
    except (ValueError, TypeError) as e:  # e.g. a degenerate rect or bad enum value
        raise WireError(str(e)) from None


def decode_message(buf: bytes) -> Any:
    r = _Reader(buf)
    msg = _guard(_r_msg, r)
    if r.pos != len(buf):
        raise WireError(f"{len(buf) - r.pos} trailing bytes")
    return msg


_HINT = _opt(_tup(INT, _opt(INT)))


def encode_envelope(env: M.Envelope) -> bytes:
    out = bytearray()
    _w_int(out, env.src)
    _w_int(out, env.dst)
    _opt(ZID)[0](out, env.zone_tag)
    _opt(POINT)[0](out, env.src_coord)
    _w_int(out, env.hops)
    _HINT[0](out, env.hint)
    _w_msg(out, env.msg)
    return bytes(out)


def decode_envelope(buf: bytes) -> M.Envelope:
    r = _Reader(buf)
    env = M.Envelope(r.int(), r.int(), None)
    env.zone_tag = _opt(ZID)[1](r)
    env.src_coord = _opt(POINT)[1](r)
    env.hops = r.int()
    env.hint = _HINT[1](r)
    env.msg = _guard(_r_msg, r)
    if r.pos != len(buf):
        raise WireError(f"{len(buf) - r.pos} trailing bytes")
    return env
