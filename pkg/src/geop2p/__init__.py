"""Hierarchical spatial peer-to-peer overlay with a deterministic simulator."""
from .geometry import Circle, Point, Rect, universe_rect
from .zoning import DivisionMode, Scheme, ZoningConfig
from .protocol import Peer, PeerParams
from .simnet import ChurnSpec, NetModel, Simulator, churn_driver
from .oracle import GroundTruth, audit_tables, brute_nearest, brute_range

__all__ = [
    "Circle", "Point", "Rect", "universe_rect",
    "DivisionMode", "Scheme", "ZoningConfig",
    "Peer", "PeerParams",
    "ChurnSpec", "NetModel", "Simulator", "churn_driver",
    "GroundTruth", "audit_tables", "brute_nearest", "brute_range",
]
__version__ = "0.1.0"
