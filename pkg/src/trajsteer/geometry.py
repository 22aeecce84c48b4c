"""Polyline geometry for lane maps.

Covers nearest-centerline (Frenet) projection, windowed curvature via cubic
least squares, heading-change accumulation, and lane-binding change counts.
Sign conventions, fixed here and relied on by the labeler:

* lateral offset d is positive when the point lies left of the centerline's
  local travel direction;
* curvature is positive for right (clockwise) turns and negative for left
  turns, i.e. the negative of the usual mathematical convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .kinematics import AgentState, Trajectory


class PolylineKind(enum.Enum):
    LANE_CENTER = "lane_center"
    LANE_BOUNDARY = "lane_boundary"
    STOP_LINE = "stop_line"
    OTHER = "other"


@dataclass(frozen=True)
class MapPolyline:
    """One polyline map element with optional lane topology."""

    id: int
    points: np.ndarray  # (P, 2) float64
    kind: PolylineKind = PolylineKind.LANE_CENTER
    left_neighbor: Optional[int] = None
    right_neighbor: Optional[int] = None
    successors: Tuple[int, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"polyline {self.id}: need an (P>=2, 2) point array")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"polyline {self.id}: non-finite points")
        seg = np.diff(pts, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
            raise ValueError(f"polyline {self.id}: consecutive duplicate points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "successors", tuple(self.successors))

    @property
    def segment_lengths(self) -> np.ndarray:
        seg = np.diff(self.points, axis=0)
        return np.hypot(seg[:, 0], seg[:, 1])

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def midpoint(self) -> Tuple[float, float]:
        """Point at half the total arclength (used for local map frames)."""
        s = 0.5 * self.length
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(self.points) - 2)
        seg_len = cum[i + 1] - cum[i]
        t = (s - cum[i]) / seg_len if seg_len > 0 else 0.0
        p = self.points[i] + t * (self.points[i + 1] - self.points[i])
        return (float(p[0]), float(p[1]))

    def direction_at_midpoint(self) -> float:
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        i = int(np.searchsorted(cum, 0.5 * self.length, side="right") - 1)
        i = min(i, len(self.points) - 2)
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])


class RoadMap:
    """A set of polylines with id lookup and topology validation."""

    def __init__(self, polylines: Sequence[MapPolyline]):
        self.polylines: Tuple[MapPolyline, ...] = tuple(polylines)
        self.by_id: Dict[int, MapPolyline] = {}
        for p in self.polylines:
            if p.id in self.by_id:
                raise ValueError(f"duplicate polyline id {p.id}")
            self.by_id[p.id] = p
        for p in self.polylines:
            refs = list(p.successors)
            if p.left_neighbor is not None:
                refs.append(p.left_neighbor)
            if p.right_neighbor is not None:
                refs.append(p.right_neighbor)
            for r in refs:
                if r not in self.by_id:
                    raise ValueError(
                        f"polyline {p.id} references unknown polyline {r}")
        self.lane_centers: Tuple[MapPolyline, ...] = tuple(
            sorted((p for p in self.polylines
                    if p.kind == PolylineKind.LANE_CENTER),
                   key=lambda p: p.id))

    def __len__(self) -> int:
        return len(self.polylines)

    def is_successor(self, from_id: int, to_id: int) -> bool:
        p = self.by_id.get(from_id)
        return p is not None and to_id in p.successors


class NoLanesError(ValueError):
    """Raised when a projection is requested against a map with no lanes."""


@dataclass(frozen=True)
class FrenetProjection:
    """Result of projecting a point onto one lane centerline."""

    lane_id: int
    s: float              # arclength along the polyline, m
    d: float              # signed lateral offset, m; positive = left of travel
    segment_index: int


class KinematicWindow(NamedTuple):
    """Centered slice of trajectory states around one frame."""

    half_width_n: int
    points: Tuple[AgentState, ...]
    center_offset: int   # index of the center frame within `points`
    truncated: bool

    @staticmethod
    def around(traj: Trajectory, t: int, n: int) -> "KinematicWindow":
        if not 0 <= t < len(traj):
            raise IndexError(f"frame {t} outside trajectory of length {len(traj)}")
        lo = max(0, t - n)
        hi = min(len(traj), t + n + 1)
        return KinematicWindow(
            half_width_n=n,
            points=tuple(traj.states[lo:hi]),
            center_offset=t - lo,
            truncated=(hi - lo) != 2 * n + 1,
        )


def project_to_polyline(point: Tuple[float, float],
                        polyline: MapPolyline) -> FrenetProjection:
    """Project one point onto one polyline (nearest of its segments)."""
    p = np.asarray(point, dtype=float)
    pts = polyline.points
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / seg_len2, 0.0, 1.0)
    foot = a + t[:, None] * ab
    diff = p - foot
    dist = np.hypot(diff[:, 0], diff[:, 1])
    k = int(np.argmin(dist))
    seg_lengths = polyline.segment_lengths
    s = float(np.concatenate([[0.0], np.cumsum(seg_lengths)])[k] + t[k] * seg_lengths[k])
    # left-of-travel positive: z component of segment direction x offset
    cross = ab[k, 0] * diff[k, 1] - ab[k, 1] * diff[k, 0]
    d = float(dist[k] if cross > 0 else -dist[k])
    return FrenetProjection(lane_id=polyline.id, s=s, d=d, segment_index=k)


def project_to_lane(point: Tuple[float, float], road_map: RoadMap) -> FrenetProjection:
    """Project onto the lane centerline with minimum unsigned lateral distance.

    Ties go to the smaller lane id (lane centerlines are scanned in id order).
    """
    if not road_map.lane_centers:
        raise NoLanesError("no lanes")
    best: Optional[FrenetProjection] = None
    for lane in road_map.lane_centers:
        proj = project_to_polyline(point, lane)
        if best is None or abs(proj.d) < abs(best.d):
            best = proj
    return best


class CurvatureEstimate(NamedTuple):
    kappa: float
    degenerate: bool


def curvature_at(window: KinematicWindow) -> CurvatureEstimate:
    """Signed curvature at the window center from a cubic least-squares fit.

    x and y are fit as cubics of the frame index; the standard plane-curve
    curvature at the center is then negated so left turns come out negative.
    Windows whose points all coincide return kappa 0 with the degenerate flag.
    """
    pts = np.array([(s.x, s.y) for s in window.points], dtype=float)
    if len(pts) < 4:
        raise ValueError(f"curvature needs >= 4 window points, got {len(pts)}")
    if np.allclose(pts, pts[0], atol=1e-12):
        return CurvatureEstimate(0.0, True)
    t = np.arange(len(pts), dtype=float) - window.center_offset
    A = np.vander(t, 4, increasing=True)
    coef, *_ = np.linalg.lstsq(A, pts, rcond=None)
    x1, y1 = coef[1]          # first derivatives at the center
    x2, y2 = 2.0 * coef[2]    # second derivatives at the center
    speed2 = x1 * x1 + y1 * y1
    if speed2 < 1e-18:
        return CurvatureEstimate(0.0, True)
    kappa_math = (x1 * y2 - y1 * x2) / speed2 ** 1.5
    return CurvatureEstimate(-kappa_math, False)


def heading_change(window: KinematicWindow) -> float:
    """Total unsigned heading change over the window, in degrees.

    Headings are unwrapped first so +/-180 deg seam crossings do not inflate
    the result.
    """
    if len(window.points) < 2:
        raise ValueError("heading_change needs >= 2 window points")
    headings = np.unwrap([s.heading for s in window.points])
    return abs(math.degrees(headings[-1] - headings[0]))


# Points farther than this from every centerline are left unbound.
BINDING_GATE_M = 3.0


def bind_points(points: Sequence[Tuple[float, float]], road_map: RoadMap,
                gate: float = BINDING_GATE_M) -> List[Optional[int]]:
    """Nearest-centerline lane id per point, or None beyond the gate."""
    out: List[Optional[int]] = []
    for pt in points:
        proj = project_to_lane(pt, road_map)
        out.append(proj.lane_id if abs(proj.d) <= gate else None)
    return out


def count_binding_changes(bindings: Sequence[Optional[int]],
                          road_map: RoadMap) -> int:
    """Distinct bound lane ids minus one, with successor hops exempted.

    Unbound points are skipped.  A transition whose target lane is a declared
    successor of the source lane (same route, e.g. crossing an intersection)
    does not count; each such exempt pair is credited once.
    """
    seq: List[int] = []
    for b in bindings:
        if b is not None and (not seq or seq[-1] != b):
            seq.append(b)
    if not seq:
        return 0
    distinct = len(set(seq))
    exempt_pairs = {(p, q) for p, q in zip(seq, seq[1:])
                    if road_map.is_successor(p, q)}
    return max(0, distinct - 1 - len(exempt_pairs))


def lane_binding_changes(window: KinematicWindow, road_map: RoadMap,
                         gate: float = BINDING_GATE_M) -> int:
    """Lane-binding change count over a kinematic window."""
    bindings = bind_points([(s.x, s.y) for s in window.points], road_map, gate)
    return count_binding_changes(bindings, road_map)
