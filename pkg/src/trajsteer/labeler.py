"""Frame-level maneuver labeling from trajectories and lane topology.

Each frame of a trajectory receives exactly one of eight labels (stationary,
keep lane, left/right lane change, left/right turn, left/right U-turn) from
windowed kinematic features plus lane-binding context.  Rules are evaluated
in a fixed precedence order, most specific first:

    stationary > U-turn > turn > lane change > keep lane > fallback

so e.g. a U-turn frame, which also shows a large lateral offset, never
matches the lane-change rule.  All thresholds live in LabelThresholds.

Conventions inherited from geometry: curvature is negative for left turns;
lateral offset is positive left of the lane direction.  The lateral offset
d_y of a frame is measured against the *reference lane* of its window (the
first bound lane in the window), so a vehicle crossing into an adjacent lane
accumulates offset against the lane it came from rather than snapping to the
new centerline.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (BINDING_GATE_M, KinematicWindow, RoadMap,
                       count_binding_changes, curvature_at, bind_points,
                       project_to_polyline)
from .kinematics import Trajectory

# Fitted curvature magnitudes below this are treated as numerically zero in
# the sign-constancy and S-shape (sign flip) checks.
KAPPA_SIGN_FLOOR = 1e-4

DEFAULT_WINDOW_N = 10


class MetaAction(enum.Enum):
    """Frame-level driving decision, d_c = 8 classes."""

    STATIONARY = "ST"
    KEEP_LANE = "KL"
    LEFT_LANE_CHANGE = "LLC"
    RIGHT_LANE_CHANGE = "RLC"
    TURN_LEFT = "TL"
    TURN_RIGHT = "TR"
    LEFT_U_TURN = "LU"
    RIGHT_U_TURN = "RU"

    @property
    def code(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        return _META_ORDER.index(self)

    @staticmethod
    def from_code(code: str) -> "MetaAction":
        try:
            return MetaAction(code)
        except ValueError:
            raise ValueError(f"unknown meta-action code {code!r}") from None

    @staticmethod
    def from_index(i: int) -> "MetaAction":
        return _META_ORDER[i]


_META_ORDER: Tuple[MetaAction, ...] = tuple(MetaAction)

MIRROR = {
    MetaAction.STATIONARY: MetaAction.STATIONARY,
    MetaAction.KEEP_LANE: MetaAction.KEEP_LANE,
    MetaAction.LEFT_LANE_CHANGE: MetaAction.RIGHT_LANE_CHANGE,
    MetaAction.RIGHT_LANE_CHANGE: MetaAction.LEFT_LANE_CHANGE,
    MetaAction.TURN_LEFT: MetaAction.TURN_RIGHT,
    MetaAction.TURN_RIGHT: MetaAction.TURN_LEFT,
    MetaAction.LEFT_U_TURN: MetaAction.RIGHT_U_TURN,
    MetaAction.RIGHT_U_TURN: MetaAction.LEFT_U_TURN,
}

OPPOSITE = {
    MetaAction.LEFT_LANE_CHANGE: MetaAction.RIGHT_LANE_CHANGE,
    MetaAction.RIGHT_LANE_CHANGE: MetaAction.LEFT_LANE_CHANGE,
    MetaAction.TURN_LEFT: MetaAction.TURN_RIGHT,
    MetaAction.TURN_RIGHT: MetaAction.TURN_LEFT,
    MetaAction.LEFT_U_TURN: MetaAction.RIGHT_U_TURN,
    MetaAction.RIGHT_U_TURN: MetaAction.LEFT_U_TURN,
}


@dataclass(frozen=True)
class LabelThresholds:
    eps_v: float = 0.3          # m/s, stationary mean speed
    eps_s: float = 0.1          # m, stationary mean displacement
    eps_kappa: float = 0.015    # 1/m, keep-lane curvature
    eps_d: float = 0.3          # m, keep-lane lateral offset
    d_min: float = 1.75         # m, lane-change lateral displacement
    kappa_min: float = 0.015    # 1/m, turn band lower edge
    kappa_max: float = 0.25     # 1/m, turn band upper edge / U-turn floor
    theta_min_deg: float = 15.0
    alpha_uturn_deg: float = 15.0

    def __post_init__(self):
        vals = [self.eps_v, self.eps_s, self.eps_kappa, self.eps_d,
                self.d_min, self.kappa_min, self.kappa_max,
                self.theta_min_deg, self.alpha_uturn_deg]
        if any(v <= 0 for v in vals):
            raise ValueError("all thresholds must be positive")
        if self.kappa_min >= self.kappa_max:
            raise ValueError("kappa_min must be below kappa_max")


@dataclass(frozen=True)
class WindowFeatures:
    frame: int
    v_bar: float
    s_bar: float
    kappa_center: float
    kappa_profile: Tuple[float, ...]
    d_y: float
    dy_profile: Tuple[float, ...]
    delta_l: int
    delta_theta_deg: float
    reference_lane: Optional[int]
    truncated: bool


class _TrackCache:
    """Per-trajectory precomputation shared by every window of one track."""

    def __init__(self, traj: Trajectory, road_map: RoadMap, n: int):
        self.traj = traj
        self.road_map = road_map
        self.n = n
        T = len(traj)
        self.speeds = np.array([s.speed for s in traj.states])
        pos = np.array([(s.x, s.y) for s in traj.states])
        self.positions = pos
        self.step_dist = np.hypot(*(np.diff(pos, axis=0).T)) if T > 1 else np.zeros(0)
        self.headings_unwrapped = np.unwrap([s.heading for s in traj.states])
        self.kappas = np.array(
            [curvature_at(KinematicWindow.around(traj, t, n)).kappa
             for t in range(T)])
        self.bindings = bind_points([tuple(p) for p in pos], road_map,
                                    BINDING_GATE_M)


def windowed_features(traj: Trajectory, road_map: RoadMap, t: int,
                      n: int = DEFAULT_WINDOW_N,
                      cache: Optional[_TrackCache] = None) -> WindowFeatures:
    """Aggregate kinematic and lane features over the window around frame t."""
    if cache is None:
        cache = _TrackCache(traj, road_map, n)
    T = len(traj)
    if not 0 <= t < T:
        raise IndexError(f"frame {t} outside trajectory of length {T}")
    lo = max(0, t - n)
    hi = min(T - 1, t + n)  # inclusive
    count = hi - lo + 1

    v_bar = float(cache.speeds[lo:hi + 1].mean())
    s_bar = float(cache.step_dist[lo:hi].mean()) if hi > lo else 0.0
    kappa_profile = tuple(cache.kappas[lo:hi + 1])
    delta_theta = abs(float(
        np.degrees(cache.headings_unwrapped[hi] - cache.headings_unwrapped[lo])))

    reference: Optional[int] = next(
        (b for b in cache.bindings[lo:hi + 1] if b is not None), None)
    if reference is not None:
        lane = road_map.by_id[reference]
        dy_profile = tuple(
            project_to_polyline(tuple(cache.positions[i]), lane).d
            for i in range(lo, hi + 1))
        d_y = dy_profile[t - lo]
    else:
        dy_profile = (0.0,) * count
        d_y = 0.0
    delta_l = count_binding_changes(cache.bindings[lo:hi + 1], road_map)

    return WindowFeatures(
        frame=t, v_bar=v_bar, s_bar=s_bar,
        kappa_center=float(cache.kappas[t]), kappa_profile=kappa_profile,
        d_y=d_y, dy_profile=dy_profile, delta_l=delta_l,
        delta_theta_deg=delta_theta, reference_lane=reference,
        truncated=count != 2 * n + 1,
    )


def _sign_constant(profile: Sequence[float], floor: float = KAPPA_SIGN_FLOOR) -> bool:
    """No two significant curvatures of opposite sign in the window."""
    has_pos = any(k > floor for k in profile)
    has_neg = any(k < -floor for k in profile)
    return not (has_pos and has_neg)


def _has_sign_flip(profile: Sequence[float], floor: float = KAPPA_SIGN_FLOOR) -> bool:
    """Some pair of significant curvatures with opposite sign (S-shape)."""
    has_pos = any(k > floor for k in profile)
    has_neg = any(k < -floor for k in profile)
    return has_pos and has_neg


def classify_frame(features: WindowFeatures,
                   thresholds: LabelThresholds = LabelThresholds()
                   ) -> Tuple[MetaAction, str]:
    """One label for one frame; returns (label, fired-rule tag)."""
    th = thresholds
    f = features

    if f.v_bar < th.eps_v or f.s_bar < th.eps_s:
        return MetaAction.STATIONARY, "stationary"

    kc = f.kappa_center
    if (abs(kc) > th.kappa_max
            and 180.0 - th.alpha_uturn_deg <= f.delta_theta_deg <= 180.0 + th.alpha_uturn_deg
            and _sign_constant(f.kappa_profile)):
        return (MetaAction.LEFT_U_TURN if kc < 0 else MetaAction.RIGHT_U_TURN,
                "u_turn")

    if (th.kappa_min <= abs(kc) <= th.kappa_max
            and f.delta_theta_deg >= th.theta_min_deg
            and _sign_constant(f.kappa_profile)):
        return (MetaAction.TURN_LEFT if kc < 0 else MetaAction.TURN_RIGHT,
                "turn")

    if (abs(f.d_y) > th.d_min and f.delta_l >= 1
            and _has_sign_flip(f.kappa_profile)):
        return (MetaAction.LEFT_LANE_CHANGE if f.d_y > 0
                else MetaAction.RIGHT_LANE_CHANGE, "lane_change")

    if abs(kc) < th.eps_kappa or abs(f.d_y) < th.eps_d or f.delta_l == 0:
        return MetaAction.KEEP_LANE, "keep_lane"

    return MetaAction.KEEP_LANE, "fallback"


def smooth_labels(labels: List[MetaAction]) -> List[MetaAction]:
    """Absorb single-frame islands surrounded by one identical label."""
    out = list(labels)
    for t in range(1, len(out) - 1):
        if out[t] != out[t - 1] and out[t - 1] == out[t + 1]:
            out[t] = out[t - 1]
    return out


def label_trajectory_detailed(traj: Trajectory, road_map: RoadMap,
                              thresholds: LabelThresholds = LabelThresholds(),
                              n: int = DEFAULT_WINDOW_N,
                              smooth: bool = True
                              ) -> Tuple[List[MetaAction], List[str]]:
    if len(traj) < 2:
        raise ValueError("need at least 2 states to label")
    cache = _TrackCache(traj, road_map, n)
    labels: List[MetaAction] = []
    tags: List[str] = []
    for t in range(len(traj)):
        label, tag = classify_frame(
            windowed_features(traj, road_map, t, n, cache), thresholds)
        labels.append(label)
        tags.append(tag)
    if smooth:
        labels = smooth_labels(labels)
    return labels, tags


def label_trajectory(traj: Trajectory, road_map: RoadMap,
                     thresholds: LabelThresholds = LabelThresholds(),
                     n: int = DEFAULT_WINDOW_N,
                     smooth: bool = True) -> List[MetaAction]:
    """Label every frame of a trajectory; output length equals len(traj)."""
    return label_trajectory_detailed(traj, road_map, thresholds, n, smooth)[0]
