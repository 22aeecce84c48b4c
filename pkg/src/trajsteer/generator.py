"""Scripted synthetic scenes with construction-time ground-truth labels.

Each maneuver is realized as a sequence of grid-center control actions rolled
through the exact kinematics, so fitted control labels round-trip exactly.
Ground-truth meta-action labels are derived analytically from the script
itself (true per-frame curvature from the commanded yaw rate, lateral offsets
from the road arithmetic, lane bindings by construction) rather than from the
numeric labeling pipeline, so the two can be compared as independent routes
to the same rule definitions.

Script geometry is validated against the labeling thresholds up front; an
unrealizable request (e.g. a U-turn whose curvature would not exceed the
U-turn band) raises with the violated threshold named.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import MapPolyline, PolylineKind, RoadMap
from .kinematics import (AgentState, ControlAction, Trajectory, ctra_step,
                         rollout)
from .labeler import (DEFAULT_WINDOW_N, KAPPA_SIGN_FLOOR, LabelThresholds,
                      MetaAction)
from .scene import AgentType, Extents, Scene, SceneAgent

DT = 0.1
ROW_GAP = 250.0          # spacing between corridors of co-generated maneuvers
MAP_MARGIN = 30.0        # map extends this far beyond the track ends
CAR = Extents(4.8, 2.1, 1.6)

UTURN_WINDOW_N = 25      # U-turn heading reversal needs a 5 s window at 10 Hz


@dataclass(frozen=True)
class ScriptedManeuver:
    kind: MetaAction
    speed: Optional[float] = None      # default chosen per kind
    yaw_rate: Optional[float] = None   # magnitude; must be a grid bin center
    lane_count: int = 2
    lane_width: float = 3.5
    start_lane: int = 0
    lead_in_s: float = 3.5
    lead_out_s: float = 3.5
    turn_angle_deg: float = 90.0       # turns
    sweep_deg: float = 340.0           # U-turn total arc
    duration_s: float = 8.0            # stationary / keep-lane length
    noise: float = 0.0                 # m, position jitter on the track
    window_n: Optional[int] = None     # labeling window hint


@dataclass(frozen=True)
class ManeuverBuild:
    start: AgentState
    actions: Tuple[ControlAction, ...]
    track: Trajectory
    polylines: Tuple[MapPolyline, ...]
    labels: Tuple[MetaAction, ...]
    window_n: int


class UnrealizableManeuver(ValueError):
    pass


def _window_bounds(t: int, n: int, T: int) -> Tuple[int, int]:
    return max(0, t - n), min(T - 1, t + n)


def _cumulative_headings(theta0: float, actions: Sequence[ControlAction]) -> np.ndarray:
    yaw = np.array([a.yaw_rate for a in actions])
    return theta0 + np.concatenate([[0.0], np.cumsum(yaw) * DT])


def _true_kappas(actions: Sequence[ControlAction], speeds: np.ndarray) -> np.ndarray:
    """Per-frame commanded curvature, left-negative (out-action convention)."""
    kappas = np.zeros(len(actions) + 1)
    for i, a in enumerate(actions):
        v = speeds[i]
        kappas[i] = -a.yaw_rate / v if v > 1e-9 else 0.0
    kappas[-1] = kappas[-2] if len(actions) else 0.0
    return kappas


def _straight_road(lane_count: int, lane_width: float, x0: float, x1: float,
                   id_base: int) -> List[MapPolyline]:
    """Parallel lanes along +x; lane j sits at y = j * lane_width."""
    xs = np.linspace(x0, x1, max(2, int((x1 - x0) / 5.0) + 1))
    lanes = []
    for j in range(lane_count):
        pts = np.stack([xs, np.full_like(xs, j * lane_width)], axis=1)
        lanes.append(MapPolyline(
            id=id_base + j, points=pts, kind=PolylineKind.LANE_CENTER,
            left_neighbor=id_base + j + 1 if j + 1 < lane_count else None,
            right_neighbor=id_base + j - 1 if j > 0 else None))
    return lanes


def _default(value, fallback):
    return fallback if value is None else value


def _build_stationary(m: ScriptedManeuver, th: LabelThresholds) -> ManeuverBuild:
    v = _default(m.speed, 0.0)
    if v >= th.eps_v:
        raise UnrealizableManeuver(
            f"stationary speed {v} m/s violates eps_v = {th.eps_v} m/s")
    frames = max(4, round(m.duration_s / DT))
    start = AgentState(0.0, m.start_lane * m.lane_width, 0.0, v)
    actions = (ControlAction(0.0, 0.0),) * frames
    track = rollout(start, actions, DT)
    road = _straight_road(m.lane_count, m.lane_width,
                          -MAP_MARGIN, v * frames * DT + MAP_MARGIN, 0)
    labels = (MetaAction.STATIONARY,) * len(track)
    return ManeuverBuild(start, actions, track, tuple(road), labels,
                         _default(m.window_n, DEFAULT_WINDOW_N))


def _build_keep_lane(m: ScriptedManeuver, th: LabelThresholds) -> ManeuverBuild:
    v = _default(m.speed, 10.0)
    if v < th.eps_v:
        raise UnrealizableManeuver(
            f"keep-lane speed {v} m/s is below eps_v = {th.eps_v} m/s")
    frames = max(4, round(m.duration_s / DT))
    start = AgentState(0.0, m.start_lane * m.lane_width, 0.0, v)
    actions = (ControlAction(0.0, 0.0),) * frames
    track = rollout(start, actions, DT)
    road = _straight_road(m.lane_count, m.lane_width,
                          -MAP_MARGIN, v * frames * DT + MAP_MARGIN, 0)
    labels = (MetaAction.KEEP_LANE,) * len(track)
    return ManeuverBuild(start, actions, track, tuple(road), labels,
                         _default(m.window_n, DEFAULT_WINDOW_N))


def _build_lane_change(m: ScriptedManeuver, th: LabelThresholds) -> ManeuverBuild:
    left = m.kind == MetaAction.LEFT_LANE_CHANGE
    sign = 1.0 if left else -1.0
    v = _default(m.speed, 10.0)
    w = _default(m.yaw_rate, 0.1)
    n = _default(m.window_n, DEFAULT_WINDOW_N)

    target = m.start_lane + (1 if left else -1)
    if not 0 <= target < m.lane_count:
        raise UnrealizableManeuver(
            f"no adjacent lane on the {'left' if left else 'right'} of "
            f"lane {m.start_lane} (lane_count={m.lane_count})")
    if w / v >= th.kappa_min:
        raise UnrealizableManeuver(
            f"yaw_rate/speed = {w / v:.4f} reaches kappa_min = {th.kappa_min}; "
            "the S-curve would satisfy the turn curvature band")

    # half-phase length so the two arcs sweep one lane width laterally
    cos_arg = 1.0 - m.lane_width * w / (2.0 * v)
    if cos_arg <= -1.0:
        raise UnrealizableManeuver("lane width unreachable at this speed/yaw rate")
    t1 = max(2, round(math.acos(cos_arg) / (w * DT)))
    theta_peak_deg = math.degrees(w * t1 * DT)
    if theta_peak_deg >= th.theta_min_deg:
        raise UnrealizableManeuver(
            f"peak heading {theta_peak_deg:.1f} deg reaches theta_min = "
            f"{th.theta_min_deg} deg; script would look like a turn")

    l1 = round(m.lead_in_s / DT)
    l2 = round(m.lead_out_s / DT)
    actions = ((ControlAction(0.0, 0.0),) * l1
               + (ControlAction(0.0, sign * w),) * t1
               + (ControlAction(0.0, -sign * w),) * t1
               + (ControlAction(0.0, 0.0),) * l2)
    origin_y = m.start_lane * m.lane_width
    start = AgentState(0.0, origin_y, 0.0, v)
    track = rollout(start, actions, DT)
    T = len(track)

    road = _straight_road(m.lane_count, m.lane_width,
                          -MAP_MARGIN, track.states[-1].x + MAP_MARGIN, 0)

    ys = np.array([s.y for s in track.states])
    half = m.lane_width / 2.0
    crossed = np.abs(ys - origin_y) > half
    t_x = int(np.argmax(crossed)) if crossed.any() else T  # binding switch frame
    target_y = target * m.lane_width

    phase1 = (l1, l1 + t1 - 1)          # frames whose out-action is phase 1
    phase2 = (l1 + t1, l1 + 2 * t1 - 1)
    labels = []
    for t in range(T):
        lo, hi = _window_bounds(t, n, T)
        ref_y = origin_y if lo < t_x else target_y
        d_ref = ys[t] - ref_y
        delta_l = 1 if lo < t_x <= hi else 0
        flip = (lo <= phase1[1] and hi >= phase1[0]
                and lo <= phase2[1] and hi >= phase2[0])
        if abs(d_ref) > th.d_min and delta_l >= 1 and flip:
            labels.append(MetaAction.LEFT_LANE_CHANGE if d_ref > 0
                          else MetaAction.RIGHT_LANE_CHANGE)
        else:
            labels.append(MetaAction.KEEP_LANE)
    return ManeuverBuild(start, actions, track, tuple(road), tuple(labels), n)


def _arc_polyline(center: Tuple[float, float], radius: float, ang0: float,
                  ang1: float, poly_id: int, **kw) -> MapPolyline:
    n = max(3, int(abs(ang1 - ang0) / math.radians(2.0)) + 1)
    angs = np.linspace(ang0, ang1, n)
    pts = np.stack([center[0] + radius * np.cos(angs),
                    center[1] + radius * np.sin(angs)], axis=1)
    return MapPolyline(id=poly_id, points=pts, kind=PolylineKind.LANE_CENTER, **kw)


def _build_turn(m: ScriptedManeuver, th: LabelThresholds) -> ManeuverBuild:
    left = m.kind == MetaAction.TURN_LEFT
    sign = 1.0 if left else -1.0
    v = _default(m.speed, 8.0)
    w = _default(m.yaw_rate, 0.4)
    n = _default(m.window_n, DEFAULT_WINDOW_N)

    kappa = w / v
    if not th.kappa_min <= kappa <= th.kappa_max:
        raise UnrealizableManeuver(
            f"turn curvature {kappa:.4f} outside [kappa_min, kappa_max] = "
            f"[{th.kappa_min}, {th.kappa_max}]")
    full_window_sweep = math.degrees(w * 2 * n * DT)
    if full_window_sweep < th.theta_min_deg:
        raise UnrealizableManeuver(
            f"window heading sweep {full_window_sweep:.1f} deg cannot reach "
            f"theta_min = {th.theta_min_deg} deg")

    arc_frames = max(2, round(math.radians(m.turn_angle_deg) / (w * DT)))
    l1 = round(m.lead_in_s / DT)
    l2 = round(m.lead_out_s / DT)
    actions = ((ControlAction(0.0, 0.0),) * l1
               + (ControlAction(0.0, sign * w),) * arc_frames
               + (ControlAction(0.0, 0.0),) * l2)
    start = AgentState(0.0, 0.0, 0.0, v)
    track = rollout(start, actions, DT)
    T = len(track)

    # corridor centerline pieces trace the exact path
    radius = v / w
    arc_entry = track.states[l1]
    center = (arc_entry.x - sign * radius * math.sin(arc_entry.heading),
              arc_entry.y + sign * radius * math.cos(arc_entry.heading))
    ang0 = math.atan2(arc_entry.y - center[1], arc_entry.x - center[0])
    ang1 = ang0 + sign * w * arc_frames * DT
    arc_exit = track.states[l1 + arc_frames]
    out_len = v * l2 * DT + MAP_MARGIN
    in_line = MapPolyline(
        id=0, points=np.array([[-MAP_MARGIN, 0.0], [arc_entry.x, 0.0]]),
        kind=PolylineKind.LANE_CENTER, successors=(1,))
    arc = _arc_polyline(center, radius, ang0, ang1, 1, successors=(2,))
    out_line = MapPolyline(
        id=2, points=np.array([
            [arc_exit.x, arc_exit.y],
            [arc_exit.x + out_len * math.cos(arc_exit.heading),
             arc_exit.y + out_len * math.sin(arc_exit.heading)]]),
        kind=PolylineKind.LANE_CENTER)

    headings = _cumulative_headings(0.0, actions)
    labels = []
    for t in range(T):
        lo, hi = _window_bounds(t, n, T)
        sweep = abs(math.degrees(headings[hi] - headings[lo]))
        in_arc = l1 <= t <= l1 + arc_frames - 1
        if in_arc and sweep >= th.theta_min_deg:
            labels.append(MetaAction.TURN_LEFT if left else MetaAction.TURN_RIGHT)
        else:
            labels.append(MetaAction.KEEP_LANE)
    return ManeuverBuild(start, actions, track, (in_line, arc, out_line),
                         tuple(labels), n)


def _build_u_turn(m: ScriptedManeuver, th: LabelThresholds) -> ManeuverBuild:
    left = m.kind == MetaAction.LEFT_U_TURN
    sign = 1.0 if left else -1.0
    v = _default(m.speed, 1.6)
    w = _default(m.yaw_rate, 0.6)
    n = _default(m.window_n, UTURN_WINDOW_N)

    kappa = w / v
    if kappa <= th.kappa_max:
        raise UnrealizableManeuver(
            f"U-turn curvature {kappa:.3f} does not exceed kappa_max = "
            f"{th.kappa_max}; radius is too wide for the U-turn band")
    chord = 2.0 * (v / w) * math.sin(w * DT / 2.0)
    if chord <= th.eps_s:
        raise UnrealizableManeuver(
            f"per-frame displacement {chord:.3f} m does not exceed eps_s = "
            f"{th.eps_s} m; the script would label as stationary")
    full_window_sweep = math.degrees(w * 2 * n * DT)
    if full_window_sweep < 180.0 - th.alpha_uturn_deg:
        raise UnrealizableManeuver(
            f"window heading sweep {full_window_sweep:.1f} deg cannot reach "
            f"180 - alpha = {180 - th.alpha_uturn_deg} deg")

    frames = max(2 * n + 2, round(math.radians(m.sweep_deg) / (w * DT)))
    actions = (ControlAction(0.0, sign * w),) * frames
    start = AgentState(0.0, 0.0, 0.0, v)
    track = rollout(start, actions, DT)
    T = len(track)

    radius = v / w
    center = (0.0, sign * radius)
    ang0 = math.atan2(-center[1], -center[0])
    margin = math.radians(15.0)
    arc = _arc_polyline(center, radius, ang0 - sign * margin,
                        ang0 + sign * (w * frames * DT + margin), 0)

    headings = _cumulative_headings(0.0, actions)
    lo_deg = 180.0 - th.alpha_uturn_deg
    hi_deg = 180.0 + th.alpha_uturn_deg
    labels = []
    for t in range(T):
        lo, hi = _window_bounds(t, n, T)
        sweep = abs(math.degrees(headings[hi] - headings[lo]))
        if lo_deg <= sweep <= hi_deg:
            labels.append(MetaAction.LEFT_U_TURN if left else MetaAction.RIGHT_U_TURN)
        else:
            labels.append(MetaAction.KEEP_LANE)
    return ManeuverBuild(start, actions, track, (arc,), tuple(labels), n)


_BUILDERS = {
    MetaAction.STATIONARY: _build_stationary,
    MetaAction.KEEP_LANE: _build_keep_lane,
    MetaAction.LEFT_LANE_CHANGE: _build_lane_change,
    MetaAction.RIGHT_LANE_CHANGE: _build_lane_change,
    MetaAction.TURN_LEFT: _build_turn,
    MetaAction.TURN_RIGHT: _build_turn,
    MetaAction.LEFT_U_TURN: _build_u_turn,
    MetaAction.RIGHT_U_TURN: _build_u_turn,
}


def build_maneuver(m: ScriptedManeuver,
                   thresholds: LabelThresholds = LabelThresholds()) -> ManeuverBuild:
    return _BUILDERS[m.kind](m, thresholds)


def _offset_polyline(poly: MapPolyline, dx: float, dy: float,
                     id_base: int) -> MapPolyline:
    shift = lambda i: None if i is None else i + id_base
    return MapPolyline(
        id=poly.id + id_base,
        points=poly.points + np.array([dx, dy]),
        kind=poly.kind,
        left_neighbor=shift(poly.left_neighbor),
        right_neighbor=shift(poly.right_neighbor),
        successors=tuple(s + id_base for s in poly.successors))


def generate_scene(maneuvers: Sequence[ScriptedManeuver], seed: int = 0,
                   thresholds: LabelThresholds = LabelThresholds(),
                   scene_id: Optional[str] = None
                   ) -> Tuple[Scene, Dict[int, List[MetaAction]]]:
    """Build one scene with one agent per maneuver, each in its own corridor.

    Returns the scene and the ground-truth labels per agent id.  The scene
    attrs carry the labeling window the ground truth was computed with.
    """
    if not maneuvers:
        raise ValueError("need at least one maneuver")
    rng = np.random.default_rng(seed)
    agents: List[SceneAgent] = []
    polylines: List[MapPolyline] = []
    labels: Dict[int, List[MetaAction]] = {}
    window_n = DEFAULT_WINDOW_N
    for i, m in enumerate(maneuvers):
        build = build_maneuver(m, thresholds)
        dy = i * ROW_GAP
        id_base = 100 * i
        polylines.extend(_offset_polyline(p, 0.0, dy, id_base)
                         for p in build.polylines)
        states = [AgentState(s.x, s.y + dy, s.heading, s.speed)
                  for s in build.track.states]
        if m.noise > 0:
            states = [AgentState(s.x + rng.normal(0, m.noise),
                                 s.y + rng.normal(0, m.noise),
                                 s.heading, s.speed) for s in states]
        agents.append(SceneAgent(id=i, type=AgentType.VEHICLE, extents=CAR,
                                 track=Trajectory(states=tuple(states), dt=DT)))
        labels[i] = list(build.labels)
        window_n = max(window_n, build.window_n)
    scene = Scene(
        id=scene_id or f"scripted-{seed}",
        agents=agents,
        road=RoadMap(polylines),
        frame_rate_hz=1.0 / DT,
        attrs={"label_window_n": window_n},
    )
    return scene, labels


def corpus_specs(kind: MetaAction, count: int) -> List[ScriptedManeuver]:
    """Varied realizable scripts of one class for the labeling corpus."""
    out: List[ScriptedManeuver] = []
    if kind == MetaAction.STATIONARY:
        combos = [(0.0, 6.0), (0.05, 8.0), (0.1, 7.0), (0.15, 9.0), (0.2, 8.0)]
        for i in range(count):
            v, dur = combos[i % len(combos)]
            out.append(ScriptedManeuver(kind, speed=v, duration_s=dur + i % 3,
                                        lane_count=1 + i % 3, start_lane=i % 1))
    elif kind == MetaAction.KEEP_LANE:
        speeds = [5.0, 6.5, 8.0, 9.5, 11.0, 12.5, 14.0]
        for i in range(count):
            out.append(ScriptedManeuver(kind, speed=speeds[i % len(speeds)],
                                        duration_s=7.0 + i % 4,
                                        lane_count=1 + i % 3))
    elif kind in (MetaAction.LEFT_LANE_CHANGE, MetaAction.RIGHT_LANE_CHANGE):
        speeds = [8.0, 9.0, 10.0, 11.0, 12.0]
        start = 0 if kind == MetaAction.LEFT_LANE_CHANGE else 1
        for i in range(count):
            out.append(ScriptedManeuver(
                kind, speed=speeds[i % len(speeds)], yaw_rate=0.1,
                lane_count=2 + i % 2, start_lane=start,
                lead_in_s=3.0 + 0.5 * (i % 3), lead_out_s=3.5))
    elif kind in (MetaAction.TURN_LEFT, MetaAction.TURN_RIGHT):
        speeds = [6.0, 7.0, 8.0, 9.0, 10.0]
        angles = [80.0, 90.0, 100.0, 110.0]
        for i in range(count):
            out.append(ScriptedManeuver(
                kind, speed=speeds[i % len(speeds)], yaw_rate=0.4,
                turn_angle_deg=angles[i % len(angles)],
                lead_in_s=3.0 + 0.5 * (i % 2)))
    else:  # U-turns
        combos = [(1.2, 0.6), (1.4, 0.6), (1.6, 0.6), (1.8, 0.6),
                  (1.2, 0.5), (1.4, 0.5)]
        sweeps = [330.0, 340.0, 350.0]
        for i in range(count):
            v, w = combos[i % len(combos)]
            # window must sweep 180 - alpha of heading at this yaw rate
            n = math.ceil(math.radians(165.0) / (2.0 * w * DT)) + 1
            out.append(ScriptedManeuver(kind, speed=v, yaw_rate=w,
                                        sweep_deg=sweeps[i % len(sweeps)],
                                        window_n=n))
    return out
