"""Versioned JSON file formats: scenes, labels, action labels, rollout logs.

All formats are self-describing ({"version", "kind", ...}), reject unknown
fields, and report schema violations with a JSON-path to the offending field.
Serialization is byte-stable (sorted keys, repr floats, no NaN) so identical
runs produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import MapPolyline, PolylineKind, RoadMap
from .kinematics import ActionGrid, AgentState, ControlAction, Trajectory
from .labeler import MetaAction
from .scene import AgentType, Extents, Scene, SceneAgent
from .sim import AgentStep, RolloutSession, StepRecord

FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    """Schema violation with the JSON path of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(obj, path, required: Dict[str, type], optional: Dict[str, type] = {}):
    if not isinstance(obj, dict):
        raise SceneFormatError(path, f"expected object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise SceneFormatError(path, f"unknown field {sorted(unknown)[0]!r}")
    for key, typ in required.items():
        if key not in obj:
            raise SceneFormatError(path, f"missing field {key!r}")
    out = {}
    for key, typ in {**required, **optional}.items():
        if key not in obj:
            continue
        val = obj[key]
        if typ is float and isinstance(val, int):
            val = float(val)
        if typ is not None and not isinstance(val, typ):
            raise SceneFormatError(f"{path}.{key}",
                                   f"expected {typ.__name__}, got "
                                   f"{type(val).__name__}")
        out[key] = val
    return out


def _number_list(val, path, length=None):
    if not isinstance(val, list) or (length is not None and len(val) != length):
        raise SceneFormatError(path, f"expected list of {length} numbers")
    out = []
    for i, x in enumerate(val):
        if not isinstance(x, (int, float)) or isinstance(x, bool):
            raise SceneFormatError(f"{path}[{i}]", "expected a number")
        out.append(float(x))
    return out


def _check_header(data, path, kind):
    head = _require(data, path, {"version": int, "kind": str}, _any_fields(data))
    if head["version"] != FORMAT_VERSION:
        raise SceneFormatError(f"{path}.version",
                               f"unsupported version {head['version']}")
    if head["kind"] != kind:
        raise SceneFormatError(f"{path}.kind",
                               f"expected {kind!r}, got {head['kind']!r}")


def _any_fields(data):
    # header check tolerates the body fields; each body is validated after
    return {k: None for k in data if k not in ("version", "kind")}


def _dump(path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, allow_nan=False,
                      separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SceneFormatError("$", f"malformed JSON: {e}") from None


# -- scenes ---------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "scene",
        "id": scene.id,
        "frame_rate_hz": scene.frame_rate_hz,
        "attrs": scene.attrs,
        "agents": [
            {
                "id": a.id,
                "type": a.type.value,
                "extents": {"length": a.extents.length, "width": a.extents.width,
                            "height": a.extents.height},
                "track": [[s.x, s.y, s.heading, s.speed] for s in a.track.states],
            }
            for a in scene.agents
        ],
        "map": [
            {
                "id": p.id,
                "kind": p.kind.value,
                "points": [[float(x), float(y)] for x, y in p.points],
                "left_neighbor": p.left_neighbor,
                "right_neighbor": p.right_neighbor,
                "successors": list(p.successors),
            }
            for p in scene.road.polylines
        ],
    }


def scene_from_dict(data: dict, path: str = "$") -> Scene:
    _check_header(data, path, "scene")
    body = _require(data, path, {
        "version": int, "kind": str, "id": str, "frame_rate_hz": float,
        "agents": list, "map": list}, {"attrs": dict})
    dt = 1.0 / body["frame_rate_hz"]

    agents = []
    for i, a in enumerate(body["agents"]):
        apath = f"{path}.agents[{i}]"
        spec = _require(a, apath, {"id": int, "type": str, "extents": dict,
                                   "track": list})
        try:
            atype = AgentType(spec["type"])
        except ValueError:
            raise SceneFormatError(f"{apath}.type",
                                   f"unknown agent type {spec['type']!r}") from None
        ext = _require(spec["extents"], f"{apath}.extents",
                       {"length": float, "width": float, "height": float})
        states = []
        for j, row in enumerate(spec["track"]):
            x, y, h, v = _number_list(row, f"{apath}.track[{j}]", 4)
            states.append(AgentState(x, y, h, v))
        if not states:
            raise SceneFormatError(f"{apath}.track", "empty track")
        agents.append(SceneAgent(
            id=spec["id"], type=atype,
            extents=Extents(ext["length"], ext["width"], ext["height"]),
            track=Trajectory(states=tuple(states), dt=dt)))

    polylines = []
    for i, p in enumerate(body["map"]):
        ppath = f"{path}.map[{i}]"
        spec = _require(p, ppath, {"id": int, "kind": str, "points": list},
                        {"left_neighbor": int, "right_neighbor": int,
                         "successors": list})
        try:
            kind = PolylineKind(spec["kind"])
        except ValueError:
            raise SceneFormatError(f"{ppath}.kind",
                                   f"unknown polyline kind {spec['kind']!r}") from None
        pts = [_number_list(row, f"{ppath}.points[{j}]", 2)
               for j, row in enumerate(spec["points"])]
        succ = spec.get("successors", [])
        for j, s in enumerate(succ):
            if not isinstance(s, int):
                raise SceneFormatError(f"{ppath}.successors[{j}]",
                                       "expected an integer id")
        polylines.append(MapPolyline(
            id=spec["id"], points=np.array(pts), kind=kind,
            left_neighbor=spec.get("left_neighbor"),
            right_neighbor=spec.get("right_neighbor"),
            successors=tuple(succ)))
    if not polylines:
        raise SceneFormatError(f"{path}.map", "empty map")

    return Scene(id=body["id"], agents=agents, road=RoadMap(polylines),
                 frame_rate_hz=body["frame_rate_hz"],
                 attrs=body.get("attrs", {}))


def save_scene(scene: Scene, path) -> None:
    _dump(path, scene_to_dict(scene))


def load_scene(path) -> Scene:
    return scene_from_dict(_load(path))


# -- labels ---------------------------------------------------------------

def save_labels(labels: Dict[int, List[MetaAction]], scene_id: str, path,
                window_n: int) -> None:
    _dump(path, {
        "version": FORMAT_VERSION, "kind": "labels", "scene_id": scene_id,
        "window_n": window_n,
        "labels": {str(aid): [m.code for m in seq]
                   for aid, seq in labels.items()},
    })


def load_labels(path) -> Tuple[Dict[int, List[MetaAction]], str, int]:
    data = _load(path)
    _check_header(data, "$", "labels")
    body = _require(data, "$", {"version": int, "kind": str, "scene_id": str,
                                "window_n": int, "labels": dict})
    out: Dict[int, List[MetaAction]] = {}
    for aid, seq in body["labels"].items():
        if not isinstance(seq, list):
            raise SceneFormatError(f"$.labels.{aid}", "expected a list of codes")
        try:
            out[int(aid)] = [MetaAction.from_code(c) for c in seq]
        except ValueError as e:
            raise SceneFormatError(f"$.labels.{aid}", str(e)) from None
    return out, body["scene_id"], body["window_n"]


# -- action labels ----------------------------------------------------------

def grid_to_dict(grid: ActionGrid) -> dict:
    return {"acc_bins": grid.acc_bins, "yaw_bins": grid.yaw_bins,
            "acc_range": list(grid.acc_range), "yaw_range": list(grid.yaw_range)}


def grid_from_dict(data: dict, path: str = "$.grid") -> ActionGrid:
    spec = _require(data, path, {"acc_bins": int, "yaw_bins": int,
                                 "acc_range": list, "yaw_range": list})
    acc = _number_list(spec["acc_range"], f"{path}.acc_range", 2)
    yaw = _number_list(spec["yaw_range"], f"{path}.yaw_range", 2)
    return ActionGrid(acc_bins=spec["acc_bins"], yaw_bins=spec["yaw_bins"],
                      acc_range=(acc[0], acc[1]), yaw_range=(yaw[0], yaw[1]))


def save_actions(fits: Dict[int, "FitResult"], scene_id: str, grid: ActionGrid,
                 path) -> None:
    _dump(path, {
        "version": FORMAT_VERSION, "kind": "actions", "scene_id": scene_id,
        "grid": grid_to_dict(grid),
        "actions": {
            str(aid): {
                "bins": list(r.bin_indices),
                "controls": [[c.acc, c.yaw_rate] for c in r.continuous_controls],
                "residuals": list(r.per_step_residual),
            }
            for aid, r in fits.items()
        },
    })


def load_actions(path) -> Tuple[Dict[int, dict], str, ActionGrid]:
    data = _load(path)
    _check_header(data, "$", "actions")
    body = _require(data, "$", {"version": int, "kind": str, "scene_id": str,
                                "grid": dict, "actions": dict})
    grid = grid_from_dict(body["grid"])
    out = {}
    for aid, rec in body["actions"].items():
        spec = _require(rec, f"$.actions.{aid}",
                        {"bins": list, "controls": list, "residuals": list})
        out[int(aid)] = spec
    return out, body["scene_id"], grid


# -- rollout logs -----------------------------------------------------------

def _step_to_dict(record: StepRecord) -> dict:
    return {
        "frame": record.frame,
        "agents": {
            str(aid): {
                "meta": s.meta.code,
                "meta_dist": [float(p) for p in s.meta_dist],
                "injected": s.injected,
                "action_bin": s.action_bin,
                "action_dist": [float(p) for p in s.action_dist],
                "state": [s.state.x, s.state.y, s.state.heading, s.state.speed],
            }
            for aid, s in record.agents.items()
        },
    }


def rollout_to_dict(session: RolloutSession, sample_index: int = 0) -> dict:
    cfg = session.config
    return {
        "version": FORMAT_VERSION,
        "kind": "rollout",
        "scene_id": session.scene.id,
        "seed": session.seed,
        "sample_index": sample_index,
        "config": {"horizon": cfg.horizon, "warmup": cfg.warmup,
                   "window": cfg.window, "temperature": cfg.temperature,
                   "label_window_n": cfg.label_window_n},
        "grid": grid_to_dict(session.grid),
        "overrides": [[f, a, c] for f, a, c in session.override_log],
        "steps": [_step_to_dict(r) for r in session.records],
    }


def save_rollout(session: RolloutSession, path, sample_index: int = 0) -> None:
    _dump(path, rollout_to_dict(session, sample_index))


def load_rollout(path) -> dict:
    data = _load(path)
    _check_header(data, "$", "rollout")
    body = _require(data, "$", {
        "version": int, "kind": str, "scene_id": str, "seed": int,
        "sample_index": int, "config": dict, "grid": dict, "overrides": list,
        "steps": list})
    for i, step in enumerate(body["steps"]):
        _require(step, f"$.steps[{i}]", {"frame": int, "agents": dict})
    return body


def rollout_trajectory(rollout: dict, agent_id: int) -> Trajectory:
    """Generated states of one agent from a loaded rollout log."""
    states = []
    for step in rollout["steps"]:
        rec = step["agents"].get(str(agent_id))
        if rec is None:
            raise KeyError(f"agent {agent_id} missing from rollout")
        x, y, h, v = rec["state"]
        states.append(AgentState(x, y, h, v))
    if not states:
        raise ValueError("rollout has no steps")
    dt = 0.1 if "frame_rate_hz" not in rollout else 1.0 / rollout["frame_rate_hz"]
    return Trajectory(states=tuple(states), dt=dt)


def rollout_meta_codes(rollout: dict, agent_id: int) -> List[str]:
    return [step["agents"][str(agent_id)]["meta"] for step in rollout["steps"]]
