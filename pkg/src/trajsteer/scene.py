"""Scene container: agent tracks plus the lane map, sampled at a fixed rate.

Also provides whole-scene rigid transforms and the x-axis mirror used by the
label symmetry properties (mirroring swaps every left/right label).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import MapPolyline, RoadMap
from .kinematics import AgentState, Trajectory


class AgentType(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    OTHER = "other"


@dataclass(frozen=True)
class Extents:
    """Bounding box of an agent, meters."""

    length: float
    width: float
    height: float

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError(f"extents must be positive: {self}")


@dataclass(frozen=True)
class SceneAgent:
    id: int
    type: AgentType
    extents: Extents
    track: Trajectory


@dataclass
class Scene:
    id: str
    agents: List[SceneAgent]
    road: RoadMap
    frame_rate_hz: float = 10.0
    attrs: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")
        want_dt = 1.0 / self.frame_rate_hz
        ids = set()
        for agent in self.agents:
            if agent.id in ids:
                raise ValueError(f"duplicate agent id {agent.id}")
            ids.add(agent.id)
            if not math.isclose(agent.track.dt, want_dt, rel_tol=1e-9):
                raise ValueError(
                    f"agent {agent.id} track dt {agent.track.dt} does not match "
                    f"frame rate {self.frame_rate_hz} Hz")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate_hz

    def agent(self, agent_id: int) -> SceneAgent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")

    def n_frames(self) -> int:
        return min(len(a.track) for a in self.agents) if self.agents else 0


def mirror_scene(scene: Scene) -> Scene:
    """Reflect the whole scene across the x axis.

    y coordinates and headings negate; lane left/right neighbor roles swap.
    Polyline ids are preserved so projections land on the mirrored twin of the
    original lane.
    """
    polylines = [
        MapPolyline(
            id=p.id,
            points=p.points * np.array([1.0, -1.0]),
            kind=p.kind,
            left_neighbor=p.right_neighbor,
            right_neighbor=p.left_neighbor,
            successors=p.successors,
        )
        for p in scene.road.polylines
    ]
    agents = [
        replace(a, track=Trajectory(states=tuple(
            AgentState(s.x, -s.y, -s.heading, s.speed)
            for s in a.track.states), dt=a.track.dt))
        for a in scene.agents
    ]
    return Scene(id=scene.id + "-mirrored", agents=agents,
                 road=RoadMap(polylines), frame_rate_hz=scene.frame_rate_hz,
                 attrs=dict(scene.attrs))


def transform_scene(scene: Scene, angle: float = 0.0,
                    dx: float = 0.0, dy: float = 0.0) -> Scene:
    """Rigidly rotate (about the origin) then translate the whole scene."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    polylines = [
        MapPolyline(id=p.id, points=p.points @ rot.T + np.array([dx, dy]),
                    kind=p.kind, left_neighbor=p.left_neighbor,
                    right_neighbor=p.right_neighbor, successors=p.successors)
        for p in scene.road.polylines
    ]
    agents = [
        replace(a, track=Trajectory(states=tuple(
            AgentState(c * st.x - s * st.y + dx, s * st.x + c * st.y + dy,
                       st.heading + angle, st.speed)
            for st in a.track.states), dt=a.track.dt))
        for a in scene.agents
    ]
    return Scene(id=scene.id + "-transformed", agents=agents,
                 road=RoadMap(polylines), frame_rate_hz=scene.frame_rate_hz,
                 attrs=dict(scene.attrs))
