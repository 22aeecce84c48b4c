"""Constant turn rate and acceleration (CTRA) kinematics.

An agent state is the planar pose plus scalar speed; a control action is an
(acceleration, yaw rate) pair held constant over one time step.  The step
update is the exact closed-form integral of the CTRA motion, evaluated in a
cancellation-free form so that it stays accurate for arbitrarily small yaw
rates.  Speed is clamped at zero (no reversing): if braking would drive the
speed negative within a step, translation stops at the zero crossing while
heading keeps integrating.

The module also owns the discrete control grid: a uniform (acc x yaw-rate)
lattice with odd bin counts so the zero action is always an exact bin center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

TWO_PI = 2.0 * math.pi

# Below this yaw rate (rad/s) the straight-line constant-acceleration limit
# is used directly; the stable closed form agrees to ~1e-18 at this scale.
YAW_RATE_EPS = 1e-6


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class AgentState:
    """Planar pose and speed of one agent at one frame."""

    x: float
    y: float
    heading: float  # rad, normalized to (-pi, pi]
    speed: float    # m/s, >= 0

    def __post_init__(self):
        for name in ("x", "y", "heading", "speed"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite AgentState field {name!r}: {v}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        object.__setattr__(self, "speed", max(0.0, self.speed))

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControlAction:
    """Acceleration (m/s^2) and yaw rate (rad/s) held constant for one step."""

    acc: float
    yaw_rate: float

    def __post_init__(self):
        if not (math.isfinite(self.acc) and math.isfinite(self.yaw_rate)):
            raise ValueError(f"non-finite ControlAction: {self}")


@dataclass(frozen=True)
class Trajectory:
    """Ordered agent states sampled at a fixed step dt."""

    states: Tuple[AgentState, ...]
    dt: float = 0.1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.states) < 1:
            raise ValueError("trajectory needs at least one state")
        object.__setattr__(self, "states", tuple(self.states))

    def __len__(self) -> int:
        return len(self.states)

    def positions(self) -> List[Tuple[float, float]]:
        return [(s.x, s.y) for s in self.states]


def _sinc(z: float) -> float:
    # sin(z)/z, series below 1e-3 where the direct quotient loses accuracy.
    if abs(z) < 1e-3:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return math.sin(z) / z


def _gc(phi: float) -> float:
    # int_0^1 u*cos(phi*u) du  =  (cos(phi) - 1 + phi*sin(phi)) / phi^2
    if abs(phi) < 1e-3:
        p2 = phi * phi
        return 0.5 - p2 / 8.0 + p2 * p2 / 144.0
    return (math.cos(phi) - 1.0 + phi * math.sin(phi)) / (phi * phi)


def _gs(phi: float) -> float:
    # int_0^1 u*sin(phi*u) du  =  (sin(phi) - phi*cos(phi)) / phi^2
    if abs(phi) < 1e-3:
        p2 = phi * phi
        return phi / 3.0 - phi * p2 / 30.0 + phi * p2 * p2 / 840.0
    return (math.sin(phi) - phi * math.cos(phi)) / (phi * phi)


def _displacement(v0: float, acc: float, heading: float, yaw_rate: float,
                  t: float) -> Tuple[float, float]:
    """Exact translation over [0, t] under constant controls.

    Computed as v0*t * <direction averaged over the swept arc> plus
    acc*t^2 * <first-moment direction integrals>; both factors are evaluated
    through series-protected helpers, so no 1/yaw_rate^2 cancellation occurs.
    """
    if abs(yaw_rate) < YAW_RATE_EPS:
        d = v0 * t + 0.5 * acc * t * t
        return d * math.cos(heading), d * math.sin(heading)
    phi = yaw_rate * t
    half = 0.5 * phi
    s_half = _sinc(half)
    gc = _gc(phi)
    gs = _gs(phi)
    ch, sh = math.cos(heading), math.sin(heading)
    dx = v0 * t * math.cos(heading + half) * s_half + acc * t * t * (ch * gc - sh * gs)
    dy = v0 * t * math.sin(heading + half) * s_half + acc * t * t * (sh * gc + ch * gs)
    return dx, dy


def ctra_step(state: AgentState, action: ControlAction, dt: float) -> AgentState:
    """Advance one state by one CTRA step of duration dt.

    Exact closed form.  If braking reaches zero speed inside the step,
    translation is integrated only up to the stopping time; heading still
    integrates over the full dt and speed clamps at zero.
    """
    if not 0.0 < dt <= 1.0:
        raise ValueError(f"dt must be in (0, 1], got {dt}")
    v1 = state.speed + action.acc * dt
    t_move = dt
    if v1 < 0.0:
        # action.acc < 0 is implied; stop at the zero crossing.
        t_move = state.speed / -action.acc
        v1 = 0.0
    dx, dy = _displacement(state.speed, action.acc, state.heading,
                           action.yaw_rate, t_move)
    return AgentState(
        x=state.x + dx,
        y=state.y + dy,
        heading=wrap_angle(state.heading + action.yaw_rate * dt),
        speed=v1,
    )


def rollout(start: AgentState, actions: Sequence[ControlAction],
            dt: float = 0.1) -> Trajectory:
    """Iterate ctra_step over an action sequence.

    Output has len(actions) + 1 states and begins with `start`.
    """
    if len(actions) == 0:
        raise ValueError("rollout requires a nonempty action sequence")
    states = [start]
    for a in actions:
        states.append(ctra_step(states[-1], a, dt))
    return Trajectory(states=tuple(states), dt=dt)


@dataclass(frozen=True)
class ActionGrid:
    """Uniform joint discretization of the (acc, yaw rate) plane.

    Bin counts must be odd so (0, 0) is an exact center.  Joint index is
    acc_index * yaw_bins + yaw_index.
    """

    acc_bins: int = 13
    yaw_bins: int = 13
    acc_range: Tuple[float, float] = (-6.0, 6.0)
    yaw_range: Tuple[float, float] = (-0.6, 0.6)

    def __post_init__(self):
        for name, n in (("acc_bins", self.acc_bins), ("yaw_bins", self.yaw_bins)):
            if n < 1 or n % 2 == 0:
                raise ValueError(f"{name} must be a positive odd count, got {n}")
        for name, (lo, hi) in (("acc_range", self.acc_range),
                               ("yaw_range", self.yaw_range)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid {name}: {(lo, hi)}")

    @property
    def size(self) -> int:
        """Total joint bin count d_a."""
        return self.acc_bins * self.yaw_bins

    @property
    def acc_step(self) -> float:
        return (self.acc_range[1] - self.acc_range[0]) / (self.acc_bins - 1) \
            if self.acc_bins > 1 else 0.0

    @property
    def yaw_step(self) -> float:
        return (self.yaw_range[1] - self.yaw_range[0]) / (self.yaw_bins - 1) \
            if self.yaw_bins > 1 else 0.0

    def acc_center(self, i: int) -> float:
        return self.acc_range[0] + i * self.acc_step

    def yaw_center(self, j: int) -> float:
        return self.yaw_range[0] + j * self.yaw_step

    def centers(self) -> List[ControlAction]:
        """All d_a bin centers in joint-index order."""
        return [ControlAction(self.acc_center(i), self.yaw_center(j))
                for i in range(self.acc_bins) for j in range(self.yaw_bins)]


def _axis_index(value: float, lo: float, step: float, count: int) -> int:
    """Nearest bin on one axis; exact midpoint ties round toward the center bin."""
    if count == 1:
        return 0
    f = (value - lo) / step
    if f <= 0.0:
        return 0
    if f >= count - 1:
        return count - 1
    lower = math.floor(f)
    frac = f - lower
    if frac > 0.5:
        return lower + 1
    if frac < 0.5:
        return lower
    center = (count - 1) // 2
    return lower if abs(lower - center) <= abs(lower + 1 - center) else lower + 1


def quantize(action: ControlAction, grid: ActionGrid) -> int:
    """Joint bin index of the nearest grid center after clamping to range."""
    i = _axis_index(action.acc, grid.acc_range[0], grid.acc_step, grid.acc_bins)
    j = _axis_index(action.yaw_rate, grid.yaw_range[0], grid.yaw_step, grid.yaw_bins)
    return i * grid.yaw_bins + j


def dequantize(index: int, grid: ActionGrid) -> ControlAction:
    """Bin center for a joint index."""
    if not 0 <= index < grid.size:
        raise ValueError(f"bin index {index} out of range [0, {grid.size})")
    i, j = divmod(index, grid.yaw_bins)
    return ControlAction(grid.acc_center(i), grid.yaw_center(j))
