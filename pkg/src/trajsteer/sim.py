"""Closed-loop autoregressive rollout with decision injection.

Each step performs the two-stage factorization: the policy's decision head is
evaluated on the current histories, the frame's decision is sampled from it
(or forced by an override), and only then is the control head evaluated
conditioned on that decision.  The sampled control bin advances the exact
kinematics and both histories grow by one frame.

Overrides are persistent: once set for an agent they force every subsequent
frame's decision until explicitly released, at which point the policy's own
prediction resumes.  Every step emits a full record (decision and control
distributions, chosen values, the injected flag, the resulting state) so a
rollout is replayable and auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kinematics import (ActionGrid, AgentState, Trajectory, ctra_step,
                         dequantize)
from .labeler import (DEFAULT_WINDOW_N, LabelThresholds, MetaAction,
                      label_trajectory)
from .policy import (PolicyConfig, SceneWindow, action_branch,
                     foundation_branch, fuse_scene, meta_branch, softmax)
from .scene import AgentType, Scene

_TYPE_CODE = {AgentType.VEHICLE: 0, AgentType.PEDESTRIAN: 1,
              AgentType.CYCLIST: 2, AgentType.OTHER: 3}


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 80            # generated frames
    warmup: int = 10             # history frames consumed from the scene
    window: int = 20             # max frames fed to the policy per step
    temperature: float = 1.0
    label_window_n: int = DEFAULT_WINDOW_N   # for warmup decision labeling
    foundation_agents: Tuple[int, ...] = () # agents driven without decisions

    def __post_init__(self):
        if self.horizon < 1 or self.warmup < 2 or self.window < 2:
            raise ValueError("horizon >= 1, warmup >= 2, window >= 2 required")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class AgentStep:
    meta: MetaAction
    meta_dist: np.ndarray     # (d_c,) model decision distribution
    injected: bool
    action_bin: int
    action_dist: np.ndarray   # (d_a,) model control distribution
    state: AgentState         # state after applying the sampled control


@dataclass(frozen=True)
class StepRecord:
    frame: int
    agents: Dict[int, AgentStep]


class HorizonReached(RuntimeError):
    pass


class RolloutSession:
    """One live rollout; step() is strictly sequential per session."""

    def __init__(self, session_id: str, scene: Scene,
                 params: Dict[str, np.ndarray], policy_config: PolicyConfig,
                 grid: ActionGrid, config: SimConfig, seed: int,
                 thresholds: LabelThresholds = LabelThresholds()):
        if not scene.agents:
            raise ValueError("scene has no agents")
        if scene.n_frames() < config.warmup:
            raise ValueError(
                f"scene provides {scene.n_frames()} frames; warmup needs "
                f"{config.warmup}")
        if grid.size != policy_config.d_a:
            raise ValueError(
                f"grid size {grid.size} != policy d_a {policy_config.d_a}")
        self.session_id = session_id
        self.scene = scene
        self.params = params
        self.policy_config = policy_config
        self.grid = grid
        self.config = config
        self.seed = seed
        self.thresholds = thresholds
        self.rng = np.random.default_rng(seed)
        self.agent_ids = [a.id for a in scene.agents]
        self.current_frame = 0
        self.records: List[StepRecord] = []
        self.overrides: Dict[int, MetaAction] = {}
        self.override_log: List[Tuple[int, int, Optional[str]]] = []

        # warmup histories; the decision history trails the states by one
        # frame because the newest frame's decision is what step() chooses
        self.states: Dict[int, List[AgentState]] = {}
        self.metas: Dict[int, List[int]] = {}
        for agent in scene.agents:
            warm = list(agent.track.states[:config.warmup])
            self.states[agent.id] = warm
            warm_traj = Trajectory(states=tuple(warm), dt=scene.dt)
            labels = label_trajectory(warm_traj, scene.road, thresholds,
                                      config.label_window_n)
            self.metas[agent.id] = [m.index for m in labels[:-1]]

    # -- helpers ---------------------------------------------------------

    def history_length(self) -> int:
        return self.config.warmup + self.current_frame

    def _window(self) -> Tuple[SceneWindow, np.ndarray]:
        """Policy window over the most recent frames plus its decision array.

        The last frame's decision slot is filled with 0; the decision head is
        blind to it by the one-step shift, and the control pass overwrites it
        with the chosen decision.
        """
        W = min(self.config.window, self.history_length())
        lo = self.history_length() - W
        n = len(self.agent_ids)
        states = np.zeros((n, W, 4))
        metas = np.zeros((n, W), dtype=int)
        extents = np.zeros((n, 3))
        types = np.zeros(n, dtype=int)
        for i, aid in enumerate(self.agent_ids):
            for j, s in enumerate(self.states[aid][lo:]):
                states[i, j] = (s.x, s.y, s.heading, s.speed)
            hist = self.metas[aid][lo:]
            metas[i, :len(hist)] = hist
            agent = self.scene.agent(aid)
            extents[i] = (agent.extents.length, agent.extents.width,
                          agent.extents.height)
            types[i] = _TYPE_CODE[agent.type]
        window = SceneWindow(states=states, extents=extents, types=types,
                             polylines=self.scene.road.polylines,
                             frame_index0=lo)
        return window, metas

    def _sample(self, logits: np.ndarray) -> int:
        t = self.config.temperature
        if t <= 1e-9:
            return int(np.argmax(logits))
        p = softmax(logits / t)
        p = p / p.sum()
        return int(self.rng.choice(len(p), p=p))

    # -- stepping --------------------------------------------------------

    def apply_overrides(self, overrides: Dict[int, Optional[MetaAction]]) -> None:
        """Set (meta-action) or release (None) persistent decision forcing."""
        for aid, meta in overrides.items():
            if aid not in self.states:
                raise KeyError(f"unknown agent {aid}")
            if meta is None:
                self.overrides.pop(aid, None)
            else:
                self.overrides[aid] = meta
            self.override_log.append(
                (self.current_frame, aid, None if meta is None else meta.code))

    def step(self, overrides: Optional[Dict[int, Optional[MetaAction]]] = None
             ) -> StepRecord:
        if self.current_frame >= self.config.horizon:
            raise HorizonReached(
                f"session {self.session_id} already at horizon "
                f"{self.config.horizon}")
        if overrides:
            self.apply_overrides(overrides)

        window, meta_arr = self._window()
        try:
            t_env, payloads = fuse_scene(window, self.params, self.policy_config)
            meta_logits, _ = meta_branch(t_env, meta_arr, payloads,
                                         self.params, self.policy_config)
        except FloatingPointError as e:
            raise FloatingPointError(
                f"frame {self.current_frame}: {e}") from None

        # stage one: decide, per agent, before any control is evaluated
        chosen: Dict[int, Tuple[MetaAction, bool]] = {}
        for i, aid in enumerate(self.agent_ids):
            if aid in self.overrides:
                meta, injected = self.overrides[aid], True
            else:
                meta = MetaAction.from_index(self._sample(meta_logits[i, -1]))
                injected = False
            chosen[aid] = (meta, injected)
            meta_arr[i, -1] = meta.index

        # stage two: control conditioned on the chosen decisions
        try:
            action_logits, _ = action_branch(t_env, meta_arr, payloads,
                                             self.params, self.policy_config)
            found_logits, _ = foundation_branch(t_env, payloads, self.params,
                                                self.policy_config)
        except FloatingPointError as e:
            raise FloatingPointError(
                f"frame {self.current_frame}: {e}") from None

        agents: Dict[int, AgentStep] = {}
        for i, aid in enumerate(self.agent_ids):
            logits = (found_logits if aid in self.config.foundation_agents
                      else action_logits)[i, -1]
            bin_idx = self._sample(logits)
            new_state = ctra_step(self.states[aid][-1],
                                  dequantize(bin_idx, self.grid),
                                  self.scene.dt)
            meta, injected = chosen[aid]
            self.states[aid].append(new_state)
            self.metas[aid].append(meta.index)
            agents[aid] = AgentStep(
                meta=meta,
                meta_dist=softmax(meta_logits[i, -1]),
                injected=injected,
                action_bin=bin_idx,
                action_dist=softmax(logits),
                state=new_state,
            )
        record = StepRecord(frame=self.current_frame, agents=agents)
        self.records.append(record)
        self.current_frame += 1
        return record

    def run_to_horizon(self) -> List[StepRecord]:
        while self.current_frame < self.config.horizon:
            self.step()
        return self.records

    def trajectory(self, agent_id: int, include_warmup: bool = True) -> Trajectory:
        states = self.states[agent_id]
        if not include_warmup:
            states = states[self.config.warmup - 1:]  # keep the seam state
        return Trajectory(states=tuple(states), dt=self.scene.dt)

    def meta_history(self, agent_id: int) -> List[MetaAction]:
        return [MetaAction.from_index(i) for i in self.metas[agent_id]]

    def reset(self) -> None:
        """Rewind to frame 0 with a fresh generator seeded as at creation."""
        self.__init__(self.session_id, self.scene, self.params,
                      self.policy_config, self.grid, self.config, self.seed,
                      self.thresholds)


def create_session(scene: Scene, params: Dict[str, np.ndarray],
                   policy_config: PolicyConfig, grid: ActionGrid,
                   config: SimConfig = SimConfig(), seed: int = 0,
                   session_id: str = "session-0",
                   thresholds: LabelThresholds = LabelThresholds()
                   ) -> RolloutSession:
    return RolloutSession(session_id, scene, params, policy_config, grid,
                          config, seed, thresholds)


def rollout_batch(scene: Scene, params: Dict[str, np.ndarray],
                  policy_config: PolicyConfig, grid: ActionGrid,
                  config: SimConfig = SimConfig(), k: int = 1, seed: int = 0,
                  overrides: Optional[Dict[int, Dict[int, MetaAction]]] = None
                  ) -> List[RolloutSession]:
    """K independent sessions run to the horizon.

    `overrides` maps frame -> {agent -> decision} and is applied to every
    sample identically.  Per-sample seeds derive deterministically from the
    base seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    child_seeds = np.random.SeedSequence(seed).generate_state(k)
    sessions = []
    for i in range(k):
        s = create_session(scene, params, policy_config, grid, config,
                           seed=int(child_seeds[i]), session_id=f"sample-{i}")
        while s.current_frame < config.horizon:
            frame_overrides = (overrides or {}).get(s.current_frame)
            s.step(frame_overrides)
        sessions.append(s)
    return sessions
