"""Discrete control-action label extraction from observed trajectories.

For every frame a short rolling horizon of continuous (acc, yaw rate)
controls is optimized so the forward-simulated positions match the observed
ones; the first optimized control is projected to its nearest grid bin, the
simulated state advances with that *binned* control, and the window slides by
one frame.  Advancing with the quantized control keeps the emitted labels
self-consistent: replaying them through the kinematics reproduces the
reconstruction exactly.

The inner optimizer layers three cheap initializations (previous-frame warm
start, sequential one-step kinematic inversion, coarse-to-fine constant
-control grid search) and refines with Nelder-Mead on the full horizon
objective.  On trajectories that are exactly realizable from grid-center
actions, the inversion initializer already reaches the optimum and the
refinement is skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .kinematics import (ActionGrid, AgentState, ControlAction, Trajectory,
                         ctra_step, dequantize, quantize, wrap_angle)


@dataclass(frozen=True)
class FitConfig:
    horizon_k: int = 5
    max_iterations: int = 200          # Nelder-Mead cap per frame
    convergence_tol: float = 1e-9      # m, summed over the horizon
    coarse_grid_refinements: int = 2

    def __post_init__(self):
        if self.horizon_k < 1:
            raise ValueError("horizon_k must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True)
class FitResult:
    bin_indices: Tuple[int, ...]
    continuous_controls: Tuple[ControlAction, ...]
    per_step_residual: Tuple[float, ...]
    reconstructed: Trajectory
    converged: Tuple[bool, ...]


def _objective(controls: np.ndarray, start: AgentState,
               targets: Sequence[Tuple[float, float]], dt: float) -> float:
    """Sum of per-step position errors of the simulated horizon."""
    sim = start
    total = 0.0
    for i, (tx, ty) in enumerate(targets):
        sim = ctra_step(sim, ControlAction(controls[2 * i], controls[2 * i + 1]), dt)
        total += math.hypot(sim.x - tx, sim.y - ty)
    return total


def _greedy_inversion(start: AgentState, states: Sequence[AgentState],
                      dt: float) -> np.ndarray:
    """Per-step kinematic inversion: yaw rate from headings, acc from speeds.

    Exact whenever the observed transition is an unclamped CTRA step; used as
    the primary initializer.
    """
    sim = start
    out = np.empty(2 * len(states))
    for i, obs in enumerate(states):
        w = wrap_angle(obs.heading - sim.heading) / dt
        a = (obs.speed - sim.speed) / dt
        out[2 * i] = a
        out[2 * i + 1] = w
        sim = ctra_step(sim, ControlAction(a, w), dt)
    return out


def _coarse_to_fine(start: AgentState, targets: Sequence[Tuple[float, float]],
                    dt: float, grid: ActionGrid, refinements: int) -> np.ndarray:
    """Constant-control grid search, shrinking the search box each level.

    The first level is the bin lattice itself, which guarantees the final
    solution is never worse than the best single binned action.
    """
    h = len(targets)
    a_lo, a_hi = grid.acc_range
    w_lo, w_hi = grid.yaw_range
    levels = [(np.linspace(a_lo, a_hi, grid.acc_bins),
               np.linspace(w_lo, w_hi, grid.yaw_bins))]
    best = (float("inf"), 0.0, 0.0)
    for level in range(refinements + 1):
        if level > 0:
            a_span = (a_hi - a_lo) / 6.0
            w_span = (w_hi - w_lo) / 6.0
            a_lo, a_hi = best[1] - a_span, best[1] + a_span
            w_lo, w_hi = best[2] - w_span, best[2] + w_span
            levels.append((np.linspace(a_lo, a_hi, 7), np.linspace(w_lo, w_hi, 7)))
        accs, yaws = levels[level]
        for a in accs:
            for w in yaws:
                val = _objective(np.tile([a, w], h), start, targets, dt)
                if val < best[0]:
                    best = (val, a, w)
    return np.tile([best[1], best[2]], h)


def fit_controls(traj: Trajectory, grid: ActionGrid,
                 cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit one discrete control label per transition of a trajectory."""
    if len(traj) < 2:
        raise ValueError("need at least 2 states to fit controls")
    dt = traj.dt
    n_steps = len(traj) - 1

    bins: List[int] = []
    controls: List[ControlAction] = []
    residuals: List[float] = []
    converged: List[bool] = []
    recon: List[AgentState] = [traj.states[0]]

    sim = traj.states[0]
    prev_solution: np.ndarray | None = None

    for t in range(n_steps):
        h = min(cfg.horizon_k, n_steps - t)
        window_states = traj.states[t + 1:t + 1 + h]
        targets = [(s.x, s.y) for s in window_states]

        candidates = [_greedy_inversion(sim, window_states, dt)]
        if prev_solution is not None:
            warm = np.concatenate([prev_solution[2:], prev_solution[-2:]])[:2 * h]
            if len(warm) == 2 * h:
                candidates.append(warm)

        scored = [(_objective(c, sim, targets, dt), c) for c in candidates]
        scored.sort(key=lambda p: p[0])
        best_val, best = scored[0]

        ok = True
        if best_val > cfg.convergence_tol:
            coarse = _coarse_to_fine(sim, targets, dt, grid,
                                     cfg.coarse_grid_refinements)
            coarse_val = _objective(coarse, sim, targets, dt)
            if coarse_val < best_val:
                best_val, best = coarse_val, coarse
            # optimize in per-axis grid units so the simplex is isotropic
            scale = np.tile([max(grid.acc_step, 1e-9),
                             max(grid.yaw_step, 1e-9)], h)
            obj_scaled = lambda z: _objective(z * scale, sim, targets, dt)
            z = np.asarray(best, dtype=float) / scale
            for _ in range(2):  # one fresh-simplex restart fixes NM stalls
                res = minimize(obj_scaled, z, method="Nelder-Mead",
                               options={"maxiter": cfg.max_iterations * h,
                                        "xatol": 1e-8, "fatol": 1e-12})
                z = res.x
                if res.fun <= cfg.convergence_tol:
                    break
            if res.fun <= best_val:
                best_val, best = res.fun, z * scale
            else:
                ok = False  # refinement failed to improve; keep best found

        first = ControlAction(float(best[0]), float(best[1]))
        idx = quantize(first, grid)
        sim = ctra_step(sim, dequantize(idx, grid), dt)

        bins.append(idx)
        controls.append(first)
        obs = traj.states[t + 1]
        residuals.append(math.hypot(sim.x - obs.x, sim.y - obs.y))
        converged.append(ok)
        recon.append(sim)
        prev_solution = np.asarray(best, dtype=float)

    return FitResult(
        bin_indices=tuple(bins),
        continuous_controls=tuple(controls),
        per_step_residual=tuple(residuals),
        reconstructed=Trajectory(states=tuple(recon), dt=dt),
        converged=tuple(converged),
    )


def reconstruction_error(result: FitResult, traj: Trajectory) -> Tuple[float, float]:
    """Mean and max position error between reconstructed and observed states."""
    if len(result.reconstructed) != len(traj):
        raise ValueError(
            f"length mismatch: reconstructed {len(result.reconstructed)} "
            f"vs observed {len(traj)}")
    errs = [math.hypot(r.x - o.x, r.y - o.y)
            for r, o in zip(result.reconstructed.states, traj.states)]
    return float(np.mean(errs)), float(np.max(errs))
