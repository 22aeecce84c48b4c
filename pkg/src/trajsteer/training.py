"""Micro-scale staged fitting with finite-difference gradients.

Three stages mirror the staged training recipe: the foundation stage fits
control prediction, then the decision-prediction and decision-injection
stages fit only their own modules while every foundation weight stays frozen
(bit-identical before and after).  Gradients come from central finite
differences, which caps practical problem sizes; the stage preconditions
enforce a micro configuration (at most 200 trainable scalars).

Steps use backtracking on the stage loss: a proposed update is only accepted
if it does not increase the loss, so the returned curve is non-increasing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .policy import (ForwardOutput, PolicyConfig, SceneWindow, cross_entropy,
                     forward, is_foundation_key)

MAX_TRAINABLE = 200


class Stage(enum.Enum):
    FOUNDATION = "foundation"
    MA_PREDICTION = "ma_prediction"
    MA_INJECTION = "ma_injection"


@dataclass(frozen=True)
class MicroScene:
    """One training item: a window plus per-frame labels and validity."""

    window: SceneWindow
    action_labels: np.ndarray   # (N, T) bin indices
    meta_labels: np.ndarray     # (N, T) decision indices
    valid: np.ndarray           # (N, T) bool


DEFAULT_TRAINABLE = {
    Stage.FOUNDATION: ("action_head.",),
    Stage.MA_PREDICTION: ("meta.",),
    Stage.MA_INJECTION: ("inject.",),
}


def stage_loss(stage: Stage, output: ForwardOutput, item: MicroScene) -> float:
    if stage == Stage.FOUNDATION:
        return cross_entropy(output.foundation_action_logits,
                             item.action_labels, item.valid)
    if stage == Stage.MA_PREDICTION:
        return cross_entropy(output.meta_logits, item.meta_labels, item.valid)
    return cross_entropy(output.action_logits, item.action_labels, item.valid)


def trainable_keys(stage: Stage, params: Dict[str, np.ndarray],
                   prefixes: Optional[Sequence[str]] = None) -> List[str]:
    prefixes = tuple(prefixes) if prefixes else DEFAULT_TRAINABLE[stage]
    keys = sorted(k for k in params if k.startswith(prefixes))
    if not keys:
        raise ValueError(f"no parameters match prefixes {prefixes}")
    if stage != Stage.FOUNDATION:
        bad = [k for k in keys if is_foundation_key(k)]
        if bad:
            raise ValueError(
                f"stage {stage.value} must not touch foundation keys: {bad}")
    return keys


def micro_fit(dataset: Sequence[MicroScene], stage: Stage,
              params: Dict[str, np.ndarray], config: PolicyConfig,
              steps: int = 100, lr: float = 0.5, fd_eps: float = 1e-5,
              trainable: Optional[Sequence[str]] = None
              ) -> Tuple[Dict[str, np.ndarray], List[float]]:
    """Fit stage parameters; returns (new params, loss curve incl. start).

    The input dict is never mutated.  Frozen tensors are carried over as
    copies, so the caller can verify bitwise equality independently.
    """
    if not dataset:
        raise ValueError("empty dataset")
    params = {k: v.copy() for k, v in params.items()}
    keys = trainable_keys(stage, params, trainable)
    n_trainable = int(sum(params[k].size for k in keys))
    if n_trainable > MAX_TRAINABLE:
        raise ValueError(
            f"{n_trainable} trainable scalars exceed the micro budget of "
            f"{MAX_TRAINABLE}; shrink the config or the trainable set")

    def total_loss(p: Dict[str, np.ndarray]) -> float:
        return float(np.mean([
            stage_loss(stage, forward(it.window, it.meta_labels, p, config), it)
            for it in dataset]))

    def fd_gradient(p: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        grads: Dict[str, np.ndarray] = {}
        for k in keys:
            g = np.zeros_like(p[k])
            flat = p[k].reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + fd_eps
                up = total_loss(p)
                flat[i] = orig - fd_eps
                down = total_loss(p)
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * fd_eps)
            grads[k] = g
        return grads

    curve = [total_loss(params)]
    step_lr = lr
    for _ in range(steps):
        grads = fd_gradient(params)
        accepted = False
        trial_lr = step_lr
        for _attempt in range(8):
            trial = {k: (v - trial_lr * grads[k] if k in grads else v)
                     for k, v in params.items()}
            loss = total_loss(trial)
            if loss <= curve[-1]:
                params = trial
                curve.append(loss)
                accepted = True
                step_lr = min(trial_lr * 1.5, lr)  # relax back toward base lr
                break
            trial_lr *= 0.5
        if not accepted:
            curve.append(curve[-1])  # keep current point; curve stays monotone
            step_lr = trial_lr
    return params, curve
