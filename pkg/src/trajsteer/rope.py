"""Rotary position embeddings and the attention primitive built on them.

Three variants rotate consecutive 2-slices of each token:

* temporal_1d  - slice i rotates by p * theta_i, theta_i = base^(-2i/d);
* spatial_2d   - 4-groups; the first pair of group i rotates by x * theta_i,
                 the second by y * theta_i, encoding both coordinates at once;
* directional  - every slice rotates by the raw heading angle (unit
                 frequency), keeping exact 2*pi periodicity.

Because rotations compose subtractively under dot products, attention scores
between rotated queries and keys depend only on relative positions.  The
frequency base defaults to 100.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

DEFAULT_BASE = 100.0


class RopeVariant(enum.Enum):
    TEMPORAL_1D = "temporal_1d"
    SPATIAL_2D = "spatial_2d"
    DIRECTIONAL = "directional"


@dataclass(frozen=True)
class RopeSpec:
    variant: RopeVariant
    base: float = DEFAULT_BASE

    def __post_init__(self):
        if self.base <= 1:
            raise ValueError("frequency base must exceed 1")


@dataclass(frozen=True)
class TokenBlock:
    """Tokens plus the positional payload their rotations are driven by."""

    tokens: np.ndarray      # (..., q, d)
    positions: np.ndarray   # (..., q) scalar/heading or (..., q, 2) spatial


def _rotate_pairs(tokens: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate each (2i, 2i+1) slice by its own angle."""
    x = tokens[..., 0::2]
    y = tokens[..., 1::2]
    c = np.cos(angles)
    s = np.sin(angles)
    out = np.empty_like(tokens)
    out[..., 0::2] = c * x - s * y
    out[..., 1::2] = s * x + c * y
    return out


def _frequencies(d: int, n_freq: int, base: float) -> np.ndarray:
    # theta_i = base^(-2i/d), i = 1..n_freq
    i = np.arange(1, n_freq + 1, dtype=float)
    return base ** (-2.0 * i / d)


def rope_1d(tokens: np.ndarray, positions: np.ndarray,
            base: float = DEFAULT_BASE) -> np.ndarray:
    """Rotate each 2-slice i by p * theta_i."""
    d = tokens.shape[-1]
    if d % 2:
        raise ValueError(f"token dim must be even for 1D RoPE, got {d}")
    theta = _frequencies(d, d // 2, base)
    angles = np.asarray(positions, dtype=float)[..., None] * theta
    return _rotate_pairs(tokens, angles)


def rope_2d(tokens: np.ndarray, positions: np.ndarray,
            base: float = DEFAULT_BASE) -> np.ndarray:
    """Rotate 4-groups: pair (4i-3, 4i-2) by x * theta_i, (4i-1, 4i) by y * theta_i."""
    d = tokens.shape[-1]
    if d % 4:
        raise ValueError(f"token dim must be divisible by 4 for 2D RoPE, got {d}")
    pos = np.asarray(positions, dtype=float)
    if pos.shape[-1] != 2:
        raise ValueError("2D RoPE needs (x, y) positions")
    theta = _frequencies(d, d // 4, base)
    angles = np.empty(tokens.shape[:-1] + (d // 2,))
    angles[..., 0::2] = pos[..., 0:1] * theta
    angles[..., 1::2] = pos[..., 1:2] * theta
    return _rotate_pairs(tokens, angles)


def rope_directional(tokens: np.ndarray, headings: np.ndarray) -> np.ndarray:
    """Rotate every 2-slice by the raw heading (unit frequency)."""
    d = tokens.shape[-1]
    if d % 2:
        raise ValueError(f"token dim must be even for directional RoPE, got {d}")
    h = np.asarray(headings, dtype=float)[..., None]
    angles = np.broadcast_to(h, tokens.shape[:-1] + (d // 2,))
    return _rotate_pairs(tokens, angles)


def apply_rope(tokens: np.ndarray, positions: np.ndarray,
               spec: RopeSpec) -> np.ndarray:
    if spec.variant == RopeVariant.TEMPORAL_1D:
        return rope_1d(tokens, positions, spec.base)
    if spec.variant == RopeVariant.SPATIAL_2D:
        return rope_2d(tokens, positions, spec.base)
    return rope_directional(tokens, positions)


class AttentionResult(NamedTuple):
    output: np.ndarray        # (..., q, d_v)
    scores: np.ndarray        # (..., q, k) post-softmax weights
    fully_masked: np.ndarray  # (..., q) rows with no unmasked key


def attention(query: TokenBlock, key: TokenBlock, value: np.ndarray,
              spec: RopeSpec, mask: Optional[np.ndarray] = None,
              scale: Optional[float] = None) -> AttentionResult:
    """Scaled dot-product attention over RoPE-rotated queries and keys.

    `mask` entries are True where attention is allowed.  A row with every key
    masked yields a zero output vector and is reported in `fully_masked`
    (softmax over an empty support is undefined, so no weights are invented).
    """
    q = apply_rope(query.tokens, query.positions, spec)
    k = apply_rope(key.tokens, key.positions, spec)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(
            f"query/key dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != value.shape[-2]:
        raise ValueError(
            f"key/value counts differ: {k.shape[-2]} vs {value.shape[-2]}")
    d = q.shape[-1]
    if scale is None:
        scale = 1.0 / np.sqrt(d)
    logits = np.einsum("...qd,...kd->...qk", q, k) * scale

    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        logits = np.where(mask, logits, -np.inf)
        fully_masked = ~mask.any(axis=-1)
    else:
        fully_masked = np.zeros(logits.shape[:-1], dtype=bool)

    # stable softmax; fully masked rows are patched to zero afterwards
    peak = np.max(logits, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    w = np.exp(logits - peak)
    w = np.where(np.isfinite(logits), w, 0.0)
    denom = w.sum(axis=-1, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    scores = w / safe
    out = np.einsum("...qk,...kv->...qv", scores, value)
    out = np.where(fully_masked[..., None], 0.0, out)
    return AttentionResult(output=out, scores=scores, fully_masked=fully_masked)


def causal_mask(n: int) -> np.ndarray:
    """(n, n) lower-triangular mask: position t attends to keys <= t."""
    return np.tril(np.ones((n, n), dtype=bool))
