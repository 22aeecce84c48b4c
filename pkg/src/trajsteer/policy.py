"""Desk-scale policy network in plain numpy.

The forward pass mirrors the staged architecture:

  scene encoders -> environment fusion (agent/map/cross attention, per frame)
                 -> causal temporal stack -> action head            (foundation)
                 -> meta branch: shifted decision embeddings + causal stack
                    -> meta head                                     (prediction)
                 -> action branch with per-layer decision embeddings
                    injected into the temporal stack                 (injection)

Key timing contracts, enforced structurally:

* token contents carry no absolute positions; coordinates and headings enter
  only through RoPE payloads, so rigid scene shifts cannot leak in;
* decision embeddings are injected after environment fusion, so one agent's
  decisions are invisible to every other agent;
* the meta branch sees decisions shifted one step back (zero vector first),
  so the prediction for frame t conditions only on decisions before t, while
  the injection branch uses the unshifted sequence (the decision at t steers
  the step out of t);
* all decision embedding tables start at zero, making the controllable
  forward bit-identical to the foundation forward until trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import MapPolyline
from .kinematics import ActionGrid
from .rope import (RopeSpec, RopeVariant, TokenBlock, attention, causal_mask)

N_AGENT_TYPES = 4
N_POLYLINE_KINDS = 4
AGENT_FEATURES = 4   # speed, length, width, height
MAP_POINT_FEATURES = 4  # local x, local y, local dir cos/sin


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 64
    env_fusion_repeats: int = 3
    temporal_layers: int = 3
    head_count: int = 4
    d_a: int = ActionGrid().size
    d_c: int = 8
    rope_base: float = 100.0

    def __post_init__(self):
        if self.temporal_layers < 1:
            raise ValueError("need at least one temporal layer")
        if self.embed_dim % self.head_count:
            raise ValueError("embed_dim must divide by head_count")
        if (self.embed_dim // self.head_count) % 4:
            raise ValueError("per-head dim must divide by 4 for 2D RoPE")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.head_count

    def spatial_head_specs(self) -> List[RopeSpec]:
        """Half the heads rotate by coordinates, half by heading."""
        half = self.head_count // 2
        return ([RopeSpec(RopeVariant.SPATIAL_2D, self.rope_base)] * (self.head_count - half)
                + [RopeSpec(RopeVariant.DIRECTIONAL, self.rope_base)] * half)

    def temporal_head_specs(self) -> List[RopeSpec]:
        return [RopeSpec(RopeVariant.TEMPORAL_1D, self.rope_base)] * self.head_count


@dataclass(frozen=True)
class SceneWindow:
    """Dense (agents x frames) slice of a scene, policy-facing."""

    states: np.ndarray      # (N, T, 4): x, y, heading, speed
    extents: np.ndarray     # (N, 3)
    types: np.ndarray       # (N,) agent-type codes
    polylines: Tuple[MapPolyline, ...]
    frame_index0: int = 0   # absolute index of the first frame (RoPE payload)

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    @property
    def n_frames(self) -> int:
        return self.states.shape[1]


@dataclass
class ForwardOutput:
    action_logits: np.ndarray             # (N, T, d_a), injection branch
    meta_logits: np.ndarray               # (N, T, d_c)
    foundation_action_logits: np.ndarray  # (N, T, d_a), no injection
    taps: Dict[str, np.ndarray]


def _linear_keys(prefix: str) -> List[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def param_spec(config: PolicyConfig) -> Dict[str, Tuple[int, ...]]:
    """Flat name -> shape map for every parameter tensor."""
    D, L = config.embed_dim, config.temporal_layers
    spec: Dict[str, Tuple[int, ...]] = {
        "agent_enc.w1": (AGENT_FEATURES, D), "agent_enc.b1": (D,),
        "agent_enc.w2": (D, D), "agent_enc.b2": (D,),
        "agent_enc.type_emb": (N_AGENT_TYPES, D),
        "map_enc.w1": (MAP_POINT_FEATURES, D), "map_enc.b1": (D,),
        "map_enc.w2": (2 * D, D), "map_enc.b2": (D,),
        "map_enc.kind_emb": (N_POLYLINE_KINDS, D),
        "action_head.w1": (D, D), "action_head.b1": (D,),
        "action_head.w2": (D, config.d_a), "action_head.b2": (config.d_a,),
        "meta.embed_shift": (config.d_c, D),
        "meta.head.w1": (D, D), "meta.head.b1": (D,),
        "meta.head.w2": (D, config.d_c), "meta.head.b2": (config.d_c,),
    }
    for r in range(config.env_fusion_repeats):
        for blk in ("agent", "map", "cross"):
            for k in _linear_keys(f"env{r}.{blk}"):
                spec[k] = (D, D)
    for l in range(L):
        for k in _linear_keys(f"temporal{l}"):
            spec[k] = (D, D)
        for k in _linear_keys(f"meta.temporal{l}"):
            spec[k] = (D, D)
    for l in range(L + 1):
        spec[f"inject.embed{l}"] = (config.d_c, D)
    return spec


FOUNDATION_PREFIXES = ("agent_enc.", "map_enc.", "env", "temporal", "action_head.")
META_PRED_PREFIX = "meta."
INJECT_PREFIX = "inject."


def is_foundation_key(name: str) -> bool:
    return name.startswith(FOUNDATION_PREFIXES)


def init_params(config: PolicyConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    """Random foundation weights; every decision embedding table starts at 0."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in param_spec(config).items():
        if name == "meta.embed_shift" or name.startswith(INJECT_PREFIX):
            params[name] = np.zeros(shape)
        elif name.endswith((".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            scale = 1.0 / math.sqrt(shape[0])
            params[name] = rng.normal(0.0, scale, size=shape)
    return params


def param_count(params: Dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _mlp2(x: np.ndarray, params: Dict[str, np.ndarray], prefix: str) -> np.ndarray:
    h = _relu(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return h @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def _split_heads(x: np.ndarray, n_heads: int) -> List[np.ndarray]:
    return list(np.split(x, n_heads, axis=-1))


def _mh_attention(x_q: np.ndarray, x_kv: np.ndarray,
                  params: Dict[str, np.ndarray], prefix: str,
                  head_specs: Sequence[RopeSpec],
                  q_payloads: Dict[RopeVariant, np.ndarray],
                  k_payloads: Dict[RopeVariant, np.ndarray],
                  mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Residual multi-head attention; each head runs its own RoPE variant."""
    q = x_q @ params[f"{prefix}.wq"]
    k = x_kv @ params[f"{prefix}.wk"]
    v = x_kv @ params[f"{prefix}.wv"]
    heads = []
    for hq, hk, hv, spec in zip(_split_heads(q, len(head_specs)),
                                _split_heads(k, len(head_specs)),
                                _split_heads(v, len(head_specs)), head_specs):
        res = attention(TokenBlock(hq, q_payloads[spec.variant]),
                        TokenBlock(hk, k_payloads[spec.variant]),
                        hv, spec, mask=mask)
        heads.append(res.output)
    out = np.concatenate(heads, axis=-1) @ params[f"{prefix}.wo"]
    return x_q + out


def _polyline_features(poly: MapPolyline) -> np.ndarray:
    """Per-point features in the polyline's local frame (midpoint origin,
    x-axis toward the next point), so absolute placement cancels out."""
    mid = np.array(poly.midpoint())
    ang = poly.direction_at_midpoint()
    c, s = math.cos(ang), math.sin(ang)
    rot = np.array([[c, s], [-s, c]])
    local = (poly.points - mid) @ rot.T
    seg = np.diff(poly.points, axis=0, append=poly.points[-1:] +
                  (poly.points[-1:] - poly.points[-2:-1]))
    seg_dir = seg / np.maximum(np.hypot(seg[:, :1], seg[:, 1:]), 1e-12)
    local_dir = seg_dir @ rot.T
    return np.concatenate([local, local_dir], axis=1)


_KIND_CODE = {"lane_center": 0, "lane_boundary": 1, "stop_line": 2, "other": 3}


def encode_scene(window: SceneWindow, params: Dict[str, np.ndarray],
                 config: PolicyConfig
                 ) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """Tokenize agents and map. Returns (agent tokens, map tokens, payloads).

    Token contents are position-free: agent tokens see only speed and body
    extents plus a type embedding; map tokens see local-frame point geometry
    pooled (mean and max) plus a kind embedding.
    """
    if window.n_agents == 0 or window.n_frames == 0:
        raise ValueError("empty scene window")
    N, T = window.n_agents, window.n_frames

    speed = window.states[..., 3:4]                       # (N, T, 1)
    ext = np.broadcast_to(window.extents[:, None, :], (N, T, 3))
    feats = np.concatenate([speed, ext], axis=-1)
    tokens = _mlp2(feats, params, "agent_enc")
    tokens = tokens + params["agent_enc.type_emb"][window.types][:, None, :]

    map_tokens = np.zeros((len(window.polylines), config.embed_dim))
    mids = np.zeros((len(window.polylines), 2))
    dirs = np.zeros(len(window.polylines))
    for i, poly in enumerate(window.polylines):
        pf = _polyline_features(poly)
        h = _relu(pf @ params["map_enc.w1"] + params["map_enc.b1"])
        pooled = np.concatenate([h.mean(axis=0), h.max(axis=0)])
        tok = pooled @ params["map_enc.w2"] + params["map_enc.b2"]
        map_tokens[i] = tok + params["map_enc.kind_emb"][_KIND_CODE[poly.kind.value]]
        mids[i] = poly.midpoint()
        dirs[i] = poly.direction_at_midpoint()

    payloads = {
        "agent_xy": window.states[..., 0:2],   # (N, T, 2)
        "agent_heading": window.states[..., 2],
        "map_xy": mids,
        "map_dir": dirs,
        "frame": window.frame_index0 + np.arange(T, dtype=float),
    }
    return tokens, map_tokens, payloads


def env_fusion(tokens: np.ndarray, map_tokens: np.ndarray,
               payloads: Dict[str, np.ndarray],
               params: Dict[str, np.ndarray], config: PolicyConfig) -> np.ndarray:
    """Per-frame agent/agent, map/map and agent->map attention, repeated."""
    specs = config.spatial_head_specs()
    # frame-batched agent views: (T, N, ...)
    x = np.swapaxes(tokens, 0, 1)
    agent_xy = np.swapaxes(payloads["agent_xy"], 0, 1)
    agent_h = np.swapaxes(payloads["agent_heading"], 0, 1)
    m = map_tokens
    K = m.shape[0]
    for r in range(config.env_fusion_repeats):
        agent_pay = {RopeVariant.SPATIAL_2D: agent_xy,
                     RopeVariant.DIRECTIONAL: agent_h}
        map_pay = {RopeVariant.SPATIAL_2D: payloads["map_xy"],
                   RopeVariant.DIRECTIONAL: payloads["map_dir"]}
        x = _mh_attention(x, x, params, f"env{r}.agent", specs,
                          agent_pay, agent_pay)
        m = _mh_attention(m, m, params, f"env{r}.map", specs, map_pay, map_pay)
        # agent->map cross attention, keys shared across the frame batch
        T = x.shape[0]
        m_b = np.broadcast_to(m, (T,) + m.shape)
        map_pay_b = {RopeVariant.SPATIAL_2D: np.broadcast_to(
                         payloads["map_xy"], (T, K, 2)),
                     RopeVariant.DIRECTIONAL: np.broadcast_to(
                         payloads["map_dir"], (T, K))}
        x = _mh_attention(x, m_b, params, f"env{r}.cross", specs,
                          agent_pay, map_pay_b)
    return np.swapaxes(x, 0, 1)  # back to (N, T, D)


def _temporal_stack(x: np.ndarray, payloads: Dict[str, np.ndarray],
                    params: Dict[str, np.ndarray], config: PolicyConfig,
                    prefix: str,
                    inject: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """Causal per-agent attention layers; optional pre-layer injections."""
    specs = config.temporal_head_specs()
    N, T, _ = x.shape
    frames = np.broadcast_to(payloads["frame"], (N, T))
    pay = {RopeVariant.TEMPORAL_1D: frames}
    mask = causal_mask(T)
    for l in range(config.temporal_layers):
        if inject is not None:
            x = x + inject[l]
        x = _mh_attention(x, x, params, f"{prefix}{l}", specs, pay, pay,
                          mask=mask)
    if inject is not None:
        x = x + inject[config.temporal_layers]
    return x


def _check_meta(meta: np.ndarray, N: int, T: int, d_c: int) -> np.ndarray:
    meta = np.asarray(meta)
    if meta.shape != (N, T):
        raise ValueError(f"meta history shape {meta.shape} != {(N, T)}")
    if meta.min() < 0 or meta.max() >= d_c:
        raise ValueError("meta history codes out of range")
    return meta.astype(int)


def _assert_finite(x: np.ndarray, tag: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activation in {tag}")
    return x


def fuse_scene(window: SceneWindow, params: Dict[str, np.ndarray],
               config: PolicyConfig) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Encoders plus environment fusion; the shared trunk of all branches."""
    tokens, map_tokens, payloads = encode_scene(window, params, config)
    t_env = env_fusion(tokens, map_tokens, payloads, params, config)
    return _assert_finite(t_env, "env_fusion"), payloads


def foundation_branch(t_env: np.ndarray, payloads: Dict[str, np.ndarray],
                      params: Dict[str, np.ndarray],
                      config: PolicyConfig) -> Tuple[np.ndarray, np.ndarray]:
    t_hist = _temporal_stack(t_env, payloads, params, config, "temporal")
    return _assert_finite(_mlp2(t_hist, params, "action_head"),
                          "action_head"), t_hist


def meta_branch(t_env: np.ndarray, meta: np.ndarray,
                payloads: Dict[str, np.ndarray],
                params: Dict[str, np.ndarray],
                config: PolicyConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Decision prediction: shifted embeddings, causal stack, meta head."""
    N, T, _ = t_env.shape
    meta = _check_meta(meta, N, T, config.d_c)
    emb = params["meta.embed_shift"][meta]          # (N, T, D)
    shifted = np.zeros_like(emb)
    shifted[:, 1:] = emb[:, :-1]                    # zero vector prepended
    t_c_env = t_env + shifted
    t_c_hist = _temporal_stack(t_c_env, payloads, params, config,
                               "meta.temporal")
    return _assert_finite(_mlp2(t_c_hist, params, "meta.head"),
                          "meta_head"), t_c_hist


def action_branch(t_env: np.ndarray, meta: np.ndarray,
                  payloads: Dict[str, np.ndarray],
                  params: Dict[str, np.ndarray],
                  config: PolicyConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Decision-conditioned control prediction via layerwise injection."""
    N, T, _ = t_env.shape
    meta = _check_meta(meta, N, T, config.d_c)
    inject = [params[f"inject.embed{l}"][meta]
              for l in range(config.temporal_layers + 1)]
    t_ma = _temporal_stack(t_env, payloads, params, config, "temporal",
                           inject=inject)
    return _assert_finite(_mlp2(t_ma, params, "action_head"),
                          "action_head"), t_ma


def forward(window: SceneWindow, meta_history: np.ndarray,
            params: Dict[str, np.ndarray], config: PolicyConfig) -> ForwardOutput:
    """Full forward pass: foundation, prediction and injection branches."""
    t_env, payloads = fuse_scene(window, params, config)
    found_logits, t_hist = foundation_branch(t_env, payloads, params, config)
    meta_logits, t_c_hist = meta_branch(t_env, meta_history, payloads,
                                        params, config)
    action_logits, t_ma = action_branch(t_env, meta_history, payloads,
                                        params, config)
    return ForwardOutput(
        action_logits=action_logits,
        meta_logits=meta_logits,
        foundation_action_logits=found_logits,
        taps={"t_env": t_env, "t_history": t_hist,
              "t_c_history": t_c_hist, "t_ma_history": t_ma},
    )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray,
                  valid: Optional[np.ndarray] = None) -> float:
    """Mean negative log-likelihood over valid (unpadded) entries."""
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("label out of range for logits")
    logp = log_softmax(logits)
    nll = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if not valid.any():
            raise ValueError("no valid entries in mask")
        return float(nll[valid].mean())
    return float(nll.mean())


def losses(output: ForwardOutput, action_labels: np.ndarray,
           meta_labels: np.ndarray,
           valid: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """(foundation CE, decision-prediction CE, decision-injection CE)."""
    l_found = cross_entropy(output.foundation_action_logits, action_labels, valid)
    l_pred = cross_entropy(output.meta_logits, meta_labels, valid)
    l_inj = cross_entropy(output.action_logits, action_labels, valid)
    return l_found, l_pred, l_inj
