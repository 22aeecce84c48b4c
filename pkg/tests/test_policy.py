import math

import numpy as np
import pytest

from trajsteer.geometry import MapPolyline, PolylineKind
from trajsteer.policy import (AGENT_FEATURES, ForwardOutput, PolicyConfig,
                              SceneWindow, cross_entropy, encode_scene,
                              env_fusion, forward, fuse_scene, init_params,
                              losses, param_count, param_spec, softmax)

MICRO = PolicyConfig(embed_dim=4, env_fusion_repeats=1, temporal_layers=1,
                     head_count=1, d_a=9, d_c=8)


def micro_window(n_agents=2, n_frames=8, seed=0, offset=(0.0, 0.0)):
    rng = np.random.default_rng(seed)
    states = np.zeros((n_agents, n_frames, 4))
    for i in range(n_agents):
        x0, y0 = rng.uniform(-20, 20, 2)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(3, 12)
        for t in range(n_frames):
            states[i, t] = (x0 + offset[0] + t * speed * 0.1 * math.cos(heading),
                            y0 + offset[1] + t * speed * 0.1 * math.sin(heading),
                            heading, speed)
    lane = MapPolyline(id=1, points=np.array([[-50.0, 0.0], [50.0, 0.0]]) + offset,
                       kind=PolylineKind.LANE_CENTER)
    lane2 = MapPolyline(id=2, points=np.array([[-50.0, 3.5], [50.0, 3.5]]) + offset,
                        kind=PolylineKind.LANE_CENTER)
    return SceneWindow(states=states,
                       extents=np.tile([4.8, 2.1, 1.6], (n_agents, 1)),
                       types=np.zeros(n_agents, dtype=int),
                       polylines=(lane, lane2))


def rand_labels(rng, window, d):
    return rng.integers(0, d, size=(window.n_agents, window.n_frames))


def test_config_validation():
    with pytest.raises(ValueError, match="head_count"):
        PolicyConfig(embed_dim=6, head_count=4)
    with pytest.raises(ValueError, match="divide by 4"):
        PolicyConfig(embed_dim=8, head_count=4)
    with pytest.raises(ValueError, match="temporal layer"):
        PolicyConfig(temporal_layers=0)


def test_param_shapes_and_count():
    params = init_params(MICRO, seed=1)
    spec = param_spec(MICRO)
    assert set(params) == set(spec)
    for k, shape in spec.items():
        assert params[k].shape == shape
    assert param_count(params) == sum(np.prod(s) for s in spec.values())
    # every decision embedding starts at zero
    assert not params["meta.embed_shift"].any()
    for l in range(MICRO.temporal_layers + 1):
        assert not params[f"inject.embed{l}"].any()


def test_identical_agents_get_identical_tokens():
    win = micro_window(n_agents=2, seed=3)
    states = win.states.copy()
    states[1, :, 0:2] = states[0, :, 0:2] + 25.0   # same speeds, elsewhere
    states[1, :, 2] = states[0, :, 2]
    states[1, :, 3] = states[0, :, 3]
    win2 = SceneWindow(states=states, extents=win.extents, types=win.types,
                       polylines=win.polylines)
    params = init_params(MICRO, seed=0)
    tokens, _, _ = encode_scene(win2, params, MICRO)
    assert np.array_equal(tokens[0], tokens[1])


def test_translated_polyline_same_map_token():
    params = init_params(MICRO, seed=0)
    win_a = micro_window(seed=5)
    win_b = micro_window(seed=5, offset=(120.0, -40.0))
    _, map_a, _ = encode_scene(win_a, params, MICRO)
    _, map_b, _ = encode_scene(win_b, params, MICRO)
    assert np.allclose(map_a, map_b, atol=1e-12)


def test_shapes_from_config():
    params = init_params(MICRO, seed=0)
    win = micro_window(n_agents=3, n_frames=6)
    tokens, map_tokens, payloads = encode_scene(win, params, MICRO)
    assert tokens.shape == (3, 6, MICRO.embed_dim)
    assert map_tokens.shape == (2, MICRO.embed_dim)
    out = forward(win, np.zeros((3, 6), dtype=int), params, MICRO)
    assert out.action_logits.shape == (3, 6, MICRO.d_a)
    assert out.meta_logits.shape == (3, 6, MICRO.d_c)
    assert out.taps["t_env"].shape == (3, 6, MICRO.embed_dim)


def test_env_fusion_translation_invariance():
    params = init_params(MICRO, seed=2)
    base = micro_window(seed=7)
    moved = micro_window(seed=7, offset=(310.0, -95.0))
    t_env_a, _ = fuse_scene(base, params, MICRO)
    t_env_b, _ = fuse_scene(moved, params, MICRO)
    assert np.allclose(t_env_a, t_env_b, atol=1e-6)


def test_env_fusion_interaction_nonvacuous():
    params = init_params(MICRO, seed=2)
    win = micro_window(n_agents=2, seed=9)
    t_env, _ = fuse_scene(win, params, MICRO)
    states = win.states.copy()
    states[1, :, 3] = states[1, :, 3] + 2.0   # change only agent 1's speed
    win2 = SceneWindow(states=states, extents=win.extents, types=win.types,
                       polylines=win.polylines)
    t_env2, _ = fuse_scene(win2, params, MICRO)
    assert not np.allclose(t_env[0], t_env2[0], atol=1e-12)


def test_degenerate_single_agent_single_polyline():
    params = init_params(MICRO, seed=0)
    win = micro_window(n_agents=1, seed=1)
    win = SceneWindow(states=win.states, extents=win.extents[:1],
                      types=win.types[:1], polylines=win.polylines[:1])
    out = forward(win, np.zeros((1, win.n_frames), dtype=int), params, MICRO)
    assert np.all(np.isfinite(out.action_logits))


def test_causality_future_perturbations():
    params = init_params(MICRO, seed=4)
    rng = np.random.default_rng(0)
    win = micro_window(n_agents=2, n_frames=8, seed=11)
    meta = rand_labels(rng, win, MICRO.d_c)
    out = forward(win, meta, params, MICRO)
    cut = 5
    states = win.states.copy()
    states[:, cut:, :] = rng.normal(size=states[:, cut:, :].shape) * 5 + states[:, cut:, :]
    states[:, cut:, 3] = np.abs(states[:, cut:, 3])
    meta2 = meta.copy()
    meta2[:, cut:] = rng.integers(0, MICRO.d_c, size=meta2[:, cut:].shape)
    win2 = SceneWindow(states=states, extents=win.extents, types=win.types,
                       polylines=win.polylines)
    out2 = forward(win2, meta2, params, MICRO)
    # all logits strictly before the cut are bitwise unchanged
    assert np.array_equal(out.action_logits[:, :cut], out2.action_logits[:, :cut])
    assert np.array_equal(out.meta_logits[:, :cut], out2.meta_logits[:, :cut])
    assert np.array_equal(out.foundation_action_logits[:, :cut],
                          out2.foundation_action_logits[:, :cut])


def test_meta_shift_hides_current_decision_from_prediction():
    params = init_params(MICRO, seed=4)
    # nonzero embeddings so a leak would actually show
    params["meta.embed_shift"] = np.random.default_rng(1).normal(
        size=params["meta.embed_shift"].shape)
    win = micro_window(n_agents=2, n_frames=8, seed=13)
    rng = np.random.default_rng(2)
    meta = rand_labels(rng, win, MICRO.d_c)
    out = forward(win, meta, params, MICRO)
    t = 4
    meta2 = meta.copy()
    meta2[:, t] = (meta2[:, t] + 3) % MICRO.d_c
    out2 = forward(win, meta2, params, MICRO)
    # prediction at frame t blind to C_t; frames after t may differ
    assert np.array_equal(out.meta_logits[:, :t + 1], out2.meta_logits[:, :t + 1])
    assert not np.array_equal(out.meta_logits[:, t + 1:], out2.meta_logits[:, t + 1:])


def test_injection_uses_current_decision_for_action():
    params = init_params(MICRO, seed=4)
    params["inject.embed0"] = np.random.default_rng(3).normal(
        size=params["inject.embed0"].shape)
    win = micro_window(n_agents=2, n_frames=8, seed=13)
    meta = np.zeros((2, 8), dtype=int)
    out = forward(win, meta, params, MICRO)
    t = 4
    meta2 = meta.copy()
    meta2[:, t] = 5
    out2 = forward(win, meta2, params, MICRO)
    assert not np.array_equal(out.action_logits[:, t], out2.action_logits[:, t])
    assert np.array_equal(out.action_logits[:, :t], out2.action_logits[:, :t])


def test_meta_privacy_across_agents():
    params = init_params(MICRO, seed=6)
    for l in range(MICRO.temporal_layers + 1):
        params[f"inject.embed{l}"] = np.random.default_rng(l).normal(
            size=params[f"inject.embed{l}"].shape)
    params["meta.embed_shift"] = np.random.default_rng(9).normal(
        size=params["meta.embed_shift"].shape)
    win = micro_window(n_agents=3, n_frames=6, seed=15)
    rng = np.random.default_rng(4)
    meta = rand_labels(rng, win, MICRO.d_c)
    out = forward(win, meta, params, MICRO)
    meta2 = meta.copy()
    meta2[2, :] = (meta2[2, :] + 1) % MICRO.d_c   # perturb agent 2 only
    out2 = forward(win, meta2, params, MICRO)
    assert np.array_equal(out.action_logits[:2], out2.action_logits[:2])
    assert np.array_equal(out.meta_logits[:2], out2.meta_logits[:2])


def test_zero_injection_parity_bitwise():
    params = init_params(MICRO, seed=8)      # injection tables start at zero
    win = micro_window(n_agents=2, n_frames=7, seed=17)
    meta = np.full((2, 7), 3, dtype=int)
    out = forward(win, meta, params, MICRO)
    assert np.array_equal(out.action_logits, out.foundation_action_logits)
    params["inject.embed1"] = np.full_like(params["inject.embed1"], 0.05)
    out2 = forward(win, meta, params, MICRO)
    assert not np.array_equal(out2.action_logits, out2.foundation_action_logits)


def test_meta_history_validation():
    params = init_params(MICRO, seed=0)
    win = micro_window(n_agents=2, n_frames=5)
    with pytest.raises(ValueError, match="shape"):
        forward(win, np.zeros((2, 9), dtype=int), params, MICRO)
    with pytest.raises(ValueError, match="out of range"):
        forward(win, np.full((2, 5), 11), params, MICRO)


def test_losses_one_hot_uniform_and_oracle():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 9, size=(2, 6))
    one_hot = np.full((2, 6, 9), -1e6)
    np.put_along_axis(one_hot, labels[..., None], 1e6, axis=-1)
    assert cross_entropy(one_hot, labels) == pytest.approx(0.0, abs=1e-9)

    uniform = np.zeros((2, 6, 9))
    assert cross_entropy(uniform, labels) == pytest.approx(math.log(9), abs=1e-12)

    logits = rng.normal(size=(2, 6, 9))
    # definitional oracle
    want = 0.0
    for i in range(2):
        for t in range(6):
            z = logits[i, t]
            p = np.exp(z) / np.exp(z).sum()
            want += -math.log(p[labels[i, t]])
    want /= 12
    assert cross_entropy(logits, labels) == pytest.approx(want, rel=1e-12)

    with pytest.raises(ValueError, match="out of range"):
        cross_entropy(logits, labels + 9)

    valid = np.zeros((2, 6), dtype=bool)
    valid[0, 0] = True
    masked = cross_entropy(logits, labels, valid)
    z = logits[0, 0]
    p = np.exp(z) / np.exp(z).sum()
    assert masked == pytest.approx(-math.log(p[labels[0, 0]]), rel=1e-12)


def test_losses_triple_wiring():
    params = init_params(MICRO, seed=0)
    win = micro_window(n_agents=2, n_frames=6, seed=19)
    rng = np.random.default_rng(6)
    meta = rand_labels(rng, win, MICRO.d_c)
    actions = rand_labels(rng, win, MICRO.d_a)
    out = forward(win, meta, params, MICRO)
    l_found, l_pred, l_inj = losses(out, actions, meta)
    assert l_found == pytest.approx(l_inj)   # zero injection tables at init
    assert all(v > 0 for v in (l_found, l_pred, l_inj))


def test_softmax_rows_normalized():
    logits = np.random.default_rng(7).normal(size=(3, 5, 9)) * 3
    p = softmax(logits)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
