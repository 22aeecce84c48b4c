import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsteer.kinematics import (ActionGrid, AgentState, ControlAction,
                                  ctra_step, dequantize, quantize, rollout,
                                  wrap_angle)
from oracles import brute_force_nearest_bin, substep_integrate

DT = 0.1

finite_state = st.builds(
    AgentState,
    x=st.floats(-500, 500),
    y=st.floats(-500, 500),
    heading=st.floats(-math.pi, math.pi),
    speed=st.floats(0, 30),
)
finite_action = st.builds(
    ControlAction,
    acc=st.floats(-6, 6),
    yaw_rate=st.floats(-0.6, 0.6),
)


def test_uniform_straight_motion():
    s = ctra_step(AgentState(0, 0, 0, 10), ControlAction(0, 0), DT)
    assert s.x == pytest.approx(1.0, abs=1e-12)
    assert s.y == 0.0
    assert s.heading == 0.0
    assert s.speed == 10.0


def test_accelerate_from_rest():
    s = ctra_step(AgentState(0, 0, 0, 0), ControlAction(2, 0), DT)
    assert s.x == pytest.approx(0.01, abs=1e-12)   # v*dt + a*dt^2/2
    assert s.speed == pytest.approx(0.2, abs=1e-12)


def test_curved_step_matches_substepped_oracle():
    s = ctra_step(AgentState(0, 0, 0, 8), ControlAction(1.5, 0.4), DT)
    ox, oy, oth, ov = substep_integrate(0, 0, 0, 8, 1.5, 0.4, DT)
    assert abs(s.x - ox) <= 1e-6 and abs(s.y - oy) <= 1e-6
    assert abs(s.heading - oth) <= 1e-9
    assert s.speed == pytest.approx(ov, abs=1e-12)


def test_braking_through_zero_matches_oracle():
    # speed hits zero mid-step; translation must stop there
    s = ctra_step(AgentState(0, 0, 0.3, 0.4), ControlAction(-6, 0.5), DT)
    ox, oy, oth, ov = substep_integrate(0, 0, 0.3, 0.4, -6, 0.5, DT)
    assert abs(s.x - ox) <= 1e-6 and abs(s.y - oy) <= 1e-6
    assert s.speed == 0.0 and ov == 0.0
    assert s.heading == pytest.approx(oth, abs=1e-12)


def test_tiny_yaw_rate_continuity():
    # straight-line branch and exact form must agree across the threshold
    lo = ctra_step(AgentState(0, 0, 0.7, 12), ControlAction(2, 9e-7), DT)
    hi = ctra_step(AgentState(0, 0, 0.7, 12), ControlAction(2, 1.1e-6), DT)
    assert abs(lo.x - hi.x) < 1e-6 and abs(lo.y - hi.y) < 1e-6


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        AgentState(float("nan"), 0, 0, 1)
    with pytest.raises(ValueError):
        ControlAction(float("inf"), 0)
    with pytest.raises(ValueError):
        ctra_step(AgentState(0, 0, 0, 1), ControlAction(0, 0), 0.0)


@settings(max_examples=200, deadline=None)
@given(finite_state, finite_action)
def test_semigroup_half_steps(state, action):
    one = ctra_step(state, action, DT)
    half = ctra_step(ctra_step(state, action, DT / 2), action, DT / 2)
    assert abs(one.x - half.x) <= 1e-9
    assert abs(one.y - half.y) <= 1e-9
    assert abs(wrap_angle(one.heading - half.heading)) <= 1e-9
    assert abs(one.speed - half.speed) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(finite_state, finite_action, st.floats(-math.pi, math.pi))
def test_rotational_equivariance(state, action, phi):
    c, s = math.cos(phi), math.sin(phi)
    rotated_start = AgentState(
        c * state.x - s * state.y, s * state.x + c * state.y,
        wrap_angle(state.heading + phi), state.speed)
    stepped = ctra_step(state, action, DT)
    stepped_rot = ctra_step(rotated_start, action, DT)
    assert abs(stepped_rot.x - (c * stepped.x - s * stepped.y)) <= 1e-9
    assert abs(stepped_rot.y - (s * stepped.x + c * stepped.y)) <= 1e-9
    assert abs(wrap_angle(stepped_rot.heading - stepped.heading - phi)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(finite_state, finite_action, st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_translation_equivariance(state, action, tx, ty):
    stepped = ctra_step(state, action, DT)
    moved = ctra_step(AgentState(state.x + tx, state.y + ty,
                                 state.heading, state.speed), action, DT)
    assert moved.x == pytest.approx(stepped.x + tx, abs=1e-9)
    assert moved.y == pytest.approx(stepped.y + ty, abs=1e-9)


def test_rest_is_fixed_point():
    s0 = AgentState(3.0, -2.0, 1.2, 0.0)
    s1 = ctra_step(s0, ControlAction(0, 0), DT)
    assert (s1.x, s1.y, s1.heading, s1.speed) == (s0.x, s0.y, s0.heading, s0.speed)


def test_rollout_shapes_and_fold():
    with pytest.raises(ValueError):
        rollout(AgentState(0, 0, 0, 5), [], DT)
    traj = rollout(AgentState(0, 0, 0, 5), [ControlAction(0, 0)] * 10, DT)
    assert len(traj) == 11
    xs = [s.x for s in traj.states]
    assert np.allclose(np.diff(xs), 0.5)

    rng = np.random.default_rng(7)
    actions = [ControlAction(rng.uniform(-6, 6), rng.uniform(-0.6, 0.6))
               for _ in range(50)]
    start = AgentState(1, 2, 0.3, 9)
    traj = rollout(start, actions, DT)
    folded = start
    for a in actions:
        folded = ctra_step(folded, a, DT)
    assert traj.states[-1] == folded  # exact: same fold


def test_quantize_center_and_saturation():
    grid = ActionGrid()
    assert quantize(ControlAction(0, 0), grid) == 84  # (6, 6) of 13x13
    assert quantize(ControlAction(9.0, 0), grid) // 13 == 12
    assert quantize(ControlAction(-9.0, -2.0), grid) == 0


def test_quantize_matches_brute_force():
    grid = ActionGrid()
    acc_centers = [grid.acc_center(i) for i in range(grid.acc_bins)]
    yaw_centers = [grid.yaw_center(j) for j in range(grid.yaw_bins)]
    assert quantize(ControlAction(1.3, -0.22), grid) == \
        brute_force_nearest_bin(1.3, -0.22, acc_centers, yaw_centers)
    rng = np.random.default_rng(21)
    for _ in range(300):
        a = rng.uniform(-6.5, 6.5)
        w = rng.uniform(-0.65, 0.65)
        got = quantize(ControlAction(a, w), grid)
        want = brute_force_nearest_bin(
            min(6, max(-6, a)), min(0.6, max(-0.6, w)), acc_centers, yaw_centers)
        # skip exact midpoint ties; the tie rule is tested separately
        fa = (min(6, max(-6, a)) + 6) / grid.acc_step
        fw = (min(0.6, max(-0.6, w)) + 0.6) / grid.yaw_step
        if abs(fa - round(fa) + 0.5) > 1e-9 and abs(fw - round(fw) + 0.5) > 1e-9:
            assert got == want


def test_midpoint_ties_round_toward_center():
    grid = ActionGrid()
    # 0.5 is exactly between acc centers 0.0 (bin 6) and 1.0 (bin 7)
    assert quantize(ControlAction(0.5, 0), grid) // 13 == 6
    assert quantize(ControlAction(-0.5, 0), grid) // 13 == 6
    # exactly representable yaw step (1.5/12 = 0.125) for a true float tie
    grid2 = ActionGrid(yaw_range=(-0.75, 0.75))
    assert quantize(ControlAction(0, 0.0625), grid2) % 13 == 6
    assert quantize(ControlAction(0, -0.0625), grid2) % 13 == 6


def test_dequantize_corners_and_roundtrip():
    grid = ActionGrid()
    assert dequantize(84, grid) == ControlAction(0.0, 0.0)
    assert dequantize(0, grid) == ControlAction(-6.0, -0.6)
    for i in range(grid.size):
        assert quantize(dequantize(i, grid), grid) == i
    with pytest.raises(ValueError):
        dequantize(grid.size, grid)
    with pytest.raises(ValueError):
        ActionGrid(acc_bins=12)


@given(st.floats(-50, 50))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert abs(math.remainder(w - theta, 2 * math.pi)) < 1e-9
