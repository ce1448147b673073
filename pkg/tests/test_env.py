"""Lane-change game: rewards, episode lifecycle, termination."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanegame.dynamics import ControlInput, Disturbance, VehicleParams, VehicleState
from lanegame.env import (
    SEMI_COMPETITIVE,
    ZERO_SUM,
    AdversaryRewardConfig,
    EnvConfig,
    GameState,
    adversary_reward,
    cooperative_reward,
    is_terminal,
    observe,
    protagonist_reward,
    reset,
    reward_actuation,
    reward_heading,
    reward_lateral,
    reward_velocity,
    step,
)
from lanegame.errors import ConfigError, ContractViolationError

CFG = EnvConfig()
ARC = AdversaryRewardConfig()
PARAMS = VehicleParams()
DEG = math.radians


def make_state(y=0.0, v=10.0, theta=0.0, target_lane=1, prev_steer=0.0, step_count=0):
    return GameState(
        vehicle=VehicleState(0.0, y, v, theta),
        target_lane=target_lane,
        prev_steer=prev_steer,
        step=step_count,
    )


class TestRewardVelocity:
    def test_endpoints_base_ten(self):
        assert reward_velocity(0.0, CFG) == pytest.approx(math.log10(0.99) - 1, abs=1e-12)
        assert reward_velocity(0.0, CFG) == pytest.approx(-1.0044, abs=1e-3)
        assert reward_velocity(20.0, CFG) == pytest.approx(math.log10(100.99) - 1, abs=1e-12)
        assert reward_velocity(20.0, CFG) == pytest.approx(1.0043, abs=1e-3)

    def test_midpoint(self):
        assert reward_velocity(10.0, CFG) == pytest.approx(math.log10(50.99) - 1, abs=1e-12)
        assert reward_velocity(10.0, CFG) == pytest.approx(0.7075, abs=1e-3)

    def test_clamps_out_of_range_speeds(self):
        assert reward_velocity(-5.0, CFG) == reward_velocity(0.0, CFG)
        assert reward_velocity(50.0, CFG) == reward_velocity(20.0, CFG)

    def test_strictly_increasing_and_bounded(self):
        vs = np.linspace(CFG.v_min, CFG.v_max, 500)
        rs = [reward_velocity(v, CFG) for v in vs]
        assert all(b > a for a, b in zip(rs, rs[1:]))
        assert all(-1.005 <= r <= 1.005 for r in rs)

    def test_bad_base_rejected_at_construction(self):
        with pytest.raises(ConfigError):
            EnvConfig(v_min=0.0, v_max=2.0)


class TestRewardHeading:
    def test_cases(self):
        assert reward_heading(0.0) == 0.0
        assert reward_heading(math.pi / 2) == -1.0
        assert reward_heading(math.pi / 4) == 0.0  # strict inequality
        assert reward_heading(-math.pi / 4 - 1e-9) == -1.0


class TestRewardActuation:
    def test_cases(self):
        assert reward_actuation(0.0, 0.0) == (0.0, 0.0)
        r_a, r_s = reward_actuation(3.0, DEG(20.0))
        assert r_a == pytest.approx(-1.0)
        assert r_s == pytest.approx(-1.0)
        r_a, r_s = reward_actuation(1.5, DEG(-10.0))
        assert r_a == pytest.approx(-0.5)
        assert r_s == pytest.approx(-0.5)


class TestRewardLateral:
    def test_cases(self):
        assert reward_lateral(0.0, 0.0, CFG) == 3.0
        assert reward_lateral(3.0, 0.0, CFG) == pytest.approx(0.0)
        assert reward_lateral(1.5, 0.0, CFG) == pytest.approx(0.5)
        assert reward_lateral(0.049, 0.0, CFG) == 3.0
        assert reward_lateral(0.05, 0.0, CFG) == pytest.approx(1.0 - 0.05 / 3.0)


class TestProtagonistReward:
    def test_on_target_cruise(self):
        g = make_state(target_lane=1)
        r = protagonist_reward(g.vehicle, ControlInput(0.0, 0.0), g, CFG)
        expected = 0.5 * reward_velocity(10.0, CFG) + 3.0
        assert r == pytest.approx(expected, abs=1e-12)
        assert r == pytest.approx(3.3537, abs=1e-3)

    def test_offroad_returns_collision_reward(self):
        g = make_state(y=4.6)
        r = protagonist_reward(g.vehicle, ControlInput(0.0, 0.0), g, CFG)
        assert r == -5.0

    def test_bad_state_component_sum(self):
        g = make_state(y=CFG.lane_center(1) + 3.0, theta=math.pi / 2)
        r = protagonist_reward(g.vehicle, ControlInput(3.0, DEG(20.0)), g, CFG)
        assert r == pytest.approx(0.5 * reward_velocity(10.0, CFG) - 0.5 - 0.1 - 0.2, abs=1e-12)
        assert r == pytest.approx(-0.4463, abs=1e-3)

    @given(
        y=st.floats(-4.4, 4.4),
        v=st.floats(0.0, 20.0),
        theta=st.floats(-1.5, 1.5),
        accel=st.floats(-3.0, 3.0),
        steer=st.floats(-0.34, 0.34),
        lane=st.integers(0, 2),
    )
    def test_compositional(self, y, v, theta, accel, steer, lane):
        g = make_state(y=y, v=v, theta=theta, target_lane=lane)
        r = protagonist_reward(g.vehicle, ControlInput(accel, steer), g, CFG)
        r_acc, r_st = reward_actuation(accel, steer)
        expected = (
            0.5 * reward_velocity(v, CFG)
            + 0.5 * reward_heading(theta)
            + 0.1 * r_acc
            + 0.2 * r_st
            + 1.0 * reward_lateral(y, CFG.lane_center(lane), CFG)
        )
        assert r == pytest.approx(expected, abs=1e-12)

    def test_x_translation_invariance(self):
        g = make_state(y=1.0, theta=0.1, target_lane=2)
        moved = GameState(
            vehicle=VehicleState(500.0, 1.0, 10.0, 0.1),
            target_lane=2,
            prev_steer=0.0,
            step=0,
        )
        u = ControlInput(1.0, 0.05)
        assert protagonist_reward(g.vehicle, u, g, CFG) == protagonist_reward(
            moved.vehicle, u, moved, CFG
        )


class TestAdversaryReward:
    def test_cooperative_both_inside(self):
        assert cooperative_reward(Disturbance(0.3, DEG(1.0)), ARC) == 6.0

    def test_cooperative_boundary_is_strict(self):
        assert cooperative_reward(Disturbance(0.6, 0.0), ARC) == 3.0

    def test_cooperative_both_at_limits(self):
        assert cooperative_reward(Disturbance(0.6, DEG(4.0)), ARC) == 0.0

    def test_zero_sum(self):
        arc = AdversaryRewardConfig(mode=ZERO_SUM)
        assert adversary_reward(2.5, Disturbance(0.0, 0.0), arc) == -2.5

    def test_semi_competitive(self):
        r2 = adversary_reward(2.5, Disturbance(0.3, DEG(1.0)), ARC)
        assert r2 == pytest.approx(3.5)

    @given(r1=st.floats(-10.0, 10.0), da=st.floats(-1.0, 1.0), ds=st.floats(-0.1, 0.1))
    def test_ra_zero_equals_zero_sum(self, r1, da, ds):
        zs = AdversaryRewardConfig(mode=ZERO_SUM)
        sc0 = AdversaryRewardConfig(mode=SEMI_COMPETITIVE, r_a=0.0)
        d = Disturbance(da, ds)
        assert adversary_reward(r1, d, sc0) == adversary_reward(r1, d, zs)

    @given(r1=st.floats(-10.0, 10.0), da=st.floats(-1.0, 1.0), ds=st.floats(-0.1, 0.1))
    def test_zero_sum_sums_to_zero_and_gap_quantized(self, r1, da, ds):
        d = Disturbance(da, ds)
        zs = AdversaryRewardConfig(mode=ZERO_SUM)
        assert adversary_reward(r1, d, zs) + r1 == 0.0
        gap = adversary_reward(r1, d, ARC) - adversary_reward(r1, d, zs)
        assert min(abs(gap - v) for v in (0.0, ARC.r_a, 2.0 * ARC.r_a)) < 1e-12

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            AdversaryRewardConfig(r_a=-1.0)
        with pytest.raises(ConfigError):
            AdversaryRewardConfig(mode="cooperative")


class TestReset:
    def test_initial_state(self):
        g = reset(CFG, np.random.default_rng(0))
        assert g.vehicle.y == 0.0  # center lane of three
        assert g.vehicle.v == 10.0
        assert g.vehicle.theta == 0.0
        assert g.vehicle.x == 0.0
        assert g.prev_steer == 0.0
        assert g.step == 0
        assert not is_terminal(g, CFG)

    def test_target_lane_uniform(self):
        rng = np.random.default_rng(42)
        counts = np.zeros(3)
        n = 10_000
        for _ in range(n):
            counts[reset(CFG, rng).target_lane] += 1
        assert np.all(np.abs(counts / n - 1.0 / 3.0) < 0.02)


class TestStep:
    def test_straight_driving_in_target_lane(self):
        g = make_state(target_lane=1)
        res = step(g, ControlInput(0.0, 0.0), Disturbance(0.0, 0.0), CFG, ARC, PARAMS)
        assert res.r1 == pytest.approx(3.3537, abs=1e-3)
        assert not res.terminal
        assert not res.failure
        assert res.next.step == 1

    def test_offroad_is_failure(self):
        g = make_state(y=4.49, theta=math.pi / 2)  # moving straight up
        res = step(g, ControlInput(0.0, 0.0), Disturbance(0.0, 0.0), CFG, ARC, PARAMS)
        assert res.failure and res.terminal
        assert res.r1 == -5.0

    def test_failure_implies_terminal_and_collision_reward(self):
        rng = np.random.default_rng(3)
        g = reset(CFG, rng)
        # drive hard left until the road edge
        res = None
        for _ in range(CFG.max_steps):
            res = step(g, ControlInput(0.0, DEG(20.0)), Disturbance(0.0, 0.0), CFG, ARC, PARAMS)
            g = res.next
            if res.terminal:
                break
        assert res.failure
        assert res.r1 == CFG.collision_reward

    def test_max_steps_terminates_without_failure(self):
        g = make_state(target_lane=1)
        res = None
        for _ in range(CFG.max_steps):
            res = step(g, ControlInput(0.0, 0.0), Disturbance(0.0, 0.0), CFG, ARC, PARAMS)
            g = res.next
        assert res.terminal and not res.failure
        assert g.step == CFG.max_steps

    def test_stepping_terminal_state_raises(self):
        g = make_state(step_count=CFG.max_steps)
        with pytest.raises(ContractViolationError):
            step(g, ControlInput(0.0, 0.0), Disturbance(0.0, 0.0), CFG, ARC, PARAMS)

    def test_steer_rate_limit_applies_to_command(self):
        p = VehicleParams(steer_rate_limit=DEG(4.5))
        g = make_state(target_lane=1)
        res = step(g, ControlInput(0.0, DEG(20.0)), Disturbance(0.0, 0.0), CFG, ARC, p)
        assert res.next.prev_steer == pytest.approx(DEG(4.5))

    def test_prev_steer_excludes_disturbance(self):
        g = make_state(target_lane=1)
        res = step(g, ControlInput(0.0, DEG(10.0)), Disturbance(0.0, DEG(4.0)), CFG, ARC, PARAMS)
        assert res.next.prev_steer == pytest.approx(DEG(10.0))

    def test_r2_zero_sum_coupling(self):
        zs = AdversaryRewardConfig(mode=ZERO_SUM)
        g = make_state(target_lane=0)
        res = step(g, ControlInput(1.0, 0.1), Disturbance(0.2, 0.01), CFG, zs, PARAMS)
        assert res.r2 == -res.r1


class TestObserve:
    def test_center_lane_target_center(self):
        g = make_state(target_lane=1)
        obs = observe(g, CFG)
        assert obs[0] == 0.0
        assert obs[1] == 10.0
        assert obs[2] == 0.0
        assert obs[3] == 0.0

    def test_target_one_lane_left_gives_negative_offset(self):
        # lane 2 center is +3; first component is y - y_goal = -3
        g = make_state(target_lane=2)
        assert observe(g, CFG)[0] == pytest.approx(-3.0)

    def test_length_is_four(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = reset(CFG, rng)
            assert observe(g, CFG).shape == (4,)


class TestEpisodeInvariants:
    @given(seed=st.integers(0, 200))
    def test_episode_length_bounded_and_failure_terminal(self, seed):
        cfg = EnvConfig(max_steps=50)
        rng = np.random.default_rng(seed)
        g = reset(cfg, rng)
        steps = 0
        while not is_terminal(g, cfg):
            a1 = ControlInput(rng.uniform(-3, 3), rng.uniform(-0.34, 0.34))
            a2 = Disturbance(rng.uniform(-0.6, 0.6), rng.uniform(-0.069, 0.069))
            res = step(g, a1, a2, cfg, ARC, PARAMS)
            g = res.next
            steps += 1
            if res.failure:
                assert res.terminal
        assert steps <= cfg.max_steps
