"""Pareto sampler, disturbance batteries, and the headline metrics."""

import math
from dataclasses import replace

import numpy as np
import pytest

from lanegame.dynamics import D_ACCEL_MAX, D_STEER_MAX, VehicleParams
from lanegame.env import EnvConfig, GameBundle
from lanegame.errors import ContractViolationError, InvalidInputError
from lanegame.evaluation import (
    EvalReport,
    ParetoAdversary,
    ParetoConfig,
    UniformDisturbanceAdversary,
    compute_metrics,
    pareto_disturbance,
    run_axle_test,
    run_clean_test,
    run_lsc_test,
    run_pareto_test,
    sample_pareto,
)
from lanegame.policy import (
    Trajectory,
    ZeroDisturbancePolicy,
    policy_fingerprint,
    run_episode,
)
from tests_common import constant_policy, small_trained_stub  # noqa: F401

RNG = np.random.default_rng


class FixedUniformRng:
    """Stub exposing only random(); feeds sample_pareto a chosen U."""

    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


class TestSamplePareto:
    def test_inverse_cdf_at_half(self):
        # rng.random() = 0.5 -> U = 0.5 -> x = x_m * 0.5^(-1/beta) = 2 at beta 1
        pc = ParetoConfig(beta=1.0)
        assert sample_pareto(pc, FixedUniformRng(0.5)) == pytest.approx(2.0)

    def test_cdf_boundary_returns_x_m(self):
        for beta in (1.0, 3.0, 10.0):
            pc = ParetoConfig(beta=beta)
            assert sample_pareto(pc, FixedUniformRng(0.0)) == pytest.approx(1.0)

    def test_empirical_mean_beta_three(self):
        pc = ParetoConfig(beta=3.0)
        rng = RNG(0)
        xs = np.array([sample_pareto(pc, rng) for _ in range(100_000)])
        assert abs(xs.mean() - 1.5) / 1.5 < 0.05

    def test_ks_statistic_against_analytic_cdf(self):
        n = 100_000
        for beta in (1.0, 3.0, 10.0):
            pc = ParetoConfig(beta=beta)
            rng = RNG(int(beta))
            xs = np.sort([sample_pareto(pc, rng) for _ in range(n)])
            cdf = 1.0 - (pc.x_m / xs) ** beta
            i = np.arange(1, n + 1)
            ks = max(np.max(np.abs(i / n - cdf)), np.max(np.abs((i - 1) / n - cdf)))
            assert ks <= 0.01, f"beta={beta}: ks={ks}"

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            ParetoConfig(beta=0.5)
        with pytest.raises(InvalidInputError):
            ParetoConfig(beta=2.0, x_m=0.0)


class TestParetoDisturbance:
    def test_always_within_limits(self):
        pc = ParetoConfig(beta=1.0)
        rng = RNG(1)
        for _ in range(5000):
            d = pareto_disturbance(pc, rng)
            assert abs(d.d_accel) <= D_ACCEL_MAX
            assert abs(d.d_steer) <= D_STEER_MAX
            assert abs(d.d_accel) > 0.0 and abs(d.d_steer) > 0.0

    def test_large_beta_concentrates_at_boundary(self):
        pc = ParetoConfig(beta=1e9)
        rng = RNG(2)
        for _ in range(100):
            d = pareto_disturbance(pc, rng)
            assert abs(d.d_accel) == pytest.approx(D_ACCEL_MAX, rel=1e-6)
            assert abs(d.d_steer) == pytest.approx(D_STEER_MAX, rel=1e-6)

    def test_sign_balance(self):
        pc = ParetoConfig(beta=3.0)
        rng = RNG(3)
        n = 10_000
        ds = [pareto_disturbance(pc, rng) for _ in range(n)]
        pos_accel = sum(1 for d in ds if d.d_accel > 0) / n
        pos_steer = sum(1 for d in ds if d.d_steer > 0) / n
        assert abs(pos_accel - 0.5) < 0.02
        assert abs(pos_steer - 0.5) < 0.02

    def test_zero_scale_gives_zero_disturbance(self):
        pc = ParetoConfig(beta=2.0, accel_scale=0.0, steer_scale=0.0)
        d = pareto_disturbance(pc, RNG(4))
        assert d.d_accel == 0.0 and d.d_steer == 0.0


def make_traj(rewards, failure):
    n = len(rewards)
    z = np.zeros((n, 2))
    return Trajectory(
        obs=np.zeros((n, 4)), a1=z.copy(), a2=z.copy(), draw1=z.copy(), draw2=z.copy(),
        r1=np.asarray(rewards, dtype=float), r2=-np.asarray(rewards, dtype=float),
        logp1=np.zeros(n), logp2=np.zeros(n), terminal=True, failure=failure,
    )


class TestComputeMetrics:
    def test_collision_term_removed(self):
        mean, stderr, fr = compute_metrics([make_traj([1.0, 2.0, -5.0], True)])
        assert mean == pytest.approx(3.0)
        assert fr == 1.0
        assert stderr == 0.0

    def test_failure_rate_fraction(self):
        trajs = [make_traj([1.0], False) for _ in range(495)]
        trajs += [make_traj([1.0, -5.0], True) for _ in range(5)]
        _, _, fr = compute_metrics(trajs)
        assert fr == pytest.approx(0.01)

    def test_no_failures_equals_plain_return(self):
        trajs = [make_traj([1.0, 2.0], False), make_traj([3.0], False)]
        mean, _, fr = compute_metrics(trajs)
        assert mean == pytest.approx((3.0 + 3.0) / 2)
        assert fr == 0.0

    def test_empty_raises(self):
        with pytest.raises(ContractViolationError):
            compute_metrics([])


class TestBatteries:
    BUNDLE = GameBundle()

    def test_zero_scale_pareto_equals_clean(self, constant_policy):
        clean = run_clean_test(constant_policy, 20, self.BUNDLE, 77, "p", 1)
        zero = run_pareto_test(
            constant_policy, [2.0], 20, self.BUNDLE, 77, "p", 1,
            accel_scale=0.0, steer_scale=0.0,
        )[0]
        assert zero.mean_reward == clean.mean_reward
        assert zero.failure_rate == clean.failure_rate

    def test_fixed_seed_reports_identical(self, constant_policy):
        a = run_pareto_test(constant_policy, [1.0, 10.0], 15, self.BUNDLE, 5, "p", 1)
        b = run_pareto_test(constant_policy, [1.0, 10.0], 15, self.BUNDLE, 5, "p", 1)
        assert a == b

    def test_beta_list_cardinality(self, constant_policy):
        reports = run_pareto_test(constant_policy, [1.0, 10.0], 5, self.BUNDLE, 5, "p", 1)
        assert len(reports) == 2
        assert [r.param for r in reports] == ["1", "10"]

    def test_lsc_ramp_with_constant_full_steer_command(self):
        # the realized steer ramps by exactly the limit per step even with
        # the uniform disturbance active: prev_steer tracks the ego command
        limit = math.radians(4.5)
        bundle = replace(self.BUNDLE, vehicle=replace(self.BUNDLE.vehicle, steer_rate_limit=limit))

        class FullSteer:
            def act(self, obs, rng):
                a = np.array([0.0, math.radians(20.0)])
                return a, a, 0.0

        traj = run_episode(bundle, FullSteer(), UniformDisturbanceAdversary(), RNG(3))
        steers = traj.obs[:, 3]  # prev_steer observed at each step
        expected = [min(k * limit, math.radians(20.0)) for k in range(len(steers))]
        assert steers == pytest.approx(expected, abs=1e-12)

    def test_uniform_disturbance_centered(self):
        adv = UniformDisturbanceAdversary()
        rng = RNG(8)
        n = 20_000
        draws = np.array([adv.act(None, rng)[0] for _ in range(n)])
        se_accel = D_ACCEL_MAX / math.sqrt(3 * n)
        se_steer = D_STEER_MAX / math.sqrt(3 * n)
        assert abs(draws[:, 0].mean()) < 3 * se_accel
        assert abs(draws[:, 1].mean()) < 3 * se_steer
        assert np.all(np.abs(draws[:, 0]) <= D_ACCEL_MAX)
        assert np.all(np.abs(draws[:, 1]) <= D_STEER_MAX)

    def test_axle_draws_in_range_and_degenerate_matches_uniform_eval(self, constant_policy):
        # degenerate draw range pinned at the training value reproduces the
        # plain uniform-disturbance evaluation
        l_train = self.BUNDLE.vehicle.l_a
        degenerate = run_axle_test(
            constant_policy, 10, self.BUNDLE, 9, "p", 1, axle_low=l_train, axle_high=l_train
        )
        mean, stderr, fr = self._uniform_eval(constant_policy, 10, 9)
        assert degenerate.mean_reward == pytest.approx(mean)
        assert degenerate.failure_rate == fr

    def _uniform_eval(self, policy, n, seed):
        from lanegame.evaluation import _run_rollouts

        return _run_rollouts(policy, UniformDisturbanceAdversary(), self.BUNDLE, n, seed, 1)

    def test_axle_range_respected(self):
        rng = RNG(11)
        from lanegame.evaluation import _axle_params_draw

        for _ in range(500):
            p = _axle_params_draw(VehicleParams(), rng, 0.5, 2.5)
            assert 0.5 <= p.l_a <= 2.5
            assert 0.5 <= p.l_b <= 2.5

    def test_policy_untouched_by_batteries(self, small_trained_stub):
        before = policy_fingerprint(small_trained_stub)
        run_clean_test(small_trained_stub, 5, self.BUNDLE, 3, "p", 1)
        run_pareto_test(small_trained_stub, [1.0], 5, self.BUNDLE, 3, "p", 1)
        run_lsc_test(small_trained_stub, 5, self.BUNDLE, 3, "p", 1)
        run_axle_test(small_trained_stub, 5, self.BUNDLE, 3, "p", 1)
        assert policy_fingerprint(small_trained_stub) == before

    def test_workers_do_not_change_results(self, constant_policy):
        serial = run_clean_test(constant_policy, 8, self.BUNDLE, 21, "p", workers=1)
        parallel = run_clean_test(constant_policy, 8, self.BUNDLE, 21, "p", workers=2)
        assert serial == parallel

    def test_report_validation(self):
        with pytest.raises(InvalidInputError):
            EvalReport("p", "clean", "n.a.", 0, 0.0, 0.0, 0.0, 0)
        with pytest.raises(InvalidInputError):
            EvalReport("p", "clean", "n.a.", 1, 0.0, 0.0, 1.5, 0)
