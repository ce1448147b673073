"""Robustness test batteries and the two headline metrics.

Each battery runs a frozen protagonist for a number of independent
rollouts against a scripted disturbance source (heavy-tailed Pareto,
uniform, a trained adversary, or nothing) and reports the mean
undiscounted path reward with the collision penalty removed plus the
failure rate. Every rollout draws from its own random stream derived from
the battery seed, so rollouts are embarrassingly parallel and the report
does not depend on execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from lanegame.dynamics import D_ACCEL_MAX, D_STEER_MAX, Disturbance
from lanegame.env import GameBundle
from lanegame.errors import ContractViolationError, InvalidInputError
from lanegame.policy import Trajectory, run_episode

CLEAN = "clean"
PARETO = "pareto"
ADVERSARIAL = "adversarial"
LSC = "lsc"
AXLE = "axle"

LSC_STEER_RATE_LIMIT = math.radians(4.5)
AXLE_RANGE = (0.5, 2.5)
NO_PARAM = "n.a."


@dataclass(frozen=True)
class ParetoConfig:
    """Heavy-tailed disturbance source.

    ``sample_pareto`` draws a normalized magnitude x >= x_m whose density
    is beta * x_m^beta / x^(beta+1); the disturbance magnitude is
    scale / x, so draws stay inside the 20% input limits and concentrate
    at the limit as beta grows. Half of the draws are sign-flipped.
    """

    beta: float
    x_m: float = 1.0
    sign_flip_prob: float = 0.5
    accel_scale: float = D_ACCEL_MAX
    steer_scale: float = D_STEER_MAX

    def __post_init__(self) -> None:
        if not (self.beta >= 1.0):
            raise InvalidInputError(f"pareto beta must be >= 1, got {self.beta}")
        if not (self.x_m > 0.0):
            raise InvalidInputError(f"pareto x_m must be > 0, got {self.x_m}")
        if not (0.0 <= self.sign_flip_prob <= 1.0):
            raise InvalidInputError(
                f"pareto sign_flip_prob must lie in [0, 1], got {self.sign_flip_prob}"
            )


@dataclass(frozen=True)
class EvalReport:
    """One battery result row."""

    policy_id: str
    test_id: str
    param: str
    n_rollouts: int
    mean_reward: float
    stderr: float
    failure_rate: float
    seed: int

    def __post_init__(self) -> None:
        if self.n_rollouts < 1:
            raise InvalidInputError(f"n_rollouts must be >= 1, got {self.n_rollouts}")
        if not (0.0 <= self.failure_rate <= 1.0):
            raise InvalidInputError(
                f"failure_rate must lie in [0, 1], got {self.failure_rate}"
            )


def sample_pareto(pc: ParetoConfig, rng: np.random.Generator) -> float:
    """Inverse-CDF draw: x = x_m * U^(-1/beta) with U uniform on (0, 1]."""
    u = 1.0 - rng.random()
    return pc.x_m * u ** (-1.0 / pc.beta)


def pareto_disturbance(pc: ParetoConfig, rng: np.random.Generator) -> Disturbance:
    """Independent per-channel draws: magnitude scale/x, sign flipped with
    probability ``sign_flip_prob``. Draw order per channel is magnitude
    then sign, acceleration channel first."""
    values = []
    for scale in (pc.accel_scale, pc.steer_scale):
        x = sample_pareto(pc, rng)
        magnitude = scale * pc.x_m / x
        if rng.random() < pc.sign_flip_prob:
            magnitude = -magnitude
        values.append(magnitude)
    return Disturbance(values[0], values[1])


class ParetoAdversary:
    """Scripted adversary emitting heavy-tailed disturbances."""

    def __init__(self, pc: ParetoConfig):
        self.pc = pc

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        d = pareto_disturbance(self.pc, rng)
        a = np.array([d.d_accel, d.d_steer])
        return a, a, 0.0


class UniformDisturbanceAdversary:
    """Scripted adversary uniform over the full disturbance box."""

    def __init__(self, accel_limit: float = D_ACCEL_MAX, steer_limit: float = D_STEER_MAX):
        self.accel_limit = accel_limit
        self.steer_limit = steer_limit

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        a = np.array(
            [
                rng.uniform(-self.accel_limit, self.accel_limit),
                rng.uniform(-self.steer_limit, self.steer_limit),
            ]
        )
        return a, a, 0.0


def compute_metrics(
    trajs: list[Trajectory], collision_reward: float = -5.0
) -> tuple[float, float, float]:
    """(mean reward, standard error, failure rate) over trajectories.

    The reward metric is the undiscounted protagonist return with the
    collision penalty removed from failure episodes, keeping efficiency
    orthogonal to the safety metric.
    """
    if not trajs:
        raise ContractViolationError("compute_metrics needs at least one trajectory")
    rewards = np.array(
        [float(t.r1.sum()) - (collision_reward if t.failure else 0.0) for t in trajs]
    )
    failures = sum(1 for t in trajs if t.failure)
    stderr = float(rewards.std(ddof=1) / math.sqrt(len(rewards))) if len(rewards) > 1 else 0.0
    return float(rewards.mean()), stderr, failures / len(trajs)


def _axle_params_draw(vehicle, rng: np.random.Generator, low: float, high: float):
    return replace(
        vehicle,
        l_a=float(rng.uniform(low, high)),
        l_b=float(rng.uniform(low, high)),
    )


def _eval_one(task) -> tuple[float, bool]:
    policy, adversary, bundle, ss, axle_range, collision_reward = task
    rng = np.random.Generator(np.random.PCG64(ss))
    if axle_range is not None:
        bundle = replace(
            bundle,
            vehicle=_axle_params_draw(bundle.vehicle, rng, axle_range[0], axle_range[1]),
        )
    traj = run_episode(bundle, policy, adversary, rng)
    metric = float(traj.r1.sum()) - (collision_reward if traj.failure else 0.0)
    return metric, traj.failure


def _run_rollouts(
    policy,
    adversary,
    bundle: GameBundle,
    n_rollouts: int,
    seed: int,
    workers: int = 1,
    axle_range: tuple[float, float] | None = None,
) -> tuple[float, float, float]:
    """Run independent rollouts on per-rollout derived streams and reduce
    them in rollout-index order (so worker count cannot change the result)."""
    if n_rollouts < 1:
        raise ContractViolationError(f"n_rollouts must be >= 1, got {n_rollouts}")
    children = np.random.SeedSequence(seed).spawn(n_rollouts)
    collision = bundle.env.collision_reward
    tasks = [(policy, adversary, bundle, ss, axle_range, collision) for ss in children]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_one, tasks, chunksize=max(1, n_rollouts // (4 * workers))))
    else:
        results = [_eval_one(t) for t in tasks]
    rewards = np.array([r for r, _ in results])
    failures = sum(1 for _, f in results if f)
    stderr = float(rewards.std(ddof=1) / math.sqrt(len(rewards))) if len(rewards) > 1 else 0.0
    return float(rewards.mean()), stderr, failures / n_rollouts


def run_clean_test(
    policy, n_rollouts: int, bundle: GameBundle, seed: int, policy_id: str, workers: int = 1
) -> EvalReport:
    """Disturbance-free evaluation with the training vehicle parameters."""
    from lanegame.policy import ZeroDisturbancePolicy

    mean, stderr, fr = _run_rollouts(
        policy, ZeroDisturbancePolicy(), bundle, n_rollouts, seed, workers
    )
    return EvalReport(policy_id, CLEAN, NO_PARAM, n_rollouts, mean, stderr, fr, seed)


def run_pareto_test(
    policy,
    beta_list,
    n_rollouts: int,
    bundle: GameBundle,
    seed: int,
    policy_id: str,
    workers: int = 1,
    x_m: float = 1.0,
    sign_flip_prob: float = 0.5,
    accel_scale: float = D_ACCEL_MAX,
    steer_scale: float = D_STEER_MAX,
) -> list[EvalReport]:
    """Heavy-tailed disturbance sweep over the shape parameters in
    ``beta_list``; each beta gets its own report row."""
    reports = []
    for beta in beta_list:
        pc = ParetoConfig(
            beta=float(beta),
            x_m=x_m,
            sign_flip_prob=sign_flip_prob,
            accel_scale=accel_scale,
            steer_scale=steer_scale,
        )
        mean, stderr, fr = _run_rollouts(
            policy, ParetoAdversary(pc), bundle, n_rollouts, seed, workers
        )
        reports.append(
            EvalReport(policy_id, PARETO, f"{float(beta):.10g}", n_rollouts, mean, stderr, fr, seed)
        )
    return reports


def run_adversarial_test(
    policy,
    adversaries: list[tuple[int, object]],
    n_rollouts: int,
    bundle: GameBundle,
    seed: int,
    policy_id: str,
    workers: int = 1,
) -> list[EvalReport]:
    """Evaluate the frozen protagonist against each adversary checkpoint
    (iteration, policy), one report row per checkpoint."""
    reports = []
    for iteration, adversary in adversaries:
        mean, stderr, fr = _run_rollouts(policy, adversary, bundle, n_rollouts, seed, workers)
        reports.append(
            EvalReport(policy_id, ADVERSARIAL, str(iteration), n_rollouts, mean, stderr, fr, seed)
        )
    return reports


def run_lsc_test(
    policy,
    n_rollouts: int,
    bundle: GameBundle,
    seed: int,
    policy_id: str,
    workers: int = 1,
    steer_rate_limit: float = LSC_STEER_RATE_LIMIT,
) -> EvalReport:
    """Limited-steer-change model mismatch: the realized steer may move at
    most ``steer_rate_limit`` per step, plus uniform input disturbance."""
    limited = replace(bundle, vehicle=replace(bundle.vehicle, steer_rate_limit=steer_rate_limit))
    mean, stderr, fr = _run_rollouts(
        policy, UniformDisturbanceAdversary(), limited, n_rollouts, seed, workers
    )
    return EvalReport(policy_id, LSC, NO_PARAM, n_rollouts, mean, stderr, fr, seed)


def run_axle_test(
    policy,
    n_rollouts: int,
    bundle: GameBundle,
    seed: int,
    policy_id: str,
    workers: int = 1,
    axle_low: float = AXLE_RANGE[0],
    axle_high: float = AXLE_RANGE[1],
) -> EvalReport:
    """Axle-distance model mismatch: per episode, both axle distances are
    drawn uniformly from [axle_low, axle_high], plus uniform disturbance."""
    mean, stderr, fr = _run_rollouts(
        policy,
        UniformDisturbanceAdversary(),
        bundle,
        n_rollouts,
        seed,
        workers,
        axle_range=(axle_low, axle_high),
    )
    return EvalReport(policy_id, AXLE, NO_PARAM, n_rollouts, mean, stderr, fr, seed)
