"""Shared test utilities: the stateless Gaussian bandit and path builders."""

import numpy as np

from lanegame.optimizer import PROTAGONIST, OptimizerConfig, policy_step
from lanegame.policy import GaussianPolicy, MlpSpec, Trajectory

BANDIT_OBS = np.zeros(1)
BANDIT_TARGET = 2.0


def make_bandit_policy(seed: int) -> GaussianPolicy:
    spec = MlpSpec(input_dim=1, hidden=(8,), output_dim=1)
    return GaussianPolicy.initialize(
        spec, np.array([-10.0]), np.array([10.0]), np.random.default_rng(seed)
    )


def bandit_episode(policy, rng) -> Trajectory:
    """One-step episode with reward -(a - 2)^2 on the applied action."""
    action, draw, logp = policy.act(BANDIT_OBS, rng)
    r = -float((action[0] - BANDIT_TARGET) ** 2)
    zero = np.zeros((1, 1))
    return Trajectory(
        obs=BANDIT_OBS.reshape(1, 1).copy(),
        a1=action.reshape(1, 1),
        a2=zero.copy(),
        draw1=draw.reshape(1, 1),
        draw2=zero.copy(),
        r1=np.array([r]),
        r2=np.array([-r]),
        logp1=np.array([logp]),
        logp2=np.array([0.0]),
        terminal=True,
        failure=False,
    )


def bandit_batch(policy, n_episodes, rng) -> list[Trajectory]:
    return [bandit_episode(policy, rng) for _ in range(n_episodes)]


def run_bandit(seed: int, n_updates: int = 500, batch: int = 64,
               cfg: OptimizerConfig | None = None) -> GaussianPolicy:
    """Train the bandit with repeated policy_step calls; returns the final
    policy (its mean at the fixed observation is the learned estimate)."""
    cfg = cfg if cfg is not None else OptimizerConfig()
    rng = np.random.default_rng(seed + 1000)
    policy = make_bandit_policy(seed)
    for _ in range(n_updates):
        paths = bandit_batch(policy, batch, rng)
        policy = policy_step(policy, paths, PROTAGONIST, cfg)
    return policy


def random_paths(policy, n_paths, steps, rng, obs_dim=4) -> list[Trajectory]:
    """Synthetic multi-step paths with random observations and rewards,
    actions drawn from the policy (for optimizer unit tests)."""
    out = []
    for _ in range(n_paths):
        obs = rng.normal(size=(steps, obs_dim))
        a1 = np.empty((steps, policy.spec.output_dim))
        d1 = np.empty_like(a1)
        lp1 = np.empty(steps)
        for t in range(steps):
            a1[t], d1[t], lp1[t] = policy.act(obs[t], rng)
        zeros = np.zeros((steps, policy.spec.output_dim))
        out.append(
            Trajectory(
                obs=obs,
                a1=a1,
                a2=zeros.copy(),
                draw1=d1,
                draw2=zeros.copy(),
                r1=rng.normal(size=steps),
                r2=rng.normal(size=steps),
                logp1=lp1,
                logp2=np.zeros(steps),
                terminal=True,
                failure=False,
            )
        )
    return out
