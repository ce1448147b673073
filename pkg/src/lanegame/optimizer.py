"""Policy optimization: advantage estimation and a KL-constrained update.

The update ascends the likelihood-ratio objective
``mean_t advantage_t * log pi(draw_t | obs_t)`` with an analytic gradient
through the Gaussian policy, then backtracks the step until the mean KL
divergence from the old policy (closed form over the batch observations)
fits under the trust-region limit. Gradients over one batch may be
accumulated in parallel across paths; the update itself is single-threaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lanegame.errors import ContractViolationError
from lanegame.policy import (
    GaussianPolicy,
    Trajectory,
    mlp_backward,
    mlp_forward_batch,
)

PROTAGONIST = "protagonist"
ADVERSARY = "adversary"


@dataclass(frozen=True)
class OptimizerConfig:
    """Trust-region style controls for the first-order update.

    ``kl_limit`` is the maximum estimated mean KL per accepted update;
    ``learning_rate`` scales the raw gradient step before backtracking.
    Both interpretations of the reference step size 0.01 are exposed: the
    KL limit defaults to it, the learning rate is independent.
    """

    kl_limit: float = 0.01
    learning_rate: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if not (self.kl_limit > 0.0):
            raise ContractViolationError(f"kl_limit must be > 0, got {self.kl_limit}")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ContractViolationError(
                f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}"
            )
        if not (self.learning_rate > 0.0):
            raise ContractViolationError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if self.max_backtracks < 0:
            raise ContractViolationError(
                f"max_backtracks must be >= 0, got {self.max_backtracks}"
            )


def _player_fields(path: Trajectory, which_player: str):
    if which_player == PROTAGONIST:
        return path.r1, path.draw1
    if which_player == ADVERSARY:
        return path.r2, path.draw2
    raise ContractViolationError(f"unknown player {which_player!r}")


def reward_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted suffix sums: G_t = r_t + gamma * G_{t+1}."""
    out = np.empty_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def compute_advantages(
    paths: list[Trajectory], which_player: str, gamma: float
) -> list[np.ndarray]:
    """Reward-to-go minus a timestep-indexed batch-mean baseline, normalized
    to zero mean and unit variance across the batch.

    The baseline at index t is the mean reward-to-go over all paths that
    reach t. Normalization is skipped for degenerate batches (a single
    step, or identically equal advantages).
    """
    if not paths:
        raise ContractViolationError("compute_advantages needs a non-empty batch")
    rtgs = [reward_to_go(_player_fields(p, which_player)[0], gamma) for p in paths]
    max_len = max(len(r) for r in rtgs)
    sums = np.zeros(max_len)
    counts = np.zeros(max_len)
    for r in rtgs:
        sums[: len(r)] += r
        counts[: len(r)] += 1.0
    baseline = sums / counts
    advs = [r - baseline[: len(r)] for r in rtgs]
    flat = np.concatenate(advs)
    if flat.size > 1:
        std = float(flat.std())
        if std > 0.0:
            mean = float(flat.mean())
            advs = [(a - mean) / std for a in advs]
    return advs


def _objective_gradient(policy: GaussianPolicy, xs: np.ndarray, draws: np.ndarray, advs: np.ndarray):
    """Analytic gradient of mean_t adv_t * log pi(draw_t | obs_t) with
    respect to (weights, biases, log_std)."""
    n = xs.shape[0]
    means, cache = mlp_forward_batch(policy.weights, policy.biases, xs)
    z = (draws - means) / policy.std
    # d objective / d mean_t = adv_t * (draw_t - mean_t) / std^2, / n for the mean.
    d_mean = (advs[:, None] * z / policy.std) / n
    d_ws, d_bs = mlp_backward(policy.weights, cache, d_mean)
    d_log_std = (advs[:, None] * (z * z - 1.0)).mean(axis=0)
    return d_ws, d_bs, d_log_std


def objective_value(
    policy: GaussianPolicy, xs: np.ndarray, draws: np.ndarray, advs: np.ndarray
) -> float:
    """mean_t adv_t * log pi(draw_t | obs_t); used by the gradient check."""
    return float(np.mean(advs * policy.log_prob(xs, draws)))


def mean_kl(old: GaussianPolicy, new: GaussianPolicy, xs: np.ndarray) -> float:
    """Mean KL(old || new) of the diagonal Gaussians over a batch of states."""
    mu_old = old.mean_batch(xs)
    mu_new = new.mean_batch(xs)
    var_old = old.std**2
    var_new = new.std**2
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        per_dim = (
            new.log_std
            - old.log_std
            + (var_old + (mu_old - mu_new) ** 2) / (2.0 * var_new)
            - 0.5
        )
        value = float(np.mean(np.sum(per_dim, axis=1)))
    return value if math.isfinite(value) else math.inf


def _flatten_batch(paths: list[Trajectory], which_player: str, gamma: float):
    advs = compute_advantages(paths, which_player, gamma)
    xs = np.concatenate([p.obs for p in paths])
    draws = np.concatenate([_player_fields(p, which_player)[1] for p in paths])
    return xs, draws, np.concatenate(advs)


def policy_step(
    policy: GaussianPolicy,
    paths: list[Trajectory],
    which_player: str,
    cfg: OptimizerConfig,
) -> GaussianPolicy:
    """One KL-bounded ascent step on the policy-gradient objective.

    The candidate step ``learning_rate * gradient`` is shrunk by
    ``backtrack_factor`` until the estimated mean KL(old || new) over the
    batch states fits under ``kl_limit``; if every backtrack fails the
    policy is returned unchanged.
    """
    if not paths:
        raise ContractViolationError("policy_step needs a non-empty batch")
    xs, draws, advs = _flatten_batch(paths, which_player, cfg.gamma)
    d_ws, d_bs, d_log_std = _objective_gradient(policy, xs, draws, advs)
    scale = cfg.learning_rate
    for _ in range(cfg.max_backtracks + 1):
        candidate = policy.with_params(
            [w + scale * dw for w, dw in zip(policy.weights, d_ws)],
            [b + scale * db for b, db in zip(policy.biases, d_bs)],
            policy.log_std + scale * d_log_std,
        )
        if mean_kl(policy, candidate, xs) <= cfg.kl_limit:
            return candidate
        scale *= cfg.backtrack_factor
    return policy.copy()


def gradient_check(
    policy: GaussianPolicy,
    paths: list[Trajectory],
    which_player: str,
    gamma: float = 0.99,
    eps: float = 1e-5,
) -> float:
    """Max relative discrepancy between the analytic objective gradient and
    central finite differences. Intended for networks of <= 100 parameters."""
    xs, draws, advs = _flatten_batch(paths, which_player, gamma)
    d_ws, d_bs, d_log_std = _objective_gradient(policy, xs, draws, advs)
    analytic = np.concatenate(
        [
            np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in zip(d_ws, d_bs)]),
            d_log_std.ravel(),
        ]
    )
    flat = policy.get_flat()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        up = objective_value(policy.with_flat(bumped), xs, draws, advs)
        bumped[i] = flat[i] - eps
        down = objective_value(policy.with_flat(bumped), xs, draws, advs)
        numeric[i] = (up - down) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
