"""Training procedures: single-agent baseline, alternating best-response
(RARL), and neural fictitious self-play (NFSP).

All three share the same building blocks: trajectory rollout against a
frozen opponent and a KL-bounded policy-gradient update. RARL alternates
n1 protagonist updates against the frozen adversary with n2 adversary
updates against the frozen protagonist per outer iteration. NFSP trains
each player's best response against the opponent's average policy, feeds
the best-response behavior into a reservoir buffer, and refits the average
policy to the buffer once per outer iteration.

Rollout collection inside one inner update may fan out across workers; the
trainer itself is single-owner and mutates policies only between phases.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from lanegame.dynamics import ACCEL_MAX, D_ACCEL_MAX, D_STEER_MAX, STEER_MAX
from lanegame.env import OBSERVATION_DIM, GameBundle
from lanegame.errors import ConfigError
from lanegame.optimizer import ADVERSARY, PROTAGONIST, OptimizerConfig, policy_step
from lanegame.policy import (
    AveragePolicy,
    GaussianPolicy,
    MlpSpec,
    ReservoirBuffer,
    Trajectory,
    ZeroDisturbancePolicy,
    fit_average_policy,
    rollout,
)

BASELINE = "baseline"
RARL = "rarl"
NFSP = "nfsp"


@dataclass(frozen=True)
class TrainConfig:
    """Outer/inner iteration counts and batch sizing for every trainer."""

    n_iter: int = 300
    n1: int = 5
    n2: int = 5
    batch_steps: int = 400
    baseline_warmstart_iters: int = 200
    seed: int = 0
    checkpoint_every: int = 10
    reservoir_capacity: int = 20_000
    fit_epochs: int = 10
    fit_lr: float = 1e-2

    def __post_init__(self) -> None:
        # n_iter/n1/n2 admit 0 so degenerate runs and adversary-only
        # training (n1=0 against a frozen protagonist) are expressible.
        for key in ("n_iter", "n1", "n2", "baseline_warmstart_iters"):
            if getattr(self, key) < 0:
                raise ConfigError(f"train.{key} must be >= 0, got {getattr(self, key)}")
        if self.batch_steps < 1:
            raise ConfigError(f"train.batch_steps must be >= 1, got {self.batch_steps}")
        if self.checkpoint_every < 1:
            raise ConfigError(
                f"train.checkpoint_every must be >= 1, got {self.checkpoint_every}"
            )
        if self.reservoir_capacity < 1:
            raise ConfigError(
                f"train.reservoir_capacity must be >= 1, got {self.reservoir_capacity}"
            )
        if self.fit_epochs < 0:
            raise ConfigError(f"train.fit_epochs must be >= 0, got {self.fit_epochs}")


@dataclass(frozen=True)
class PlayerStats:
    """Batch statistics for one player over one outer iteration."""

    mean_reward: float
    failure_rate: float
    mean_abs_d_accel: float
    mean_abs_d_steer: float


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    players: dict[str, PlayerStats]
    wall_time_s: float = 0.0


@dataclass
class TrainArtifacts:
    """Final policies, the per-iteration metric log, and checkpoint
    snapshots taken every ``checkpoint_every`` iterations (iteration 0 is
    always included so untrained opponents are available to evaluations)."""

    policies: dict[str, GaussianPolicy]
    log: list[IterationRecord] = field(default_factory=list)
    checkpoints: list[tuple[int, dict[str, GaussianPolicy]]] = field(default_factory=list)
    buffers: dict[str, ReservoirBuffer] = field(default_factory=dict)


def protagonist_action_bounds() -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([-ACCEL_MAX, -STEER_MAX]),
        np.array([ACCEL_MAX, STEER_MAX]),
    )


def adversary_action_bounds() -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([-D_ACCEL_MAX, -D_STEER_MAX]),
        np.array([D_ACCEL_MAX, D_STEER_MAX]),
    )


def new_protagonist(hidden, rng: np.random.Generator) -> GaussianPolicy:
    spec = MlpSpec(input_dim=OBSERVATION_DIM, hidden=tuple(hidden), output_dim=2)
    low, high = protagonist_action_bounds()
    return GaussianPolicy.initialize(spec, low, high, rng)


def new_adversary(hidden, rng: np.random.Generator) -> GaussianPolicy:
    spec = MlpSpec(input_dim=OBSERVATION_DIM, hidden=tuple(hidden), output_dim=2)
    low, high = adversary_action_bounds()
    return GaussianPolicy.initialize(spec, low, high, rng)


def new_average_policy(hidden, rng: np.random.Generator, role: str) -> AveragePolicy:
    spec = MlpSpec(input_dim=OBSERVATION_DIM, hidden=tuple(hidden), output_dim=2)
    low, high = (
        protagonist_action_bounds() if role == PROTAGONIST else adversary_action_bounds()
    )
    return AveragePolicy.initialize(spec, low, high, rng)


def player_stats(paths: list[Trajectory], which_player: str) -> PlayerStats:
    """Mean undiscounted episode return, failure rate, and mean disturbance
    magnitudes over one batch of paths."""
    rewards = [float(p.r1.sum() if which_player == PROTAGONIST else p.r2.sum()) for p in paths]
    failures = sum(1 for p in paths if p.failure)
    d = np.concatenate([p.a2 for p in paths])
    return PlayerStats(
        mean_reward=float(np.mean(rewards)),
        failure_rate=failures / len(paths),
        mean_abs_d_accel=float(np.mean(np.abs(d[:, 0]))),
        mean_abs_d_steer=float(np.mean(np.abs(d[:, 1]))),
    )


def populate_buffer(
    buf: ReservoirBuffer,
    paths: list[Trajectory],
    which_player: str,
    rng: np.random.Generator,
) -> None:
    """Insert every (observation, applied action) pair of one player."""
    for path in paths:
        actions = path.a1 if which_player == PROTAGONIST else path.a2
        for t in range(len(path)):
            buf.insert((path.obs[t], actions[t]), rng)


def mean_abs_disturbance(stats: PlayerStats) -> float:
    """Disturbance magnitude normalized per channel and averaged, so both
    channels weigh equally despite different units."""
    return 0.5 * (
        stats.mean_abs_d_accel / D_ACCEL_MAX + stats.mean_abs_d_steer / D_STEER_MAX
    )


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._start = time.perf_counter() if enabled else 0.0

    def lap(self) -> float:
        if not self.enabled:
            return 0.0
        now = time.perf_counter()
        elapsed = now - self._start
        self._start = now
        return elapsed


def train_baseline(
    cfg: TrainConfig,
    bundle: GameBundle,
    opt: OptimizerConfig,
    hidden=(64, 32),
    rng: np.random.Generator | None = None,
    *,
    protagonist: GaussianPolicy | None = None,
    record_timing: bool = False,
) -> TrainArtifacts:
    """Single-agent training: the adversary emits the zero disturbance."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pro = protagonist if protagonist is not None else new_protagonist(hidden, rng)
    adv = ZeroDisturbancePolicy()
    art = TrainArtifacts(policies={PROTAGONIST: pro})
    art.checkpoints.append((0, {PROTAGONIST: pro.copy()}))
    clock = _Clock(record_timing)
    for i in range(1, cfg.n_iter + 1):
        paths = rollout(bundle, pro, adv, cfg.batch_steps, rng)
        pro = policy_step(pro, paths, PROTAGONIST, opt)
        art.log.append(
            IterationRecord(
                iteration=i,
                players={PROTAGONIST: player_stats(paths, PROTAGONIST)},
                wall_time_s=clock.lap(),
            )
        )
        if i % cfg.checkpoint_every == 0 or i == cfg.n_iter:
            art.checkpoints.append((i, {PROTAGONIST: pro.copy()}))
    art.policies[PROTAGONIST] = pro
    return art


def _warmstarted_protagonist(
    cfg: TrainConfig,
    bundle: GameBundle,
    opt: OptimizerConfig,
    hidden,
    rng: np.random.Generator,
    protagonist: GaussianPolicy | None,
) -> GaussianPolicy:
    if protagonist is not None:
        return protagonist
    pro = new_protagonist(hidden, rng)
    if cfg.baseline_warmstart_iters > 0:
        warm = train_baseline(
            replace(cfg, n_iter=cfg.baseline_warmstart_iters),
            bundle,
            opt,
            hidden,
            rng,
            protagonist=pro,
        )
        pro = warm.policies[PROTAGONIST]
    return pro


def train_rarl(
    cfg: TrainConfig,
    bundle: GameBundle,
    opt: OptimizerConfig,
    hidden=(64, 32),
    rng: np.random.Generator | None = None,
    *,
    protagonist: GaussianPolicy | None = None,
    adversary: GaussianPolicy | None = None,
    record_timing: bool = False,
) -> TrainArtifacts:
    """Alternating best-response training.

    Per outer iteration: n1 protagonist updates, each from fresh rollouts
    against the frozen adversary, then n2 adversary updates against the
    frozen (just-updated) protagonist. The protagonist is warm-started
    with disturbance-free baseline training unless one is passed in; the
    adversary starts from random initialization.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pro = _warmstarted_protagonist(cfg, bundle, opt, hidden, rng, protagonist)
    adv = adversary if adversary is not None else new_adversary(hidden, rng)
    art = TrainArtifacts(policies={PROTAGONIST: pro, ADVERSARY: adv})
    art.checkpoints.append((0, {PROTAGONIST: pro.copy(), ADVERSARY: adv.copy()}))
    clock = _Clock(record_timing)
    for i in range(1, cfg.n_iter + 1):
        players: dict[str, PlayerStats] = {}
        pro_paths: list[Trajectory] = []
        for _ in range(cfg.n1):
            paths = rollout(bundle, pro, adv, cfg.batch_steps, rng)
            pro = policy_step(pro, paths, PROTAGONIST, opt)
            pro_paths.extend(paths)
        if pro_paths:
            players[PROTAGONIST] = player_stats(pro_paths, PROTAGONIST)
        adv_paths: list[Trajectory] = []
        for _ in range(cfg.n2):
            paths = rollout(bundle, pro, adv, cfg.batch_steps, rng)
            adv = policy_step(adv, paths, ADVERSARY, opt)
            adv_paths.extend(paths)
        if adv_paths:
            players[ADVERSARY] = player_stats(adv_paths, ADVERSARY)
        art.log.append(IterationRecord(iteration=i, players=players, wall_time_s=clock.lap()))
        if i % cfg.checkpoint_every == 0 or i == cfg.n_iter:
            art.checkpoints.append((i, {PROTAGONIST: pro.copy(), ADVERSARY: adv.copy()}))
    art.policies = {PROTAGONIST: pro, ADVERSARY: adv}
    return art


PROTAGONIST_BR = "protagonist_br"
PROTAGONIST_AVG = "protagonist_avg"
ADVERSARY_BR = "adversary_br"
ADVERSARY_AVG = "adversary_avg"


def train_nfsp(
    cfg: TrainConfig,
    bundle: GameBundle,
    opt: OptimizerConfig,
    hidden=(64, 32),
    rng: np.random.Generator | None = None,
    *,
    protagonist_br: GaussianPolicy | None = None,
    record_timing: bool = False,
) -> TrainArtifacts:
    """Neural fictitious self-play.

    Per outer iteration: the protagonist best response trains n1 times
    against the adversary's average policy, feeding its (obs, action)
    pairs into the protagonist reservoir; the protagonist average policy
    is refit to the buffer. The adversary then does the mirror image
    against the freshly fit protagonist average policy.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    p_br = _warmstarted_protagonist(cfg, bundle, opt, hidden, rng, protagonist_br)
    p_avg = new_average_policy(hidden, rng, PROTAGONIST)
    a_br = new_adversary(hidden, rng)
    a_avg = new_average_policy(hidden, rng, ADVERSARY)
    m_p = ReservoirBuffer(capacity=cfg.reservoir_capacity)
    m_a = ReservoirBuffer(capacity=cfg.reservoir_capacity)
    art = TrainArtifacts(
        policies={},
        buffers={PROTAGONIST: m_p, ADVERSARY: m_a},
    )
    art.checkpoints.append(
        (0, {PROTAGONIST_BR: p_br.copy(), PROTAGONIST_AVG: p_avg.copy(),
             ADVERSARY_BR: a_br.copy(), ADVERSARY_AVG: a_avg.copy()})
    )
    clock = _Clock(record_timing)
    for i in range(1, cfg.n_iter + 1):
        players: dict[str, PlayerStats] = {}
        pro_paths: list[Trajectory] = []
        for _ in range(cfg.n1):
            paths = rollout(bundle, p_br, a_avg, cfg.batch_steps, rng)
            p_br = policy_step(p_br, paths, PROTAGONIST, opt)
            populate_buffer(m_p, paths, PROTAGONIST, rng)
            pro_paths.extend(paths)
        if pro_paths:
            players[PROTAGONIST] = player_stats(pro_paths, PROTAGONIST)
        if len(m_p) > 0:
            p_avg = fit_average_policy(p_avg, m_p, cfg.fit_epochs, cfg.fit_lr)
        adv_paths: list[Trajectory] = []
        for _ in range(cfg.n2):
            paths = rollout(bundle, p_avg, a_br, cfg.batch_steps, rng)
            a_br = policy_step(a_br, paths, ADVERSARY, opt)
            populate_buffer(m_a, paths, ADVERSARY, rng)
            adv_paths.extend(paths)
        if adv_paths:
            players[ADVERSARY] = player_stats(adv_paths, ADVERSARY)
        if len(m_a) > 0:
            a_avg = fit_average_policy(a_avg, m_a, cfg.fit_epochs, cfg.fit_lr)
        art.log.append(IterationRecord(iteration=i, players=players, wall_time_s=clock.lap()))
        if i % cfg.checkpoint_every == 0 or i == cfg.n_iter:
            art.checkpoints.append(
                (i, {PROTAGONIST_BR: p_br.copy(), PROTAGONIST_AVG: p_avg.copy(),
                     ADVERSARY_BR: a_br.copy(), ADVERSARY_AVG: a_avg.copy()})
            )
    art.policies = {
        PROTAGONIST_BR: p_br,
        PROTAGONIST_AVG: p_avg,
        ADVERSARY_BR: a_br,
        ADVERSARY_AVG: a_avg,
    }
    return art


def train_adversary_against(
    protagonist: GaussianPolicy,
    cfg: TrainConfig,
    bundle: GameBundle,
    opt: OptimizerConfig,
    hidden=(64, 32),
    rng: np.random.Generator | None = None,
) -> TrainArtifacts:
    """Train an adversary while holding the protagonist constant: the
    adversary phase of alternating training with the protagonist loop
    disabled. Used by the adversarial-disturbance evaluation."""
    return train_rarl(
        replace(cfg, n1=0, baseline_warmstart_iters=0),
        bundle,
        opt,
        hidden,
        rng,
        protagonist=protagonist,
    )


def metric_rows(log: list[IterationRecord]) -> list[dict]:
    """Flatten the per-iteration log into CSV-ready dicts, one row per
    (iteration, player), protagonist first."""
    order = [PROTAGONIST, ADVERSARY]
    rows = []
    for rec in log:
        for player in order:
            if player not in rec.players:
                continue
            st = rec.players[player]
            rows.append(
                {
                    "iteration": rec.iteration,
                    "player": player,
                    "mean_reward": st.mean_reward,
                    "failure_rate": st.failure_rate,
                    "mean_abs_d_accel": st.mean_abs_d_accel,
                    "mean_abs_d_steer": st.mean_abs_d_steer,
                    "wall_time_s": rec.wall_time_s,
                }
            )
    return rows
