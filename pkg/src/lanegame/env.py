"""The lane-change game: episode lifecycle, rewards, and termination.

Both players act simultaneously from the same observation. The protagonist
commands acceleration and steering; the adversary injects bounded input
disturbances. Rewards are evaluated at the state reached by the step:
leaving the road ends the episode with the collision reward, otherwise the
protagonist collects a weighted sum of velocity, heading, actuation, and
lateral-offset terms, and the adversary collects its negation plus an
optional cooperative bonus for keeping disturbances strictly inside the
magnitude box.

Environment state is a plain value object; run as many episodes
concurrently as you like, one state per worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lanegame.dynamics import (
    ACCEL_MAX,
    D_ACCEL_MAX,
    D_STEER_MAX,
    STEER_MAX,
    ControlInput,
    Disturbance,
    VehicleParams,
    VehicleState,
    apply_steer_rate_limit,
    clip_inputs,
    step_bicycle,
)
from lanegame.errors import ConfigError, ContractViolationError

OBSERVATION_DIM = 4

ZERO_SUM = "zero_sum"
SEMI_COMPETITIVE = "semi_competitive"


@dataclass(frozen=True)
class EnvConfig:
    """Road geometry, episode limits, and protagonist reward weights."""

    lane_width: float = 3.0
    num_lanes: int = 3
    init_speed: float = 10.0
    dt: float = 0.05
    max_steps: int = 200
    v_min: float = 0.0
    v_max: float = 20.0
    w_velocity: float = 0.5
    w_heading: float = 0.5
    w_accel: float = 0.1
    w_steer: float = 0.2
    w_lateral: float = 1.0
    collision_reward: float = -5.0
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if not (self.lane_width > 0.0):
            raise ConfigError(f"env.lane_width must be > 0, got {self.lane_width}")
        if self.num_lanes < 1:
            raise ConfigError(f"env.num_lanes must be >= 1, got {self.num_lanes}")
        if self.max_steps < 1:
            raise ConfigError(f"env.max_steps must be >= 1, got {self.max_steps}")
        if not (self.v_max > self.v_min):
            raise ConfigError(
                f"env.v_max must exceed env.v_min, got {self.v_max} <= {self.v_min}"
            )
        if not ((self.v_max - self.v_min) / 2.0 > 1.0):
            raise ConfigError(
                "env.v_max - env.v_min must exceed 2 so the velocity-reward "
                f"logarithm base exceeds 1, got span {self.v_max - self.v_min}"
            )
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError(f"env.gamma must lie in [0, 1), got {self.gamma}")

    @property
    def road_half_width(self) -> float:
        return self.num_lanes * self.lane_width / 2.0

    @property
    def center_lane(self) -> int:
        return (self.num_lanes - 1) // 2

    def lane_center(self, lane: int) -> float:
        """Lateral coordinate of a lane's center line; lane 0 is rightmost
        (most negative y), the road centerline is y = 0."""
        return (lane - (self.num_lanes - 1) / 2.0) * self.lane_width


@dataclass(frozen=True)
class AdversaryRewardConfig:
    """Adversary reward mode and the cooperative rectangle parameters.

    ``zero_sum`` behaves identically to ``semi_competitive`` with r_a = 0.
    """

    mode: str = SEMI_COMPETITIVE
    r_a: float = 3.0
    d_accel_max: float = D_ACCEL_MAX
    d_steer_max: float = D_STEER_MAX

    def __post_init__(self) -> None:
        if self.mode not in (ZERO_SUM, SEMI_COMPETITIVE):
            raise ConfigError(
                f"adversary.mode must be '{ZERO_SUM}' or '{SEMI_COMPETITIVE}', "
                f"got {self.mode!r}"
            )
        if self.r_a < 0.0:
            raise ConfigError(f"adversary.r_a must be >= 0, got {self.r_a}")
        if not (self.d_accel_max > 0.0):
            raise ConfigError(
                f"adversary.d_accel_max must be > 0, got {self.d_accel_max}"
            )
        if not (self.d_steer_max > 0.0):
            raise ConfigError(
                f"adversary.d_steer_max must be > 0, got {self.d_steer_max}"
            )


@dataclass(frozen=True)
class GameState:
    """Episode state: vehicle pose, assigned target lane, the ego's realized
    steering angle from the previous step, and the step counter."""

    vehicle: VehicleState
    target_lane: int
    prev_steer: float = 0.0
    step: int = 0


@dataclass(frozen=True)
class StepResult:
    next: GameState
    r1: float
    r2: float
    terminal: bool
    failure: bool


@dataclass(frozen=True)
class GameBundle:
    """Everything needed to run episodes: road, adversary reward, vehicle."""

    env: EnvConfig = field(default_factory=EnvConfig)
    adversary: AdversaryRewardConfig = field(default_factory=AdversaryRewardConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)


def reset(cfg: EnvConfig, rng: np.random.Generator) -> GameState:
    """Start an episode: center lane, initial speed, uniform target lane."""
    target = int(rng.integers(cfg.num_lanes))
    return GameState(
        vehicle=VehicleState(
            x=0.0, y=cfg.lane_center(cfg.center_lane), v=cfg.init_speed, theta=0.0
        ),
        target_lane=target,
        prev_steer=0.0,
        step=0,
    )


def reward_velocity(v: float, cfg: EnvConfig) -> float:
    """Smooth increasing speed reward with range ~[-1, 1].

    log_base(100*(v-v_min)/(v_max-v_min) + 0.99) - 1 with
    base = (v_max-v_min)/2; v is clamped into [v_min, v_max] first.
    """
    vv = min(max(v, cfg.v_min), cfg.v_max)
    base = (cfg.v_max - cfg.v_min) / 2.0
    frac = (vv - cfg.v_min) / (cfg.v_max - cfg.v_min)
    return math.log(100.0 * frac + 0.99) / math.log(base) - 1.0


def reward_heading(theta: float) -> float:
    """-1 when the heading exceeds 45 degrees in magnitude, else 0."""
    return -1.0 if abs(theta) > math.pi / 4.0 else 0.0


def reward_actuation(alpha: float, phi: float) -> tuple[float, float]:
    """Effort penalties, each normalized to [-1, 0] by the input maxima."""
    return (-abs(alpha) / ACCEL_MAX, -abs(phi) / STEER_MAX)


def reward_lateral(y: float, y_goal: float, cfg: EnvConfig) -> float:
    """3.0 inside a 5 cm band around the target center line, otherwise a
    linear falloff 1 - |offset|/lane_width."""
    offset = abs(y - y_goal)
    if offset < 0.05:
        return 3.0
    return 1.0 - offset / cfg.lane_width


def is_offroad(vehicle: VehicleState, cfg: EnvConfig) -> bool:
    """The vehicle center has crossed the outer road edge."""
    return abs(vehicle.y) > cfg.road_half_width


def protagonist_reward(
    s: VehicleState, a1: ControlInput, g: GameState, cfg: EnvConfig
) -> float:
    """Weighted sum of the five reward components at state ``s``.

    ``s`` is the state reached by the step; if it is off the road the step
    is a failure and the collision reward is returned instead.
    """
    if is_offroad(s, cfg):
        return cfg.collision_reward
    r_acc, r_steer = reward_actuation(a1.accel, a1.steer)
    return (
        cfg.w_velocity * reward_velocity(s.v, cfg)
        + cfg.w_heading * reward_heading(s.theta)
        + cfg.w_accel * r_acc
        + cfg.w_steer * r_steer
        + cfg.w_lateral * reward_lateral(s.y, cfg.lane_center(g.target_lane), cfg)
    )


def cooperative_reward(d: Disturbance, arc: AdversaryRewardConfig) -> float:
    """r_a per channel whose disturbance magnitude is strictly inside its
    maximum; 0 for a channel at or beyond the limit."""
    r = 0.0
    if abs(d.d_accel) < arc.d_accel_max:
        r += arc.r_a
    if abs(d.d_steer) < arc.d_steer_max:
        r += arc.r_a
    return r


def adversary_reward(r1: float, d: Disturbance, arc: AdversaryRewardConfig) -> float:
    """-r1 in the zero-sum mode; -r1 plus the cooperative bonus otherwise."""
    if arc.mode == ZERO_SUM:
        return -r1
    return -r1 + cooperative_reward(d, arc)


def is_terminal(g: GameState, cfg: EnvConfig) -> bool:
    return g.step >= cfg.max_steps or is_offroad(g.vehicle, cfg)


def step(
    g: GameState,
    a1: ControlInput,
    a2: Disturbance,
    cfg: EnvConfig,
    arc: AdversaryRewardConfig,
    p: VehicleParams,
) -> StepResult:
    """Advance the game by one simultaneous move.

    The protagonist's commanded steer is rate-limited against the ego's
    previous realized steer when the vehicle has a steer-rate limit; the
    disturbance is then added and the sum clamped to the physical input
    box. ``prev_steer`` records the ego's own realized steering command
    (after rate limiting and box clamping, before the disturbance): the
    ego can observe its own actuator but not the disturbance.
    """
    if is_terminal(g, cfg):
        raise ContractViolationError(
            f"cannot step a terminal state (step={g.step}, y={g.vehicle.y:.3f})"
        )
    cmd_steer = a1.steer
    if p.steer_rate_limit is not None:
        cmd_steer = apply_steer_rate_limit(g.prev_steer, cmd_steer, p.steer_rate_limit)
    ego_steer = min(max(cmd_steer, -STEER_MAX), STEER_MAX)
    u_eff = clip_inputs(ControlInput(a1.accel, ego_steer), a2)
    vehicle = step_bicycle(g.vehicle, u_eff, p)
    nxt = GameState(
        vehicle=vehicle,
        target_lane=g.target_lane,
        prev_steer=ego_steer,
        step=g.step + 1,
    )
    failure = is_offroad(vehicle, cfg)
    r1 = protagonist_reward(vehicle, a1, g, cfg)
    r2 = adversary_reward(r1, a2, arc)
    terminal = failure or nxt.step >= cfg.max_steps
    return StepResult(next=nxt, r1=r1, r2=r2, terminal=terminal, failure=failure)


def observe(g: GameState, cfg: EnvConfig) -> np.ndarray:
    """Observation shared by both players.

    ``[y - y_goal, v, theta, prev_steer]``: the first component is the
    current lateral position minus the target lane center, so a target
    lane to the left (larger y) gives a negative first component.
    """
    v = g.vehicle
    return np.array(
        [v.y - cfg.lane_center(g.target_lane), v.v, v.theta, g.prev_steer],
        dtype=np.float64,
    )
