"""Discrete-time kinematic bicycle model with input limits and disturbances.

The ego vehicle is a single-track model: front/rear axle distances ``l_a``
and ``l_b`` define a slip angle from the steering command, and the state
advances by forward Euler over one timestep. Commanded inputs and injected
disturbances are clamped to fixed physical limits before they reach the
plant. Everything here is a pure function over small value types, so any
number of workers can call into this module concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from lanegame.errors import InvalidInputError

# Physical input limits. Disturbance limits are 20% of the respective
# maxima, written out exactly so boundary comparisons are not polluted by
# floating-point products.
ACCEL_MAX = 3.0
STEER_MAX = math.radians(20.0)
D_ACCEL_MAX = 0.6
D_STEER_MAX = math.radians(4.0)

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class VehicleState:
    """Ego vehicle state: position (m), speed (m/s), heading (rad)."""

    x: float
    y: float
    v: float
    theta: float


@dataclass(frozen=True)
class ControlInput:
    """Protagonist action: commanded acceleration (m/s^2) and steer (rad)."""

    accel: float
    steer: float


@dataclass(frozen=True)
class Disturbance:
    """Adversary action: additive acceleration/steering disturbance."""

    d_accel: float
    d_steer: float


ZERO_DISTURBANCE = Disturbance(0.0, 0.0)


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and integration parameters of the simulated vehicle.

    ``steer_rate_limit``, when set, bounds how far the realized steering
    angle may move in a single timestep (the limited-steer-change mismatch
    model); ``None`` disables the limit.
    """

    l_a: float = 1.5
    l_b: float = 1.5
    dt: float = 0.05
    steer_rate_limit: float | None = None

    def validate(self) -> None:
        if not (self.l_a > 0.0):
            raise InvalidInputError(f"l_a must be > 0, got {self.l_a}")
        if not (self.l_b > 0.0):
            raise InvalidInputError(f"l_b must be > 0, got {self.l_b}")
        if not (self.dt > 0.0):
            raise InvalidInputError(f"dt must be > 0, got {self.dt}")
        if self.steer_rate_limit is not None and not (self.steer_rate_limit > 0.0):
            raise InvalidInputError(
                f"steer_rate_limit must be > 0 when set, got {self.steer_rate_limit}"
            )


def _clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError(f"{name} contains a non-finite value: {v!r}")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    t = theta % _TWO_PI
    if t > math.pi:
        t -= _TWO_PI
    return t


def clip_inputs(u: ControlInput, d: Disturbance) -> ControlInput:
    """Combine command and disturbance into the effective plant input.

    Each disturbance component is first clamped to its 20% limit, added to
    the command, and the sum clamped to the physical input box. Applying
    the result again with a zero disturbance is a no-op.
    """
    _require_finite("control input", u.accel, u.steer)
    _require_finite("disturbance", d.d_accel, d.d_steer)
    da = _clamp(d.d_accel, -D_ACCEL_MAX, D_ACCEL_MAX)
    ds = _clamp(d.d_steer, -D_STEER_MAX, D_STEER_MAX)
    return ControlInput(
        accel=_clamp(u.accel + da, -ACCEL_MAX, ACCEL_MAX),
        steer=_clamp(u.steer + ds, -STEER_MAX, STEER_MAX),
    )


def step_bicycle(s: VehicleState, u_eff: ControlInput, p: VehicleParams) -> VehicleState:
    """Advance the kinematic bicycle model by one timestep.

    Slip angle beta = atan(l_b/(l_a+l_b) * tan(steer)); position integrates
    the start-of-step speed along heading+beta, heading rotates at
    (v/l_b)*sin(beta), and speed is clamped at zero (no reverse).
    """
    _require_finite("vehicle state", s.x, s.y, s.v, s.theta)
    _require_finite("effective input", u_eff.accel, u_eff.steer)
    beta = math.atan(p.l_b / (p.l_a + p.l_b) * math.tan(u_eff.steer))
    heading = s.theta + beta
    return VehicleState(
        x=s.x + s.v * math.cos(heading) * p.dt,
        y=s.y + s.v * math.sin(heading) * p.dt,
        v=max(0.0, s.v + u_eff.accel * p.dt),
        theta=wrap_angle(s.theta + s.v / p.l_b * math.sin(beta) * p.dt),
    )


def apply_steer_rate_limit(prev_steer: float, cmd_steer: float, limit: float) -> float:
    """Move from the previous steer toward the command by at most ``limit``."""
    return prev_steer + _clamp(cmd_steer - prev_steer, -limit, limit)
