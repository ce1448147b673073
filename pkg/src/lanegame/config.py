"""Experiment configuration: a plain-text key/value file with dotted
section names, a documented default for every key, and whole-config
validation at load time.

Format: one ``section.key = value`` per line; ``#`` starts a comment;
blank lines are ignored. Unknown keys are a hard error. Angles are
configured in degrees (keys carry a ``_deg`` suffix) and converted to
radians internally. Any loaded config round-trips through
``config_to_text`` to an equal configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from lanegame.dynamics import VehicleParams
from lanegame.env import AdversaryRewardConfig, EnvConfig
from lanegame.errors import ConfigError, InvalidInputError
from lanegame.optimizer import OptimizerConfig
from lanegame.trainers import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    out_dir: str = "runs"
    seed: int = 0
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError(f"run.workers must be >= 1, got {self.workers}")
        if self.seed < 0:
            raise ConfigError(f"run.seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class EvalSettings:
    rollouts: int = 100
    beta_list: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)
    adversary_iters: int = 40
    adversary_updates: int = 5
    lsc_steer_limit_deg: float = 4.5
    axle_low: float = 0.5
    axle_high: float = 2.5
    pareto_x_m: float = 1.0
    pareto_sign_flip_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.rollouts < 1:
            raise ConfigError(f"eval.rollouts must be >= 1, got {self.rollouts}")
        if not self.beta_list or any(b < 1.0 for b in self.beta_list):
            raise ConfigError("eval.beta_list entries must all be >= 1")
        if self.adversary_iters < 1:
            raise ConfigError(
                f"eval.adversary_iters must be >= 1, got {self.adversary_iters}"
            )
        if self.adversary_updates < 1:
            raise ConfigError(
                f"eval.adversary_updates must be >= 1, got {self.adversary_updates}"
            )
        if not (self.lsc_steer_limit_deg > 0.0):
            raise ConfigError(
                f"eval.lsc_steer_limit_deg must be > 0, got {self.lsc_steer_limit_deg}"
            )
        if not (0.0 < self.axle_low <= self.axle_high):
            raise ConfigError(
                f"eval.axle_low/axle_high must satisfy 0 < low <= high, "
                f"got {self.axle_low}, {self.axle_high}"
            )
        if not (self.pareto_x_m > 0.0):
            raise ConfigError(f"eval.pareto_x_m must be > 0, got {self.pareto_x_m}")
        if not (0.0 <= self.pareto_sign_flip_prob <= 1.0):
            raise ConfigError(
                "eval.pareto_sign_flip_prob must lie in [0, 1], "
                f"got {self.pareto_sign_flip_prob}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    adversary: AdversaryRewardConfig = field(default_factory=AdversaryRewardConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    policy_hidden: tuple[int, ...] = (256, 128, 64, 32)
    train: TrainConfig = field(default_factory=TrainConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _parse_optional_deg(raw: str) -> float | None:
    if raw.lower() == "none":
        return None
    return math.radians(float(raw))


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, tuple):
        return ",".join(_fmt_value(v) for v in value)
    return str(value)


def _deg(value: float) -> float:
    return math.degrees(value)


def _fmt_optional_deg(value: float | None) -> str:
    return "none" if value is None else _fmt_value(_deg(value))


# key -> (section, field, parse, serialize). Sections are attribute paths on
# ExperimentConfig; serialize turns the stored (internal-unit) value back
# into file text.
_KEYS: dict[str, tuple[str, str, object, object]] = {
    "run.name": ("run", "name", str, _fmt_value),
    "run.out_dir": ("run", "out_dir", str, _fmt_value),
    "run.seed": ("run", "seed", int, _fmt_value),
    "run.workers": ("run", "workers", int, _fmt_value),
    "run.record_timing": ("run", "record_timing", _parse_bool, _fmt_value),
    "env.lane_width": ("env", "lane_width", float, _fmt_value),
    "env.num_lanes": ("env", "num_lanes", int, _fmt_value),
    "env.init_speed": ("env", "init_speed", float, _fmt_value),
    "env.dt": ("env", "dt", float, _fmt_value),
    "env.max_steps": ("env", "max_steps", int, _fmt_value),
    "env.v_min": ("env", "v_min", float, _fmt_value),
    "env.v_max": ("env", "v_max", float, _fmt_value),
    "env.w_velocity": ("env", "w_velocity", float, _fmt_value),
    "env.w_heading": ("env", "w_heading", float, _fmt_value),
    "env.w_accel": ("env", "w_accel", float, _fmt_value),
    "env.w_steer": ("env", "w_steer", float, _fmt_value),
    "env.w_lateral": ("env", "w_lateral", float, _fmt_value),
    "env.collision_reward": ("env", "collision_reward", float, _fmt_value),
    "env.gamma": ("env", "gamma", float, _fmt_value),
    "adversary.mode": ("adversary", "mode", str, _fmt_value),
    "adversary.r_a": ("adversary", "r_a", float, _fmt_value),
    "adversary.d_accel_max": ("adversary", "d_accel_max", float, _fmt_value),
    "adversary.d_steer_max_deg": (
        "adversary",
        "d_steer_max",
        lambda raw: math.radians(float(raw)),
        lambda v: _fmt_value(_deg(v)),
    ),
    "vehicle.l_a": ("vehicle", "l_a", float, _fmt_value),
    "vehicle.l_b": ("vehicle", "l_b", float, _fmt_value),
    "vehicle.dt": ("vehicle", "dt", float, _fmt_value),
    "vehicle.steer_rate_limit_deg": (
        "vehicle",
        "steer_rate_limit",
        _parse_optional_deg,
        _fmt_optional_deg,
    ),
    "policy.hidden": ("", "policy_hidden", _parse_int_list, _fmt_value),
    "train.n_iter": ("train", "n_iter", int, _fmt_value),
    "train.n1": ("train", "n1", int, _fmt_value),
    "train.n2": ("train", "n2", int, _fmt_value),
    "train.batch_steps": ("train", "batch_steps", int, _fmt_value),
    "train.baseline_warmstart_iters": ("train", "baseline_warmstart_iters", int, _fmt_value),
    "train.checkpoint_every": ("train", "checkpoint_every", int, _fmt_value),
    "train.reservoir_capacity": ("train", "reservoir_capacity", int, _fmt_value),
    "train.fit_epochs": ("train", "fit_epochs", int, _fmt_value),
    "train.fit_lr": ("train", "fit_lr", float, _fmt_value),
    "optimizer.kl_limit": ("optimizer", "kl_limit", float, _fmt_value),
    "optimizer.learning_rate": ("optimizer", "learning_rate", float, _fmt_value),
    "optimizer.backtrack_factor": ("optimizer", "backtrack_factor", float, _fmt_value),
    "optimizer.max_backtracks": ("optimizer", "max_backtracks", int, _fmt_value),
    "eval.rollouts": ("eval", "rollouts", int, _fmt_value),
    "eval.beta_list": ("eval", "beta_list", _parse_float_list, _fmt_value),
    "eval.adversary_iters": ("eval", "adversary_iters", int, _fmt_value),
    "eval.adversary_updates": ("eval", "adversary_updates", int, _fmt_value),
    "eval.lsc_steer_limit_deg": ("eval", "lsc_steer_limit_deg", float, _fmt_value),
    "eval.axle_low": ("eval", "axle_low", float, _fmt_value),
    "eval.axle_high": ("eval", "axle_high", float, _fmt_value),
    "eval.pareto_x_m": ("eval", "pareto_x_m", float, _fmt_value),
    "eval.pareto_sign_flip_prob": ("eval", "pareto_sign_flip_prob", float, _fmt_value),
}

_SECTION_TYPES = {
    "run": RunConfig,
    "env": EnvConfig,
    "adversary": AdversaryRewardConfig,
    "vehicle": VehicleParams,
    "train": TrainConfig,
    "optimizer": OptimizerConfig,
    "eval": EvalSettings,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse file text into {key: typed value}; unknown keys and malformed
    lines are hard errors naming the source line."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'section.key = value', got {raw_line.strip()!r}"
            )
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        _, _, parse, _ = _KEYS[key]
        try:
            values[key] = parse(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key}: {exc}") from exc
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return values


def build_config(values: dict[str, object]) -> ExperimentConfig:
    """Apply parsed values over defaults and validate every invariant."""
    per_section: dict[str, dict[str, object]] = {name: {} for name in _SECTION_TYPES}
    top_level: dict[str, object] = {}
    for key, value in values.items():
        section, field_name, _, _ = _KEYS[key]
        if section == "":
            top_level[field_name] = value
        else:
            per_section[section][field_name] = value
    built = {}
    for section, cls in _SECTION_TYPES.items():
        try:
            built[section] = cls(**per_section[section])
        except (ConfigError, InvalidInputError) as exc:
            raise ConfigError(str(exc)) from exc
    if "policy_hidden" in top_level:
        hidden = tuple(top_level["policy_hidden"])
        if not hidden or any(h < 1 for h in hidden):
            raise ConfigError(f"policy.hidden widths must all be >= 1, got {hidden}")
    else:
        hidden = ExperimentConfig().policy_hidden
    try:
        built["vehicle"].validate()
    except InvalidInputError as exc:
        raise ConfigError(f"vehicle section invalid: {exc}") from exc
    cfg = ExperimentConfig(
        run=built["run"],
        env=built["env"],
        adversary=built["adversary"],
        vehicle=built["vehicle"],
        policy_hidden=hidden,
        train=replace(built["train"], seed=built["run"].seed),
        optimizer=replace(built["optimizer"], gamma=built["env"].gamma),
        eval=built["eval"],
    )
    if not math.isclose(cfg.env.dt, cfg.vehicle.dt, rel_tol=0.0, abs_tol=1e-12):
        raise ConfigError(
            f"env.dt ({cfg.env.dt}) and vehicle.dt ({cfg.vehicle.dt}) must match"
        )
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a configuration file; an empty file yields all
    defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return build_config(parse_config_text(text, source=str(path)))


def default_config() -> ExperimentConfig:
    return build_config({})


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serialize every key; parsing the result reproduces ``cfg``."""
    lines = []
    for key in sorted(_KEYS):
        section, field_name, _, serialize = _KEYS[key]
        holder = cfg if section == "" else getattr(cfg, section)
        value = getattr(holder, field_name)
        lines.append(f"{key} = {serialize(value)}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: ExperimentConfig, **run_overrides) -> ExperimentConfig:
    """Apply CLI flag overrides (seed, out_dir, workers...) onto the run
    section; flags win over file values."""
    clean = {k: v for k, v in run_overrides.items() if v is not None}
    if not clean:
        return cfg
    new_run = replace(cfg.run, **clean)
    new_train = replace(cfg.train, seed=new_run.seed)
    return replace(cfg, run=new_run, train=new_train)


def config_field_names() -> list[str]:
    """All recognized keys, for documentation."""
    return sorted(_KEYS)
