"""Gaussian MLP policies, the average-policy regressor, reservoir buffers,
trajectory rollout, and the policy checkpoint format.

Networks are small dense ReLU stacks stored as plain numpy arrays with a
hand-written backward pass; policies add a state-independent log standard
deviation per action dimension and clamp sampled actions into their box.
Parameters are treated as immutable: updates build a new policy object, so
rollout workers can share a policy without coordination.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from lanegame.dynamics import ControlInput, Disturbance
from lanegame.env import GameBundle, observe, reset, step
from lanegame.errors import CheckpointError, ContractViolationError, InvalidInputError

_LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"LGPC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Dense ReLU network shape: input width, hidden widths, output width."""

    input_dim: int
    hidden: tuple[int, ...] = (256, 128, 64, 32)
    output_dim: int = 2
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidInputError("MlpSpec dims must be >= 1")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise InvalidInputError("MlpSpec needs at least one hidden layer, widths >= 1")
        if self.activation != "relu":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden, self.output_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


def init_mlp_params(
    spec: MlpSpec, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Uniform hidden weights scaled by 1/sqrt(fan_in); zero biases.

    The output layer starts at zero so a fresh policy's mean action is 0
    for every observation: with raw, unnormalized observations a scaled
    random output layer can otherwise commit a fresh policy to extreme
    actions that no amount of training recovers from.
    """
    weights, biases = [], []
    dims = spec.layer_dims
    for i, (out_dim, in_dim) in enumerate(dims):
        if i == len(dims) - 1:
            weights.append(np.zeros((out_dim, in_dim)))
        else:
            bound = 1.0 / math.sqrt(in_dim)
            weights.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return weights, biases


def mlp_forward(weights: list[np.ndarray], biases: list[np.ndarray], obs: np.ndarray) -> np.ndarray:
    """Single-observation forward pass (affine + ReLU, final layer affine)."""
    x = obs
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        x = w @ x + b
        if i != last:
            x = np.maximum(x, 0.0)
    return x


def mlp_forward_batch(
    weights: list[np.ndarray], biases: list[np.ndarray], xs: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass; returns the output and per-layer inputs for the
    backward pass. ``xs`` has shape (N, input_dim)."""
    cache = [xs]
    x = xs
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        x = x @ w.T + b
        if i != last:
            x = np.maximum(x, 0.0)
        cache.append(x)
    return x, cache


def mlp_backward(
    weights: list[np.ndarray], cache: list[np.ndarray], d_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backpropagate ``d_out`` (N, output_dim) through the cached forward
    pass; returns gradients summed over the batch, one per layer."""
    n_layers = len(weights)
    d_ws = [None] * n_layers
    d_bs = [None] * n_layers
    delta = d_out
    for i in range(n_layers - 1, -1, -1):
        layer_in = cache[i]
        d_ws[i] = delta.T @ layer_in
        d_bs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * (cache[i] > 0.0)
    return d_ws, d_bs


class GaussianPolicy:
    """Diagonal Gaussian over a box: MLP mean, learnable per-dim log std.

    Sampling clamps the raw draw into ``[action_low, action_high]`` and
    reports the log density of the pre-clamp draw.
    """

    kind = "gaussian"

    def __init__(
        self,
        spec: MlpSpec,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        log_std: np.ndarray,
        action_low: np.ndarray,
        action_high: np.ndarray,
    ):
        self.spec = spec
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.log_std = np.asarray(log_std, dtype=np.float64).reshape(spec.output_dim)
        self.action_low = np.asarray(action_low, dtype=np.float64).reshape(spec.output_dim)
        self.action_high = np.asarray(action_high, dtype=np.float64).reshape(spec.output_dim)
        if not np.all(self.action_high > self.action_low):
            raise InvalidInputError("action_high must exceed action_low elementwise")
        self.std = np.exp(self.log_std)
        # Constant part of the log density: sum(log std) + d/2 * log(2*pi).
        self._logp_const = float(np.sum(self.log_std) + 0.5 * self.spec.output_dim * _LOG_2PI)

    @classmethod
    def initialize(
        cls,
        spec: MlpSpec,
        action_low: np.ndarray,
        action_high: np.ndarray,
        rng: np.random.Generator,
    ) -> "GaussianPolicy":
        """Fresh policy: fan-in scaled weights, std at half the action
        half-range per dimension."""
        weights, biases = init_mlp_params(spec, rng)
        low = np.asarray(action_low, dtype=np.float64)
        high = np.asarray(action_high, dtype=np.float64)
        log_std = np.log(0.5 * (high - low) / 2.0)
        return cls(spec, weights, biases, log_std, low, high)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        if obs.shape[-1] != self.spec.input_dim:
            raise ContractViolationError(
                f"observation length {obs.shape[-1]} != input_dim {self.spec.input_dim}"
            )
        return mlp_forward(self.weights, self.biases, obs)

    def mean_batch(self, xs: np.ndarray) -> np.ndarray:
        if xs.shape[1] != self.spec.input_dim:
            raise ContractViolationError(
                f"observation length {xs.shape[1]} != input_dim {self.spec.input_dim}"
            )
        out, _ = mlp_forward_batch(self.weights, self.biases, xs)
        return out

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Sample an action. Returns ``(action, draw, log_prob)`` where
        ``draw`` is the pre-clamp sample whose density ``log_prob`` reports."""
        mean = self.mean(obs)
        z = rng.standard_normal(self.spec.output_dim)
        draw = mean + self.std * z
        logp = -0.5 * float(z @ z) - self._logp_const
        action = np.clip(draw, self.action_low, self.action_high)
        return action, draw, logp

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Log density of ``actions`` (N, d) at the means of ``obs`` (N, d_in)."""
        means = self.mean_batch(np.atleast_2d(obs))
        z = (np.atleast_2d(actions) - means) / self.std
        return -0.5 * np.sum(z * z, axis=1) - self._logp_const

    def with_params(
        self,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        log_std: np.ndarray,
    ) -> "GaussianPolicy":
        return type(self)(
            self.spec, weights, biases, log_std, self.action_low, self.action_high
        )

    def copy(self) -> "GaussianPolicy":
        return self.with_params(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.log_std.copy(),
        )

    # Flat parameter vector: layer weights row-major, then biases, in layer
    # order, then log_std. Used by gradient checks and tests.
    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        parts.append(self.log_std.ravel())
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> "GaussianPolicy":
        weights, biases = [], []
        i = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[i : i + w.size].reshape(w.shape).copy())
            i += w.size
            biases.append(flat[i : i + b.size].copy())
            i += b.size
        log_std = flat[i : i + self.log_std.size].copy()
        i += self.log_std.size
        if i != flat.size:
            raise ContractViolationError(
                f"flat vector has {flat.size} entries, expected {i}"
            )
        return self.with_params(weights, biases, log_std)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + self.log_std.size


class AveragePolicy(GaussianPolicy):
    """Supervised regressor over a player's historical (obs, action) pairs;
    same representation as GaussianPolicy, trained by fit_average_policy."""

    kind = "average"


class ZeroDisturbancePolicy:
    """Passive adversary used for baseline training and clean evaluation."""

    def __init__(self) -> None:
        self._zero = np.zeros(2)

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        return self._zero, self._zero, 0.0


@dataclass
class ReservoirBuffer:
    """Fixed-capacity uniform sample over every item ever inserted
    (algorithm R). ``seen`` counts insert attempts."""

    capacity: int = 20_000
    items: list = field(default_factory=list)
    seen: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidInputError(f"reservoir capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, item, rng: np.random.Generator) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            slot = int(rng.integers(self.seen))
            if slot < self.capacity:
                self.items[slot] = item


@dataclass
class Trajectory:
    """One episode: per-step observations, both players' applied actions and
    pre-clamp draws, both rewards, and both log-probabilities."""

    obs: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    draw1: np.ndarray
    draw2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    logp1: np.ndarray
    logp2: np.ndarray
    terminal: bool
    failure: bool

    def __len__(self) -> int:
        return self.obs.shape[0]


def run_episode(
    bundle: GameBundle,
    protagonist,
    adversary,
    rng: np.random.Generator,
) -> Trajectory:
    """Play one episode to termination with simultaneous moves."""
    cfg, arc, params = bundle.env, bundle.adversary, bundle.vehicle
    g = reset(cfg, rng)
    obs_l, a1_l, a2_l, d1_l, d2_l = [], [], [], [], []
    r1_l, r2_l, lp1_l, lp2_l = [], [], [], []
    while True:
        obs = observe(g, cfg)
        a1, draw1, lp1 = protagonist.act(obs, rng)
        a2, draw2, lp2 = adversary.act(obs, rng)
        res = step(
            g,
            ControlInput(a1[0], a1[1]),
            Disturbance(a2[0], a2[1]),
            cfg,
            arc,
            params,
        )
        obs_l.append(obs)
        a1_l.append(a1)
        a2_l.append(a2)
        d1_l.append(draw1)
        d2_l.append(draw2)
        r1_l.append(res.r1)
        r2_l.append(res.r2)
        lp1_l.append(lp1)
        lp2_l.append(lp2)
        g = res.next
        if res.terminal:
            return Trajectory(
                obs=np.asarray(obs_l),
                a1=np.asarray(a1_l),
                a2=np.asarray(a2_l),
                draw1=np.asarray(d1_l),
                draw2=np.asarray(d2_l),
                r1=np.asarray(r1_l),
                r2=np.asarray(r2_l),
                logp1=np.asarray(lp1_l),
                logp2=np.asarray(lp2_l),
                terminal=True,
                failure=res.failure,
            )


def rollout(
    bundle: GameBundle,
    protagonist,
    adversary,
    n_steps: int,
    rng: np.random.Generator,
) -> list[Trajectory]:
    """Collect complete episodes until at least ``n_steps`` environment
    steps have been gathered; the final episode runs to termination."""
    paths: list[Trajectory] = []
    collected = 0
    while collected < n_steps:
        traj = run_episode(bundle, protagonist, adversary, rng)
        paths.append(traj)
        collected += len(traj)
    return paths


def fit_average_policy(
    avg: AveragePolicy,
    buf: ReservoirBuffer,
    epochs: int = 10,
    lr: float = 1e-2,
    fit_std: bool = True,
) -> AveragePolicy:
    """Maximum-likelihood regression of stored actions given observations.

    Full-buffer gradient descent on the Gaussian negative log likelihood,
    warm-started from ``avg``. Each epoch halves its step until the loss
    does not increase, so the loss is non-increasing over epochs. Only
    (observation, action) pairs are read; set ``fit_std=False`` to regress
    the mean alone.
    """
    if len(buf) == 0:
        raise ContractViolationError("cannot fit an average policy to an empty buffer")
    if epochs == 0:
        return avg.copy()
    xs = np.stack([item[0] for item in buf.items])
    acts = np.stack([item[1] for item in buf.items])
    n = xs.shape[0]

    def nll(policy: AveragePolicy) -> float:
        z = (acts - policy.mean_batch(xs)) / policy.std
        return float(np.mean(np.sum(0.5 * z * z, axis=1)) + policy._logp_const)

    current = avg.copy()
    loss = nll(current)
    for _ in range(epochs):
        means, cache = mlp_forward_batch(current.weights, current.biases, xs)
        resid = (means - acts) / (current.std**2)
        d_ws, d_bs = mlp_backward(current.weights, cache, resid / n)
        if fit_std:
            z2 = ((acts - means) / current.std) ** 2
            d_log_std = np.mean(1.0 - z2, axis=0)
        else:
            d_log_std = np.zeros_like(current.log_std)
        step_lr = lr
        for _ in range(30):
            candidate = current.with_params(
                [w - step_lr * dw for w, dw in zip(current.weights, d_ws)],
                [b - step_lr * db for b, db in zip(current.biases, d_bs)],
                current.log_std - step_lr * d_log_std,
            )
            cand_loss = nll(candidate)
            if math.isfinite(cand_loss) and cand_loss <= loss + 1e-9:
                current, loss = candidate, cand_loss
                break
            step_lr *= 0.5
        # All halvings failed: keep the current parameters for this epoch.
    return current


# ---------------------------------------------------------------------------
# Checkpoint format (version 1)
#
#   bytes 0..3   magic "LGPC"
#   bytes 4..7   format version, little-endian uint32
#   bytes 8..11  header length H, little-endian uint32
#   bytes 12..12+H  UTF-8 JSON header: kind, input_dim, hidden, output_dim,
#                   activation, action_low, action_high
#   remainder    float64 little-endian arrays in order: W0, b0, W1, b1, ...,
#                then log_std; weight matrices are row-major (out, in)
# ---------------------------------------------------------------------------

_POLICY_KINDS = {"gaussian": GaussianPolicy, "average": AveragePolicy}


def policy_to_bytes(policy: GaussianPolicy) -> bytes:
    header = json.dumps(
        {
            "kind": policy.kind,
            "input_dim": policy.spec.input_dim,
            "hidden": list(policy.spec.hidden),
            "output_dim": policy.spec.output_dim,
            "activation": policy.spec.activation,
            "action_low": policy.action_low.tolist(),
            "action_high": policy.action_high.tolist(),
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for w, b in zip(policy.weights, policy.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(policy.log_std, dtype="<f8").tobytes())
    return b"".join(parts)


def policy_from_bytes(data: bytes, source: str = "<bytes>") -> GaussianPolicy:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: bad magic at offset 0 (not a policy checkpoint)")
    if len(data) < 12:
        raise CheckpointError(f"{source}: truncated header at offset {len(data)}")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{source}: unsupported format version {version} at offset 4"
        )
    if len(data) < 12 + header_len:
        raise CheckpointError(f"{source}: truncated JSON header at offset {len(data)}")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: invalid JSON header at offset 12: {exc}") from exc
    try:
        spec = MlpSpec(
            input_dim=int(header["input_dim"]),
            hidden=tuple(int(h) for h in header["hidden"]),
            output_dim=int(header["output_dim"]),
            activation=str(header["activation"]),
        )
        kind = header["kind"]
        low = np.asarray(header["action_low"], dtype=np.float64)
        high = np.asarray(header["action_high"], dtype=np.float64)
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise CheckpointError(f"{source}: malformed header fields at offset 12: {exc}") from exc
    if kind not in _POLICY_KINDS:
        raise CheckpointError(f"{source}: unknown policy kind {kind!r} at offset 12")
    if low.shape != (spec.output_dim,) or high.shape != (spec.output_dim,):
        raise CheckpointError(
            f"{source}: action bounds do not match output_dim at offset 12"
        )
    offset = 12 + header_len
    weights, biases = [], []
    for out_dim, in_dim in spec.layer_dims:
        for shape in ((out_dim, in_dim), (out_dim,)):
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointError(
                    f"{source}: array data truncated at offset {offset} "
                    f"(need {8 * count} bytes)"
                )
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
            offset = end
            if len(shape) == 2:
                weights.append(arr.copy())
            else:
                biases.append(arr.copy())
    end = offset + 8 * spec.output_dim
    if end > len(data):
        raise CheckpointError(f"{source}: log_std truncated at offset {offset}")
    log_std = np.frombuffer(data, dtype="<f8", count=spec.output_dim, offset=offset).copy()
    offset = end
    if offset != len(data):
        raise CheckpointError(
            f"{source}: {len(data) - offset} unexpected trailing bytes at offset {offset}"
        )
    policy = _POLICY_KINDS[kind](spec, weights, biases, log_std, low, high)
    if not np.all(np.isfinite(policy.get_flat())):
        raise CheckpointError(f"{source}: non-finite parameters at offset {12 + header_len}")
    return policy


def save_policy(policy: GaussianPolicy, path) -> None:
    import os

    data = policy_to_bytes(policy)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_policy(path) -> GaussianPolicy:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    return policy_from_bytes(data, source=str(path))


def policy_fingerprint(policy) -> str:
    """Stable hash of all parameters; equal iff the parameters are equal."""
    if isinstance(policy, GaussianPolicy):
        return hashlib.sha256(policy_to_bytes(policy)).hexdigest()
    return hashlib.sha256(repr(policy).encode()).hexdigest()
