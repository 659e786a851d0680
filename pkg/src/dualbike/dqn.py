"""Dense Q-network engine in plain numpy: forward/backward, replay, TD targets.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row
vectors maps through ``x @ W + b``.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels

CHECKPOINT_VERSION = 1
LEAKY_SLOPE = 0.01
PRELU_INIT = 0.25
OUTPUT_ACTIVATIONS = (None, "leaky_relu", "prelu")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_layers: tuple = (1024, 512)
    hidden_activation: str = "relu"
    output_activation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if not self.hidden_layers or min(self.hidden_layers) < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if self.hidden_activation != "relu":
            raise ValueError("only ReLU hidden activations are supported")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "hidden_layers": list(self.hidden_layers),
                "hidden_activation": self.hidden_activation,
                "output_activation": self.output_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["input_dim"], d["output_dim"], tuple(d["hidden_layers"]),
                   d.get("hidden_activation", "relu"), d.get("output_activation"))


@dataclass
class QParams:
    spec: NetworkSpec
    weights: list
    biases: list
    prelu: np.ndarray = field(default_factory=lambda: np.array([PRELU_INIT]))

    def copy(self) -> "QParams":
        return QParams(self.spec, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.prelu.copy())

    def arrays(self) -> list:
        """All parameter arrays in a fixed order (weights, biases, PReLU slope)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        out.append(self.prelu)
        return out

    def with_arrays(self, arrays) -> "QParams":
        arrays = list(arrays)
        n = len(self.weights)
        return QParams(self.spec, arrays[0:2 * n:2], arrays[1:2 * n:2], arrays[2 * n])


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> QParams:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    sizes = [spec.input_dim, *spec.hidden_layers, spec.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return QParams(spec, weights, biases, np.array([PRELU_INIT]))


def _output_act(spec, params, z):
    act = spec.output_activation
    if act is None:
        return z
    slope = LEAKY_SLOPE if act == "leaky_relu" else params.prelu[0]
    return np.where(z > 0, z, slope * z)


def forward(params: QParams, states: np.ndarray) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.shape[-1] != params.spec.input_dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, network expects {params.spec.input_dim}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return _output_act(params.spec, params, x)


def gradients(params: QParams, states, actions, targets):
    """Gradients of ``mean((Q(s, a) - y)^2)`` w.r.t. every parameter array."""
    x = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    batch = x.shape[0]
    acts = [x]
    last = len(params.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    q = _output_act(params.spec, params, z)
    rows = np.arange(batch)
    err = q[rows, actions] - targets
    loss = float(np.mean(err ** 2))

    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / batch
    act = params.spec.output_activation
    dprelu = np.zeros(1)
    if act is None:
        dz = dq
    elif act == "leaky_relu":
        dz = dq * np.where(z > 0, 1.0, LEAKY_SLOPE)
    else:
        a = params.prelu[0]
        dz = dq * np.where(z > 0, 1.0, a)
        dprelu[0] = np.sum(dq * np.where(z > 0, 0.0, z))

    gw, gb = [None] * (last + 1), [None] * (last + 1)
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ dz
        gb[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ params.weights[i].T) * (acts[i] > 0)
    grads = QParams(params.spec, gw, gb, dprelu)
    return grads, loss, q[rows, actions]


class SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def update(self, params: QParams, grads: QParams) -> QParams:
        lr = self.learning_rate
        return params.with_arrays([p - lr * g for p, g in zip(params.arrays(), grads.arrays())])


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def update(self, params: QParams, grads: QParams) -> QParams:
        g = grads.arrays()
        if self.m is None:
            self.m = [np.zeros_like(a) for a in g]
            self.v = [np.zeros_like(a) for a in g]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.learning_rate * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        out = []
        for k, (p, gk) in enumerate(zip(params.arrays(), g)):
            self.m[k] = b1 * self.m[k] + (1 - b1) * gk
            self.v[k] = b2 * self.v[k] + (1 - b2) * gk * gk
            out.append(p - lr_t * self.m[k] / (np.sqrt(self.v[k]) + self.eps))
        return params.with_arrays(out)


def descend(params: QParams, states, actions, targets, optimizer):
    """Gradient step returning ``(new_params, loss, Q(s, a) before the step)``."""
    if len(actions) == 0:
        raise ValueError("empty batch")
    with np.errstate(invalid="ignore", over="ignore"):
        grads, loss, q_sa = gradients(params, states, actions, targets)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(a)) for a in grads.arrays()):
        raise FloatingPointError(
            f"non-finite TD loss {loss}; |targets|max={np.max(np.abs(targets)):.3g}, "
            f"|W|max={max(np.max(np.abs(w)) for w in params.weights):.3g}")
    return optimizer.update(params, grads), loss, q_sa


def backward_step(params: QParams, states, actions, targets, learning_rate: float,
                  optimizer=None):
    """One descent step on the squared TD error; returns ``(new_params, loss)``.

    Targets are treated as constants. ``optimizer`` defaults to plain SGD
    with ``learning_rate``.
    """
    opt = optimizer if optimizer is not None else SGD(learning_rate)
    new, loss, _ = descend(params, states, actions, targets, opt)
    return new, loss


def td_targets(target_params: QParams, rewards, next_states, terminals, next_masks,
               gamma: float) -> np.ndarray:
    """``r`` for terminal samples, else ``r + gamma * max_{feasible a'} Q_target(s', a')``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    terminals = np.asarray(terminals, dtype=bool)
    masks = np.asarray(next_masks, dtype=bool)
    live = ~terminals
    if np.any(~masks[live].any(axis=1)):
        raise ValueError("non-terminal sample with no feasible next action")
    y = rewards.copy()
    if live.any() and gamma != 0.0:
        q = forward(target_params, np.asarray(next_states)[live])
        best = np.where(masks[live], q, -np.inf).max(axis=1)
        y[live] += gamma * best
    return y


def act_epsilon_greedy(q_values, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over feasible actions with probability ``epsilon``, else masked argmax."""
    mask = np.asarray(mask, dtype=np.bool_)
    if not mask.any():
        raise ValueError("no feasible action")
    if rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(mask)))
    return int(kernels.masked_argmax(np.asarray(q_values, dtype=np.float64), mask))


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 3_000_000
    learning_rate: float = 2.5e-4
    gamma: float = 0.99
    batch_size: int = 256
    buffer_size: int = 10_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    exploration_fraction: float = 0.5
    target_update_interval: int = 1_000
    train_frequency: int = 4
    learning_starts: int = 1_000
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def epsilon_schedule(step: int, config: TrainConfig) -> float:
    span = config.exploration_fraction * config.total_steps
    if span <= 0:
        return config.epsilon_end
    frac = min(step / span, 1.0)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return SGD(config.learning_rate)


class ReplayBuffer:
    """Fixed-size ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.size = 0
        self.pushed = 0

    def __len__(self):
        return self.size

    def push(self, sample) -> None:
        i = self.pushed % self.capacity
        self.states[i] = sample.state
        self.actions[i] = sample.action
        self.rewards[i] = sample.reward
        self.next_states[i] = sample.next_state
        self.terminals[i] = sample.terminal
        self.next_masks[i] = sample.next_mask
        self.pushed += 1
        self.size = min(self.size + 1, self.capacity)

    def ordered_actions(self) -> np.ndarray:
        """Stored actions from oldest to newest."""
        if self.size < self.capacity:
            return self.actions[:self.size].copy()
        i = self.pushed % self.capacity
        return np.concatenate([self.actions[i:], self.actions[:i]])

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"states": self.states[idx], "actions": self.actions[idx],
                "rewards": self.rewards[idx], "next_states": self.next_states[idx],
                "terminals": self.terminals[idx], "next_masks": self.next_masks[idx]}


def save_checkpoint(params: QParams, path, step: int = 0, extra: dict | None = None) -> None:
    arrays = params.arrays()
    meta = {"version": CHECKPOINT_VERSION, "spec": params.spec.to_dict(), "step": int(step),
            "shapes": [list(a.shape) for a in arrays], "extra": extra or {}}
    payload = {f"p{i}": np.ascontiguousarray(a, dtype=np.float64).ravel()
               for i, a in enumerate(arrays)}
    payload["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[QParams, int]:
    """Returns ``(params, step)``."""
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: checkpoint version {meta.get('version')!r} "
                                      f"!= {CHECKPOINT_VERSION}")
            arrays = [data[f"p{i}"].reshape(shape) for i, shape in enumerate(meta["shapes"])]
    except (zipfile.BadZipFile, EOFError, KeyError, OSError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    spec = NetworkSpec.from_dict(meta["spec"])
    n = len(spec.hidden_layers) + 1
    if len(arrays) != 2 * n + 1:
        raise CheckpointError(f"{path}: expected {2 * n + 1} arrays, found {len(arrays)}")
    params = QParams(spec, arrays[0:2 * n:2], arrays[1:2 * n:2], arrays[2 * n])
    return params, int(meta["step"])


def check_compatible(params: QParams, input_dim: int, output_dim: int) -> None:
    spec = params.spec
    if spec.input_dim != input_dim or spec.output_dim != output_dim:
        raise CheckpointError(f"network maps {spec.input_dim}->{spec.output_dim}, "
                              f"environment needs {input_dim}->{output_dim}")
