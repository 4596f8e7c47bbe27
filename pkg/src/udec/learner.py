"""Dense Q-network, Adam, replay memory and the DQN update used by both tiers."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import LearnerConfig

_MAGIC = b"MLP1"


@dataclass
class MlpParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]``."""

    weights: list
    biases: list

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def map(self, fn, *others) -> "MlpParams":
        return MlpParams(
            [fn(w, *(o.weights[i] for o in others)) for i, w in enumerate(self.weights)],
            [fn(b, *(o.biases[i] for o in others)) for i, b in enumerate(self.biases)],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(sizes, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def zeros_like(params: MlpParams) -> MlpParams:
    return params.map(np.zeros_like)


def _check_input(params: MlpParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {params.weights[0].shape[0]}")


def _forward_cache(params: MlpParams, x: np.ndarray) -> list:
    acts = [x]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """Action values for one feature vector (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    return _forward_cache(params, x)[-1]


def backward(params: MlpParams, x, grad_out) -> MlpParams:
    """Gradient of ``sum(forward(x) * grad_out)`` with respect to the parameters."""
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    acts = _forward_cache(params, x)
    delta = np.asarray(grad_out, dtype=float)
    if delta.shape != acts[-1].shape:
        raise ValueError(f"output gradient shape {delta.shape} != output shape {acts[-1].shape}")
    batched = x.ndim == 2
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        a = acts[i]
        if batched:
            gw[i] = a.T @ delta
            gb[i] = delta.sum(axis=0)
        else:
            gw[i] = np.outer(a, delta)
            gb[i] = delta.copy()
        if i:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return MlpParams(gw, gb)


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: MlpParams, lr: float = 1e-3) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), 0, lr)


def adam_step(params: MlpParams, state: AdamState, grads: MlpParams) -> MlpParams:
    """One bias-corrected Adam update, in place; returns ``params``."""
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient")
    if grads.sizes != params.sizes:
        raise ValueError("gradient shapes do not match parameters")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class ReplayBuffer:
    """Ring buffer of (state, action, reward, next state, next mask, terminal)."""

    def __init__(self, capacity: int, state_dim: int, num_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.next_masks = np.ones((capacity, num_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state=None, next_mask=None, terminal=True) -> None:
        i = self.pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminal[i] = terminal
        self.next_states[i] = 0.0 if next_state is None else next_state
        self.next_masks[i] = True if next_mask is None else next_mask
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(self.size, size=batch)

    def batch(self, idx: np.ndarray) -> tuple:
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_masks[idx], self.terminal[idx])


def masked_max(q: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return q.max(axis=-1)
    return np.where(mask, q, -np.inf).max(axis=-1)


def td_target(transition, target_params: MlpParams, gamma: float) -> float:
    """r + gamma max_a Q_target(s', a), or r for a terminal transition.

    ``transition`` is ``(state, action, reward, next_state, next_mask, terminal)``;
    ``reward`` is the negated cost.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    _, _, reward, next_state, next_mask, terminal = transition
    if terminal or gamma == 0.0:
        return float(reward)
    return float(reward + gamma * masked_max(forward(target_params, next_state), next_mask))


def td_targets(rewards, next_states, next_masks, terminal, target_params: MlpParams, gamma: float) -> np.ndarray:
    """Vectorized ``td_target`` over a minibatch."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    out = np.asarray(rewards, dtype=float).copy()
    live = ~np.asarray(terminal)
    if gamma > 0.0 and live.any():
        q = forward(target_params, next_states[live])
        out[live] += gamma * masked_max(q, next_masks[live])
    return out


def epsilon_greedy(q, epsilon: float, rng: np.random.Generator, mask=None) -> int:
    """Greedy (lowest index on ties) with probability 1 - epsilon, else uniform.

    With a mask, both branches are restricted to allowed actions.
    """
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("no action values")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    allowed = np.arange(q.size) if mask is None else np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("no allowed action")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    return int(allowed[np.argmax(q[allowed])])


def huber_grad(err: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(err, -delta, delta)


def huber_loss(err: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))


def q_regression_step(params: MlpParams, adam: AdamState, states, actions, targets, delta: float) -> float:
    """Move Q(s, a) towards ``targets`` by one Adam step on the mean Huber loss; returns the loss."""
    q = forward(params, states)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    grad = np.zeros_like(q)
    grad[rows, actions] = huber_grad(err, delta) / len(actions)
    adam_step(params, adam, backward(params, states, grad))
    if not params.is_finite():
        raise FloatingPointError("non-finite network parameters after update")
    return float(huber_loss(err, delta).mean())


class DQN:
    """Online and target networks, Adam state and replay memory."""

    def __init__(self, input_dim: int, num_actions: int, cfg: LearnerConfig, rng: np.random.Generator,
                 hidden=None, warmup=None):
        self.cfg = cfg
        self.hidden = tuple(cfg.hidden if hidden is None else hidden)
        self.warmup = cfg.warmup if warmup is None else warmup
        self.rng = rng
        self.params = init_mlp((input_dim, *self.hidden, num_actions), rng)
        self.target = self.params.copy()
        self.adam = AdamState.like(self.params, cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, input_dim, num_actions)
        self.updates = 0
        self.last_loss = float("nan")

    @property
    def num_actions(self) -> int:
        return self.params.weights[-1].shape[1]

    def q_values(self, x) -> np.ndarray:
        return forward(self.params, x)

    def learn_batch(self, states, actions, targets) -> float:
        """One Adam step on the Huber loss of Q(s, a) against ``targets``."""
        self.last_loss = q_regression_step(self.params, self.adam, states, actions, targets, self.cfg.huber_delta)
        self.updates += 1
        if self.updates % self.cfg.target_sync == 0:
            self.target = self.params.copy()
        return self.last_loss

    def train_step(self) -> float | None:
        """Sample one minibatch and update, once the buffer holds ``max(warmup, batch)``."""
        if len(self.buffer) < max(self.warmup, self.cfg.batch_size):
            return None
        idx = self.buffer.sample_indices(self.cfg.batch_size, self.rng)
        s, a, r, s2, m2, term = self.buffer.batch(idx)
        y = td_targets(r, s2, m2, term, self.target, self.cfg.gamma)
        return self.learn_batch(s, a, y)


def params_to_bytes(params: MlpParams) -> bytes:
    """Magic, layer count, (rows, cols) per weight matrix, then every array as <f8."""
    shapes = [w.shape for w in params.weights]
    header = _MAGIC + struct.pack("<I", len(shapes)) + b"".join(struct.pack("<II", *s) for s in shapes)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return header + body


def params_from_bytes(data: bytes) -> MlpParams:
    if data[:4] != _MAGIC:
        raise ValueError("not a serialized network")
    (n,) = struct.unpack_from("<I", data, 4)
    off = 8
    shapes = []
    for _ in range(n):
        shapes.append(struct.unpack_from("<II", data, off))
        off += 8
    weights, biases = [], []
    for rows, cols in shapes:
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += w.nbytes
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=off)
        off += b.nbytes
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ValueError("trailing bytes after network parameters")
    return MlpParams(weights, biases)
