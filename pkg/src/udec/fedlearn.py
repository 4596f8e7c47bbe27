"""Federated averaging of the slow-tier caching model, and a centralized reference.

Each server keeps its own replay memory of caching windows (``FedWorker``).
The controller side only ever sees parameter deltas and sample counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FedConfig, LearnerConfig
from .learner import AdamState, MlpParams, ReplayBuffer, q_regression_step


@dataclass
class GlobalModel:
    params: MlpParams
    round: int = 0
    psi: float = 1.0

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError("psi must be > 0")


@dataclass(frozen=True)
class LocalUpdate:
    delta: MlpParams
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 0:
            raise ValueError("sample_count must be >= 0")


@dataclass
class FedWorker:
    """One server's private training data and optimizer state."""

    buffer: ReplayBuffer
    rng: np.random.Generator
    adam: AdamState | None = None
    sample_count: int = 0


def _fit(params: MlpParams, adam: AdamState, buffer: ReplayBuffer, rng, steps: int, cfg: LearnerConfig) -> None:
    for _ in range(steps):
        if len(buffer) == 0:
            break
        idx = buffer.sample_indices(cfg.batch_size, rng)
        s, a, r, *_ = buffer.batch(idx)
        q_regression_step(params, adam, s, a, r, cfg.huber_delta)


def local_train(model: GlobalModel, worker: FedWorker, steps: int, cfg: LearnerConfig) -> LocalUpdate:
    """Train a copy of the global weights on local windows; return W_n - W and the count."""
    if not model.params.is_finite():
        raise FloatingPointError("global model has non-finite parameters")
    local = model.params.copy()
    if worker.adam is None:
        worker.adam = AdamState.like(local, cfg.lr)
    _fit(local, worker.adam, worker.buffer, worker.rng, steps, cfg)
    if not local.is_finite():
        raise FloatingPointError("local training produced non-finite parameters")
    return LocalUpdate(local.map(np.subtract, model.params), worker.sample_count)


def fed_average(model: GlobalModel, updates, psi: float | None = None, weighting: str = "samples",
                literal_sign: bool = False) -> GlobalModel:
    """W + psi * sum_n w_n H_n with sample-count (or uniform) weights.

    With ``literal_sign`` the deltas are negated (H_n = W - W_n), which moves
    the global model away from the local ones.
    """
    updates = list(updates)
    if not updates:
        raise ValueError("fed_average needs at least one update")
    psi = model.psi if psi is None else psi
    shapes = model.params.sizes
    for u in updates:
        if u.delta.sizes != shapes:
            raise ValueError("update shape does not match the global model")
    counts = np.array([u.sample_count for u in updates], dtype=float)
    if weighting == "uniform" or counts.sum() == 0:
        weights = np.full(len(updates), 1.0 / len(updates))
    elif weighting == "samples":
        weights = counts / counts.sum()
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    sign = -1.0 if literal_sign else 1.0

    def combine(w0, *deltas):
        # Average around the elementwise minimum so identical deltas come back
        # exactly; summing sorted terms makes the result independent of order.
        stack = np.stack(deltas)
        ref = stack.min(axis=0)
        terms = np.stack([wt * (d - ref) for wt, d in zip(weights, stack)])
        mean = ref + np.sort(terms, axis=0).sum(axis=0)
        return w0 + sign * psi * mean

    new = model.params.map(combine, *(u.delta for u in updates))
    return GlobalModel(new, model.round + 1, model.psi)


def fl_round(model: GlobalModel, workers, steps: int, cfg: LearnerConfig, fed: FedConfig) -> GlobalModel:
    """Broadcast, train locally on every server, aggregate.

    Workers that raise are left out of the average; if all fail the first
    error is re-raised.
    """
    updates, errors = [], []
    for worker in workers:
        try:
            updates.append(local_train(model, worker, steps, cfg))
        except (FloatingPointError, ValueError) as exc:
            errors.append(exc)
    if not updates:
        raise RuntimeError("every federated worker failed") from (errors[0] if errors else None)
    return fed_average(model, updates, fed.psi, fed.weighting, fed.literal_sign)


def pooled_buffer(workers, capacity: int | None = None) -> ReplayBuffer:
    """Union of the workers' stored transitions, in worker order."""
    first = workers[0].buffer
    total = sum(len(w.buffer) for w in workers)
    pool = ReplayBuffer(capacity or max(total, 1), first.states.shape[1], first.next_masks.shape[1])
    names = ("states", "actions", "rewards", "next_states", "next_masks", "terminal")
    for name in names:
        parts = [getattr(w.buffer, name)[: len(w.buffer)] for w in workers]
        data = np.concatenate(parts)[-pool.capacity :]
        getattr(pool, name)[: len(data)] = data
    pool.size = min(total, pool.capacity)
    pool.pos = pool.size % pool.capacity
    return pool


def centralized_train(model: GlobalModel, pool: ReplayBuffer, steps: int, cfg: LearnerConfig,
                      adam: AdamState, rng: np.random.Generator) -> GlobalModel:
    """A single learner on everyone's pooled windows."""
    params = model.params.copy()
    _fit(params, adam, pool, rng, steps, cfg)
    if not params.is_finite():
        raise FloatingPointError("centralized training produced non-finite parameters")
    return GlobalModel(params, model.round + 1, model.psi)
