"""Service catalog, sequential subtask chains and per-server task queues."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import BITS_PER_BYTE, WorkloadConfig


def zipf_popularity(skew: float, num_services: int) -> np.ndarray:
    """Normalized Zipf request probabilities for services ranked 1..Q."""
    if num_services < 1:
        raise ValueError("num_services must be >= 1")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    weights = np.arange(1, num_services + 1, dtype=float) ** -skew
    return weights / weights.sum()


@dataclass(frozen=True)
class ServiceCatalog:
    sizes: np.ndarray  # bits, (Q,)
    skew: float
    popularity: np.ndarray  # (Q,)

    @property
    def num_services(self) -> int:
        return len(self.sizes)

    @classmethod
    def generate(cls, cfg: WorkloadConfig, rng: np.random.Generator) -> "ServiceCatalog":
        lo, hi = cfg.service_size_range
        sizes = rng.uniform(lo, hi, size=cfg.num_services)
        return cls(sizes, cfg.zipf_skew, zipf_popularity(cfg.zipf_skew, cfg.num_services))


@dataclass(frozen=True)
class Subtask:
    """One link of a sequential task chain.

    ``complexity`` is in cycles/bit; sizes are in bits.
    """

    id: int
    complexity: float
    input_bits: float
    output_bits: float
    service: int
    owner: int

    @property
    def workload(self) -> float:
        """CPU cycles needed: complexity x input size."""
        return self.complexity * self.input_bits


def generate_task(
    rng: np.random.Generator,
    cfg: WorkloadConfig,
    catalog: ServiceCatalog,
    owner: int = 0,
    first_id: int = 0,
) -> list[Subtask]:
    """Draw a chain of subtasks; each input is the predecessor's output."""
    lo_v, hi_v = cfg.chain_length_range
    length = int(rng.integers(lo_v, hi_v + 1))
    sizes = rng.uniform(*cfg.input_size_range, size=length + 1)
    complexity = rng.uniform(*cfg.complexity_range, size=length) / BITS_PER_BYTE
    services = rng.choice(catalog.num_services, size=length, p=catalog.popularity)
    return [
        Subtask(first_id + v, float(complexity[v]), float(sizes[v]), float(sizes[v + 1]), int(services[v]), owner)
        for v in range(length)
    ]


@dataclass(frozen=True)
class TaskQueue:
    entries: tuple[Subtask, ...]
    server: int
    period: int
    capacity: int

    def __post_init__(self):
        if len(self.entries) > self.capacity:
            raise ValueError("queue longer than its capacity")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def build_queue(requests, capacity: int, server: int, period: int) -> tuple[TaskQueue, list]:
    """First-come-first-served: keep the first ``capacity`` requests, defer the rest."""
    requests = list(requests)
    queue = TaskQueue(tuple(requests[:capacity]), server, period, capacity)
    return queue, requests[capacity:]


@dataclass(frozen=True)
class CachePlacement:
    server_cache: np.ndarray  # (Q,) in {0, 1}, shared by all servers
    device_cache: np.ndarray  # (M, Q) in {0, 1}

    def storage_used(self, sizes: np.ndarray) -> float:
        return float(self.server_cache @ sizes)


def device_caches(
    rng: np.random.Generator, catalog: ServiceCatalog, num_devices: int, budget: float
) -> np.ndarray:
    """Static device caches: draw services by popularity until the budget is full."""
    q = catalog.num_services
    caches = np.zeros((num_devices, q), dtype=np.int8)
    for m in range(num_devices):
        used = 0.0
        for s in _popularity_order(rng, catalog):
            if used + catalog.sizes[s] <= budget:
                caches[m, s] = 1
                used += catalog.sizes[s]
    return caches


def _popularity_order(rng: np.random.Generator, catalog: ServiceCatalog) -> np.ndarray:
    # weighted sampling without replacement (Efraimidis-Spirakis keys, log form)
    keys = np.log(rng.random(catalog.num_services)) / catalog.popularity
    return np.argsort(-keys, kind="stable")


@dataclass
class DeviceWorkload:
    """Request generator for one device: an active chain, released one subtask per period."""

    owner: int
    cfg: WorkloadConfig
    catalog: ServiceCatalog
    rng: np.random.Generator
    pending: deque = field(default_factory=deque)
    next_id: int = 0

    def request(self) -> Subtask | None:
        """Next subtask to submit this period, or None when idle."""
        if not self.pending and self.rng.random() < self.cfg.arrival_prob:
            chain = generate_task(self.rng, self.cfg, self.catalog, self.owner, self.next_id)
            self.next_id += len(chain)
            self.pending.extend(chain)
        return self.pending.popleft() if self.pending else None
