"""Per-server decision process: state snapshot, feasibility, rewards, transition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig, RewardWeights, WorkloadConfig
from .exectime import CLOUD, EDGE, Cell, ExecOutcome, InfeasibleAction, execute, local_time, target_device
from .netmodel import link_rate, snr_margin
from .workload import DeviceWorkload, ServiceCatalog, Subtask, TaskQueue, build_queue


@dataclass(frozen=True)
class SystemState:
    available_subcarriers: int
    cell: Cell
    queue: TaskQueue
    device_cpu: np.ndarray  # (M,) 1 = free to accept a peer's subtask
    server_cpu: np.ndarray  # (Y,) 1 = core free

    @property
    def uplink_rates(self) -> np.ndarray:
        return self.cell.uplink

    @property
    def d2d_rates(self) -> np.ndarray:
        return self.cell.d2d

    @property
    def server_cache(self) -> np.ndarray:
        return self.cell.server_cache

    @property
    def device_cache(self) -> np.ndarray:
        return self.cell.device_cache

    @property
    def required_services(self) -> tuple[int, ...]:
        return tuple(task.service for task in self.queue)

    @property
    def num_devices(self) -> int:
        return self.cell.num_devices


@dataclass(frozen=True)
class FastAction:
    targets: tuple[int, ...]
    alloc: np.ndarray  # (M,) subcarriers per device

    @classmethod
    def make(cls, targets, alloc) -> "FastAction":
        return cls(tuple(int(t) for t in targets), np.asarray(alloc, dtype=int))


@dataclass
class Feasibility:
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return not self.violations


def feasible(state: SystemState, action: FastAction) -> Feasibility:
    report = Feasibility()
    cell, queue = state.cell, state.queue
    if len(action.targets) != len(queue):
        report.violations.append(f"action has {len(action.targets)} targets for {len(queue)} queued subtasks")
        return report
    if len(action.alloc) != cell.num_devices or np.any(action.alloc < 0):
        report.violations.append("allocation must give a non-negative count per device")
        return report
    if action.alloc.sum() > state.available_subcarriers:
        report.violations.append(
            f"subcarrier budget: {int(action.alloc.sum())} allocated, {state.available_subcarriers} available"
        )
    edge = 0
    peers: dict[int, int] = {}
    for i, (task, e) in enumerate(zip(queue, action.targets)):
        m, q = task.owner, task.service
        k = action.alloc[m]
        if e == CLOUD:
            if k < 1:
                report.violations.append(f"entry {i}: cloud offload without subcarriers")
        elif e == EDGE:
            edge += 1
            if not cell.server_cache[q]:
                report.violations.append(f"entry {i}: edge target but service {q} not cached at the server")
            if k < 1:
                report.violations.append(f"entry {i}: edge offload without subcarriers")
        elif 1 <= e <= cell.num_devices:
            j = target_device(e)
            if j == m:
                continue
            if not cell.device_cache[j, q]:
                report.violations.append(f"entry {i}: service {q} not cached at device {j}")
            if cell.d2d[m, j] <= 0:
                report.violations.append(f"entry {i}: device {j} out of D2D range")
            if k < 1:
                report.violations.append(f"entry {i}: D2D offload without subcarriers")
            peers[j] = peers.get(j, 0) + 1
            if not state.device_cpu[j] or peers[j] > 1:
                report.violations.append(f"entry {i}: device {j} has no free CPU")
        else:
            report.violations.append(f"entry {i}: unknown target {e}")
    if edge > state.server_cpu.sum():
        report.violations.append(f"edge cores: {edge} requested, {int(state.server_cpu.sum())} free")
    return report


def reroute(state: SystemState, action: FastAction) -> FastAction:
    """Send edge/D2D picks for services cached nowhere suitable to the cloud.

    Without subcarriers for the owner the subtask falls back to local execution.
    """
    cell = state.cell
    targets = []
    for task, e in zip(state.queue, action.targets):
        m, q = task.owner, task.service
        miss = (e == EDGE and not cell.server_cache[q]) or (
            e >= 1 and target_device(e) != m and not cell.device_cache[target_device(e), q]
        )
        if miss:
            e = CLOUD if action.alloc[m] >= 1 else m + 1
        targets.append(e)
    return FastAction(tuple(targets), action.alloc)


@dataclass(frozen=True)
class PeriodOutcome:
    entries: tuple[ExecOutcome, ...]
    exe_time: float
    local_time: float
    energy: float
    subcarriers: int
    edge_cores: int
    hits: int
    requests: int
    rerouted: int = 0

    @property
    def time_ratio(self) -> float:
        return self.exe_time / self.local_time if self.local_time > 0 else 0.0


def run_action(state: SystemState, action: FastAction) -> PeriodOutcome:
    """Execute a feasible action on a state without touching any environment."""
    report = feasible(state, action)
    if not report:
        raise InfeasibleAction("; ".join(report.violations))
    cell = state.cell
    entries = tuple(
        execute(task, e, int(action.alloc[task.owner]), cell) for task, e in zip(state.queue, action.targets)
    )
    return PeriodOutcome(
        entries=entries,
        exe_time=float(sum(o.time for o in entries)),
        local_time=local_time(state.queue, cell),
        energy=float(sum(o.device_energy for o in entries)),
        subcarriers=int(action.alloc.sum()),
        edge_cores=sum(o.edge_cores_used for o in entries),
        hits=int(sum(cell.server_cache[t.service] for t in state.queue)),
        requests=len(state.queue),
    )


def reward_fast(state: SystemState, action: FastAction, outcome: PeriodOutcome, w: RewardWeights) -> float:
    """Fast-tier cost: weighted time ratio, subcarrier usage and edge-core usage.

    The time ratio is clamped at 1 (no worse than local) and is 0 for an empty queue.
    """
    if action.alloc.sum() > state.available_subcarriers:
        raise InfeasibleAction("subcarrier budget exceeded")
    ratio = min(outcome.time_ratio, 1.0)
    comm = action.alloc.sum() / state.available_subcarriers if state.available_subcarriers else 0.0
    cores = state.server_cpu.sum()
    edge = sum(1 for e in action.targets if e == EDGE)
    if edge > cores:
        raise InfeasibleAction("edge core budget exceeded")
    comp = edge / cores if cores else 0.0
    return float(w.mu1 * ratio + w.mu2 * comm + w.mu3 * comp)


def reward_slow(placement: np.ndarray, sizes: np.ndarray, capacity: float, time_ratio: float, w: RewardWeights) -> float:
    """Slow-tier cost over a caching window.

    ``time_ratio`` is the window mean of the per-period execution/local ratios,
    each clamped at 1.
    """
    used = float(np.asarray(placement) @ sizes)
    if used > capacity:
        raise InfeasibleAction(f"placement needs {used:.4g} bits, capacity is {capacity:.4g}")
    storage = used / capacity if capacity > 0 else 0.0
    return float(w.zeta1 * min(time_ratio, 1.0) + w.zeta2 * storage)


@dataclass
class ServiceHistory:
    """Per-service request counts since the last caching decision."""

    counts: np.ndarray

    @classmethod
    def empty(cls, num_services: int) -> "ServiceHistory":
        return cls(np.zeros(num_services, dtype=np.int64))

    def record(self, services) -> None:
        for q in services:
            self.counts[q] += 1

    def frequencies(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total else np.zeros(len(self.counts))


class CellEnv:
    """One edge server, its devices and its task queue.

    Call ``begin_period`` with the period's fading, then ``observe`` and ``step``.
    Subcarriers and CPU cores are fully replenished at every period.
    """

    def __init__(
        self,
        n: int,
        net: NetworkConfig,
        work: WorkloadConfig,
        cores: np.ndarray,
        uplink_distance: np.ndarray,
        d2d_distance: np.ndarray,
        catalog: ServiceCatalog,
        device_cache: np.ndarray,
        device_rngs: list[np.random.Generator],
    ):
        self.n = n
        self.net = net
        self.work = work
        self.cores = np.asarray(cores)
        self.uplink_distance = np.asarray(uplink_distance)
        self.d2d_distance = np.asarray(d2d_distance)
        self.catalog = catalog
        self.device_cache = device_cache
        self.devices = [DeviceWorkload(m, work, catalog, rng) for m, rng in enumerate(device_rngs)]
        self.deferred: list[Subtask] = []
        self.history = ServiceHistory.empty(catalog.num_services)
        self.server_cache = np.zeros(catalog.num_services, dtype=np.int8)
        self.state: SystemState | None = None
        self.t = -1

    @property
    def num_devices(self) -> int:
        return len(self.cores)

    def set_cache(self, placement: np.ndarray) -> None:
        self.server_cache = np.asarray(placement, dtype=np.int8).copy()

    def begin_period(self, t: int, uplink_fading: np.ndarray, d2d_fading: np.ndarray) -> SystemState:
        cfg = self.net
        up = link_rate(1, cfg.subcarrier_bandwidth, cfg.tx_power_uplink, uplink_fading,
                       snr_margin(cfg.target_ber_uplink), self.uplink_distance, cfg.path_loss_exponent,
                       cfg.noise_power)
        ok = (self.d2d_distance <= cfg.d2d_range) & ~np.eye(self.num_devices, dtype=bool)
        d2d = link_rate(1, cfg.subcarrier_bandwidth, cfg.tx_power_d2d, d2d_fading,
                        snr_margin(cfg.target_ber_d2d), np.where(ok, self.d2d_distance, 1.0),
                        cfg.path_loss_exponent, cfg.noise_power)
        cell = Cell(cfg, self.cores, np.asarray(up), np.where(ok, d2d, 0.0), self.server_cache, self.device_cache)

        waiting = {task.owner for task in self.deferred}
        requests = list(self.deferred)
        for dev in self.devices:
            if dev.owner not in waiting:
                task = dev.request()
                if task is not None:
                    requests.append(task)
        queue, self.deferred = build_queue(requests, self.work.queue_capacity, self.n, t)
        busy = np.zeros(self.num_devices, dtype=bool)
        for task in queue:
            busy[task.owner] = True
        self.t = t
        self.state = SystemState(
            available_subcarriers=cfg.subcarriers,
            cell=cell,
            queue=queue,
            device_cpu=(~busy).astype(np.int8),
            server_cpu=np.ones(cfg.server_cores, dtype=np.int8),
        )
        return self.state

    def observe(self) -> SystemState:
        if self.state is None:
            raise RuntimeError("begin_period must be called first")
        return self.state

    def step(self, action: FastAction, w: RewardWeights) -> tuple[SystemState, PeriodOutcome, float]:
        state = self.observe()
        effective = reroute(state, action)
        rerouted = sum(a != b for a, b in zip(action.targets, effective.targets))
        outcome = run_action(state, effective)
        outcome = PeriodOutcome(**{**outcome.__dict__, "rerouted": rerouted})
        reward = reward_fast(state, effective, outcome, w)
        self.history.record(state.required_services)

        device_cpu = state.device_cpu.copy()
        for e in effective.targets:
            if e >= 1:
                device_cpu[target_device(e)] = 0
        server_cpu = state.server_cpu.copy()
        server_cpu[: outcome.edge_cores] = 0
        after = SystemState(
            available_subcarriers=state.available_subcarriers - int(effective.alloc.sum()),
            cell=state.cell,
            queue=TaskQueue((), self.n, self.t, self.work.queue_capacity),
            device_cpu=device_cpu,
            server_cpu=server_cpu,
        )
        self.state = after
        return after, outcome, reward


SLOT_BASE = 7


def fast_encoding_size(queue_capacity: int, num_devices: int) -> int:
    return queue_capacity * (SLOT_BASE + num_devices) + 4


def encode_fast(state: SystemState, work: WorkloadConfig) -> np.ndarray:
    """Fixed-length feature vector of the whole state.

    Per queue slot: workload, input size, owner cores, edge-cached flag,
    per-device cached flags, owner uplink and best D2D spectral efficiency
    (rate / B), occupancy flag. Then four global fractions. Empty slots are zero.
    """
    cell, cfg = state.cell, state.cell.cfg
    m_count = cell.num_devices
    width = SLOT_BASE + m_count
    slots = np.zeros((work.queue_capacity, width))
    xi_max = work.complexity_range[1] / 8 * work.input_size_range[1]
    d_max = work.input_size_range[1]
    cores_max = max(cfg.device_core_choices)
    for i, task in enumerate(state.queue):
        m, q = task.owner, task.service
        slots[i, 0] = task.workload / xi_max
        slots[i, 1] = task.input_bits / d_max
        slots[i, 2] = cell.cores[m] / cores_max
        slots[i, 3] = cell.server_cache[q]
        slots[i, 4 : 4 + m_count] = cell.device_cache[:, q]
        slots[i, 4 + m_count] = cell.uplink[m] / cfg.subcarrier_bandwidth
        slots[i, 5 + m_count] = cell.d2d[m].max() / cfg.subcarrier_bandwidth
        slots[i, 6 + m_count] = 1.0
    glob = np.array(
        [
            state.available_subcarriers / cfg.subcarriers,
            state.device_cpu.mean(),
            state.server_cpu.mean(),
            cell.server_cache.mean(),
        ]
    )
    return np.concatenate([slots.ravel(), glob])


def encode_slow(history: ServiceHistory, placement: np.ndarray) -> np.ndarray:
    """Window request frequencies followed by the current placement bits (length 2Q)."""
    return np.concatenate([history.frequencies(), np.asarray(placement, dtype=float)])
