"""Piecewise subtask execution time and device-side energy.

Offload targets use the integer convention of the queue actions: ``CLOUD``
(-1), ``EDGE`` (0), or ``j + 1`` for device ``j`` (0-based). Choosing the
owner's own device means local execution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig
from .workload import Subtask

CLOUD = -1
EDGE = 0


class InfeasibleAction(ValueError):
    pass


def device_target(j: int) -> int:
    return j + 1


def target_device(e: int) -> int:
    if e < 1:
        raise ValueError(f"target {e} is not a device")
    return e - 1


def describe(e: int, owner: int | None = None) -> str:
    if e == CLOUD:
        return "cloud"
    if e == EDGE:
        return "edge"
    j = target_device(e)
    return "local" if j == owner else f"device {j}"


@dataclass(frozen=True)
class Cell:
    """What the time/energy model needs to know about one server's cell.

    Rates are per subcarrier; a link with ``k`` subcarriers runs at ``k`` times that.
    A zero D2D rate marks an out-of-range pair.
    """

    cfg: NetworkConfig
    cores: np.ndarray  # (M,)
    uplink: np.ndarray  # (M,) bits/s per subcarrier
    d2d: np.ndarray  # (M, M) bits/s per subcarrier
    server_cache: np.ndarray  # (Q,)
    device_cache: np.ndarray  # (M, Q)

    @property
    def num_devices(self) -> int:
        return len(self.cores)


@dataclass(frozen=True)
class ExecOutcome:
    time: float
    device_energy: float
    subcarriers_used: int
    edge_cores_used: int
    cache_hit: bool | None
    target: int


def _check(task: Subtask, target: int, k_sub: int, cell: Cell) -> None:
    m = task.owner
    if target == CLOUD:
        needs_link = True
    elif target == EDGE:
        if not cell.server_cache[task.service]:
            raise InfeasibleAction(f"service {task.service} is not cached at the server")
        needs_link = True
    else:
        j = target_device(target)
        if not 0 <= j < cell.num_devices:
            raise InfeasibleAction(f"no device {j} in this cell")
        if j == m:
            return
        if not cell.device_cache[j, task.service]:
            raise InfeasibleAction(f"service {task.service} is not cached at device {j}")
        if cell.d2d[m, j] <= 0:
            raise InfeasibleAction(f"devices {m} and {j} are out of D2D range")
        needs_link = True
    if needs_link and k_sub < 1:
        raise InfeasibleAction(f"{describe(target)} offload needs at least one subcarrier")


def subtask_time(task: Subtask, target: int, k_sub: int, cell: Cell) -> float:
    _check(task, target, k_sub, cell)
    cfg, m = cell.cfg, task.owner
    if target == CLOUD:
        return task.input_bits / (k_sub * cell.uplink[m]) + cfg.cloud_latency
    if target == EDGE:
        return task.workload / cfg.server_core_freq + task.input_bits / (k_sub * cell.uplink[m])
    j = target_device(target)
    compute = task.workload / (cell.cores[j] * cfg.device_core_freq)
    if j == m:
        return compute
    return compute + task.input_bits / (k_sub * cell.d2d[m, j])


def subtask_energy(task: Subtask, target: int, k_sub: int, cell: Cell) -> float:
    """Energy spent on devices (sender radio, or local/peer CPU). Server side is free."""
    _check(task, target, k_sub, cell)
    cfg, m = cell.cfg, task.owner
    compute = cfg.energy_coefficient * task.workload * cfg.device_core_freq**2
    if target in (CLOUD, EDGE):
        return cfg.tx_power_uplink * task.input_bits / (k_sub * cell.uplink[m])
    j = target_device(target)
    if j == m:
        return compute
    return cfg.tx_power_d2d * task.input_bits / (k_sub * cell.d2d[m, j]) + compute


def execute(task: Subtask, target: int, k_sub: int, cell: Cell) -> ExecOutcome:
    time = subtask_time(task, target, k_sub, cell)
    energy = subtask_energy(task, target, k_sub, cell)
    local = target >= 1 and target_device(target) == task.owner
    if target == EDGE:
        hit = True
    elif target >= 1 and not local:
        hit = True
    else:
        hit = None
    return ExecOutcome(
        time=time,
        device_energy=energy,
        subcarriers_used=0 if local else k_sub,
        edge_cores_used=int(target == EDGE),
        cache_hit=hit,
        target=target,
    )


def local_time(queue, cell: Cell) -> float:
    """Time to run every queued subtask on its owner's cores."""
    f = cell.cfg.device_core_freq
    return float(sum(task.workload / (cell.cores[task.owner] * f) for task in queue))


def queue_time(queue, targets, alloc, cell: Cell) -> float:
    """Sum of per-subtask times; ``alloc[m]`` is device m's subcarrier count."""
    if len(targets) != len(queue):
        raise ValueError("one target per queued subtask is required")
    total = 0.0
    for i, (task, target) in enumerate(zip(queue, targets)):
        try:
            total += subtask_time(task, target, int(alloc[task.owner]), cell)
        except InfeasibleAction as exc:
            raise InfeasibleAction(f"queue entry {i}: {exc}") from exc
    return total
