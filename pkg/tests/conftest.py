import numpy as np
import pytest

from udec.config import ExperimentConfig, NetworkConfig, WorkloadConfig
from udec.exectime import Cell
from udec.mdpenv import SystemState
from udec.workload import Subtask, TaskQueue


def make_cell(num_devices=2, num_services=3, uplink=1e5, d2d=5e4, cores=None, server_cache=None,
              device_cache=None, net=None):
    """A cell with hand-set per-subcarrier rates; every D2D pair is in range."""
    net = net or NetworkConfig(devices_per_server=num_devices)
    cores = np.asarray(cores if cores is not None else [1] * num_devices)
    up = np.full(num_devices, float(uplink))
    link = np.full((num_devices, num_devices), float(d2d))
    np.fill_diagonal(link, 0.0)
    sc = np.ones(num_services, dtype=np.int8) if server_cache is None else np.asarray(server_cache, dtype=np.int8)
    dc = (np.ones((num_devices, num_services), dtype=np.int8) if device_cache is None
          else np.asarray(device_cache, dtype=np.int8))
    return Cell(net, cores, up, link, sc, dc)


def make_task(owner=0, service=0, complexity=1000.0, input_bits=8e5, output_bits=4e5, id=0):
    return Subtask(id, complexity, input_bits, output_bits, service, owner)


def make_state(cell, tasks, subcarriers=None, cores_free=None):
    queue = TaskQueue(tuple(tasks), 0, 0, max(len(tasks), 1))
    busy = np.zeros(cell.num_devices, dtype=bool)
    for t in tasks:
        busy[t.owner] = True
    y = cell.cfg.server_cores if cores_free is None else cores_free
    return SystemState(
        available_subcarriers=cell.cfg.subcarriers if subcarriers is None else subcarriers,
        cell=cell,
        queue=queue,
        device_cpu=(~busy).astype(np.int8),
        server_cpu=np.ones(y, dtype=np.int8),
    )


@pytest.fixture
def small_cfg():
    return ExperimentConfig(
        network=NetworkConfig(num_servers=2, devices_per_server=3),
        workload=WorkloadConfig(num_services=6),
        periods=40,
        slow_interval=10,
        caching="pscpp",
    )
