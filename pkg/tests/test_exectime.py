import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_cell, make_task
from udec.config import NetworkConfig
from udec.exectime import (CLOUD, EDGE, InfeasibleAction, device_target, execute, local_time, queue_time,
                           subtask_energy, subtask_time, target_device)

# 4000 cycles/byte over 100 KB of input
WORKLOAD_TASK = dict(complexity=500.0, input_bits=8e5)


def oracle_time(task, target, k, cell):
    # single-expression evaluator written independently of the module
    cfg, m = cell.cfg, task.owner
    xi, d = task.complexity * task.input_bits, task.input_bits
    j = target - 1
    return {
        CLOUD: lambda: d / (k * cell.uplink[m]) + cfg.cloud_latency,
        EDGE: lambda: xi / cfg.server_core_freq + d / (k * cell.uplink[m]),
    }.get(target, lambda: xi / (cell.cores[j] * cfg.device_core_freq)
          + (0.0 if j == m else d / (k * cell.d2d[m, j])))()


def test_target_numbering():
    assert device_target(0) == 1 and target_device(3) == 2
    with pytest.raises(ValueError):
        target_device(EDGE)


def test_local_example():
    cell = make_cell(cores=[4, 1])
    task = make_task(owner=0, **WORKLOAD_TASK)
    assert task.workload == 4e8
    assert subtask_time(task, device_target(0), 0, cell) == pytest.approx(1.0, rel=1e-15)


def test_edge_example():
    cell = make_cell(uplink=1.6e6)
    task = make_task(**WORKLOAD_TASK)
    assert subtask_time(task, EDGE, 1, cell) == pytest.approx(0.9, rel=1e-14)


def test_cloud_with_zero_latency_is_pure_transmission():
    cell = make_cell(uplink=1.6e6, net=NetworkConfig(devices_per_server=2, cloud_latency=0.0))
    assert subtask_time(make_task(**WORKLOAD_TASK), CLOUD, 1, cell) == pytest.approx(0.5, rel=1e-15)


def test_cloud_time_ignores_workload():
    cell = make_cell()
    a = subtask_time(make_task(complexity=100.0), CLOUD, 3, cell)
    b = subtask_time(make_task(complexity=1500.0), CLOUD, 3, cell)
    assert a == b


def test_subcarriers_scale_transmission():
    cell = make_cell(uplink=1.6e6, net=NetworkConfig(devices_per_server=2, cloud_latency=0.0))
    assert subtask_time(make_task(**WORKLOAD_TASK), CLOUD, 5, cell) == pytest.approx(0.1, rel=1e-14)


def test_energy_examples():
    cell = make_cell(uplink=1.6e6)
    task = make_task(**WORKLOAD_TASK)
    assert subtask_energy(task, CLOUD, 1, cell) == pytest.approx(0.1, rel=1e-14)
    kappa_cell = make_cell(net=NetworkConfig(devices_per_server=2, energy_coefficient=1e-27))
    assert subtask_energy(task, device_target(0), 0, kappa_cell) == pytest.approx(4e-3, rel=1e-14)


def test_d2d_energy_charges_sender_radio_and_receiver_cpu():
    net = NetworkConfig(devices_per_server=2, energy_coefficient=1e-27)
    cell = make_cell(d2d=8e5, net=net)
    task = make_task(**WORKLOAD_TASK)
    want = net.tx_power_d2d * 8e5 / (2 * 8e5) + 1e-27 * 4e8 * 1e16
    assert subtask_energy(task, device_target(1), 2, cell) == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("target", [CLOUD, EDGE, 2])
def test_zero_size_input_costs_no_radio_energy(target):
    cell = make_cell()
    task = make_task(complexity=0.0, input_bits=0.0)
    assert subtask_energy(task, target, 1, cell) == 0.0


def test_infeasible_branches_raise():
    cell = make_cell(server_cache=[0, 1, 1], device_cache=[[1, 1, 1], [0, 1, 1]])
    with pytest.raises(InfeasibleAction):
        subtask_time(make_task(service=0), EDGE, 1, cell)
    with pytest.raises(InfeasibleAction):
        subtask_time(make_task(service=0), device_target(1), 1, cell)
    with pytest.raises(InfeasibleAction):
        subtask_time(make_task(service=1), CLOUD, 0, cell)
    with pytest.raises(InfeasibleAction):
        subtask_time(make_task(service=1), device_target(5), 1, cell)


def test_out_of_range_peer_is_infeasible():
    cell = make_cell(d2d=0.0)
    with pytest.raises(InfeasibleAction):
        subtask_time(make_task(), device_target(1), 1, cell)


def test_local_needs_no_subcarriers():
    cell = make_cell(server_cache=[0, 0, 0], device_cache=[[0, 0, 0], [0, 0, 0]])
    assert subtask_time(make_task(), device_target(0), 0, cell) > 0


def test_execute_reports_resources():
    cell = make_cell()
    edge = execute(make_task(), EDGE, 4, cell)
    assert (edge.subcarriers_used, edge.edge_cores_used, edge.cache_hit) == (4, 1, True)
    local = execute(make_task(), device_target(0), 4, cell)
    assert (local.subcarriers_used, local.edge_cores_used, local.cache_hit) == (0, 0, None)
    assert execute(make_task(), CLOUD, 2, cell).cache_hit is None


def test_queue_time_examples():
    cell = make_cell(cores=[2, 4])
    assert queue_time([], [], [0, 0], cell) == 0.0
    tasks = [make_task(owner=0, id=0), make_task(owner=1, id=1, complexity=700.0)]
    assert queue_time(tasks, [1, 2], [0, 0], cell) == pytest.approx(local_time(tasks, cell), rel=1e-15)
    mixed = tasks + [make_task(owner=1, id=2, service=2)]
    targets, alloc = [EDGE, CLOUD, device_target(0)], np.array([3, 5])
    want = sum(oracle_time(t, e, alloc[t.owner], cell) for t, e in zip(mixed, targets))
    assert queue_time(mixed, targets, alloc, cell) == pytest.approx(want, rel=1e-14)


def test_queue_time_names_the_bad_entry():
    cell = make_cell(server_cache=[1, 0, 1])
    tasks = [make_task(service=0), make_task(service=1)]
    with pytest.raises(InfeasibleAction, match="queue entry 1"):
        queue_time(tasks, [EDGE, EDGE], [1, 1], cell)
    with pytest.raises(ValueError):
        queue_time(tasks, [EDGE], [1, 1], cell)


def test_local_time_examples():
    cell = make_cell(cores=[4, 4])
    task = make_task(**WORKLOAD_TASK)
    assert local_time([], cell) == 0.0
    assert local_time([task], cell) == pytest.approx(1.0, rel=1e-15)
    tasks = [make_task(owner=m, id=m) for m in (0, 1)]
    assert local_time(tasks, make_cell(cores=[2, 2])) == pytest.approx(2 * local_time(tasks, make_cell(cores=[4, 4])))


@settings(max_examples=1000, deadline=None)
@given(
    data=st.data(),
    cores=st.lists(st.sampled_from([1, 2, 4]), min_size=3, max_size=3),
    uplink=st.floats(1e3, 1e7),
    d2d=st.floats(1e3, 1e7),
    latency=st.floats(0, 5),
)
def test_matches_independent_oracle(data, cores, uplink, d2d, latency):
    cell = make_cell(num_devices=3, uplink=uplink, d2d=d2d, cores=cores,
                     net=NetworkConfig(devices_per_server=3, cloud_latency=latency))
    task = make_task(owner=data.draw(st.integers(0, 2)), complexity=data.draw(st.floats(500, 1500)),
                     input_bits=data.draw(st.floats(8e5, 4e6)))
    target = data.draw(st.sampled_from([CLOUD, EDGE, 1, 2, 3]))
    k = data.draw(st.integers(1, 64))
    got = subtask_time(task, target, k, cell)
    assert got > 0
    assert got == pytest.approx(oracle_time(task, target, k, cell), rel=1e-12)
    assert subtask_energy(task, target, k, cell) >= 0


@settings(max_examples=200)
@given(st.sampled_from([CLOUD, EDGE, 1, 2]), st.booleans(), st.booleans(), st.integers(0, 3))
def test_branches_are_exhaustive(target, server_has, peer_has, k):
    cell = make_cell(server_cache=[int(server_has)] * 3, device_cache=[[1, 1, 1], [int(peer_has)] * 3])
    task = make_task(owner=0)
    needs = {CLOUD: k >= 1, EDGE: server_has and k >= 1, 1: True, 2: peer_has and k >= 1}[target]
    if needs:
        assert subtask_time(task, target, k, cell) > 0
    else:
        with pytest.raises(InfeasibleAction):
            subtask_time(task, target, k, cell)
