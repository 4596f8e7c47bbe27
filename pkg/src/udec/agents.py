"""Scheduling policies: baseline schemes, fair allocation, popularity caching and the DRL agent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exectime import CLOUD, EDGE, device_target, subtask_time, target_device
from .learner import DQN, ReplayBuffer, epsilon_greedy, forward
from .mdpenv import FastAction, ServiceHistory, SystemState, encode_slow
from .workload import ServiceCatalog


def fras_allocate(num_devices: int, subcarriers: int) -> np.ndarray:
    """Equal split; the remainder goes one each to the lowest device indices."""
    if num_devices < 1:
        raise ValueError("need at least one device")
    base, extra = divmod(subcarriers, num_devices)
    alloc = np.full(num_devices, base, dtype=int)
    alloc[:extra] += 1
    return alloc


def les_policy(state: SystemState) -> FastAction:
    targets = [device_target(task.owner) for task in state.queue]
    return FastAction.make(targets, np.zeros(state.num_devices, dtype=int))


def ees_policy(state: SystemState) -> FastAction:
    """Edge when the service is cached there (and a core is free), otherwise local."""
    free = int(state.server_cpu.sum())
    targets = []
    for task in state.queue:
        if state.server_cache[task.service] and free > 0:
            targets.append(EDGE)
            free -= 1
        else:
            targets.append(device_target(task.owner))
    return FastAction.make(targets, fras_allocate(state.num_devices, state.available_subcarriers))


def ces_policy(state: SystemState) -> FastAction:
    targets = [CLOUD] * len(state.queue)
    return FastAction.make(targets, fras_allocate(state.num_devices, state.available_subcarriers))


def feasible_targets(state: SystemState, task, free_cores: int, peer_cpu: np.ndarray) -> list[int]:
    """Local, cloud, edge when usable, and every D2D peer able to run ``task``."""
    m, q = task.owner, task.service
    options = [device_target(m), CLOUD]
    if state.server_cache[q] and free_cores > 0:
        options.append(EDGE)
    for j in range(state.num_devices):
        if j != m and peer_cpu[j] and state.device_cache[j, q] and state.d2d_rates[m, j] > 0:
            options.append(device_target(j))
    return options


def res_policy(state: SystemState, rng: np.random.Generator) -> FastAction:
    """Uniformly random target per subtask among those that need no rerouting."""
    alloc = fras_allocate(state.num_devices, state.available_subcarriers)
    free = int(state.server_cpu.sum())
    peer_cpu = state.device_cpu.copy()
    targets = []
    for task in state.queue:
        options = feasible_targets(state, task, free, peer_cpu)
        if alloc[task.owner] < 1:
            options = [options[0]]
        e = options[int(rng.integers(len(options)))]
        if e == EDGE:
            free -= 1
        elif e >= 1 and target_device(e) != task.owner:
            peer_cpu[target_device(e)] = 0
        targets.append(e)
    return FastAction.make(targets, alloc)


def pack_by_score(scores: np.ndarray, sizes: np.ndarray, capacity: float) -> np.ndarray:
    """Scan services by descending score (ties: lower index first); add every one that still fits."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    placement = np.zeros(len(scores), dtype=np.int8)
    used = 0.0
    for q in order:
        if used + sizes[q] <= capacity:
            placement[q] = 1
            used += sizes[q]
    return placement


def pscpp_place(catalog: ServiceCatalog, capacity: float) -> np.ndarray:
    """Cache the most popular services, skipping any that no longer fit."""
    return pack_by_score(catalog.popularity, catalog.sizes, capacity)


def brute_force_best(state: SystemState, w, tiers) -> tuple[float, FastAction]:
    """Exhaustive minimum of the fast-tier cost over feasible actions.

    Targets range over cloud, edge and every device; each device's allocation
    over ``tiers``. Only meant for tiny instances.
    """
    from itertools import product

    from .mdpenv import feasible, reward_fast, run_action

    m_count = state.num_devices
    options = [CLOUD, EDGE] + [device_target(j) for j in range(m_count)]
    best = None
    for targets in product(options, repeat=len(state.queue)):
        for alloc in product(tiers, repeat=m_count):
            action = FastAction.make(targets, alloc)
            if not feasible(state, action):
                continue
            cost = reward_fast(state, action, run_action(state, action), w)
            if best is None or cost < best[0]:
                best = (cost, action)
    if best is None:
        raise ValueError("no feasible action")
    return best


# ----------------------------------------------------------------------------
# Two-timescale DRL agent
# ----------------------------------------------------------------------------

# time ratios above this are treated alike (in features and training cost)
RATIO_CAP = 2.0


def slot_features_size(num_devices: int, num_tiers: int) -> int:
    offload = num_tiers - 1
    return 8 + 3 * offload + (num_devices - 1) * (1 + offload)


LOCAL_SLOT, CLOUD_SLOT, EDGE_SLOT = 0, 1, 2


def peers_of(owner: int, num_devices: int) -> list[int]:
    return [j for j in range(num_devices) if j != owner]


def action_index(target: int, tier: int, num_tiers: int, owner: int) -> int:
    """Flat index of (target, tier) for a subtask of ``owner``.

    Target slots are local, cloud, edge, then the other devices in index
    order; each slot spans ``num_tiers`` entries. Local is index 0.
    """
    if target == CLOUD:
        slot = CLOUD_SLOT
    elif target == EDGE:
        slot = EDGE_SLOT
    else:
        j = target_device(target)
        slot = LOCAL_SLOT if j == owner else 3 + (j if j < owner else j - 1)
    return slot * num_tiers + tier


def decode_action(index: int, num_tiers: int, owner: int) -> tuple[int, int]:
    slot, tier = divmod(int(index), num_tiers)
    if slot == LOCAL_SLOT:
        return device_target(owner), tier
    if slot == CLOUD_SLOT:
        return CLOUD, tier
    if slot == EDGE_SLOT:
        return EDGE, tier
    j = slot - 3
    return device_target(j if j < owner else j + 1), tier


@dataclass
class SlotContext:
    """Resources left while a queue is being decided entry by entry."""

    subcarriers: int
    free_cores: int
    total_cores: int
    peer_cpu: np.ndarray
    alloc: np.ndarray

    @classmethod
    def start(cls, state: SystemState) -> "SlotContext":
        return cls(
            subcarriers=int(state.available_subcarriers),
            free_cores=int(state.server_cpu.sum()),
            total_cores=int(state.server_cpu.sum()),
            peer_cpu=state.device_cpu.astype(bool).copy(),
            alloc=np.zeros(state.num_devices, dtype=int),
        )


def slot_mask(state: SystemState, task, ctx: SlotContext, tiers) -> np.ndarray:
    """Allowed (target, tier) pairs for one entry given what earlier entries took.

    Local runs take tier 0 only; offloads need a positive tier that fits the
    remaining budget (or equals the owner's existing allocation). Edge needs the
    service cached and a free core; a D2D peer needs the service, range and an idle CPU.
    """
    cell = state.cell
    m, q = task.owner, task.service
    n_t = len(tiers)
    mask = np.zeros((state.num_devices + 2) * n_t, dtype=bool)
    mask[0] = True
    held = ctx.alloc[m]
    tier_ok = np.array([
        k > 0 and (k == held if held > 0 else k <= ctx.subcarriers) for k in tiers
    ])
    if not tier_ok.any():
        return mask
    remote = [CLOUD]
    if cell.server_cache[q] and ctx.free_cores > 0:
        remote.append(EDGE)
    for j in range(state.num_devices):
        if j != m and ctx.peer_cpu[j] and cell.device_cache[j, q] and cell.d2d[m, j] > 0:
            remote.append(device_target(j))
    for e in remote:
        start = action_index(e, 0, n_t, m)
        mask[start : start + n_t] = tier_ok
    return mask


def slot_features(state: SystemState, task, ctx: SlotContext, tiers, slot: int, work) -> np.ndarray:
    """Per-entry encoding: times relative to local execution for every option.

    Layout: local time, workload, input size, owner cores, remaining
    subcarrier and core fractions, slot position, edge-cached flag; then the
    share of the remaining subcarriers each offload tier would take; then the
    edge and cloud time ratios per offload tier; then, for every other device
    in index order, a usable-peer flag and D2D time ratios per tier.
    """
    cell, cfg = state.cell, state.cell.cfg
    m, q = task.owner, task.service
    offload = [k for k in tiers if k > 0]
    t_loc = task.workload / (cell.cores[m] * cfg.device_core_freq)
    xi_max = work.complexity_range[1] / 8 * work.input_size_range[1]
    up = cell.uplink[m]
    head = [
        min(t_loc / 10.0, RATIO_CAP),
        task.workload / xi_max,
        task.input_bits / work.input_size_range[1],
        cell.cores[m] / max(cfg.device_core_choices),
        ctx.subcarriers / max(state.available_subcarriers, 1),
        ctx.free_cores / max(ctx.total_cores, 1),
        slot / work.queue_capacity,
        float(cell.server_cache[q]),
    ]
    share = [min(k / ctx.subcarriers, RATIO_CAP) if ctx.subcarriers else RATIO_CAP for k in offload]
    edge = [min((task.workload / cfg.server_core_freq + task.input_bits / (k * up)) / t_loc, RATIO_CAP) for k in offload]
    cloud = [min((cfg.cloud_latency + task.input_bits / (k * up)) / t_loc, RATIO_CAP) for k in offload]
    peers = []
    for j in peers_of(m, state.num_devices):
        usable = ctx.peer_cpu[j] and cell.device_cache[j, q] and cell.d2d[m, j] > 0
        peers.append(float(usable))
        if usable:
            comp = task.workload / (cell.cores[j] * cfg.device_core_freq)
            peers += [min((comp + task.input_bits / (k * cell.d2d[m, j])) / t_loc, RATIO_CAP) for k in offload]
        else:
            peers += [0.0] * len(offload)
    return np.array(head + share + edge + cloud + peers)


def slot_cost(task, target: int, k_sub: int, state: SystemState, ctx: SlotContext, w) -> float:
    """Training cost of one entry's decision.

    Time is relative to running that entry locally (capped at ``RATIO_CAP``); subcarriers
    are charged against what is still unallocated, edge cores against the cores
    free at the start of the period.
    """
    t = subtask_time(task, target, k_sub, state.cell)
    t_loc = subtask_time(task, device_target(task.owner), 0, state.cell)
    extra = k_sub - ctx.alloc[task.owner] if k_sub > ctx.alloc[task.owner] else 0
    comm = extra / ctx.subcarriers if ctx.subcarriers > 0 else 0.0
    comp = (target == EDGE) / ctx.total_cores if ctx.total_cores else 0.0
    return float(w.mu1 * min(t / t_loc, RATIO_CAP) + w.mu2 * comm + w.mu3 * comp)


def _commit(ctx: SlotContext, task, target: int, k_sub: int) -> None:
    m = task.owner
    if k_sub > ctx.alloc[m]:
        ctx.subcarriers -= k_sub - ctx.alloc[m]
        ctx.alloc[m] = k_sub
    if target == EDGE:
        ctx.free_cores -= 1
    elif target >= 1 and target_device(target) != m:
        ctx.peer_cpu[target_device(target)] = False


@dataclass
class SlotStep:
    features: np.ndarray
    mask: np.ndarray
    action: int
    cost: float


class CacheAgent:
    """Slow-tier bookkeeping of one server: request windows and private replay memory.

    Every closed window yields one terminal transition per service whose reward
    is that service's share of the window's requests, in units of the uniform
    share 1/Q (so a service at exactly average popularity scores 1).
    """

    def __init__(self, num_services: int, capacity: int):
        self.buffer = ReplayBuffer(capacity, slow_features_size(num_services), num_services)
        self.window = ServiceHistory.empty(num_services)
        self.total = ServiceHistory.empty(num_services)
        self.pending: np.ndarray | None = None
        self.requests_seen = 0

    def record_requests(self, services) -> None:
        services = list(services)
        self.window.record(services)
        self.total.record(services)
        self.requests_seen += len(services)

    def close_window(self, placement: np.ndarray) -> np.ndarray:
        """Store the finished window's transitions and return features for the next decision."""
        if self.pending is not None and self.window.counts.sum() > 0:
            q_count = len(self.window.counts)
            for q, r in enumerate(self.window.frequencies() * q_count):
                self.buffer.push(self.pending, q, r, terminal=True)
        x = slow_features(self.window, self.total, placement)
        self.pending = x
        self.window = ServiceHistory.empty(len(self.window.counts))
        return x


class TwoTimescaleAgent:
    """Per-server agent: a per-slot DQN over (target, tier) plus the server's cache agent.

    The slow network itself belongs to the caching policy (federated or
    centralized), which reads this server's ``cache`` memory.
    """

    def __init__(self, cfg, num_devices: int, rng: np.random.Generator):
        self.cfg = cfg
        self.learner_cfg = cfg.learner
        self.tiers = tuple(cfg.learner.subcarrier_tiers)
        self.num_devices = num_devices
        self.rng = rng
        self.fast = DQN(slot_features_size(num_devices, len(self.tiers)),
                        (num_devices + 2) * len(self.tiers), cfg.learner, rng)
        self.cache = CacheAgent(cfg.workload.num_services, cfg.learner.buffer_capacity)
        self.trajectory: list[SlotStep] = []

    def act_fast(self, state: SystemState, explore: bool) -> FastAction:
        ctx = SlotContext.start(state)
        eps = self.learner_cfg.epsilon if explore else 0.0
        targets = []
        self.trajectory = []
        n_t = len(self.tiers)
        for i, task in enumerate(state.queue):
            x = slot_features(state, task, ctx, self.tiers, i, self.cfg.workload)
            mask = slot_mask(state, task, ctx, self.tiers)
            a = epsilon_greedy(self.fast.q_values(x), eps, self.rng, mask)
            e, tier = decode_action(a, n_t, task.owner)
            k = self.tiers[tier]
            cost = slot_cost(task, e, k, state, ctx, self.cfg.rewards)
            _commit(ctx, task, e, k)
            targets.append(e)
            self.trajectory.append(SlotStep(x, mask, a, cost))
        return FastAction.make(targets, ctx.alloc)

    def transitions(self):
        """Slot transitions of the last decided queue.

        Each slot is terminal unless ``chain_slots`` is set, in which case a
        slot bootstraps from the next one and only the final slot is terminal.
        """
        steps = self.trajectory
        chain = self.learner_cfg.chain_slots
        for i, st in enumerate(steps):
            if not chain or i == len(steps) - 1:
                yield (st.features, st.action, -st.cost, None, None, True)
            else:
                yield (st.features, st.action, -st.cost, steps[i + 1].features, steps[i + 1].mask, False)

    def observe_train(self, transition) -> float | None:
        self.fast.buffer.push(*transition)
        return self.fast.train_step()


def slow_features_size(num_services: int) -> int:
    return 3 * num_services


def slow_features(window: ServiceHistory, total: ServiceHistory, placement: np.ndarray) -> np.ndarray:
    """Last-window frequencies, current placement bits, long-run frequencies.

    Frequencies are scaled by Q so that a uniform profile reads as all ones.
    """
    q_count = len(window.counts)
    base = encode_slow(window, placement)
    base[:q_count] *= q_count
    return np.concatenate([base, total.frequencies() * q_count])


def slow_scores(params, features) -> np.ndarray:
    """Per-service scores; with several servers' features the mean is taken."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    return forward(params, x).mean(axis=0)


def agent_act_fast(agent: TwoTimescaleAgent, state: SystemState, explore: bool) -> FastAction:
    return agent.act_fast(state, explore)


def agent_act_slow(params, features, catalog: ServiceCatalog, capacity: float) -> np.ndarray:
    """Score every service with the slow network, then pack by descending score."""
    return pack_by_score(slow_scores(params, features), catalog.sizes, capacity)


def agent_observe_train(agent: TwoTimescaleAgent, transition) -> TwoTimescaleAgent:
    agent.observe_train(transition)
    return agent
