import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_cell, make_state, make_task
from udec.agents import (CacheAgent, SlotContext, TwoTimescaleAgent, action_index, agent_act_fast, agent_act_slow,
                         agent_observe_train, brute_force_best, ces_policy, decode_action, ees_policy, fras_allocate,
                         les_policy, pack_by_score, pscpp_place, res_policy, slot_features, slot_features_size,
                         slot_mask, slow_features_size)
from udec.config import GB, ExperimentConfig, LearnerConfig, NetworkConfig, RewardWeights
from udec.exectime import CLOUD, EDGE, device_target, subtask_time
from udec.fedlearn import GlobalModel, centralized_train
from udec.learner import AdamState, init_mlp, zeros_like
from udec.mdpenv import feasible, reward_fast, run_action
from udec.workload import ServiceCatalog, zipf_popularity

W = RewardWeights()


def queue_of(n=3, num_devices=3, **cell_kw):
    cell = make_cell(num_devices=num_devices, **cell_kw)
    tasks = [make_task(owner=i % num_devices, service=i % 3, id=i) for i in range(n)]
    return make_state(cell, tasks)


@pytest.mark.parametrize("m, k, want", [(5, 250, [50] * 5), (5, 256, [52, 51, 51, 51, 51]), (5, 3, [1, 1, 1, 0, 0])])
def test_fras_examples(m, k, want):
    assert fras_allocate(m, k).tolist() == want


def test_fras_needs_a_device():
    with pytest.raises(ValueError):
        fras_allocate(0, 10)


@given(st.integers(1, 50), st.integers(0, 10_000))
def test_fras_conserves(m, k):
    alloc = fras_allocate(m, k)
    assert alloc.sum() == k and alloc.max() - alloc.min() <= 1


def test_les_is_local_with_cost_mu1():
    state = queue_of(3)
    action = les_policy(state)
    assert action.targets == tuple(device_target(t.owner) for t in state.queue)
    assert (action.alloc == 0).all()
    assert reward_fast(state, action, run_action(state, action), W) == pytest.approx(1 / 3, rel=1e-15)


def test_ees_follows_cache_bits():
    assert set(ees_policy(queue_of(3)).targets) == {EDGE}
    none = queue_of(3, server_cache=[0, 0, 0])
    assert ees_policy(none).targets == les_policy(none).targets
    mixed = queue_of(3, server_cache=[1, 0, 1])
    want = tuple(EDGE if mixed.server_cache[t.service] else device_target(t.owner) for t in mixed.queue)
    assert ees_policy(mixed).targets == want


def test_ces_all_cloud_and_cache_blind():
    state = queue_of(3)
    action = ces_policy(state)
    assert action.targets == (CLOUD,) * 3
    assert ces_policy(queue_of(3, server_cache=[0, 0, 0])).targets == action.targets
    out = run_action(state, action)
    for task, entry in zip(state.queue, out.entries):
        want = task.input_bits / (action.alloc[task.owner] * state.uplink_rates[task.owner]) + state.cell.cfg.cloud_latency
        assert entry.time == pytest.approx(want, rel=1e-14)


def test_res_is_seeded_feasible_and_uniform():
    state = make_state(make_cell(num_devices=3), [make_task(owner=0)])
    a = [res_policy(state, np.random.default_rng(5)).targets for _ in range(2)]
    assert a[0] == a[1]
    rng = np.random.default_rng(0)
    draws = [res_policy(state, rng).targets[0] for _ in range(100_000)]
    options = [device_target(0), CLOUD, EDGE, device_target(1), device_target(2)]
    freq = np.array([draws.count(o) for o in options]) / len(draws)
    assert np.all(np.abs(freq - 0.2) <= 0.02)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 2), min_size=1, max_size=6))
def test_res_never_needs_rerouting(seed, owners):
    rng = np.random.default_rng(seed)
    cell = make_cell(num_devices=3, device_cache=rng.integers(0, 2, size=(3, 3)),
                     server_cache=rng.integers(0, 2, size=3))
    tasks = [make_task(owner=o, service=int(rng.integers(3)), id=i) for i, o in enumerate(owners)]
    state = make_state(cell, tasks, cores_free=2)
    assert feasible(state, res_policy(state, rng))


def test_pscpp_examples():
    cat = ServiceCatalog(np.array([1.0, 1.0, 1.0]) * GB, 1.0, zipf_popularity(1.0, 3))
    assert pscpp_place(cat, 2 * GB).tolist() == [1, 1, 0]
    assert pscpp_place(cat, 0.0).tolist() == [0, 0, 0]
    skip = ServiceCatalog(np.array([1.5, 1.0, 0.4]) * GB, 1.0, zipf_popularity(1.0, 3))
    assert pscpp_place(skip, 2 * GB).tolist() == [1, 0, 1]


@given(st.integers(1, 40), st.integers(0, 40), st.floats(0, 3))
def test_pscpp_unit_sizes_take_top_services(q, slots, skew):
    cat = ServiceCatalog(np.full(q, 1.0 * GB), skew, zipf_popularity(skew, q))
    place = pscpp_place(cat, slots * GB)
    assert place.tolist() == [1] * min(q, slots) + [0] * max(0, q - slots)


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0, 5), st.integers(0, 1000))
def test_pack_by_score_respects_capacity(scores, capacity, seed):
    sizes = np.random.default_rng(seed).uniform(0.1, 2.0, size=len(scores))
    place = pack_by_score(np.array(scores), sizes, capacity)
    assert place @ sizes <= capacity + 1e-12


@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_action_index_round_trip(m, n_t, data):
    owner = data.draw(st.integers(0, m - 1))
    index = data.draw(st.integers(0, (m + 2) * n_t - 1))
    target, tier = decode_action(index, n_t, owner)
    assert action_index(target, tier, n_t, owner) == index
    assert decode_action(0, n_t, owner) == (device_target(owner), 0)


def test_slot_mask_rules():
    tiers = (0, 8, 16)
    cell = make_cell(num_devices=2, server_cache=[0, 1, 1], device_cache=[[1, 1, 1], [1, 0, 1]])
    state = make_state(cell, [make_task(owner=0, service=0)], subcarriers=10)
    mask = slot_mask(state, state.queue[0], SlotContext.start(state), tiers)
    allowed = {decode_action(i, 3, 0) for i in np.flatnonzero(mask)}
    local = device_target(0)
    assert allowed == {(local, 0), (CLOUD, 1), (device_target(1), 1)}
    assert len(slot_features(state, state.queue[0], SlotContext.start(state), tiers, 0, ExperimentConfig().workload)) \
        == slot_features_size(2, 3)


def small_agent_cfg(tiers=(0, 2, 4, 8), **learner):
    net = NetworkConfig(devices_per_server=1, subcarriers=8, server_cores=2, cloud_latency=0.5)
    lcfg = LearnerConfig(subcarrier_tiers=tiers, hidden=(32, 32), warmup=32, epsilon=0.3, **learner)
    return ExperimentConfig(network=net, learner=lcfg)


def test_zero_network_picks_index_zero():
    cfg = ExperimentConfig()
    agent = TwoTimescaleAgent(cfg, 3, np.random.default_rng(0))
    agent.fast.params = zeros_like(agent.fast.params)
    state = queue_of(3)
    action = agent_act_fast(agent, state, explore=False)
    assert [s.action for s in agent.trajectory] == [0, 0, 0]
    assert action.targets == les_policy(state).targets


def test_identical_seeds_identical_actions():
    state = queue_of(3)
    acts = [agent_act_fast(TwoTimescaleAgent(ExperimentConfig(), 3, np.random.default_rng(4)), state, True)
            for _ in range(2)]
    assert acts[0].targets == acts[1].targets and np.array_equal(acts[0].alloc, acts[1].alloc)


def test_actions_are_always_feasible():
    agent = TwoTimescaleAgent(ExperimentConfig(), 3, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for _ in range(200):
        cell = make_cell(num_devices=3, server_cache=rng.integers(0, 2, 3), device_cache=rng.integers(0, 2, (3, 3)))
        tasks = [make_task(owner=int(rng.integers(3)), service=int(rng.integers(3)), id=i) for i in range(5)]
        state = make_state(cell, tasks, cores_free=int(rng.integers(0, 3)), subcarriers=int(rng.integers(0, 80)))
        assert feasible(state, agent.act_fast(state, explore=True))


def test_agent_matches_brute_force_on_fixed_instance():
    cfg = small_agent_cfg()
    net = cfg.network
    cell = make_cell(num_devices=1, uplink=4e5, net=net, cores=[1])
    tasks = [make_task(owner=0, service=0, id=0, complexity=1000, input_bits=8e5),
             make_task(owner=0, service=1, id=1, complexity=600, input_bits=1.6e6)]
    state = make_state(cell, tasks)
    best, _ = brute_force_best(state, cfg.rewards, cfg.learner.subcarrier_tiers)
    agent = TwoTimescaleAgent(cfg, 1, np.random.default_rng(0))
    for _ in range(1500):
        agent.act_fast(state, True)
        for tr in agent.transitions():
            agent_observe_train(agent, tr)
    action = agent.act_fast(state, False)
    cost = reward_fast(state, action, run_action(state, action), cfg.rewards)
    assert cost <= 1.1 * best


def test_brute_force_is_a_lower_bound_for_baselines():
    cell = make_cell(num_devices=2, uplink=2e5, d2d=1e5, net=NetworkConfig(devices_per_server=2, subcarriers=4))
    state = make_state(cell, [make_task(owner=0, id=0), make_task(owner=1, service=1, id=1)], subcarriers=4)
    best, action = brute_force_best(state, W, range(5))
    assert feasible(state, action)
    for policy in (les_policy, ees_policy, ces_policy):
        a = policy(state)
        assert reward_fast(state, a, run_action(state, a), W) >= best - 1e-12


def test_observe_train_grows_buffer_and_waits_for_batch():
    cfg = ExperimentConfig(learner=LearnerConfig(warmup=0, batch_size=4, buffer_capacity=6))
    agent = TwoTimescaleAgent(cfg, 2, np.random.default_rng(0))
    x = np.zeros(agent.fast.params.sizes[0])
    for i in range(8):
        agent_observe_train(agent, (x, 0, -0.5, None, None, True))
        assert len(agent.fast.buffer) == min(i + 1, 6)
        assert agent.fast.updates == max(0, i - 2)


def test_transitions_terminal_unless_chained():
    state = queue_of(3)
    for chain in (False, True):
        cfg = ExperimentConfig(learner=LearnerConfig(chain_slots=chain))
        agent = TwoTimescaleAgent(cfg, 3, np.random.default_rng(0))
        agent.act_fast(state, True)
        terms = [tr[-1] for tr in agent.transitions()]
        assert terms == ([False, False, True] if chain else [True] * 3)


def test_slot_cost_uses_local_ratio():
    cell = make_cell(num_devices=1)
    task = make_task()
    state = make_state(cell, [task])
    ctx = SlotContext.start(state)
    from udec.agents import slot_cost
    assert slot_cost(task, device_target(0), 0, state, ctx, W) == pytest.approx(1 / 3)
    t = subtask_time(task, CLOUD, 64, cell) / subtask_time(task, 1, 0, cell)
    want = (min(t, 2.0) + 64 / state.available_subcarriers) / 3
    assert slot_cost(task, CLOUD, 64, state, ctx, W) == pytest.approx(want)


def test_zero_slow_network_packs_in_index_order():
    q = 5
    params = zeros_like(init_mlp((slow_features_size(q), 8, q), np.random.default_rng(0)))
    cat = ServiceCatalog(np.full(q, 1.0), 0.0, zipf_popularity(0.0, q))
    assert agent_act_slow(params, np.zeros(3 * q), cat, 2.0).tolist() == [1, 1, 0, 0, 0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_slow_placement_respects_capacity(seed):
    rng = np.random.default_rng(seed)
    q = 8
    params = init_mlp((slow_features_size(q), 8, q), rng)
    cat = ServiceCatalog(rng.uniform(0.5, 2.0, q), 1.0, zipf_popularity(1.0, q))
    cache = CacheAgent(q, 100)
    cache.record_requests(rng.integers(0, q, size=50))
    x = cache.close_window(np.zeros(q))
    assert agent_act_slow(params, x, cat, 3.0) @ cat.sizes <= 3.0


def test_cache_agent_windows_make_transitions():
    cache = CacheAgent(3, 100)
    cache.close_window(np.zeros(3))
    assert len(cache.buffer) == 0
    cache.record_requests([0, 0, 0, 1])
    cache.close_window(np.array([1, 0, 0]))
    assert len(cache.buffer) == 3
    assert cache.buffer.rewards[:3].tolist() == [2.25, 0.75, 0.0]


def test_skewed_history_training_caches_most_popular():
    q = 10
    rng = np.random.default_rng(0)
    pop = zipf_popularity(2.0, q)
    cat = ServiceCatalog(np.full(q, 1.0), 2.0, pop)
    cache = CacheAgent(q, 10_000)
    lcfg = LearnerConfig()
    model = GlobalModel(init_mlp((slow_features_size(q), *lcfg.slow_hidden, q), rng))
    adam = AdamState.like(model.params, lcfg.lr)
    placement = np.zeros(q, dtype=np.int8)
    for _ in range(60):
        x = cache.close_window(placement)
        placement = agent_act_slow(model.params, x, cat, 3.0)
        cache.record_requests(rng.choice(q, size=200, p=pop))
        model = centralized_train(model, cache.buffer, 20, lcfg, adam, rng)
    x = cache.close_window(placement)
    assert agent_act_slow(model.params, x, cat, 3.0)[0] == 1
