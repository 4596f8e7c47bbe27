"""Two-timescale simulation loop, metrics, sweeps and CSV persistence.

Random streams
--------------
Every generator is derived from the master seed as
``SeedSequence(seed, spawn_key=(stream, n, m))`` where ``n`` is the server and
``m`` the device. Placement, channels and arrivals are drawn per device, so
adding a device or a server never changes what the existing ones see, and
policies compared at the same seed face the same requests and fading.

One episode is one decision period.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agents
from .config import ExperimentConfig
from .fedlearn import FedWorker, GlobalModel, centralized_train, fl_round, pooled_buffer
from .learner import AdamState, init_mlp, params_to_bytes
from .mdpenv import CellEnv, reward_slow
from .netmodel import place_nodes
from .workload import ServiceCatalog, device_caches

SCHEMA_VERSION = 1

TOPOLOGY, CATALOG, DEVICE_CACHE, CHANNEL, WORKLOAD, POLICY, FAST_AGENT, SLOW_MODEL = range(8)


class RunAbort(RuntimeError):
    """The simulation hit a state it cannot continue from (e.g. a diverged model)."""


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class PeriodRecord:
    period: int
    subtasks: int
    time_sum: float
    energy_sum: float
    mean_time: float
    mean_energy: float
    subcarrier_util: float
    cpu_util: float
    storage_util: float
    hits: int
    requests: int
    reward_fast: float
    reward_slow: float


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)

    def append(self, rec: PeriodRecord) -> None:
        if rec.subtasks < 0 or rec.hits < 0 or rec.requests < 0:
            raise ValueError("counts must be non-negative")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def window(self, start: int = 0, stop: int | None = None) -> list:
        return self.records[start:stop]


@dataclass
class RunSummary:
    scheduler: str
    caching: str
    seed: int
    digest: str
    periods: int
    tail_start: int
    subtasks: int
    mean_time: float
    mean_energy: float
    hit_probability: float
    subcarrier_util: float
    cpu_util: float
    storage_util: float
    reward_fast: float
    reward_slow: float
    slow_decisions: int = 0
    log: MetricsLog = field(default_factory=MetricsLog, repr=False, compare=False)
    checkpoints: dict = field(default_factory=dict, repr=False, compare=False)


SUMMARY_FIELDS = [f.name for f in dataclasses.fields(RunSummary) if f.name not in ("log", "checkpoints")]
RECORD_FIELDS = [f.name for f in dataclasses.fields(PeriodRecord)]


def cache_hit_probability(log: MetricsLog, window: tuple[int, int | None] = (0, None)) -> float:
    """Hits over requests in ``log.records[start:stop]``; 0 without requests."""
    recs = log.window(*window)
    requests = sum(r.requests for r in recs)
    return sum(r.hits for r in recs) / requests if requests else 0.0


def tail_start(periods: int, fraction: float) -> int:
    if periods <= 0:
        return 0
    return periods - max(1, math.ceil(fraction * periods))


def summarize(cfg: ExperimentConfig, log: MetricsLog, start: int) -> RunSummary:
    recs = log.window(start)
    n = sum(r.subtasks for r in recs)

    def mean(name):
        return float(np.mean([getattr(r, name) for r in recs])) if recs else 0.0

    with_queue = [r.reward_fast for r in recs if r.subtasks]
    return RunSummary(
        scheduler=cfg.scheduler,
        caching=cfg.caching,
        seed=cfg.seed,
        digest=cfg.digest(),
        periods=len(log),
        tail_start=start,
        subtasks=n,
        mean_time=sum(r.time_sum for r in recs) / n if n else 0.0,
        mean_energy=sum(r.energy_sum for r in recs) / n if n else 0.0,
        hit_probability=cache_hit_probability(log, (start, None)),
        subcarrier_util=mean("subcarrier_util"),
        cpu_util=mean("cpu_util"),
        storage_util=mean("storage_util"),
        reward_fast=float(np.mean(with_queue)) if with_queue else 0.0,
        reward_slow=mean("reward_slow"),
        log=log,
    )


@dataclass
class World:
    catalog: ServiceCatalog
    envs: list
    channel_rngs: list


def build_world(cfg: ExperimentConfig) -> World:
    net, work, seed = cfg.network, cfg.workload, cfg.seed
    topo = place_nodes(net, lambda n, m: stream(seed, TOPOLOGY, n, m))
    catalog = ServiceCatalog.generate(work, stream(seed, CATALOG))
    m_count = net.devices_per_server
    envs = []
    for n in range(net.num_servers):
        dev_cache = device_caches(stream(seed, DEVICE_CACHE, n), catalog, m_count, work.device_storage)
        envs.append(CellEnv(
            n, net, work, topo.device_cores[n], topo.uplink_distance[n], topo.d2d_distance[n],
            catalog, dev_cache, [stream(seed, WORKLOAD, n, m) for m in range(m_count)],
        ))
    channels = [[stream(seed, CHANNEL, n, m) for m in range(m_count)] for n in range(net.num_servers)]
    return World(catalog, envs, channels)


def draw_fading(rngs) -> tuple[np.ndarray, np.ndarray]:
    """Per-device draws: uplink |h|^2 and the device's row of D2D gains."""
    m = len(rngs)
    tiny = np.finfo(float).tiny
    up = np.array([g.standard_exponential() for g in rngs])
    d2d = np.stack([g.standard_exponential(m) for g in rngs])
    return np.maximum(up, tiny), np.maximum(d2d, tiny)


class CachingController:
    """Slow tier: PSCPP, or a DRL score network trained federatedly or centrally."""

    def __init__(self, cfg: ExperimentConfig, catalog: ServiceCatalog):
        self.cfg = cfg
        self.catalog = catalog
        self.capacity = cfg.network.server_storage
        q = catalog.num_services
        n = cfg.network.num_servers
        self.caches = [agents.CacheAgent(q, cfg.learner.buffer_capacity) for _ in range(n)]
        self.model = None
        if cfg.caching != "pscpp":
            params = init_mlp((agents.slow_features_size(q), *cfg.learner.slow_hidden, q),
                              stream(cfg.seed, SLOW_MODEL))
            self.model = GlobalModel(params, 0, cfg.fed.psi)
            self.workers = [FedWorker(c.buffer, stream(cfg.seed, SLOW_MODEL, i)) for i, c in enumerate(self.caches)]
            self.central_adam = AdamState.like(params, cfg.learner.lr)
            self.central_rng = stream(cfg.seed, SLOW_MODEL, n)
        self.placement = np.zeros(q, dtype=np.int8)
        self.decisions = 0
        self.scores = None

    def record(self, n: int, services) -> None:
        self.caches[n].record_requests(services)

    def decide(self) -> np.ndarray:
        """Close the current window everywhere and return the next placement."""
        self.decisions += 1
        feats = [c.close_window(self.placement) for c in self.caches]
        if self.cfg.caching == "pscpp":
            self.placement = agents.pscpp_place(self.catalog, self.capacity)
            return self.placement
        lcfg = self.cfg.learner
        trained = max(len(c.buffer) for c in self.caches) >= lcfg.slow_warmup
        if trained:
            if self.cfg.caching == "drl-fl":
                for w, c in zip(self.workers, self.caches):
                    w.sample_count = c.requests_seen
                self.model = fl_round(self.model, self.workers, self.cfg.fed.local_steps, lcfg, self.cfg.fed)
            else:
                pool = pooled_buffer(self.workers)
                self.model = centralized_train(self.model, pool, self.cfg.fed.local_steps, lcfg,
                                               self.central_adam, self.central_rng)
        if not self.model.params.is_finite():
            raise RunAbort(f"slow-tier model diverged at round {self.model.round}")
        # Placement follows a moving average of the scores once training has started.
        scores = agents.slow_scores(self.model.params, np.stack(feats))
        if trained and self.scores is not None:
            beta = lcfg.slow_smoothing
            scores = beta * self.scores + (1.0 - beta) * scores
        self.scores = scores if trained else None
        self.placement = agents.pack_by_score(scores, self.catalog.sizes, self.capacity)
        return self.placement


def make_scheduler(cfg: ExperimentConfig, n: int):
    name = cfg.scheduler
    if name == "les":
        return lambda state, explore: agents.les_policy(state)
    if name == "ees":
        return lambda state, explore: agents.ees_policy(state)
    if name == "ces":
        return lambda state, explore: agents.ces_policy(state)
    if name == "res":
        rng = stream(cfg.seed, POLICY, n)
        return lambda state, explore: agents.res_policy(state, rng)
    raise ValueError(f"no baseline scheduler {name!r}")


def run_experiment(cfg: ExperimentConfig) -> RunSummary:
    """Simulate ``cfg.periods`` decision periods on every server and summarize the tail window."""
    net = cfg.network
    world = build_world(cfg)
    controller = CachingController(cfg, world.catalog)
    drl = cfg.scheduler == "2ts-drl"
    if drl:
        fast = [agents.TwoTimescaleAgent(cfg, net.devices_per_server, stream(cfg.seed, FAST_AGENT, n))
                for n in range(net.num_servers)]
    else:
        fast = [make_scheduler(cfg, n) for n in range(net.num_servers)]
    log = MetricsLog()
    start = tail_start(cfg.periods, cfg.tail_fraction)
    window_ratios: list[float] = []
    last_rc = 0.0
    sizes = world.catalog.sizes
    total_sub = net.subcarriers * net.num_servers
    total_cores = net.server_cores * net.num_servers

    for t in range(cfg.periods):
        if t % cfg.slow_interval == 0:
            if window_ratios:
                last_rc = reward_slow(controller.placement, sizes, net.server_storage,
                                      float(np.mean(window_ratios)), cfg.rewards)
                window_ratios = []
            placement = controller.decide()
            for env in world.envs:
                env.set_cache(placement)
        in_tail = t >= start
        explore = not (in_tail and cfg.greedy_tail)
        train = drl and explore
        count = 0
        time_sum = energy_sum = 0.0
        used_sub = used_cores = hits = requests = 0
        rewards = []
        for n, env in enumerate(world.envs):
            state = env.begin_period(t, *draw_fading(world.channel_rngs[n]))
            if drl:
                action = fast[n].act_fast(state, explore)
            else:
                action = fast[n](state, explore)
            _, outcome, r = env.step(action, cfg.rewards)
            controller.record(n, state.required_services)
            if train:
                for tr in fast[n].transitions():
                    fast[n].observe_train(tr)
            if state.queue:
                rewards.append(r)
                window_ratios.append(min(outcome.time_ratio, 1.0))
            count += len(state.queue)
            time_sum += outcome.exe_time
            energy_sum += outcome.energy
            used_sub += outcome.subcarriers
            used_cores += outcome.edge_cores
            hits += outcome.hits
            requests += outcome.requests
        if drl and train and not all(a.fast.params.is_finite() for a in fast):
            raise RunAbort(f"fast-tier model diverged at period {t}")
        log.append(PeriodRecord(
            period=t,
            subtasks=count,
            time_sum=time_sum,
            energy_sum=energy_sum,
            mean_time=time_sum / count if count else 0.0,
            mean_energy=energy_sum / count if count else 0.0,
            subcarrier_util=used_sub / total_sub,
            cpu_util=used_cores / total_cores,
            storage_util=float(controller.placement @ sizes) / net.server_storage if net.server_storage else 0.0,
            hits=hits,
            requests=requests,
            reward_fast=float(np.mean(rewards)) if rewards else 0.0,
            reward_slow=last_rc,
        ))

    summary = summarize(cfg, log, start)
    summary.slow_decisions = controller.decisions
    if drl:
        for n, a in enumerate(fast):
            summary.checkpoints[f"fast_server{n:02d}.bin"] = params_to_bytes(a.fast.params)
    if controller.model is not None:
        summary.checkpoints["slow_global.bin"] = params_to_bytes(controller.model.params)
    return summary


# ----------------------------------------------------------------------------
# Scenarios and sweeps
# ----------------------------------------------------------------------------

DENSITY_SCENARIO = {
    "network.device_core_choices": (1,),
    "network.cloud_latency": 8.0,
    "network.server_storage": 80e9,
    "network.subcarriers": 128,
    "workload.arrival_prob": 1.0,
    "workload.queue_capacity": 10,
}


# Each fast agent sees about one transition per device per period, so a sparse
# cell learns from far less data in the same number of periods. The density
# sweep stretches runs to give every M the experience of this many devices.
DENSITY_BUDGET_DEVICES = 10


def density_sweep(cfg: ExperimentConfig, m_values, schedulers=("les", "ees", "2ts-drl"),
                  budget_devices: int | None = None) -> list[dict]:
    """One run per (scheduler, M), everything else (seeds included) shared.

    With ``budget_devices`` set, M devices run for ``max(T, ceil(T * budget_devices / M))``
    periods instead of T.
    """
    rows = []
    for name in schedulers:
        for m in m_values:
            periods = cfg.periods
            if budget_devices is not None:
                periods = max(periods, math.ceil(cfg.periods * budget_devices / int(m)))
            s = run_experiment(cfg.replace(scheduler=name, periods=periods,
                                           **{"network.devices_per_server": int(m)}))
            rows.append({"scheduler": name, "devices": int(m), "periods": periods, "mean_time": s.mean_time,
                         "mean_energy": s.mean_energy, "hit_probability": s.hit_probability})
    return rows


def scheme_comparison(cfg: ExperimentConfig, schedulers=("2ts-drl", "les", "ees", "res", "ces")) -> list[dict]:
    rows = []
    for name in schedulers:
        s = run_experiment(cfg.replace(scheduler=name))
        rows.append({"scheduler": name, "mean_time": s.mean_time, "mean_energy": s.mean_energy,
                     "hit_probability": s.hit_probability})
    return rows


def zipf_sweep(cfg: ExperimentConfig, skews, caching=("pscpp", "drl-fl", "drl-central")) -> list[dict]:
    rows = []
    for policy in caching:
        for d in skews:
            s = run_experiment(cfg.replace(caching=policy, **{"workload.zipf_skew": float(d)}))
            rows.append({"caching": policy, "zipf_skew": float(d), "hit_probability": s.hit_probability})
    return rows


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_csv(obj, path) -> Path:
    """Write a MetricsLog, a RunSummary (or list of them) or a list of dict rows.

    The first line is ``# schema=1``; floats use shortest round-trip text.
    """
    path = Path(path)
    if isinstance(obj, MetricsLog):
        header = RECORD_FIELDS
        rows = [[getattr(r, k) for k in header] for r in obj.records]
    elif isinstance(obj, RunSummary):
        header = SUMMARY_FIELDS
        rows = [[getattr(obj, k) for k in header]]
    elif obj and isinstance(obj[0], RunSummary):
        header = SUMMARY_FIELDS
        rows = [[getattr(s, k) for k in header] for s in obj]
    else:
        obj = list(obj)
        header = list(obj[0]) if obj else []
        rows = [[r[k] for k in header] for r in obj]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(f"# schema={SCHEMA_VERSION}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Parse a file written by ``export_csv``; numeric cells come back as int or float."""
    with Path(path).open() as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema line")
        reader = csv.reader(fh)
        header = next(reader, [])
        rows = []
        for raw in reader:
            row = {}
            for k, v in zip(header, raw):
                try:
                    row[k] = int(v)
                except ValueError:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = v
            rows.append(row)
    return header, rows


def write_run(summary: RunSummary, cfg: ExperimentConfig, out) -> Path:
    """Config text, metrics CSV, summary CSV and model checkpoints under ``out``."""
    from .config import dumps

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dumps(cfg))
    export_csv(summary.log, out / "metrics.csv")
    export_csv(summary, out / "summary.csv")
    for name, blob in sorted(summary.checkpoints.items()):
        (out / name).write_bytes(blob)
    return out
