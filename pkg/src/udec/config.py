"""Experiment configuration: dataclasses plus a flat ``key = value`` file format.

Sizes are stored in bits throughout. In config files, sizes may carry a decimal
unit suffix (``B``, ``KB``, ``MB``, ``GB``), so ``2GB`` and ``1.6e10`` mean the
same thing. Tuples are comma separated.

Example file::

    [network]
    num_servers = 15
    devices_per_server = 5
    server_storage = 2GB

    [workload]
    zipf_skew = 1.0
    input_size_range = 100KB, 500KB

    [experiment]
    scheduler = 2ts-drl
    caching = drl-fl
    periods = 3000
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

BITS_PER_BYTE = 8
KB = 1e3 * BITS_PER_BYTE
MB = 1e6 * BITS_PER_BYTE
GB = 1e9 * BITS_PER_BYTE

SCHEDULERS = ("2ts-drl", "les", "ees", "res", "ces")
CACHING_POLICIES = ("drl-fl", "drl-central", "pscpp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    num_servers: int = 15
    devices_per_server: int = 5
    subcarriers: int = 256
    subcarrier_bandwidth: float = 15e3  # Hz
    server_cores: int = 8
    device_core_choices: tuple[int, ...] = (1, 2, 4, 8)
    device_core_freq: float = 1e8  # cycles/s
    server_core_freq: float = 1e9  # cycles/s
    server_storage: float = 2 * GB
    cloud_latency: float = 2.5  # s, server <-> cloud end-to-end
    noise_power: float = 1e-9  # W
    path_loss_exponent: float = 4.0
    target_ber_uplink: float = 1e-3
    target_ber_d2d: float = 1e-3
    tx_power_uplink: float = 0.2  # W
    tx_power_d2d: float = 0.1  # W
    d2d_range: float = 30.0  # m
    server_spacing: float = 100.0  # m
    coverage_radius: float = 50.0  # m
    min_distance: float = 1.0  # m
    energy_coefficient: float = 1e-25  # J per cycle per (cycles/s)^2

    def __post_init__(self):
        for name in ("num_servers", "devices_per_server", "subcarriers", "server_cores"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        positive = (
            "subcarrier_bandwidth",
            "device_core_freq",
            "server_core_freq",
            "noise_power",
            "tx_power_uplink",
            "tx_power_d2d",
            "path_loss_exponent",
            "d2d_range",
            "coverage_radius",
            "min_distance",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.cloud_latency < 0 or self.server_storage < 0 or self.energy_coefficient < 0:
            raise ConfigError("cloud_latency, server_storage and energy_coefficient must be >= 0")
        if not self.device_core_choices or min(self.device_core_choices) < 1:
            raise ConfigError("device_core_choices must be non-empty positive counts")
        for name in ("target_ber_uplink", "target_ber_d2d"):
            ber = getattr(self, name)
            if not 0 < ber < 0.2:
                raise ConfigError(f"{name} must lie in (0, 0.2), got {ber}")
        if self.min_distance >= self.coverage_radius:
            raise ConfigError("min_distance must be below coverage_radius")


@dataclass(frozen=True)
class WorkloadConfig:
    num_services: int = 30
    zipf_skew: float = 1.0
    service_size_range: tuple[float, float] = (100 * MB, 300 * MB)
    complexity_range: tuple[float, float] = (4000.0, 12000.0)  # cycles/byte
    input_size_range: tuple[float, float] = (100 * KB, 500 * KB)
    chain_length_range: tuple[int, int] = (1, 5)
    queue_capacity: int = 8
    arrival_prob: float = 0.5
    device_storage: float = 500 * MB

    def __post_init__(self):
        if self.num_services < 1:
            raise ConfigError("num_services must be >= 1")
        if self.zipf_skew < 0:
            raise ConfigError("zipf_skew must be >= 0")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if not 0 <= self.arrival_prob <= 1:
            raise ConfigError("arrival_prob must lie in [0, 1]")
        for name in ("service_size_range", "complexity_range", "input_size_range", "chain_length_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < low <= high")


@dataclass(frozen=True)
class RewardWeights:
    zeta1: float = 0.5
    zeta2: float = 0.5
    mu1: float = 1 / 3
    mu2: float = 1 / 3
    mu3: float = 1 / 3

    def __post_init__(self):
        if min(dataclasses.astuple(self)) < 0:
            raise ConfigError("reward weights must be >= 0")


@dataclass(frozen=True)
class LearnerConfig:
    hidden: tuple[int, ...] = (128, 128, 128)
    lr: float = 1e-3
    gamma: float = 0.95
    epsilon: float = 0.1
    batch_size: int = 32
    warmup: int = 1000
    buffer_capacity: int = 100_000
    target_sync: int = 200
    huber_delta: float = 1.0
    subcarrier_tiers: tuple[int, ...] = (0, 8, 16, 32, 64)
    slow_hidden: tuple[int, ...] = (64, 64, 64)
    slow_warmup: int = 32
    slow_smoothing: float = 0.9  # EMA weight on past placement scores
    chain_slots: bool = False

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not 0 <= self.slow_smoothing < 1:
            raise ConfigError("slow_smoothing must lie in [0, 1)")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must hold at least one minibatch")
        if 0 not in self.subcarrier_tiers or min(self.subcarrier_tiers) < 0:
            raise ConfigError("subcarrier_tiers must be non-negative and include 0")


@dataclass(frozen=True)
class FedConfig:
    psi: float = 1.0
    local_steps: int = 20
    weighting: str = "samples"  # or "uniform"
    literal_sign: bool = False

    def __post_init__(self):
        if not self.psi > 0:
            raise ConfigError("psi must be > 0")
        if self.weighting not in ("samples", "uniform"):
            raise ConfigError("weighting must be 'samples' or 'uniform'")


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    scheduler: str = "2ts-drl"
    caching: str = "drl-fl"
    periods: int = 3000
    slow_interval: int = 50
    seed: int = 0
    out: str = "runs"
    tail_fraction: float = 0.2
    greedy_tail: bool = True

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}; choose from {SCHEDULERS}")
        if self.caching not in CACHING_POLICIES:
            raise ConfigError(f"unknown caching policy {self.caching!r}; choose from {CACHING_POLICIES}")
        if self.periods < 0:
            raise ConfigError("periods must be >= 0")
        if self.slow_interval < 1:
            raise ConfigError("slow_interval must be >= 1")
        if not 0 < self.tail_fraction <= 1:
            raise ConfigError("tail_fraction must lie in (0, 1]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "ExperimentConfig":
        """Return a copy with top-level or dotted (``network.devices_per_server``) fields changed."""
        top = {}
        nested: dict[str, dict] = {}
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **top)

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


_SECTIONS = {
    "network": "network",
    "workload": "workload",
    "rewards": "rewards",
    "learner": "learner",
    "federated": "fed",
}

_SIZE_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(GB|MB|KB|B|bits?)?\s*$", re.IGNORECASE)
_SIZE_UNITS = {"gb": GB, "mb": MB, "kb": KB, "b": BITS_PER_BYTE, "bit": 1.0, "bits": 1.0, None: 1.0}


def parse_size(text: str) -> float:
    """Parse ``'100KB'`` style text into bits. Bare numbers are taken as bits."""
    match = _SIZE_RE.match(text)
    if not match:
        raise ConfigError(f"cannot parse size {text!r}")
    number, unit = match.groups()
    return float(number) * _SIZE_UNITS[unit.lower() if unit else None]


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {text!r}")
    if kind is int:
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"cannot parse {text!r} as int") from None
        if not value.is_integer():
            raise ConfigError(f"cannot parse {text!r} as int")
        return int(value)
    if kind is float:
        return parse_size(text)
    return text


def _parse_value(text: str, annotation):
    origin = typing.get_origin(annotation)
    if origin is tuple:
        (kind, *_rest) = typing.get_args(annotation)
        return tuple(_parse_scalar(part, kind) for part in text.split(",") if part.strip())
    return _parse_scalar(text, annotation)


def _apply(obj, values: dict[str, str], section: str):
    hints = typing.get_type_hints(type(obj))
    changes = {}
    for key, raw in values.items():
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        changes[key] = _parse_value(raw, hints[key])
    return dataclasses.replace(obj, **changes)


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse config text on top of ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = base or ExperimentConfig()
    changes = {}
    for section in parser.sections():
        values = dict(parser.items(section))
        if section == "experiment":
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr = _SECTIONS[section]
        changes[attr] = _apply(getattr(cfg, attr), values, section)
    try:
        cfg = dataclasses.replace(cfg, **changes)
        if parser.has_section("experiment"):
            cfg = _apply(cfg, dict(parser.items("experiment")), "experiment")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return loads(Path(path).read_text(), base)


def dumps(cfg: ExperimentConfig) -> str:
    """Serialize to the same text format; ``loads(dumps(cfg)) == cfg``."""
    lines = []
    for section, attr in list(_SECTIONS.items()) + [("experiment", None)]:
        obj = cfg if attr is None else getattr(cfg, attr)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                continue
            if isinstance(value, tuple):
                text = ", ".join(repr(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        lines.append("")
    return "\n".join(lines)
