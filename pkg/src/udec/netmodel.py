"""Topology, Rayleigh channel sampling and OFDMA link rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig


class DomainError(ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class InfeasibleLink(ValueError):
    pass


def snr_margin(ber: float) -> float:
    """SNR gap of an M-QAM link at target bit error rate ``ber``.

    Uses the natural log: gap = -(2/3) ln(5 ber).
    """
    if not 0 < ber < 0.2:
        raise DomainError(f"target BER must lie in (0, 0.2), got {ber}")
    return -2.0 * math.log(5.0 * ber) / 3.0


def link_rate(k_sub, bandwidth, power, gain, margin, distance, beta, noise):
    """Rate of ``k_sub`` orthogonal subcarriers, bits/s. Broadcasts over arrays."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise DomainError("link distance must be > 0")
    snr = power * np.asarray(gain, dtype=float) / (margin * distance**beta * noise)
    rate = np.asarray(k_sub, dtype=float) * bandwidth * np.log2(1.0 + snr)
    return rate if rate.ndim else float(rate)


@dataclass(frozen=True)
class Topology:
    """Node positions and per-device core counts, fixed for one run.

    ``device_pos[n, m]`` is device ``m`` of server ``n``; devices are indexed
    by their serving (closest) server.
    """

    server_pos: np.ndarray  # (N, 2)
    device_pos: np.ndarray  # (N, M, 2)
    device_cores: np.ndarray  # (N, M) ints

    @property
    def uplink_distance(self) -> np.ndarray:
        """(N, M) distances device -> serving server."""
        return np.linalg.norm(self.device_pos - self.server_pos[:, None, :], axis=-1)

    @property
    def d2d_distance(self) -> np.ndarray:
        """(N, M, M) distances between devices of the same server."""
        diff = self.device_pos[:, :, None, :] - self.device_pos[:, None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def serving_server(self) -> np.ndarray:
        """(N, M) index of the closest server of every device."""
        diff = self.device_pos[:, :, None, :] - self.server_pos[None, None, :, :]
        return np.argmin(np.linalg.norm(diff, axis=-1), axis=-1)


def grid_positions(num_servers: int, spacing: float) -> np.ndarray:
    cols = math.ceil(math.sqrt(num_servers))
    idx = np.arange(num_servers)
    return np.stack([(idx % cols) * spacing, (idx // cols) * spacing], axis=1).astype(float)


def place_nodes(cfg: NetworkConfig, rng) -> Topology:
    """Servers on a square grid; devices uniform in a disc around their server.

    ``rng`` is either one generator for everything, or a callable ``(n, m) ->
    Generator`` giving every device its own stream, so that adding devices or
    servers leaves the existing ones where they were.
    """
    n, m = cfg.num_servers, cfg.devices_per_server
    servers = grid_positions(n, cfg.server_spacing)
    r0, r1 = cfg.min_distance, min(cfg.coverage_radius, cfg.server_spacing / 2)
    choices = np.asarray(cfg.device_core_choices)
    if isinstance(rng, np.random.Generator):
        draw = lambda _n, _m: rng
    else:
        draw = rng
    offsets = np.empty((n, m, 2))
    cores = np.empty((n, m), dtype=int)
    for i in range(n):
        for j in range(m):
            g = draw(i, j)
            radius = math.sqrt(g.uniform(r0**2, r1**2))
            angle = g.uniform(0.0, 2 * math.pi)
            offsets[i, j] = radius * math.cos(angle), radius * math.sin(angle)
            cores[i, j] = g.choice(choices)
    return Topology(servers, servers[:, None, :] + offsets, cores)


@dataclass(frozen=True)
class ChannelState:
    """Per-period fading power gains |h|^2 (unit-mean exponential)."""

    uplink_fading: np.ndarray  # (N, M)
    d2d_fading: np.ndarray  # (N, M, M)

    def __post_init__(self):
        self.uplink_fading.setflags(write=False)
        self.d2d_fading.setflags(write=False)


def sample_channel(rng: np.random.Generator, cfg: NetworkConfig) -> ChannelState:
    n, m = cfg.num_servers, cfg.devices_per_server
    tiny = np.finfo(float).tiny
    up = np.maximum(rng.standard_exponential((n, m)), tiny)
    d2d = np.maximum(rng.standard_exponential((n, m, m)), tiny)
    return ChannelState(up, d2d)


def server_channel(rng: np.random.Generator, num_devices: int) -> tuple[np.ndarray, np.ndarray]:
    """Fading for a single server's cell: ((M,), (M, M))."""
    tiny = np.finfo(float).tiny
    up = np.maximum(rng.standard_exponential(num_devices), tiny)
    d2d = np.maximum(rng.standard_exponential((num_devices, num_devices)), tiny)
    return up, d2d


def uplink_rate(m: int, n: int, k_sub: int, cfg: NetworkConfig, topo: Topology, ch: ChannelState) -> float:
    """Uplink rate of device ``m`` of server ``n`` over ``k_sub`` subcarriers."""
    if k_sub < 0:
        raise ValueError("k_sub must be >= 0")
    return link_rate(
        k_sub,
        cfg.subcarrier_bandwidth,
        cfg.tx_power_uplink,
        ch.uplink_fading[n, m],
        snr_margin(cfg.target_ber_uplink),
        topo.uplink_distance[n, m],
        cfg.path_loss_exponent,
        cfg.noise_power,
    )


def d2d_feasible(i: int, j: int, n: int, cfg: NetworkConfig, topo: Topology) -> bool:
    if i == j:
        raise ValueError("D2D pair needs two distinct devices")
    return bool(topo.d2d_distance[n, i, j] <= cfg.d2d_range)


def d2d_rate(i: int, j: int, n: int, k_sub: int, cfg: NetworkConfig, topo: Topology, ch: ChannelState) -> float:
    """D2D rate from device ``i`` to ``j`` (both served by ``n``)."""
    if not d2d_feasible(i, j, n, cfg, topo):
        raise InfeasibleLink(f"devices {i} and {j} of server {n} are farther apart than {cfg.d2d_range} m")
    if k_sub < 0:
        raise ValueError("k_sub must be >= 0")
    return link_rate(
        k_sub,
        cfg.subcarrier_bandwidth,
        cfg.tx_power_d2d,
        ch.d2d_fading[n, i, j],
        snr_margin(cfg.target_ber_d2d),
        topo.d2d_distance[n, i, j],
        cfg.path_loss_exponent,
        cfg.noise_power,
    )


def cell_rates(n: int, cfg: NetworkConfig, topo: Topology, ch: ChannelState) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier uplink (M,) and D2D (M, M) rates for server ``n``.

    D2D entries are 0 on the diagonal and for pairs out of range.
    """
    b, beta, n0 = cfg.subcarrier_bandwidth, cfg.path_loss_exponent, cfg.noise_power
    up = link_rate(1, b, cfg.tx_power_uplink, ch.uplink_fading[n], snr_margin(cfg.target_ber_uplink),
                   topo.uplink_distance[n], beta, n0)
    dist = topo.d2d_distance[n]
    ok = (dist <= cfg.d2d_range) & ~np.eye(dist.shape[0], dtype=bool)
    safe = np.where(ok, dist, 1.0)
    d2d = link_rate(1, b, cfg.tx_power_d2d, ch.d2d_fading[n], snr_margin(cfg.target_ber_d2d), safe, beta, n0)
    return np.asarray(up), np.where(ok, d2d, 0.0)
