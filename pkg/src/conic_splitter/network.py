"""Synthetic network realizations and the network power model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .stuffing import NetworkInstance, NetworkShape


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelModelConfig:
    """Large- and small-scale fading model.

    Path loss is ``pl_intercept_db + pl_slope_db * log10(d / 1000)`` dB with
    ``d`` in meters. Shadowing is log-normal with ``shadowing_std_db``;
    small-scale fading is CN(0, 1) (``fading="rayleigh"``) or its real
    counterpart N(0, 1) (``fading="real"``).
    """

    half_width: float = 1000.0
    pl_intercept_db: float = 128.1
    pl_slope_db: float = 37.6
    min_distance: float = 1.0
    shadowing_std_db: float = 8.0
    antenna_gain: float = 1.0
    fading: str = "rayleigh"
    noise_power_dbm: float = -102.0
    max_power_w: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.half_width <= 0 or self.min_distance <= 0:
            raise InputError("region half-width and minimum distance must be positive")
        if self.shadowing_std_db < 0 or self.antenna_gain <= 0 or self.max_power_w <= 0:
            raise InputError("shadowing std must be >= 0; gain and power positive")
        if self.fading not in ("rayleigh", "real"):
            raise InputError(f"unknown fading model {self.fading!r}")

    def path_loss_db(self, d):
        d = np.maximum(np.asarray(d, dtype=float), self.min_distance)
        return self.pl_intercept_db + self.pl_slope_db * np.log10(d / 1000.0)

    @property
    def noise_sigma(self) -> float:
        return float(np.sqrt(dbm_to_watts(self.noise_power_dbm)))


@dataclass(frozen=True)
class PowerModelConfig:
    fronthaul_w: float = 5.6
    efficiency: float = 0.25

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise InputError("amplifier efficiency must lie in (0, 1]")
        if self.fronthaul_w < 0:
            raise InputError("fronthaul power must be non-negative")

    def network_power(self, rau_power, active) -> float:
        """``sum_{l active} (P_link + p_l / efficiency)``."""
        rau_power = np.asarray(rau_power, dtype=float)
        active = np.asarray(active, dtype=bool)
        return float(np.sum(self.fronthaul_w + rau_power[active] / self.efficiency))

    def max_network_power(self, P) -> float:
        """All RAUs on at full power, fronthaul included."""
        P = np.asarray(P, dtype=float)
        return float(np.sum(self.fronthaul_w + P / self.efficiency))


@dataclass
class Placement:
    rau: np.ndarray     # (L, 2)
    users: np.ndarray   # (K, 2)

    def distances(self) -> np.ndarray:
        """``(K, L)`` user-to-RAU distances in meters."""
        return np.linalg.norm(self.users[:, None, :] - self.rau[None, :, :], axis=-1)


def place_nodes(cfg: ChannelModelConfig, shape: NetworkShape, rng) -> Placement:
    w = cfg.half_width
    rau = rng.uniform(-w, w, size=(shape.L, 2))
    users = rng.uniform(-w, w, size=(shape.K, 2))
    return Placement(rau, users)


def draw_channels(cfg: ChannelModelConfig, shape: NetworkShape, placement: Placement, rng):
    """``(K, N)`` aggregate channels ``h_kl = 10^{-L(d)/20} sqrt(phi s) f``."""
    d = placement.distances()
    shadow_db = cfg.shadowing_std_db * rng.standard_normal(d.shape)
    large = 10.0 ** (-(cfg.path_loss_db(d) - shadow_db) / 20.0) * np.sqrt(cfg.antenna_gain)
    gains = np.repeat(large, shape.antennas, axis=1)
    if cfg.fading == "rayleigh":
        f = (rng.standard_normal(gains.shape) + 1j * rng.standard_normal(gains.shape)) / np.sqrt(2)
    else:
        f = rng.standard_normal(gains.shape).astype(complex)
    return gains * f


def generate_network(cfg: ChannelModelConfig, shape: NetworkShape, gamma_db=5.0,
                     seed: int | None = None, omega=None) -> NetworkInstance:
    """One realization: uniform placement in the square, then the fading model.

    ``seed`` overrides ``cfg.seed``. Per-RAU budgets are ``cfg.max_power_w``
    and every user sees the configured noise power.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    placement = place_nodes(cfg, shape, rng)
    H = draw_channels(cfg, shape, placement, rng)
    gamma = np.broadcast_to(db_to_linear(gamma_db), (shape.K,))
    return NetworkInstance(
        shape, H, np.full(shape.L, cfg.max_power_w), np.full(shape.K, cfg.noise_sigma),
        gamma, omega,
    )
