"""Zero-drift GBM and full-truncation Euler Heston path simulators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class PathBatch:
    prices: np.ndarray  # (B, n+1)
    s0: float
    dt: float
    variance: np.ndarray | None = None  # (B, n+1) raw Heston variance, if any

    def __post_init__(self):
        p = self.prices
        if p.ndim != 2 or p.shape[1] < 2:
            raise ValueError(f"prices must be (B, n+1) with n >= 1, got {p.shape}")

    @property
    def batch(self) -> int:
        return self.prices.shape[0]

    @property
    def n(self) -> int:
        return self.prices.shape[1] - 1

    def columns(self) -> list[np.ndarray]:
        return [self.prices[:, i] for i in range(self.prices.shape[1])]

    def validate(self) -> None:
        p = self.prices
        if not np.all(np.isfinite(p)) or not np.all(p > 0):
            raise ValueError("path batch has non-finite or non-positive prices")
        if not np.all(p[:, 0] == self.s0):
            raise ValueError("path batch rows do not start at s0")


@dataclass(frozen=True)
class HestonParams:
    kappa: float = 1.0
    theta: float = 0.04
    rho: float = -0.7
    sigma_vol: float = 0.3
    v0: float = 0.04

    def __post_init__(self):
        if min(self.kappa, self.theta, self.sigma_vol, self.v0) < 0:
            raise ValueError("kappa, theta, sigma_vol and v0 must be non-negative")
        if not -1 <= self.rho <= 1:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")


def _compound(s0: float, log_returns: np.ndarray) -> np.ndarray:
    b, n = log_returns.shape
    prices = np.empty((b, n + 1))
    prices[:, 0] = s0
    growth = np.exp(log_returns)
    for i in range(n):
        prices[:, i + 1] = prices[:, i] * growth[:, i]
    return prices


def simulate_gbm(s0: float, sigma: float, n: int, dt: float, batch: int, seed) -> PathBatch:
    """log S_{i+1} = log S_i - sigma^2 dt / 2 + sigma sqrt(dt) xi."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    xi = np.random.default_rng(seed).standard_normal((batch, n))
    log_returns = sigma * math.sqrt(dt) * xi - 0.5 * sigma * sigma * dt
    return PathBatch(_compound(s0, log_returns), s0, dt)


def simulate_heston(s0: float, params: HestonParams, n: int, dt: float, batch: int, seed) -> PathBatch:
    """Full-truncation Euler for the variance, log-Euler for the price."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, batch, n))
    xi = z[0]
    zeta = params.rho * z[0] + math.sqrt(1.0 - params.rho**2) * z[1]
    v = np.empty((batch, n + 1))
    v[:, 0] = params.v0
    log_returns = np.empty((batch, n))
    sq_dt = math.sqrt(dt)
    for i in range(n):
        vp = np.maximum(v[:, i], 0.0)
        vol = np.sqrt(vp)
        log_returns[:, i] = vol * sq_dt * xi[:, i] - 0.5 * vp * dt
        v[:, i + 1] = v[:, i] + params.kappa * (params.theta - vp) * dt + params.sigma_vol * vol * sq_dt * zeta[:, i]
    return PathBatch(_compound(s0, log_returns), s0, dt, variance=v)


class GBMSource:
    """Callable path source ``(batch, seed) -> PathBatch`` for training/evaluation."""

    def __init__(self, sigma: float = 0.2, n: int = 20, dt: float = 1 / 250, s0: float = 1.0):
        self.sigma, self.n, self.dt, self.s0 = sigma, n, dt, s0

    def __call__(self, batch: int, seed) -> PathBatch:
        return simulate_gbm(self.s0, self.sigma, self.n, self.dt, batch, seed)

    def __repr__(self) -> str:
        return f"GBMSource(sigma={self.sigma}, n={self.n}, dt={self.dt})"


class HestonSource:
    def __init__(self, params: HestonParams = HestonParams(), n: int = 20, dt: float = 1 / 250, s0: float = 1.0):
        self.params, self.n, self.dt, self.s0 = params, n, dt, s0

    def __call__(self, batch: int, seed) -> PathBatch:
        return simulate_heston(self.s0, self.params, self.n, self.dt, batch, seed)

    def __repr__(self) -> str:
        return f"HestonSource({self.params}, n={self.n}, dt={self.dt})"
