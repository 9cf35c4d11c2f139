"""Option payoffs and Black-Scholes analytics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from . import autodiff as ad

TRADING_DAYS = 250


class OptionKind(str, Enum):
    EUROPEAN = "european"
    LOOKBACK = "lookback"


@dataclass(frozen=True)
class OptionSpec:
    kind: OptionKind = OptionKind.EUROPEAN
    strike: float = 1.0
    maturity_steps: int = 20
    step_years: float = 1.0 / TRADING_DAYS

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind(self.kind))
        if not self.strike > 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if int(self.maturity_steps) != self.maturity_steps or self.maturity_steps < 1:
            raise ValueError(f"maturity_steps must be an integer >= 1, got {self.maturity_steps}")
        if not self.step_years > 0:
            raise ValueError(f"step_years must be positive, got {self.step_years}")

    @property
    def maturity_years(self) -> float:
        return self.maturity_steps * self.step_years

    def time_to_maturity(self, step: int) -> float:
        return (self.maturity_steps - step) * self.step_years


@dataclass(frozen=True)
class BsParams:
    sigma: float = 0.2
    rate: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


def payoff(spec: OptionSpec, path):
    """Payoff of ``spec`` on ``path``.

    ``path`` is either an array whose last axis is time (length n+1) or a
    sequence of n+1 per-date columns, each a scalar, array or tape ``Var``.
    """
    n1 = spec.maturity_steps + 1
    if isinstance(path, np.ndarray):
        if path.shape[-1] != n1:
            raise ValueError(f"path has {path.shape[-1]} prices, option needs {n1}")
        top = path[..., -1] if spec.kind is OptionKind.EUROPEAN else path.max(axis=-1)
        return np.maximum(top - spec.strike, 0.0)
    if len(path) != n1:
        raise ValueError(f"path has {len(path)} prices, option needs {n1}")
    if spec.kind is OptionKind.EUROPEAN:
        top = path[-1]
    else:
        top = path[0]
        for s in path[1:]:
            top = ad.maximum(top, s)
    return ad.maximum(top - spec.strike, 0.0)


def _d1(spot, strike, sigma, rate, tau):
    vol = sigma * np.sqrt(tau)
    return (np.log(spot / strike) + (rate + 0.5 * sigma * sigma) * tau) / vol, vol


def bs_price_european(spot, spec: OptionSpec, bs: BsParams, time_to_maturity):
    """Black-Scholes call value; intrinsic value when sigma*sqrt(tau) vanishes."""
    spot = np.asarray(spot, dtype=np.float64)
    tau = np.asarray(time_to_maturity, dtype=np.float64)
    k = spec.strike
    disc = np.exp(-bs.rate * tau)
    vol = bs.sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1, _ = _d1(spot, k, bs.sigma, bs.rate, tau)
        d2 = d1 - vol
        price = spot * norm.cdf(d1) - k * disc * norm.cdf(d2)
    intrinsic = np.maximum(spot - k * disc, 0.0)
    out = np.where(vol > 0, price, intrinsic)
    return float(out) if out.ndim == 0 else out


def bs_delta_european(spot, spec: OptionSpec, bs: BsParams, time_to_maturity):
    """N(d1); at zero remaining variance 1 / 0.5 / 0 for ITM / ATM / OTM."""
    spot = np.asarray(spot, dtype=np.float64)
    tau = np.asarray(time_to_maturity, dtype=np.float64)
    vol = bs.sigma * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1, _ = _d1(spot, spec.strike, bs.sigma, bs.rate, tau)
        delta = norm.cdf(d1)
    expiry = np.where(spot > spec.strike, 1.0, np.where(spot < spec.strike, 0.0, 0.5))
    out = np.where(vol > 0, delta, expiry)
    return float(out) if out.ndim == 0 else out


def lookback_value_mc(spot: float, running_max: float, spec: OptionSpec, bs: BsParams, steps_left: int,
                      normals: np.ndarray) -> float:
    """Discretely monitored fixed-strike lookback call value by Monte Carlo.

    ``normals`` has shape (paths, steps_left); reusing the same array across
    calls gives common random numbers.
    """
    if steps_left == 0:
        return max(max(running_max, spot) - spec.strike, 0.0)
    dt = spec.step_years
    drift = (bs.rate - 0.5 * bs.sigma**2) * dt
    log_paths = np.cumsum(drift + bs.sigma * math.sqrt(dt) * normals, axis=1)
    future_max = spot * np.exp(log_paths.max(axis=1))
    top = np.maximum(np.maximum(running_max, spot), future_max)
    disc = math.exp(-bs.rate * steps_left * dt)
    return float(disc * np.mean(np.maximum(top - spec.strike, 0.0)))


def bs_delta_lookback(path_so_far, spec: OptionSpec, bs: BsParams, time_to_maturity: float,
                      n_paths: int = 20_000, seed: int = 12345, bump: float = 0.01) -> float:
    """Bump-and-reprice delta of the fixed-strike lookback call.

    The current spot is the last element of ``path_so_far``; earlier entries
    only enter through their running maximum, which is held fixed when the
    spot is bumped by +-``bump`` (relative).
    """
    path = np.asarray(path_so_far, dtype=np.float64).reshape(-1)
    if path.size == 0:
        raise ValueError("path_so_far must be nonempty")
    steps_left = int(round(time_to_maturity / spec.step_years))
    if steps_left <= 0:
        return 0.0
    spot = path[-1]
    past_max = path[:-1].max() if path.size > 1 else -np.inf
    normals = np.random.default_rng(seed).standard_normal((n_paths, steps_left))
    up = lookback_value_mc(spot * (1 + bump), past_max, spec, bs, steps_left, normals)
    down = lookback_value_mc(spot * (1 - bump), past_max, spec, bs, steps_left, normals)
    return (up - down) / (2 * bump * spot)
