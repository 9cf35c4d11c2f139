"""Hedging strategies evaluated on plain price arrays.

A strategy maps a (B, n+1) price matrix to a (B, n) position matrix; every
consumer (evaluation, backtests) computes PL from those positions through
the same :func:`~advhedge.risk.pl_terminal`.
"""

from __future__ import annotations

import numpy as np

from .instruments import (
    BsParams,
    OptionKind,
    OptionSpec,
    bs_delta_european,
    bs_delta_lookback,
    bs_price_european,
    payoff,
)
from .networks import HedgerPolicy, as_columns
from .risk import CostSpec, pl_terminal


class Strategy:
    name = "strategy"

    def positions(self, prices: np.ndarray, spec: OptionSpec) -> np.ndarray:
        raise NotImplementedError


class ZeroHedge(Strategy):
    name = "zero"

    def positions(self, prices, spec):
        return np.zeros((prices.shape[0], spec.maturity_steps))


class NeuralHedge(Strategy):
    name = "hedger"

    def __init__(self, policy: HedgerPolicy, name: str = "hedger"):
        self.policy = policy
        self.name = name

    def positions(self, prices, spec):
        cols = self.policy.positions(as_columns(prices), spec)
        return np.stack(cols, axis=1)


class BSDeltaHedge(Strategy):
    """Black-Scholes delta with a fixed sigma, or ``sigma="realized"``.

    Realized mode re-estimates sigma at each date from the log returns seen
    so far in the path (zero-mean estimator, annualized with ``spec.step_years``),
    falling back to ``fallback_sigma`` until two returns are available.
    Lookback deltas use the bump-and-reprice Monte Carlo estimator.
    """

    name = "bs_delta"

    def __init__(self, sigma: float | str = 0.2, fallback_sigma: float = 0.2, mc_paths: int = 20_000,
                 mc_seed: int = 12345):
        if sigma != "realized" and not float(sigma) >= 0:
            raise ValueError(f"sigma must be non-negative or 'realized', got {sigma!r}")
        self.sigma = sigma
        self.fallback_sigma = fallback_sigma
        self.mc_paths = mc_paths
        self.mc_seed = mc_seed

    def _sigma_at(self, prices: np.ndarray, step: int, spec: OptionSpec) -> np.ndarray:
        b = prices.shape[0]
        if self.sigma != "realized":
            return np.full(b, float(self.sigma))
        if step < 2:
            return np.full(b, self.fallback_sigma)
        r = np.diff(np.log(prices[:, : step + 1]), axis=1)
        return np.sqrt(np.mean(r * r, axis=1) / spec.step_years)

    def positions(self, prices, spec):
        b, n = prices.shape[0], spec.maturity_steps
        out = np.empty((b, n))
        for i in range(n):
            tau = spec.time_to_maturity(i)
            sig = self._sigma_at(prices, i, spec)
            if spec.kind is OptionKind.EUROPEAN and self.sigma != "realized":
                out[:, i] = bs_delta_european(prices[:, i], spec, BsParams(float(sig[0])), tau)
            elif spec.kind is OptionKind.EUROPEAN:
                for j in range(b):
                    out[j, i] = bs_delta_european(prices[j, i], spec, BsParams(float(sig[j])), tau)
            else:
                for j in range(b):
                    out[j, i] = bs_delta_lookback(prices[j, : i + 1], spec, BsParams(float(sig[j])), tau,
                                                  n_paths=self.mc_paths, seed=self.mc_seed)
        return out


def strategy_pl(strategy: Strategy | HedgerPolicy, prices: np.ndarray, spec: OptionSpec, cost: CostSpec) -> np.ndarray:
    """Per-path terminal PL of ``strategy`` hedging one short option."""
    if isinstance(strategy, HedgerPolicy):
        strategy = NeuralHedge(strategy)
    prices = np.asarray(prices, dtype=np.float64)
    pos = strategy.positions(prices, spec)
    cols = [prices[:, i] for i in range(prices.shape[1])]
    return np.asarray(pl_terminal(payoff(spec, prices), cols, [pos[:, i] for i in range(pos.shape[1])], cost))


def bs_reference_price(spec: OptionSpec, sigma: float = 0.2, s0: float = 1.0) -> float:
    """Black-Scholes value of a European call at inception (zero rate)."""
    return float(bs_price_european(s0, spec, BsParams(sigma), spec.maturity_years))
