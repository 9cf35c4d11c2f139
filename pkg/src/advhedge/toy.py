"""One-step Gaussian market: utility sweeps and adversarial trajectories.

With S_1 - S_0 ~ N(mu, sigma), K = S_0 and position delta, the issuer's PL is

    -max(S_1 - K, 0) + delta (S_1 - S_0) - c |delta| S_0.

Expectations are Monte Carlo estimates over one shared set of antithetic
normals per seed, so sweeps are smooth in every parameter and the sample is
exactly symmetric.  Gradients come from the tape through the
reparameterization S_1 = S_0 + mu + sigma xi.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .risk import UtilitySpec, utility as utility_fn
from .seeding import derive_seed

# chunk size (grid nodes x samples) that keeps one sweep block near 32 MB
_BLOCK = 4_000_000


def linear_grid(lo: float, hi: float, steps: int) -> np.ndarray:
    """Inclusive grid, rounded to 12 decimals so CSV node labels stay clean."""
    if steps < 1:
        raise ValueError("grid needs at least one node")
    return np.round(np.linspace(lo, hi, steps), 12)


@dataclass(frozen=True)
class ToyMarket:
    s0: float = 1.0
    mu: float = 0.0
    sigma: float = 0.2
    c: float = 1e-4

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def strike(self) -> float:
        return self.s0


def toy_normals(mc_samples: int, seed) -> np.ndarray:
    """``mc_samples`` antithetic standard normals (an odd count gets one extra 0)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    half = np.random.default_rng(seed).standard_normal(mc_samples // 2)
    xi = np.concatenate([half, -half])
    if mc_samples % 2:
        xi = np.append(xi, 0.0)
    return xi


def toy_pl(delta, mu, sigma, xi, market: ToyMarket):
    move = mu + sigma * xi
    return -ad.maximum(move, 0.0) + delta * move - market.c * market.s0 * ad.absolute(delta)


def toy_utility(delta: float, market: ToyMarket, utility: UtilitySpec, mc_samples: int = 1_000_000,
                seed=0) -> float:
    xi = toy_normals(mc_samples, derive_seed(seed, "toy"))
    return float(utility_fn(toy_pl(delta, market.mu, market.sigma, xi, market), utility))


def _surface(deltas, mus, sigmas, market, utility, xi, grads: bool):
    """Utility (and d/d delta, mu, sigma) at flat node arrays, in blocks."""
    m = deltas.size
    values = np.empty(m)
    g = {k: np.empty(m) for k in ("delta", "mu", "sigma")} if grads else {}
    step = max(1, _BLOCK // xi.size)
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        if not grads:
            pl = toy_pl(deltas[lo:hi, None], mus[lo:hi, None], sigmas[lo:hi, None], xi[None, :], market)
            values[lo:hi] = utility_fn(pl, utility, axis=-1)
            continue
        store = ad.ParamStore()
        store.add("delta", deltas[lo:hi, None])
        store.add("mu", mus[lo:hi, None])
        store.add("sigma", sigmas[lo:hi, None])
        tape = ad.Tape()
        d, mu, s = (tape.param(store, k) for k in ("delta", "mu", "sigma"))
        u = utility_fn(toy_pl(d, mu, s, xi[None, :], market), utility, axis=-1)
        values[lo:hi] = u.value
        # nodes are independent, so the gradient of the sum is the per-node gradient
        tape.finalize(ad.vsum(u))
        ad.backward(tape, store)
        for k in g:
            g[k][lo:hi] = store.grad(k)[:, 0]
    return values, g


@dataclass
class GridSweep:
    axes: list[tuple[str, np.ndarray]]
    values: np.ndarray
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(len(v) for _, v in self.axes)
        if self.values.shape != shape:
            raise ValueError(f"value grid {self.values.shape} does not match axes {shape}")

    def axis(self, name: str) -> np.ndarray:
        return dict(self.axes)[name]

    def argmax_delta(self) -> np.ndarray | float:
        """Delta maximizing utility; per row of the second axis for 2-D sweeps."""
        deltas = self.axis("delta")
        if self.values.ndim == 1:
            return float(deltas[int(np.argmax(self.values))])
        return deltas[np.argmax(self.values, axis=0)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = [n for n, _ in self.axes]
        grids = np.meshgrid(*[v for _, v in self.axes], indexing="ij")
        gnames = sorted(self.gradients)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*names, "utility", *[f"grad_{k}" for k in gnames]])
            for idx in np.ndindex(self.values.shape):
                w.writerow([repr(float(g[idx])) for g in grids] + [repr(float(self.values[idx]))]
                           + [repr(float(self.gradients[k][idx])) for k in gnames])
        return path


def sweep_case1(market: ToyMarket, utility: UtilitySpec, deltas, mc_samples: int = 1_000_000, seed=0) -> GridSweep:
    """Generator fixed at (mu, sigma); utility along a delta grid."""
    deltas = np.asarray(deltas, dtype=np.float64)
    xi = toy_normals(mc_samples, derive_seed(seed, "toy"))
    ones = np.ones_like(deltas)
    values, _ = _surface(deltas, market.mu * ones, market.sigma * ones, market, utility, xi, grads=False)
    return GridSweep([("delta", deltas)], values)


def sweep_case2(market: ToyMarket, utility: UtilitySpec, deltas, mus, mc_samples: int = 200_000,
                seed=0) -> GridSweep:
    """Utility and (du/d delta, du/d mu) over a delta x mu grid at fixed sigma."""
    deltas = np.asarray(deltas, dtype=np.float64)
    mus = np.asarray(mus, dtype=np.float64)
    xi = toy_normals(mc_samples, derive_seed(seed, "toy"))
    dd, mm = np.meshgrid(deltas, mus, indexing="ij")
    values, g = _surface(dd.ravel(), mm.ravel(), np.full(dd.size, market.sigma), market, utility, xi, grads=True)
    shape = dd.shape
    return GridSweep([("delta", deltas), ("mu", mus)], values.reshape(shape),
                     {"delta": g["delta"].reshape(shape), "mu": g["mu"].reshape(shape)})


def sweep_case3(market: ToyMarket, utility: UtilitySpec, deltas, sigmas, mc_samples: int = 200_000,
                seed=0) -> GridSweep:
    """Utility over a delta x sigma grid at fixed mu."""
    deltas = np.asarray(deltas, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas <= 0):
        raise ValueError("sigma grid must be positive")
    xi = toy_normals(mc_samples, derive_seed(seed, "toy"))
    dd, ss = np.meshgrid(deltas, sigmas, indexing="ij")
    values, _ = _surface(dd.ravel(), np.full(dd.size, market.mu), ss.ravel(), market, utility, xi, grads=False)
    return GridSweep([("delta", deltas), ("sigma", sigmas)], values.reshape(dd.shape))


def hedger_cost_at(sweep: GridSweep, delta: float) -> np.ndarray:
    """Hedger cost -u along the second axis at the grid delta nearest ``delta``."""
    i = int(np.argmin(np.abs(sweep.axis("delta") - delta)))
    return -sweep.values[i]


@dataclass
class ToyTrajectory:
    deltas: np.ndarray
    mus: np.ndarray
    diverged: bool
    hedger_steps: int
    generator_steps: int

    @property
    def final(self) -> tuple[float, float]:
        return float(self.deltas[-1]), float(self.mus[-1])

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "delta", "mu"])
            for k, (d, m) in enumerate(zip(self.deltas, self.mus)):
                w.writerow([k, repr(float(d)), repr(float(m))])
        return path


def run_toy_adversarial(utility: UtilitySpec, init: tuple[float, float] = (0.0, 0.3), steps: int = 2000,
                        lrs: tuple[float, float] = (1e-3, 1e-3), ttur_ratio: int = 5, seed=0,
                        market: ToyMarket = ToyMarket(), mc_samples: int = 4096, optimizer: str = "adam",
                        bound: float = 10.0) -> ToyTrajectory:
    """Alternate ``ttur_ratio`` ascent steps on delta with one descent step on mu.

    One recorded point per cycle (index 0 is ``init``).  Stops early and sets
    ``diverged`` once |delta| or |mu| exceeds ``bound``.
    """
    h_store, g_store = ad.ParamStore(), ad.ParamStore()
    h_store.add("delta", float(init[0]))
    g_store.add("mu", float(init[1]))
    h_state, g_state = ad.AdamState(), ad.AdamState()
    lr_h, lr_g = lrs

    def step(store, state, lr, k, sign):
        xi = toy_normals(mc_samples, derive_seed(seed, "toy-train", k))
        tape = ad.Tape()
        d = tape.param(h_store, "delta", trainable=store is h_store)
        mu = tape.param(g_store, "mu", trainable=store is g_store)
        u = utility_fn(toy_pl(d, mu, market.sigma, xi, market), utility)
        # the hedger ascends u, the generator descends it
        tape.finalize(u * sign)
        store.zero_grad()
        ad.backward(tape, store)
        if optimizer == "adam":
            ad.adam_step(store, lr, state)
        else:
            ad.sgd_step(store, lr)

    deltas, mus = [float(init[0])], [float(init[1])]
    diverged = False
    k = hs = gs = 0
    for _ in range(steps):
        for _ in range(ttur_ratio):
            step(h_store, h_state, lr_h, k, -1.0)
            k += 1
            hs += 1
        step(g_store, g_state, lr_g, k, 1.0)
        k += 1
        gs += 1
        d, m = float(h_store.params[0]), float(g_store.params[0])
        deltas.append(d)
        mus.append(m)
        if abs(d) > bound or abs(m) > bound or not np.isfinite(d + m):
            diverged = True
            break
    return ToyTrajectory(np.array(deltas), np.array(mus), diverged, hs, gs)


def with_mu(market: ToyMarket, mu: float) -> ToyMarket:
    return replace(market, mu=mu)
