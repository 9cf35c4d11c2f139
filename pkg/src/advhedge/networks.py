"""The two players: an MLP hedger and a recurrent path generator.

Both keep their weights in a :class:`~advhedge.autodiff.ParamStore` and run
their forward pass either on a tape (``tape`` given, differentiable) or on
plain numpy arrays (``tape=None``, for evaluation and backtests).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .instruments import OptionKind, OptionSpec, payoff
from .risk import CostSpec, pl_terminal

CHECKPOINT_FORMAT = "advhedge-checkpoint"
CHECKPOINT_VERSION = 1

LOG_MONEYNESS = "log_moneyness"
TIME_TO_MATURITY = "time_to_maturity"
PREV_DELTA = "prev_delta"
BS_DELTA = "bs_delta"
RUNNING_MAX = "running_max"
FEATURES = (LOG_MONEYNESS, TIME_TO_MATURITY, PREV_DELTA, BS_DELTA, RUNNING_MAX)
DEFAULT_FEATURES = (LOG_MONEYNESS, TIME_TO_MATURITY, PREV_DELTA)


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class HedgerConfig:
    hidden: tuple[int, ...] = (32, 32, 32)
    features: tuple[str, ...] = DEFAULT_FEATURES
    output: str = "identity"  # or "sigmoid" for positions bounded in (0, 1)
    bs_sigma: float = 0.2  # volatility behind the bs_delta feature

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "features", tuple(self.features))
        unknown = [f for f in self.features if f not in FEATURES]
        if unknown:
            raise ValueError(f"unknown hedger feature(s) {unknown}; choose from {list(FEATURES)}")
        if not self.features:
            raise ValueError("hedger needs at least one feature")
        if self.output not in ("identity", "sigmoid"):
            raise ValueError(f"hedger output must be 'identity' or 'sigmoid', got {self.output!r}")

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [len(self.features), *self.hidden, 1]
        return list(zip(dims[:-1], dims[1:]))

    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_sizes)


@dataclass(frozen=True)
class GeneratorConfig:
    hidden_dim: int = 16
    noise_dim: int = 4
    sigma_init: float = 0.2
    dt: float = 1.0 / 250

    def __post_init__(self):
        if self.hidden_dim < 1 or self.noise_dim < 1:
            raise ValueError("hidden_dim and noise_dim must be >= 1")

    def n_params(self) -> int:
        h, d = self.hidden_dim, self.noise_dim
        # cell: W_hh, w_sh, W_rh, b_h; head: w_h, w_r, b, log_scale
        return h * h + h + d * h + h + h + d + 1 + 1


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _fetch(tape, store, name, trainable):
    return store.get(name) if tape is None else tape.param(store, name, trainable)


# ---------------------------------------------------------------------------
# hedger
# ---------------------------------------------------------------------------


def features_at(spot, running_max, prev_delta, step: int, spec: OptionSpec, config: HedgerConfig, batch: int):
    """Feature columns at date ``step`` (each a (batch,) array or Var)."""
    cols = []
    for name in config.features:
        if name == LOG_MONEYNESS:
            cols.append(ad.log(spot * (1.0 / spec.strike)))
        elif name == TIME_TO_MATURITY:
            cols.append(np.full(batch, (spec.maturity_steps - step) / spec.maturity_steps))
        elif name == PREV_DELTA:
            cols.append(prev_delta if not np.isscalar(prev_delta) else np.full(batch, float(prev_delta)))
        elif name == BS_DELTA:
            tau = spec.time_to_maturity(step)
            vol = config.bs_sigma * math.sqrt(tau)
            d1 = (ad.log(spot * (1.0 / spec.strike)) + 0.5 * vol * vol) * (1.0 / vol)
            cols.append(ad.norm_cdf(d1))
        elif name == RUNNING_MAX:
            cols.append(ad.log(running_max / spot))
    return cols


def hedger_features(path_prefix, spec: OptionSpec, prev_delta: float, config: HedgerConfig) -> np.ndarray:
    """Feature vector for one path observed up to date ``len(path_prefix) - 1``."""
    prefix = np.asarray(path_prefix, dtype=np.float64).reshape(-1)
    if prefix.size < 1:
        raise ValueError("path prefix must hold at least one price")
    step = prefix.size - 1
    spot = prefix[-1:]
    cols = features_at(spot, prefix.max(keepdims=True), prev_delta, step, spec, config, 1)
    return np.array([float(np.asarray(c).reshape(-1)[0]) for c in cols])


class HedgerPolicy:
    """MLP mapping (features) -> position, ReLU hidden layers."""

    def __init__(self, config: HedgerConfig = HedgerConfig(), seed=0, store: ad.ParamStore | None = None):
        self.config = config
        if store is None:
            store = ad.ParamStore()
            rng = np.random.default_rng(seed)
            for k, (i, o) in enumerate(config.layer_sizes):
                store.add(f"hedger.l{k}.w", _uniform(rng, i, (i, o)))
                store.add(f"hedger.l{k}.b", _uniform(rng, i, (o,)))
        self.store = store

    @property
    def features(self) -> tuple[str, ...]:
        return self.config.features

    def bind(self, tape: ad.Tape | None = None, trainable: bool = True) -> list:
        """Per-layer (weight, bias) pairs fetched once for a whole rollout."""
        return [
            (_fetch(tape, self.store, f"hedger.l{k}.w", trainable), _fetch(tape, self.store, f"hedger.l{k}.b", trainable))
            for k in range(len(self.config.layer_sizes))
        ]

    def forward(self, x, tape: ad.Tape | None = None, trainable: bool = True, bound: list | None = None):
        """Positions for a (B, F) feature matrix."""
        xv = ad.value_of(x)
        if xv.ndim != 2 or xv.shape[1] != len(self.config.features):
            raise ValueError(f"expected features of shape (B, {len(self.config.features)}), got {xv.shape}")
        if bound is None:
            bound = self.bind(tape, trainable)
        h = x
        last = len(bound) - 1
        for k, (w, b) in enumerate(bound):
            h = ad.matmul(h, w) + b
            if k < last:
                h = ad.relu(h)
        out = ad.reshape(h, (xv.shape[0],))
        if self.config.output == "sigmoid":
            out = ad.sigmoid(out)
        return out

    def positions(self, path, spec: OptionSpec, tape: ad.Tape | None = None, trainable: bool = True) -> list:
        """Roll the policy over ``path`` (n+1 price columns); returns n positions."""
        n = spec.maturity_steps
        if len(path) != n + 1:
            raise ValueError(f"path has {len(path)} dates, option needs {n + 1}")
        batch = ad.value_of(path[0]).shape[0]
        bound = self.bind(tape, trainable)
        need_max = RUNNING_MAX in self.config.features
        prev = 0.0
        running = path[0]
        out = []
        for i in range(n):
            spot = path[i]
            if i and need_max:
                running = ad.maximum(running, spot)
            cols = features_at(spot, running, prev, i, spec, self.config, batch)
            prev = self.forward(ad.stack(cols, axis=1), tape, trainable, bound)
            out.append(prev)
        return out

    def n_params(self) -> int:
        return len(self.store)

    def copy(self) -> "HedgerPolicy":
        return HedgerPolicy(self.config, store=self.store.copy())


def hedge_pl(policy: HedgerPolicy, path, spec: OptionSpec, cost: CostSpec, tape: ad.Tape | None = None,
             trainable: bool = True):
    """Per-path terminal PL of ``policy`` hedging one short ``spec`` over ``path`` columns."""
    positions = policy.positions(path, spec, tape, trainable)
    return pl_terminal(payoff(spec, path), path, positions, cost)


def as_columns(prices, tape: ad.Tape | None = None) -> list:
    prices = np.asarray(prices, dtype=np.float64)
    if tape is None:
        return [prices[:, i] for i in range(prices.shape[1])]
    return [tape.constant(prices[:, i]) for i in range(prices.shape[1])]


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


class GeneratorModel:
    """Recurrent cell emitting log-returns.

    h_i = tanh(h_{i-1} W_hh + log S_{i-1} w_sh + R_i W_rh + b_h)
    r_i = exp(log_scale) * (h_i w_h + R_i w_r + b)
    S_i = S_{i-1} exp(r_i), h_0 = 0.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig(), seed=0, store: ad.ParamStore | None = None):
        self.config = config
        if store is None:
            h, d = config.hidden_dim, config.noise_dim
            rng = np.random.default_rng(seed)
            fan_in = h + 1 + d
            store = ad.ParamStore()
            store.add("gen.w_hh", _uniform(rng, fan_in, (h, h)))
            store.add("gen.w_sh", _uniform(rng, fan_in, (1, h)))
            store.add("gen.w_rh", _uniform(rng, fan_in, (d, h)))
            store.add("gen.b_h", _uniform(rng, fan_in, (h,)))
            store.add("gen.head_h", np.zeros((h, 1)))
            store.add("gen.head_r", np.zeros((d, 1)))
            store.add("gen.head_b", np.zeros(1))
            store.add("gen.log_scale", np.zeros(1))
            self.store = store
            self.set_gbm_head(config.sigma_init)
        self.store = store

    def set_gbm_head(self, sigma: float) -> None:
        """Point the output head at GBM(sigma): r = sigma sqrt(dt) R_0 - sigma^2 dt / 2."""
        d = self.config.noise_dim
        step_vol = sigma * math.sqrt(self.config.dt)
        head_r = np.zeros((d, 1))
        head_r[0, 0] = 1.0
        self.store.set("gen.head_h", np.zeros((self.config.hidden_dim, 1)))
        self.store.set("gen.head_r", head_r)
        self.store.set("gen.head_b", np.array([-0.5 * step_vol]))
        self.store.set("gen.log_scale", np.array([math.log(step_vol)]))

    def noise(self, n: int, batch: int, seed) -> np.ndarray:
        """(noise_dim, batch, n) standard normals; coordinate 0 matches simulate_gbm's draws."""
        return np.random.default_rng(seed).standard_normal((self.config.noise_dim, batch, n))

    def roll(self, s0: float, n: int, batch: int, seed, tape: ad.Tape | None = None,
             trainable: bool = True) -> list:
        """Generate n steps for ``batch`` paths; returns n+1 price columns."""
        if not s0 > 0:
            raise ValueError(f"s0 must be positive, got {s0}")
        cfg = self.config
        p = {name: _fetch(tape, self.store, name, trainable) for name in self.store.names()}
        noise = self.noise(n, batch, seed)
        scale = ad.exp(p["gen.log_scale"])
        h = np.zeros((batch, cfg.hidden_dim))
        s = np.full(batch, float(s0))
        path = [s]
        for i in range(n):
            r_noise = noise[:, :, i].T.copy()
            log_s = ad.reshape(ad.log(s), (batch, 1))
            h = ad.tanh(
                ad.matmul(h, p["gen.w_hh"]) + ad.matmul(log_s, p["gen.w_sh"]) + ad.matmul(r_noise, p["gen.w_rh"])
                + p["gen.b_h"]
            )
            head = ad.matmul(h, p["gen.head_h"]) + ad.matmul(r_noise, p["gen.head_r"]) + p["gen.head_b"]
            r = ad.reshape(head, (batch,)) * scale
            s = s * ad.exp(r)
            sv = ad.value_of(s)
            if not np.all(np.isfinite(sv)) or not np.all(sv > 0):
                raise ad.TrainingError(f"generator emitted a non-finite or non-positive price at step {i + 1}")
            path.append(s)
        return path

    def n_params(self) -> int:
        return len(self.store)

    def copy(self) -> "GeneratorModel":
        return GeneratorModel(self.config, store=self.store.copy())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_dict(model) -> dict:
    if isinstance(model, HedgerPolicy):
        kind = "hedger"
        arch = asdict(model.config)
        arch["hidden"] = list(model.config.hidden)
        arch["features"] = list(model.config.features)
    elif isinstance(model, GeneratorModel):
        kind = "generator"
        arch = asdict(model.config)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "architecture": arch,
        "params": [{"name": n, "shape": list(s), "values": v} for n, s, v in model.store.state()],
    }


def model_from_dict(data: dict):
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not an advhedge checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')}")
    store = ad.ParamStore()
    for entry in data["params"]:
        store.add(entry["name"], np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]))
    arch = data["architecture"]
    if data["kind"] == "hedger":
        config = HedgerConfig(**arch)
        model = HedgerPolicy(config, store=store)
    elif data["kind"] == "generator":
        config = GeneratorConfig(**arch)
        model = GeneratorModel(config, store=store)
    else:
        raise CheckpointError(f"unknown checkpoint kind {data['kind']!r}")
    if len(store) != config.n_params():
        raise CheckpointError(f"checkpoint holds {len(store)} parameters, architecture needs {config.n_params()}")
    return model


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model), indent=1) + "\n")
    return path


def load_checkpoint(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(data)


def check_compatible(policy: HedgerPolicy, spec: OptionSpec, expected_features=None,
                     require_running_max: bool = True) -> None:
    """Raise :class:`CheckpointError` naming the offending feature."""
    if expected_features is not None:
        for f in expected_features:
            if f not in policy.features:
                raise CheckpointError(f"checkpoint lacks feature {f!r} required by the config")
        for f in policy.features:
            if f not in expected_features:
                raise CheckpointError(f"checkpoint uses feature {f!r} absent from the config")
    if require_running_max and spec.kind is OptionKind.LOOKBACK and RUNNING_MAX not in policy.features:
        raise CheckpointError(f"lookback option needs feature {RUNNING_MAX!r}; checkpoint has {list(policy.features)}")

