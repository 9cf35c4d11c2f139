"""Experiment configuration: an INI file with one section per module.

Every key has a default, so an empty file is a valid GBM/ERM(1) run.
``section.key=value`` overrides are applied after the file.  Unknown
sections or keys and unparseable values raise :class:`ConfigError` naming
the field.

Example::

    [option]
    kind = european
    [utility]
    spec = cvar:0.9
    [simulator]
    kind = adversarial
    [train]
    epochs = 300
    [run]
    seed = 0
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .instruments import OptionKind, OptionSpec
from .networks import RUNNING_MAX, GeneratorConfig, HedgerConfig
from .risk import CostSpec, UtilitySpec
from .simulators import HestonParams
from .training import TrainConfig

SIMULATORS = ("gbm", "heston", "adversarial")
STRATEGIES = ("zero", "bs_delta", "hedger")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in _list(s))


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _list(s))


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def _utility(s: str) -> UtilitySpec:
    return UtilitySpec.parse(s)


def _utilities(s: str) -> list[UtilitySpec]:
    return [UtilitySpec.parse(x) for x in _list(s)]


def _sigma_or_realized(s: str) -> float | str:
    return "realized" if s.strip().lower() == "realized" else float(s)


SCHEMA: dict[str, dict[str, tuple[str, Callable]]] = {
    "option": {
        "kind": ("european", str),
        "strike": ("1.0", float),
        "maturity_steps": ("20", int),
        "step_years": ("0.004", float),
    },
    "utility": {"spec": ("erm:1", _utility)},
    "cost": {"c": ("1e-4", float)},
    "simulator": {
        "kind": ("gbm", str),
        "sigma": ("0.2", float),
        "s0": ("1.0", float),
        "kappa": ("1.0", float),
        "theta": ("0.04", float),
        "rho": ("-0.7", float),
        "sigma_vol": ("0.3", float),
        "v0": ("0.04", float),
    },
    "hedger": {
        "hidden": ("32,32,32", _ints),
        "features": ("log_moneyness,time_to_maturity,prev_delta", lambda s: tuple(_list(s))),
        "output": ("identity", str),
        "bs_sigma": ("0.2", float),
    },
    "generator": {
        "hidden_dim": ("16", int),
        "noise_dim": ("4", int),
        "sigma_init": ("0.2", float),
    },
    "train": {
        "epochs": ("300", int),
        "paths_per_epoch": ("512", int),
        "eval_paths": ("2048", int),
        "lr_hedger": ("1e-3", float),
        "lr_generator": ("1e-3", float),
        "ttur_ratio": ("5", int),
        "snapshot_every": ("10", int),
        "clip_norm": ("none", _opt_float),
        "validation_sigma": ("0.2", float),
        "eval_trials": ("20", int),
        "optimizer": ("adam", str),
    },
    "backtest": {
        "strategies": ("zero,bs_delta", lambda s: tuple(_list(s))),
        "utilities": ("", _utilities),
        "bs_sigma": ("0.2", _sigma_or_realized),
        "bins": ("40", int),
        "symbol": ("", str),
    },
    "toy": {
        "case": ("1", int),
        "utility": ("erm:10", _utility),
        "mu": ("0.0", float),
        "sigma": ("0.2", float),
        "c": ("1e-4", float),
        "delta_lo": ("0.0", float),
        "delta_hi": ("1.0", float),
        "delta_steps": ("201", int),
        "mu_lo": ("-0.5", float),
        "mu_hi": ("0.5", float),
        "mu_steps": ("21", int),
        "sigmas": ("0.1,0.2,0.3,0.4,0.5", _floats),
        "mc_samples": ("1000000", int),
        "grad_mc_samples": ("100000", int),
        "steps": ("2000", int),
        "lr_hedger": ("1e-3", float),
        "lr_generator": ("1e-3", float),
        "ttur_ratio": ("5", int),
        "traj_mc_samples": ("4096", int),
        "init_delta": ("0.0", float),
        "init_mu": ("0.3", float),
    },
    "run": {
        "seed": ("0", int),
        "out": ("runs/default", str),
        "allow_lookback_without_running_max": ("false", _bool),
        "figures": ("true", _bool),
    },
}


@dataclass(frozen=True)
class SimulatorConfig:
    kind: str = "gbm"
    sigma: float = 0.2
    s0: float = 1.0
    heston: HestonParams = HestonParams()


@dataclass(frozen=True)
class BacktestConfig:
    strategies: tuple[str, ...] = ("zero", "bs_delta")
    utilities: tuple[UtilitySpec, ...] = ()
    bs_sigma: float | str = 0.2
    bins: int = 40
    symbol: str = ""


@dataclass(frozen=True)
class ToyConfig:
    case: int = 1
    utility: UtilitySpec = UtilitySpec("erm", lam=10.0)
    mu: float = 0.0
    sigma: float = 0.2
    c: float = 1e-4
    delta_grid: tuple[float, float, int] = (0.0, 1.0, 201)
    mu_grid: tuple[float, float, int] = (-0.5, 0.5, 21)
    sigmas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    mc_samples: int = 1_000_000
    grad_mc_samples: int = 100_000
    steps: int = 2000
    lrs: tuple[float, float] = (1e-3, 1e-3)
    ttur_ratio: int = 5
    traj_mc_samples: int = 4096
    init: tuple[float, float] = (0.0, 0.3)


@dataclass(frozen=True)
class ExperimentConfig:
    option: OptionSpec
    utility: UtilitySpec
    cost: CostSpec
    simulator: SimulatorConfig
    hedger: HedgerConfig
    generator: GeneratorConfig
    train: TrainConfig
    backtest: BacktestConfig
    toy: ToyConfig
    seed: int
    out: Path
    figures: bool = True
    lookback_override: bool = False
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def backtest_utilities(self) -> list[UtilitySpec]:
        return list(self.backtest.utilities) or [self.utility]

    def canonical(self) -> str:
        """Normalized key=value text; stable input for the config hash."""
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_override(text: str) -> tuple[str, str, str]:
    key, eq, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not eq or not dot or not section or not name:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    return section.strip().lower(), name.strip().lower(), value.strip()


def _raw_values(path, overrides) -> dict[str, dict[str, str]]:
    raw = {s: {k: d for k, (d, _) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"config {path}: {exc}") from exc
        for section in parser.sections():
            for key, value in parser.items(section):
                _assign(raw, section.lower(), key, value)
    for text in overrides or ():
        _assign(raw, *parse_override(text))
    return raw


def _assign(raw, section, key, value):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]; expected one of {sorted(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config field {section}.{key}; expected one of {sorted(SCHEMA[section])}")
    raw[section][key] = value


def _typed(raw) -> dict[str, dict]:
    out = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (_, conv) in keys.items():
            try:
                out[section][key] = conv(raw[section][key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
    return out


def _build(section: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def load_config(path=None, overrides=(), seed: int | None = None, out=None) -> ExperimentConfig:
    """Read ``path`` (optional), apply overrides, validate and build typed specs."""
    raw = _raw_values(path, overrides)
    if seed is not None:
        raw["run"]["seed"] = str(int(seed))
    if out is not None:
        raw["run"]["out"] = str(out)
    t = _typed(raw)
    o, s, h, g, tr, bt, ty, run = (t[k] for k in
                                   ("option", "simulator", "hedger", "generator", "train", "backtest", "toy", "run"))

    option = _build("option", OptionSpec, o["kind"], o["strike"], o["maturity_steps"], o["step_years"])
    if s["kind"] not in SIMULATORS:
        raise ConfigError(f"simulator.kind: {s['kind']!r} is not one of {list(SIMULATORS)}")
    heston = _build("simulator", HestonParams, s["kappa"], s["theta"], s["rho"], s["sigma_vol"], s["v0"])
    if not s["sigma"] > 0 or not s["s0"] > 0:
        raise ConfigError("simulator.sigma and simulator.s0 must be positive")
    simulator = SimulatorConfig(s["kind"], s["sigma"], s["s0"], heston)
    hedger = _build("hedger", HedgerConfig, h["hidden"], h["features"], h["output"], h["bs_sigma"])
    if option.kind is OptionKind.LOOKBACK and RUNNING_MAX not in hedger.features \
            and not run["allow_lookback_without_running_max"]:
        raise ConfigError(f"hedger.features: a lookback option needs {RUNNING_MAX!r} "
                          "(or set run.allow_lookback_without_running_max=true)")
    generator = _build("generator", GeneratorConfig, g["hidden_dim"], g["noise_dim"], g["sigma_init"],
                       option.step_years)
    train = _build("train", TrainConfig, seed=run["seed"], s0=s["s0"], **tr)
    unknown = [x for x in bt["strategies"] if x not in STRATEGIES]
    if unknown or not bt["strategies"]:
        raise ConfigError(f"backtest.strategies: {unknown or 'empty'}; choose from {list(STRATEGIES)}")
    if bt["bins"] < 1:
        raise ConfigError("backtest.bins must be >= 1")
    backtest = BacktestConfig(bt["strategies"], tuple(bt["utilities"]), bt["bs_sigma"], bt["bins"], bt["symbol"])
    if ty["case"] not in (1, 2, 3):
        raise ConfigError(f"toy.case must be 1, 2 or 3, got {ty['case']}")
    for name in ("delta_steps", "mu_steps", "mc_samples", "grad_mc_samples", "traj_mc_samples", "ttur_ratio"):
        if ty[name] < 1:
            raise ConfigError(f"toy.{name} must be >= 1")
    if ty["steps"] < 0 or ty["lr_hedger"] < 0 or ty["lr_generator"] < 0:
        raise ConfigError("toy.steps and toy learning rates must be non-negative")
    if not ty["sigma"] > 0 or any(x <= 0 for x in ty["sigmas"]):
        raise ConfigError("toy.sigma and toy.sigmas must be positive")
    toy = ToyConfig(ty["case"], ty["utility"], ty["mu"], ty["sigma"], ty["c"],
                    (ty["delta_lo"], ty["delta_hi"], ty["delta_steps"]), (ty["mu_lo"], ty["mu_hi"], ty["mu_steps"]),
                    ty["sigmas"], ty["mc_samples"], ty["grad_mc_samples"], ty["steps"],
                    (ty["lr_hedger"], ty["lr_generator"]), ty["ttur_ratio"], ty["traj_mc_samples"],
                    (ty["init_delta"], ty["init_mu"]))
    cost = _build("cost", CostSpec, t["cost"]["c"])
    # the output directory does not affect results, so it stays out of the hash
    hashed = {sec: dict(v) for sec, v in raw.items()}
    hashed["run"] = {k: v for k, v in raw["run"].items() if k != "out"}
    return ExperimentConfig(option, t["utility"]["spec"], cost, simulator, hedger, generator, train, backtest,
                            toy, run["seed"], Path(run["out"]), run["figures"],
                            run["allow_lookback_without_running_max"], hashed)


def write_config(path, config: ExperimentConfig) -> Path:
    """Write the resolved key-values as INI (reloadable with :func:`load_config`)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in config.raw.items():
        parser[section] = keys
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        parser.write(fh)
    return path
