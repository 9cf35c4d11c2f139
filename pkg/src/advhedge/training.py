"""Deep hedging against a fixed simulator, and the adversarial hedger/generator game.

In the adversarial loop one epoch is one cycle: ``ttur_ratio`` hedger updates
(minimizing the hedge loss on fresh generator paths, generator frozen)
followed by one generator update (maximizing the hedge loss on its own fresh
batch, hedger frozen).  The hedger is scored on a fixed GBM validation batch
every ``snapshot_every`` epochs and the best-scoring copy is kept.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .instruments import OptionSpec
from .networks import GeneratorConfig, GeneratorModel, HedgerConfig, HedgerPolicy, hedge_pl
from .risk import CostSpec, UtilitySpec, hedge_loss
from .seeding import derive_seed
from .simulators import PathBatch, simulate_gbm
from .strategies import Strategy, strategy_pl

log = logging.getLogger(__name__)

PathSource = Callable[[int, object], PathBatch]

HISTORY_COLUMNS = ("epoch", "hedger_loss", "generator_objective", "validation_cost")


@dataclass
class TrainConfig:
    epochs: int = 300
    paths_per_epoch: int = 512
    eval_paths: int = 2048
    lr_hedger: float = 1e-3
    lr_generator: float = 1e-3
    ttur_ratio: int = 5
    snapshot_every: int = 10
    seed: int = 0
    clip_norm: float | None = None
    validation_sigma: float = 0.2
    eval_trials: int = 20
    optimizer: str = "adam"
    s0: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "paths_per_epoch", "eval_paths", "ttur_ratio", "snapshot_every", "eval_trials"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (self.lr_hedger > 0 and self.lr_generator >= 0):
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive when set")


@dataclass
class HistoryRow:
    epoch: int
    hedger_loss: float
    generator_objective: float = math.nan
    validation_cost: float = math.nan


@dataclass
class Snapshot:
    hedger: HedgerPolicy
    epoch: int
    validation_cost: float


@dataclass
class TrainResult:
    policy: HedgerPolicy
    history: list[HistoryRow]
    best: Snapshot | None = None
    generator: GeneratorModel | None = None
    hedger_steps: int = 0
    generator_steps: int = 0
    snapshots: list[tuple[int, float]] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.hedger_loss for r in self.history])


class _Optimizer:
    def __init__(self, kind: str, lr: float, clip_norm: float | None):
        self.kind, self.lr, self.clip_norm = kind, lr, clip_norm
        self.state = ad.AdamState()

    def step(self, store: ad.ParamStore) -> None:
        if self.clip_norm is not None:
            ad.clip_grad_norm(store, self.clip_norm)
        if self.kind == "adam":
            ad.adam_step(store, self.lr, self.state)
        else:
            ad.sgd_step(store, self.lr)


def validation_prices(option: OptionSpec, config: TrainConfig) -> np.ndarray:
    """The fixed GBM batch used for snapshot selection."""
    return simulate_gbm(config.s0, config.validation_sigma, option.maturity_steps, option.step_years,
                        config.eval_paths, derive_seed(config.seed, "validation")).prices


def cost_on(policy, prices: np.ndarray, option: OptionSpec, utility: UtilitySpec, cost: CostSpec) -> float:
    return float(hedge_loss(strategy_pl(policy, prices, option, cost), utility))


def _is_snapshot_epoch(epoch: int, config: TrainConfig) -> bool:
    return (epoch + 1) % config.snapshot_every == 0 or epoch == config.epochs - 1


def _hedger_update(policy, opt, columns_fn, option, utility, cost) -> float:
    tape = ad.Tape()
    path = columns_fn(tape)
    loss = hedge_loss(hedge_pl(policy, path, option, cost, tape), utility)
    value = float(loss.value)
    if not math.isfinite(value):
        raise ad.TrainingError(f"non-finite hedger loss {value}")
    tape.finalize(loss)
    policy.store.zero_grad()
    ad.backward(tape, policy.store)
    opt.step(policy.store)
    return value


def _check_source(batch: PathBatch, option: OptionSpec) -> np.ndarray:
    if batch.n != option.maturity_steps:
        raise ValueError(f"simulator produces {batch.n} steps, option needs {option.maturity_steps}")
    return batch.prices


def train_deep_hedging(simulator: PathSource, option: OptionSpec, utility: UtilitySpec, cost: CostSpec,
                       config: TrainConfig = TrainConfig(), hedger_config: HedgerConfig = HedgerConfig(),
                       policy: HedgerPolicy | None = None) -> TrainResult:
    """Fit a hedger to a fixed simulator; returns the final policy and per-epoch losses."""
    if policy is None:
        policy = HedgerPolicy(hedger_config, seed=derive_seed(config.seed, "init-hedger"))
    opt = _Optimizer(config.optimizer, config.lr_hedger, config.clip_norm)
    val = validation_prices(option, config)
    history: list[HistoryRow] = []
    best: Snapshot | None = None
    snapshots = []
    for epoch in range(config.epochs):
        prices = _check_source(simulator(config.paths_per_epoch, derive_seed(config.seed, "train", epoch)), option)
        try:
            loss = _hedger_update(policy, opt, lambda t: [t.constant(prices[:, i]) for i in range(prices.shape[1])],
                                  option, utility, cost)
        except (ad.TrainingError, ad.DomainError) as exc:
            raise ad.TrainingError(f"epoch {epoch}: {exc}") from exc
        row = HistoryRow(epoch, loss)
        if _is_snapshot_epoch(epoch, config):
            row.validation_cost = cost_on(policy, val, option, utility, cost)
            if best is None or row.validation_cost < best.validation_cost:
                best = Snapshot(policy.copy(), epoch, row.validation_cost)
            snapshots.append((epoch, best.validation_cost))
        history.append(row)
    return TrainResult(policy, history, best, hedger_steps=config.epochs, snapshots=snapshots)


def train_adversarial(option: OptionSpec, utility: UtilitySpec, cost: CostSpec, config: TrainConfig = TrainConfig(),
                      hedger_config: HedgerConfig = HedgerConfig(),
                      generator_config: GeneratorConfig | None = None,
                      generator: GeneratorModel | None = None,
                      policy: HedgerPolicy | None = None,
                      freeze_generator: bool = False) -> TrainResult:
    """Alternating min-max training with best-validation snapshot selection."""
    if generator_config is None:
        generator_config = GeneratorConfig(dt=option.step_years)
    if policy is None:
        policy = HedgerPolicy(hedger_config, seed=derive_seed(config.seed, "init-hedger"))
    if generator is None:
        generator = GeneratorModel(generator_config, seed=derive_seed(config.seed, "init-generator"))
    n, batch = option.maturity_steps, config.paths_per_epoch
    h_opt = _Optimizer(config.optimizer, config.lr_hedger, config.clip_norm)
    g_opt = _Optimizer(config.optimizer, config.lr_generator, config.clip_norm)
    val = validation_prices(option, config)
    history: list[HistoryRow] = []
    best: Snapshot | None = None
    snapshots = []
    h_steps = g_steps = 0
    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.ttur_ratio):
            seed = derive_seed(config.seed, "train", h_steps)
            try:
                # generator frozen: its paths enter the hedger tape as constants
                prices = generator.roll(config.s0, n, batch, seed)
                losses.append(_hedger_update(policy, h_opt, lambda t: [t.constant(p) for p in prices],
                                             option, utility, cost))
            except (ad.TrainingError, ad.DomainError) as exc:
                raise ad.TrainingError(f"hedger, cycle {epoch}: {exc}") from exc
            h_steps += 1
        row = HistoryRow(epoch, float(np.mean(losses)))
        if not freeze_generator:
            try:
                row.generator_objective = _generator_update(generator, policy, g_opt, config, option, utility,
                                                            cost, derive_seed(config.seed, "generator-noise", g_steps))
            except (ad.TrainingError, ad.DomainError) as exc:
                raise ad.TrainingError(f"generator, cycle {epoch}: {exc}") from exc
            g_steps += 1
        if _is_snapshot_epoch(epoch, config):
            row.validation_cost = cost_on(policy, val, option, utility, cost)
            if best is None or row.validation_cost < best.validation_cost:
                best = Snapshot(policy.copy(), epoch, row.validation_cost)
            snapshots.append((epoch, best.validation_cost))
            log.debug("epoch %d validation %.6f best %.6f", epoch, row.validation_cost, best.validation_cost)
        history.append(row)
    return TrainResult(policy, history, best, generator, h_steps, g_steps, snapshots)


def _generator_update(generator, policy, opt, config, option, utility, cost, seed) -> float:
    tape = ad.Tape()
    path = generator.roll(config.s0, option.maturity_steps, config.paths_per_epoch, seed, tape)
    loss = hedge_loss(hedge_pl(policy, path, option, cost, tape, trainable=False), utility)
    value = float(loss.value)
    if not math.isfinite(value):
        raise ad.TrainingError(f"non-finite generator objective {value}")
    # the generator ascends the hedge loss
    tape.finalize(-loss)
    generator.store.zero_grad()
    ad.backward(tape, generator.store)
    opt.step(generator.store)
    return value


def evaluate(policy: HedgerPolicy | Strategy, source: PathSource | np.ndarray, option: OptionSpec,
             utility: UtilitySpec, cost: CostSpec, trials: int = 20, seed: int = 0,
             batch: int = 2048) -> tuple[float, float]:
    """Mean and standard deviation of the hedge loss over ``trials`` evaluations.

    A callable ``source`` is sampled afresh per trial; a fixed price array
    (historical windows) is evaluated once per trial and yields std 0.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    costs = []
    for t in range(trials):
        if callable(source):
            prices = _check_source(source(batch, derive_seed(seed, "eval", t)), option)
        else:
            prices = np.asarray(source, dtype=np.float64)
        costs.append(cost_on(policy, prices, option, utility, cost))
    costs = np.array(costs)
    return float(costs.mean()), float(costs.std())


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_history(path, history: list[HistoryRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            w.writerow([str(r.epoch), _fmt(r.hedger_loss), _fmt(r.generator_objective), _fmt(r.validation_cost)])
    return path


def read_history(path) -> list[HistoryRow]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(HistoryRow(
                int(rec["epoch"]),
                float(rec["hedger_loss"]),
                float(rec["generator_objective"]) if rec["generator_objective"] else math.nan,
                float(rec["validation_cost"]) if rec["validation_cost"] else math.nan,
            ))
    return rows
