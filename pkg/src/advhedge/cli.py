"""Command line: ``advhedge {train,eval,backtest,toy,synth}``.

Exit status: 0 success, 1 usage or configuration error, 2 runtime or
numerical error.  Every command writes ``manifest.json`` (config hash,
seed, format version, package versions, output list) and the resolved
``config.ini`` into the output directory; reruns with the same config and
seed reproduce every delimited output byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from . import __version__
from . import autodiff as ad
from . import plotting
from .backtest import (
    IngestionError,
    load_series,
    run_backtest,
    slice_windows,
    synthetic_gbm_series,
    write_histogram_csv,
    write_report_json,
    write_report_text,
    write_series,
)
from .config import ConfigError, ExperimentConfig, load_config, write_config
from .networks import CheckpointError, GeneratorModel, HedgerPolicy, check_compatible, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .simulators import GBMSource, HestonSource, PathBatch
from .strategies import BSDeltaHedge, NeuralHedge, ZeroHedge, bs_reference_price
from .toy import (
    ToyMarket,
    linear_grid,
    run_toy_adversarial,
    sweep_case1,
    sweep_case2,
    sweep_case3,
)
from .training import cost_on, evaluate, train_adversarial, train_deep_hedging, validation_prices, write_history

MANIFEST_FORMAT = "advhedge-run"
MANIFEST_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("advhedge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _versions() -> dict:
    return {"advhedge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: list[Path], extra=None) -> Path:
    manifest = {
        "format": MANIFEST_FORMAT,
        "format_version": MANIFEST_VERSION,
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.raw,
        "versions": _versions(),
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _simulator(cfg: ExperimentConfig):
    n, dt, s0 = cfg.option.maturity_steps, cfg.option.step_years, cfg.simulator.s0
    if cfg.simulator.kind == "heston":
        return HestonSource(cfg.simulator.heston, n, dt, s0)
    return GBMSource(cfg.simulator.sigma, n, dt, s0)


def _load_hedger(path, cfg: ExperimentConfig) -> HedgerPolicy:
    model = load_checkpoint(path)
    if not isinstance(model, HedgerPolicy):
        raise CheckpointError(f"{path} holds a {type(model).__name__}, expected a hedger")
    check_compatible(model, cfg.option, cfg.hedger.features,
                     require_running_max=not cfg.lookback_override)
    return model


def cmd_train(args, cfg: ExperimentConfig) -> dict:
    out = cfg.out
    outputs = [write_config(out / "config.ini", cfg)]
    if cfg.simulator.kind == "adversarial":
        result = train_adversarial(cfg.option, cfg.utility, cfg.cost, cfg.train, cfg.hedger, cfg.generator)
        outputs.append(save_checkpoint(result.policy, out / "hedger_final.json"))
        outputs.append(save_checkpoint(result.best.hedger, out / "hedger.json"))
        outputs.append(save_checkpoint(result.generator, out / "generator.json"))
        prices = np.stack(result.generator.roll(cfg.simulator.s0, cfg.option.maturity_steps, 256,
                                                derive_seed(cfg.seed, "eval", 0)), axis=1)
    else:
        result = train_deep_hedging(_simulator(cfg), cfg.option, cfg.utility, cfg.cost, cfg.train, cfg.hedger)
        outputs.append(save_checkpoint(result.policy, out / "hedger.json"))
        prices = _simulator(cfg)(256, derive_seed(cfg.seed, "eval", 0)).prices
    outputs.append(write_history(out / "history.csv", result.history))
    val = validation_prices(cfg.option, cfg.train)
    selected = result.best.hedger if cfg.simulator.kind == "adversarial" else result.policy
    summary = {
        "simulator": cfg.simulator.kind,
        "utility": cfg.utility.label,
        "option": cfg.option.kind.value,
        "epochs": cfg.train.epochs,
        "hedger_steps": result.hedger_steps,
        "generator_steps": result.generator_steps,
        "final_loss": result.history[-1].hedger_loss,
        "best_epoch": result.best.epoch if result.best else None,
        "best_validation_cost": result.best.validation_cost if result.best else None,
        "validation_cost_bs_delta": cost_on(BSDeltaHedge(cfg.hedger.bs_sigma), val, cfg.option, cfg.utility, cfg.cost),
        "validation_cost_selected": cost_on(selected, val, cfg.option, cfg.utility, cfg.cost),
    }
    outputs.append(_write_json(out / "summary.json", summary))
    if cfg.figures:
        outputs.append(plotting.plot_history(result.history, out / "figures" / "history.png",
                                             f"{cfg.simulator.kind} / {cfg.utility.label}"))
        outputs.append(plotting.plot_paths(prices, out / "figures" / "paths.png"))
    return {"outputs": outputs, "summary": summary}


def _strategies(cfg: ExperimentConfig, checkpoint) -> list:
    names = list(cfg.backtest.strategies)
    if checkpoint is not None and "hedger" not in names:
        names.append("hedger")
    out = []
    for name in names:
        if name == "zero":
            out.append(ZeroHedge())
        elif name == "bs_delta":
            out.append(BSDeltaHedge(cfg.backtest.bs_sigma))
        elif name == "hedger":
            if checkpoint is None:
                raise ConfigError("backtest.strategies includes 'hedger' but no --checkpoint was given")
            out.append(NeuralHedge(_load_hedger(checkpoint, cfg)))
    return out


def cmd_eval(args, cfg: ExperimentConfig) -> dict:
    out = cfg.out
    outputs = [write_config(out / "config.ini", cfg)]
    strategies = _strategies(cfg, args.checkpoint)
    if cfg.simulator.kind == "adversarial":
        if args.generator is None:
            raise ConfigError("simulator.kind=adversarial needs --generator CHECKPOINT for eval")
        gen = load_checkpoint(args.generator)
        if not isinstance(gen, GeneratorModel):
            raise CheckpointError(f"{args.generator} does not hold a generator")

        def source(batch, seed):
            cols = gen.roll(cfg.simulator.s0, cfg.option.maturity_steps, batch, seed)
            return PathBatch(np.stack(cols, axis=1), cfg.simulator.s0, cfg.option.step_years)
    else:
        source = _simulator(cfg)
    rows = []
    for s in strategies:
        mean, std = evaluate(s, source, cfg.option, cfg.utility, cfg.cost, cfg.train.eval_trials, cfg.seed,
                             cfg.train.eval_paths)
        rows.append({"strategy": s.name, "utility": cfg.utility.label, "cost_mean": mean, "cost_std": std,
                     "trials": cfg.train.eval_trials, "paths": cfg.train.eval_paths})
    path = out / "eval.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    outputs.append(path)
    summary = {"rows": rows, "bs_price": bs_reference_price(cfg.option, cfg.simulator.sigma, cfg.simulator.s0)}
    outputs.append(_write_json(out / "eval.json", summary))
    return {"outputs": outputs, "summary": summary}


def cmd_backtest(args, cfg: ExperimentConfig) -> dict:
    out = cfg.out
    outputs = [write_config(out / "config.ini", cfg)]
    series = load_series(args.data, symbol=cfg.backtest.symbol or None, n=cfg.option.maturity_steps)
    windows = slice_windows(series, cfg.option.maturity_steps)
    report = run_backtest(windows, _strategies(cfg, args.checkpoint), cfg.option, cfg.backtest_utilities,
                          cfg.cost, cfg.backtest.bins, series.symbol)
    outputs.append(write_report_json(out / "report.json", report))
    outputs.append(write_report_text(out / "report.txt", report))
    outputs.append(write_histogram_csv(out / "histogram.csv", report))
    if cfg.figures:
        outputs.append(plotting.plot_pl_histogram(report, out / "figures" / "pl_histogram.png"))
    rows = [{k: v for k, v in r.items() if k != "hist_counts"} for r in report.to_dict()["rows"]]
    return {"outputs": outputs, "summary": rows}


def cmd_toy(args, cfg: ExperimentConfig) -> dict:
    t = cfg.toy
    case = args.case if args.case is not None else t.case
    if case not in (1, 2, 3):
        raise UsageError(f"toy case must be 1, 2 or 3, got {case}")
    out = cfg.out
    outputs = [write_config(out / "config.ini", cfg)]
    market = ToyMarket(1.0, t.mu, t.sigma, t.c)
    deltas = linear_grid(*t.delta_grid)
    summary: dict = {"case": case, "utility": t.utility.label}
    if case == 1:
        sweep = sweep_case1(market, t.utility, deltas, t.mc_samples, cfg.seed)
        outputs.append(sweep.to_csv(out / "case1.csv"))
        summary["argmax_delta"] = sweep.argmax_delta()
        if cfg.figures:
            outputs.append(plotting.plot_case1({t.utility.label: sweep}, out / "figures" / "case1.png"))
    elif case == 2:
        sweep = sweep_case2(market, t.utility, deltas, linear_grid(*t.mu_grid), t.grad_mc_samples, cfg.seed)
        traj = run_toy_adversarial(t.utility, t.init, t.steps, t.lrs, t.ttur_ratio, cfg.seed, market,
                                   t.traj_mc_samples)
        outputs.append(sweep.to_csv(out / "case2_surface.csv"))
        outputs.append(traj.to_csv(out / "case2_trajectory.csv"))
        summary.update(final_delta=traj.final[0], final_mu=traj.final[1], diverged=traj.diverged)
        if cfg.figures:
            outputs.append(plotting.plot_case2(sweep, out / "figures" / "case2.png", traj))
    else:
        sweep = sweep_case3(market, t.utility, deltas, np.array(t.sigmas), t.grad_mc_samples, cfg.seed)
        outputs.append(sweep.to_csv(out / "case3.csv"))
        summary["argmax_delta_per_sigma"] = [float(x) for x in sweep.argmax_delta()]
        if cfg.figures:
            outputs.append(plotting.plot_case3(sweep, out / "figures" / "case3.png"))
    outputs.append(_write_json(out / "toy_summary.json", summary))
    return {"outputs": outputs, "summary": summary}


def cmd_synth(args, cfg: ExperimentConfig) -> dict:
    out = cfg.out
    series = synthetic_gbm_series(args.n, args.sigma, args.s0, derive_seed(cfg.seed, "synth"),
                                  step_years=cfg.option.step_years)
    path = Path(args.path) if args.path else out / "synthetic.csv"
    write_series(path, series)
    outputs = [write_config(out / "config.ini", cfg)]
    if path.resolve().is_relative_to(out.resolve()):
        outputs.append(path)
    return {"outputs": outputs, "summary": {"path": str(path), "observations": args.n}}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "backtest": cmd_backtest, "toy": cmd_toy, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file (every key has a default)")
    common.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config value; repeatable")
    common.add_argument("--out", metavar="DIR", help="output directory (run.out)")
    common.add_argument("--seed", type=int, help="run seed (run.seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="advhedge", description="Adversarial deep hedging experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="deep hedging or adversarial training")
    pe = sub.add_parser("eval", parents=[common], help="evaluate strategies on the configured simulator")
    pe.add_argument("--checkpoint", metavar="PATH", help="hedger checkpoint (strategy 'hedger')")
    pe.add_argument("--generator", metavar="PATH", help="generator checkpoint when simulator.kind=adversarial")
    pb = sub.add_parser("backtest", parents=[common], help="evaluate strategies on a date,close CSV")
    pb.add_argument("--data", metavar="CSV", required=True)
    pb.add_argument("--checkpoint", metavar="PATH", help="hedger checkpoint (strategy 'hedger')")
    pt = sub.add_parser("toy", parents=[common], help="one-step Gaussian sweeps and trajectories")
    pt.add_argument("--case", type=int, help="1, 2 or 3 (toy.case)")
    ps = sub.add_parser("synth", parents=[common], help="write a synthetic GBM date,close CSV")
    ps.add_argument("--n", type=int, default=2100, help="number of closes")
    ps.add_argument("--sigma", type=float, default=0.2)
    ps.add_argument("--s0", type=float, default=100.0)
    ps.add_argument("--path", metavar="CSV", help="output file (default OUT/synthetic.csv)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        if args.command == "synth" and args.n < 2:
            raise UsageError("--n must be >= 2")
        cfg.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](args, cfg)
        _write_manifest(cfg.out, args.command, cfg, result["outputs"])
    except (ConfigError, CheckpointError, IngestionError, UsageError) as exc:
        print(f"advhedge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ad.AutodiffError, ad.TrainingError, FloatingPointError, ValueError) as exc:
        print(f"advhedge {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result["summary"], indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
