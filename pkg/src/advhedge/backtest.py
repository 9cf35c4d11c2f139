"""Historical evaluation: daily closes -> normalized 20-day windows -> costs.

Input is a ``date,close`` CSV with ISO dates.  Windows are non-overlapping
blocks of n+1 consecutive closes, each divided by its first close; the
trailing remainder is dropped.  Each strategy is rolled close-to-close over
every window and scored two ways: the hedge cost of the pooled window-PL
sample, and the mean/std of per-window PL.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .instruments import OptionSpec
from .risk import CostSpec, UtilitySpec, hedge_loss
from .strategies import Strategy, strategy_pl

REPORT_FORMAT = "advhedge-backtest"
REPORT_VERSION = 1


class IngestionError(ValueError):
    """Malformed or insufficient price data."""


@dataclass(frozen=True)
class MarketSeries:
    symbol: str
    dates: tuple[dt.date, ...]
    closes: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.closes):
            raise IngestionError("dates and closes differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise IngestionError("dates must be strictly increasing")
        if np.any(~(np.asarray(self.closes) > 0)):
            raise IngestionError("closes must be positive")

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class BacktestWindow:
    prices: np.ndarray
    start: dt.date
    end: dt.date


def load_series(path, symbol: str | None = None, n: int = 20) -> MarketSeries:
    """Read and validate a ``date,close`` CSV (at least n+1 observations)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    if header != ["date", "close"]:
        raise IngestionError(f"{path}: expected header 'date,close', got {','.join(rows[0])!r}")
    dates, closes = [], []
    seen: dict[dt.date, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise IngestionError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: bad ISO date {row[0]!r}") from None
        try:
            close = float(row[1])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: non-numeric close {row[1]!r}") from None
        if not (math.isfinite(close) and close > 0):
            raise IngestionError(f"{path}:{lineno}: close must be positive and finite, got {row[1]!r}")
        if day in seen:
            raise IngestionError(f"{path}:{lineno}: duplicate date {day.isoformat()} (first on line {seen[day]})")
        if dates and day < dates[-1]:
            raise IngestionError(f"{path}:{lineno}: date {day.isoformat()} out of order")
        seen[day] = lineno
        dates.append(day)
        closes.append(close)
    if len(dates) < n + 1:
        raise IngestionError(f"{path}: {len(dates)} observations, need at least {n + 1}")
    return MarketSeries(symbol or path.stem, tuple(dates), np.array(closes))


def write_series(path, series: MarketSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close"])
        for d, c in zip(series.dates, series.closes):
            w.writerow([d.isoformat(), repr(float(c))])
    return path


def synthetic_gbm_series(n_obs: int, sigma: float = 0.2, s0: float = 100.0, seed=0,
                         start: dt.date = dt.date(2000, 1, 3), step_years: float = 1 / 250,
                         symbol: str = "SYNTH") -> MarketSeries:
    """Zero-drift GBM closes on consecutive business days."""
    z = np.random.default_rng(seed).standard_normal(n_obs - 1)
    r = sigma * math.sqrt(step_years) * z - 0.5 * sigma**2 * step_years
    closes = s0 * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    days, d = [], start
    while len(days) < n_obs:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return MarketSeries(symbol, tuple(days), closes)


def slice_windows(series: MarketSeries, n: int = 20) -> list[BacktestWindow]:
    if len(series) < n + 1:
        raise IngestionError(f"series has {len(series)} observations, need at least {n + 1}")
    out = []
    closes = np.asarray(series.closes, dtype=np.float64)
    for lo in range(0, len(series) - n, n + 1):
        block = closes[lo: lo + n + 1]
        prices = block / block[0]
        prices[0] = 1.0
        out.append(BacktestWindow(prices, series.dates[lo], series.dates[lo + n]))
    return out


@dataclass
class ReportRow:
    option: str
    utility: str
    strategy: str
    cost: float
    pl_mean: float
    pl_std: float
    window_count: int
    hist_counts: list[int] = field(default_factory=list)


@dataclass
class BacktestReport:
    symbol: str
    rows: list[ReportRow]
    bin_edges: list[float]
    first_date: str = ""
    last_date: str = ""

    def row(self, strategy: str, utility: str | None = None) -> ReportRow:
        for r in self.rows:
            if r.strategy == strategy and (utility is None or r.utility == utility):
                return r
        raise KeyError(strategy)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "symbol": self.symbol,
            "first_date": self.first_date,
            "last_date": self.last_date,
            "bin_edges": self.bin_edges,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> BacktestReport:
        if d.get("format") != REPORT_FORMAT:
            raise ValueError(f"not a backtest report: format={d.get('format')!r}")
        return cls(d["symbol"], [ReportRow(**r) for r in d["rows"]], d["bin_edges"],
                   d.get("first_date", ""), d.get("last_date", ""))


def _option_label(option: OptionSpec) -> str:
    return option.kind.value


def run_backtest(windows: list[BacktestWindow], strategies: list[Strategy], option: OptionSpec,
                 utilities: UtilitySpec | list[UtilitySpec], cost: CostSpec, bins: int = 40,
                 symbol: str = "") -> BacktestReport:
    """Score every (utility, strategy) pair on the window set.

    ``cost`` is the hedge cost of the pooled per-window PL sample; ``pl_mean``
    and ``pl_std`` (ddof=0) summarize per-window PL.  Histogram bins are shared
    by all strategies.
    """
    if not windows:
        raise ValueError("no windows to evaluate")
    if isinstance(utilities, UtilitySpec):
        utilities = [utilities]
    n = option.maturity_steps
    for w in windows:
        if w.prices.shape != (n + 1,):
            raise ValueError(f"window length {w.prices.size} does not match option maturity {n} steps")
    prices = np.stack([w.prices for w in windows])
    pls = {s.name: strategy_pl(s, prices, option, cost) for s in strategies}
    if len(pls) != len(strategies):
        raise ValueError("strategy names must be unique")
    allpl = np.concatenate(list(pls.values()))
    lo, hi = float(allpl.min()), float(allpl.max())
    if hi <= lo:
        hi = lo + 1e-12
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for u in utilities:
        for s in strategies:
            pl = pls[s.name]
            counts, _ = np.histogram(pl, bins=edges)
            rows.append(ReportRow(_option_label(option), u.label, s.name, float(hedge_loss(pl, u)),
                                  float(pl.mean()), float(pl.std()), len(windows), counts.tolist()))
    return BacktestReport(symbol, rows, edges.tolist(), windows[0].start.isoformat(), windows[-1].end.isoformat())


def write_report_json(path, report: BacktestReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def read_report_json(path) -> BacktestReport:
    return BacktestReport.from_dict(json.loads(Path(path).read_text()))


def format_report(report: BacktestReport) -> str:
    head = ("option", "utility", "strategy", "cost", "pl_mean", "pl_std", "windows")
    body = [(r.option, r.utility, r.strategy, f"{r.cost:.6f}", f"{r.pl_mean:.6f}", f"{r.pl_std:.6f}",
             str(r.window_count)) for r in report.rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = [f"# {report.symbol} {report.first_date}..{report.last_date}",
             "# cost: hedge cost of pooled window PL; pl_mean/pl_std: across windows"]
    for rec in (head, *body):
        lines.append("  ".join(x.ljust(w) if i < 3 else x.rjust(w) for i, (x, w) in enumerate(zip(rec, widths))))
    return "\n".join(lines) + "\n"


def write_report_text(path, report: BacktestReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report))
    return path


def write_histogram_csv(path, report: BacktestReport) -> Path:
    """One row per bin; one count column per strategy (first utility's rows)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = report.rows[0].utility
    rows = [r for r in report.rows if r.utility == first]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", *[f"count_{r.strategy}" for r in rows]])
        for i in range(len(report.bin_edges) - 1):
            w.writerow([repr(report.bin_edges[i]), repr(report.bin_edges[i + 1]), *[r.hist_counts[i] for r in rows]])
    return path
