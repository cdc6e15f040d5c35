"""Benchmark suite: forecast accuracy next to the decision value it buys.

Each forecaster drives the rolling-intrinsic dispatch of every evaluated day and
is scored against perfect-foresight dispatch on the same day. Accuracy metrics
use the full-day forecast issued at the day's first gate closure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..battery import BatterySpec
from ..dataset import MarketDataset
from ..dispatch import DispatchProblem, RollConfig, SkippedDay, rolling_intrinsic, solve_dp
from ..forecast import ForecastUnavailable, Forecaster, benchmark_suite
from ..ranking import kendall_tau
from ..tables import write_table
from .metrics import EvalReport, mae, rmse, summarize_vcr, write_eval_table


@dataclass(frozen=True, eq=False)
class DailyScores:
    """Per-day arrays for one forecaster; NaN marks a skipped day."""

    name: str
    days: np.ndarray
    mae: np.ndarray
    rmse: np.ndarray
    tau: np.ndarray
    revenue: np.ndarray
    oracle: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.revenue)

    def report(self) -> EvalReport:
        ok = self.ok
        if not ok.any():
            return EvalReport(self.name, math.nan, math.nan, math.nan, math.nan, 0, 0)
        s = summarize_vcr(self.revenue[ok], self.oracle[ok])
        return EvalReport(self.name, float(np.mean(self.mae[ok])), float(np.sqrt(np.mean(self.rmse[ok] ** 2))),
                          float(np.mean(self.tau[ok])), s.ratio, s.n_days, s.n_excluded,
                          float(np.sum(self.revenue[ok])))


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    scores: list[DailyScores]
    skipped: dict[str, list[int]] = field(default_factory=dict)

    @property
    def reports(self) -> list[EvalReport]:
        return [s.report() for s in self.scores]

    def by_name(self, name: str) -> DailyScores:
        for s in self.scores:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_csv(self, path: str | Path) -> Path:
        return write_eval_table(path, self.reports)


def default_days(ds: MarketDataset, warmup: int = 9) -> list[int]:
    """Skip the first ``warmup`` days so every forecaster has a training window."""
    if ds.n_days <= warmup:
        raise ValueError(f"need more than {warmup} days")
    return list(range(warmup, ds.n_days))


def run_benchmark(ds: MarketDataset, forecasters: Sequence[Forecaster] | None = None,
                  days: Sequence[int] | None = None, spec: BatterySpec | None = None,
                  action_levels: int = 21, soc_levels: int = 101) -> BenchmarkResult:
    """Days start empty and carry no terminal constraint, as in the tau scan."""
    fcs = list(forecasters) if forecasters is not None else benchmark_suite(ds)
    days = list(days) if days is not None else default_days(ds)
    spec = spec or BatterySpec()
    roll = RollConfig.from_rules(ds.rules)
    lead = ds.rules.xbid_lead
    n = len(days)
    oracle = np.empty(n)
    templates = []
    for i, d in enumerate(days):
        real = ds.xbid.day(d)
        tpl = DispatchProblem(np.asarray(real.values), spec, 0.0, dt=0.25, action_levels=action_levels,
                              soc_levels=soc_levels)
        templates.append(tpl)
        oracle[i] = solve_dp(tpl).net_revenue
    scores = []
    skipped: dict[str, list[int]] = {}
    for fc in fcs:
        arrs = {k: np.full(n, np.nan) for k in ("mae", "rmse", "tau", "revenue")}
        for i, d in enumerate(days):
            real = ds.xbid.day(d)
            y = np.asarray(real.values, float)
            try:
                fc.prepare_day(real.timeline.start)
                f = np.asarray(fc.forecast(real.timeline.start - lead, real.timeline), float)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    s = rolling_intrinsic(fc, real, roll, templates[i])
            except (SkippedDay, ForecastUnavailable):
                skipped.setdefault(fc.name, []).append(d)
                continue
            arrs["mae"][i] = mae(f, y)
            arrs["rmse"][i] = rmse(f, y)
            arrs["tau"][i] = kendall_tau(f, y)
            arrs["revenue"][i] = s.net_revenue
        scores.append(DailyScores(fc.name, np.asarray(days), arrs["mae"], arrs["rmse"], arrs["tau"],
                                  arrs["revenue"], oracle.copy()))
    return BenchmarkResult(scores, skipped)


def write_daily_scores(path: str | Path, result: BenchmarkResult) -> Path:
    rows = ((s.name, int(d), s.mae[i], s.rmse[i], s.tau[i], s.revenue[i], s.oracle[i])
            for s in result.scores for i, d in enumerate(s.days))
    return write_table(path, ["forecaster", "day", "mae", "rmse", "tau", "revenue_eur", "oracle_eur"], rows)
