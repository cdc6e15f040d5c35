"""Week-by-week orchestration of the three layers in gate-closure order.

Layer 1 fixes the weekly reserve commitment and the SoC band. Each day, Layer 2
schedules a day-ahead position on the remaining power and hands its closing SoC
to Layer 3, which re-trades intraday around that position. Energy settles as::

    sum(da * delta_da * 1h) + sum(xbid * (delta - delta_da) * 0.25h)

where ``delta`` is the physical quarter-hour action chosen by Layer 3. Reserve
activation energy is not simulated; the SoC band keeps room for it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .allocation import (
    BLOCK_HOURS,
    AllocationConfig,
    AllocationError,
    AllocationResult,
    BidStrategy,
    ClearingDistribution,
    MarketDistributions,
    ScenarioSet,
    WeeklyAllocation,
    bootstrap_scenarios,
    history_distributions,
    optimize_allocation,
    hourly_xbid,
)
from .battery import BatterySpec
from .dataset import MarketDataset
from .dispatch import DispatchProblem, RollConfig, SkippedDay, rolling_intrinsic, solve_daily_mpc
from .forecast import (
    DAAnchorForecaster,
    Forecaster,
    HybridForecaster,
    LearnedARForecaster,
    MarketView,
    OracleForecaster,
    PersistenceForecaster,
)
from .market_data import Timeline, format_utc
from .tables import write_table

FORECASTERS = ("oracle", "persistence", "da_anchor", "learned_ar", "hybrid")


def make_forecaster(name: str, ds: MarketDataset) -> Forecaster:
    view = MarketView.from_dataset(ds)
    if name == "oracle":
        return OracleForecaster(ds.xbid)
    if name == "persistence":
        return PersistenceForecaster(view)
    if name == "da_anchor":
        return DAAnchorForecaster(view)
    if name == "learned_ar":
        return LearnedARForecaster(view, lead=ds.rules.xbid_lead)
    if name == "hybrid":
        return HybridForecaster(LearnedARForecaster(view, lead=ds.rules.xbid_lead), DAAnchorForecaster(view))
    raise ValueError(f"unknown forecaster {name!r}; choose from {', '.join(FORECASTERS)}")


@dataclass(frozen=True)
class SimConfig:
    """``reserves=False`` gives all power to energy trading; ``oracle=True`` uses
    realised prices in every layer (the full-system upper bound)."""

    spec: BatterySpec = field(default_factory=BatterySpec)
    strategy: BidStrategy = field(default_factory=BidStrategy)
    regimes: Mapping[int, int] | None = None
    forecaster: str = "hybrid"
    reserves: bool = True
    day_ahead: bool = True
    oracle: bool = False
    n_scenarios: int = 30
    window: int = 52
    seed: int = 0
    mpc_discount: float = 0.8
    mpc_days: int = 4
    alloc: AllocationConfig = field(default_factory=AllocationConfig)
    action_levels: int = 21
    soc_levels: int = 101

    def __post_init__(self):
        if self.forecaster not in FORECASTERS:
            raise ValueError(f"unknown forecaster {self.forecaster!r}")
        if self.n_scenarios < 1 or self.window < 1:
            raise ValueError("n_scenarios and window must be positive")


@dataclass(frozen=True, eq=False)
class DayOutcome:
    day: int
    day_start: np.datetime64
    da_revenue: float
    xbid_revenue: float
    degradation: float
    actions: np.ndarray
    soc: np.ndarray
    da_actions: np.ndarray
    skipped: str = ""

    @property
    def energy_net(self) -> float:
        return self.da_revenue + self.xbid_revenue - self.degradation


@dataclass(frozen=True, eq=False)
class WeekOutcome:
    week: int
    week_start: np.datetime64
    allocation: WeeklyAllocation
    bid_percentile: float
    expected_revenue: float
    capacity_revenue: float
    days: list[DayOutcome]

    @property
    def net_revenue(self) -> float:
        return self.capacity_revenue + sum(d.energy_net for d in self.days)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    weeks: list[WeekOutcome]
    skipped_weeks: list[tuple[int, str]]
    config: SimConfig

    def weekly_revenue(self) -> np.ndarray:
        return np.array([w.net_revenue for w in self.weeks])

    @property
    def total_revenue(self) -> float:
        return float(self.weekly_revenue().sum())

    @property
    def n_days(self) -> int:
        return sum(len(w.days) for w in self.weeks)

    def skipped_days(self) -> list[tuple[int, str]]:
        return [(d.day, d.skipped) for w in self.weeks for d in w.days if d.skipped]


def idle_allocation(spec: BatterySpec) -> WeeklyAllocation:
    return WeeklyAllocation(0.0, 0.0, 0.0, spec.p_max, 0.0, 1.0)


def realised_capacity_revenue(alloc: WeeklyAllocation, bids: Mapping[str, np.ndarray], ds: MarketDataset,
                              week: int) -> float:
    """Pay-as-bid: a block pays its bid when the realised clearing price is at least the bid."""
    total = 0.0
    for key, mw in (("fcr", alloc.p_fcr), ("afrr_up", alloc.p_afrr_up), ("afrr_dn", alloc.p_afrr_dn)):
        if mw <= 0:
            continue
        clearing = ds.capacity_blocks(key)[week]
        b = np.asarray(bids[key], float)
        total += mw * BLOCK_HOURS * float(np.sum(np.where(clearing >= b, b, 0.0)))
    return total


def _perfect_layer1(ds: MarketDataset, week: int):
    """Seven scenarios, one per realised day of the week, sharing the realised
    capacity prices; every bid equals its clearing price."""
    sc = ScenarioSet(*(np.repeat(ds.capacity_blocks(k)[week:week + 1], 7, axis=0)
                       for k in ("fcr", "afrr_up", "afrr_dn")),
                     hourly_xbid(ds)[7 * week:7 * week + 7])
    dists = MarketDistributions(*([ClearingDistribution(np.array([p])) for p in ds.capacity_blocks(k)[week]]
                                  for k in ("fcr", "afrr_up", "afrr_dn")))
    return sc, dists


def plan_week(ds: MarketDataset, week: int, cfg: SimConfig) -> tuple[AllocationResult | None, dict]:
    """Layer 1 for one week. Returns the result and the bids actually submitted."""
    if not cfg.reserves:
        return None, {}
    if cfg.oracle:
        sc, dists = _perfect_layer1(ds, week)
    else:
        sc = bootstrap_scenarios(ds, week, cfg.n_scenarios, cfg.window, cfg.seed)
        dists = history_distributions(ds, week, cfg.window)
    regime = None if cfg.regimes is None else cfg.regimes.get(week)
    res = optimize_allocation(sc, cfg.strategy, dists, cfg.spec, regime, cfg.alloc)
    return res, dists.bids(res.bid_percentile)


def _mpc_outlook(ds: MarketDataset, day: int, cfg: SimConfig) -> list[np.ndarray]:
    """Price outlook for the days after ``day``: realised DA when ``oracle``,
    otherwise today's cleared DA profile carried forward."""
    da = ds.da_hourly()
    if cfg.oracle:
        return [da[d] for d in range(day + 1, min(ds.n_days, day + 1 + cfg.mpc_days))]
    return [da[day]] * cfg.mpc_days


def simulate_day(ds: MarketDataset, day: int, alloc: WeeklyAllocation, soc: float, forecaster: Forecaster,
                 cfg: SimConfig) -> DayOutcome:
    spec = cfg.spec
    p = alloc.p_xbid
    da_h = ds.da_hourly()[day]
    xbid = ds.xbid.day(day)
    real = np.asarray(xbid.values, float)
    soc = float(np.clip(soc, alloc.soc_min, alloc.soc_max))
    step = (alloc.soc_max - alloc.soc_min) / (cfg.soc_levels - 1)

    terminal = None
    da_q = np.zeros(96)
    if cfg.day_ahead and p > 1e-9:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sched, target = solve_daily_mpc(da_h, _mpc_outlook(ds, day, cfg), spec, soc, alloc.soc_min,
                                            alloc.soc_max, p, cfg.mpc_discount, cfg.action_levels,
                                            cfg.soc_levels)
        da_q = np.repeat(sched.actions, 4)
        terminal = (max(alloc.soc_min, target - step), min(alloc.soc_max, target + step))
    da_rev = float(np.sum(da_h * da_q[::4]))

    if p <= 1e-9 or alloc.soc_max - alloc.soc_min <= 1e-12:
        acts, socs = np.zeros(96), np.full(97, soc)
        return DayOutcome(day, ds.day_start(day), da_rev, 0.0, 0.0, acts, socs, da_q, "")

    template = DispatchProblem(real, spec.with_power(p), soc, alloc.soc_min, alloc.soc_max, 0.25,
                               cfg.action_levels, cfg.soc_levels, terminal)
    skipped = ""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = rolling_intrinsic(forecaster, xbid, RollConfig.from_rules(ds.rules), template)
        acts, socs = s.actions, s.trajectory.soc
    except SkippedDay as exc:
        # fall back to the committed day-ahead position
        skipped = str(exc)
        acts = da_q.copy()
        socs = _follow(acts, soc, spec, alloc)
    x_rev = float(np.sum(real * (acts - da_q)) * 0.25)
    deg = float(spec.deg_cost * np.sum(np.maximum(acts, 0.0)) * 0.25)
    return DayOutcome(day, ds.day_start(day), da_rev, x_rev, deg, acts, socs, da_q, skipped)


def _follow(acts: np.ndarray, soc: float, spec: BatterySpec, alloc: WeeklyAllocation) -> np.ndarray:
    out = np.empty(acts.size + 1)
    out[0] = soc
    for t, a in enumerate(acts):
        d = (-a / spec.eta_d if a > 0 else -a * spec.eta_c) * 0.25 / spec.e_max
        out[t + 1] = min(alloc.soc_max, max(alloc.soc_min, out[t] + d))
    return out


def simulate(ds: MarketDataset, weeks: Sequence[int], cfg: SimConfig = SimConfig(),
             forecaster: Forecaster | None = None) -> SimulationResult:
    """Run the weeks in order, carrying the SoC across days and weeks."""
    fc = forecaster or make_forecaster("oracle" if cfg.oracle else cfg.forecaster, ds)
    out: list[WeekOutcome] = []
    skipped: list[tuple[int, str]] = []
    soc = 0.5
    for w in weeks:
        if not 0 <= w < ds.n_weeks:
            raise ValueError(f"week {w} outside the dataset")
        try:
            res, bids = plan_week(ds, w, cfg)
        except AllocationError as exc:
            skipped.append((w, str(exc)))
            continue
        alloc = res.allocation if res is not None else idle_allocation(cfg.spec)
        cap = realised_capacity_revenue(alloc, bids, ds, w) if res is not None else 0.0
        days = []
        for d in range(7 * w, 7 * w + 7):
            o = simulate_day(ds, d, alloc, soc, fc, cfg)
            soc = float(o.soc[-1])
            days.append(o)
        out.append(WeekOutcome(w, ds.day_start(7 * w), alloc,
                               res.bid_percentile if res is not None else math.nan,
                               res.expected_revenue if res is not None else math.nan, cap, days))
    return SimulationResult(out, skipped, cfg)


def write_simulation(result: SimulationResult, out_dir: str | Path) -> list[Path]:
    """allocation.csv, schedule.csv (quarter-hourly), revenue.csv (daily) and summary.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    rows = []
    for w in result.weeks:
        a = w.allocation
        rows.append((format_utc(w.week_start), a.p_fcr, a.p_afrr_up, a.p_afrr_dn, a.p_xbid, a.soc_min, a.soc_max,
                     w.bid_percentile, w.expected_revenue, w.capacity_revenue))
    paths.append(write_table(out_dir / "allocation.csv",
                             ["week_start", "p_fcr", "p_afrr_up", "p_afrr_dn", "p_xbid", "soc_min", "soc_max",
                              "bid_percentile", "expected_revenue_eur", "capacity_revenue_eur"], rows))

    def sched_rows():
        for w in result.weeks:
            for d in w.days:
                times = Timeline(d.day_start, np.timedelta64(900, "s"), 96).times()
                for t in range(96):
                    yield format_utc(times[t]), d.da_actions[t], d.actions[t], d.soc[t]

    paths.append(write_table(out_dir / "schedule.csv", ["timestamp", "da_action_mw", "action_mw", "soc"],
                             sched_rows()))
    rows = []
    for w in result.weeks:
        for d in w.days:
            rows.append((format_utc(d.day_start), d.da_revenue, d.xbid_revenue, d.degradation, d.energy_net,
                         d.skipped))
    paths.append(write_table(out_dir / "revenue.csv",
                             ["day", "da_revenue_eur", "xbid_revenue_eur", "degradation_eur", "energy_net_eur",
                              "skipped"], rows))
    n_days = max(result.n_days, 1)
    summary = [("weeks", len(result.weeks)), ("days", result.n_days),
               ("skipped_weeks", len(result.skipped_weeks)), ("skipped_days", len(result.skipped_days())),
               ("capacity_revenue_eur", sum(w.capacity_revenue for w in result.weeks)),
               ("energy_net_eur", sum(d.energy_net for w in result.weeks for d in w.days)),
               ("total_net_eur", result.total_revenue),
               ("mean_net_eur_per_day", result.total_revenue / n_days)]
    paths.append(write_table(out_dir / "summary.csv", ["metric", "value"], summary))
    return paths

