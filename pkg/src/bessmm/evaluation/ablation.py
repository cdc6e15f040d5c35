"""Layer attribution: configurations that add one decision component at a time.

Every configuration is scored against its own perfect-foresight counterpart:

* naive DA spread vs the best DA-only arbitrage,
* XBID dispatch alone vs the standalone XBID oracle,
* the reserve-plus-energy systems vs the full multi-market oracle.

Revenues are net of the dispatch ageing charge. VCR is a ratio of sums over the
evaluated days (or weeks); days whose oracle earns nothing are left out and counted.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..allocation import BidMode, BidStrategy
from ..battery import BatterySpec
from ..dataset import MarketDataset
from ..dispatch import DispatchProblem, RollConfig, SkippedDay, rolling_intrinsic, solve_dp
from ..regime import RegimeError, walk_forward
from ..system import SimConfig, SimulationResult, make_forecaster, simulate
from ..tables import write_table
from .metrics import cvar

CHAIN = ("naive_da_spread", "dp_only", "l1_static_q40", "l1_regime", "full_system", "full_oracle")
SIDE_ROW = "layer2_3"
_LAYERS = {
    "naive_da_spread": "DA heuristic",
    "dp_only": "L3",
    "l1_static_q40": "L1 static + L2 + L3",
    "l1_regime": "L1 regime + L2 + L3",
    "full_system": "L1 regime + L2 + L3 learned",
    "full_oracle": "oracle",
    SIDE_ROW: "L2 + L3",
}


@dataclass(frozen=True)
class AblationConfig:
    """``base_forecaster`` drives Layer 3 up to the regime row; the full system
    swaps in ``forecaster``."""

    sim: SimConfig = field(default_factory=SimConfig)
    forecaster: str = "hybrid"
    base_forecaster: str = "da_anchor"
    static_quantile: float = 40.0
    naive_hours: int = 6
    train_weeks: int = 20
    n_states: int = 4
    restarts: int = 10
    weeks: tuple[int, ...] | None = None


@dataclass(frozen=True)
class AblationRow:
    name: str
    layers: str
    revenue_per_day: float
    vcr: float
    delta_vcr: float
    cvar5: float
    n_days: int
    n_excluded: int
    flagged: bool
    note: str = ""


@dataclass(frozen=True, eq=False)
class AblationResult:
    rows: list[AblationRow]
    weeks: tuple[int, ...]
    weekly: dict[str, np.ndarray]

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self, path: str | Path) -> Path:
        return write_table(path, ["configuration", "layers", "revenue_eur_per_day", "vcr", "delta_vcr",
                                  "cvar5_eur_week", "n_days", "n_excluded", "flagged", "note"],
                           ((r.name, r.layers, r.revenue_per_day, r.vcr, r.delta_vcr, r.cvar5, r.n_days,
                             r.n_excluded, int(r.flagged), r.note) for r in self.rows))


# --------------------------------------------------------------------------- single-market rows


def naive_spread_actions(da_hourly: np.ndarray, spec: BatterySpec, hours: int = 6,
                         soc_init: float = 0.0) -> np.ndarray:
    """Charge as hard as possible in the ``hours`` cheapest hours and discharge in the
    ``hours`` dearest ones, walking the day in time order. Ties go to earlier hours."""
    p = np.asarray(da_hourly, float)
    order = np.argsort(p, kind="mergesort")
    cheap = set(order[:hours].tolist())
    dear = set(np.argsort(-p, kind="mergesort")[:hours].tolist()) - cheap
    soc = soc_init
    acts = np.zeros(p.size)
    for t in range(p.size):
        if t in cheap:
            mw = min(spec.p_max, (1.0 - soc) * spec.e_max / spec.eta_c)
            acts[t] = -mw
            soc += mw * spec.eta_c / spec.e_max
        elif t in dear:
            mw = min(spec.p_max, soc * spec.e_max * spec.eta_d)
            acts[t] = mw
            soc -= mw / spec.eta_d / spec.e_max
        soc = min(1.0, max(0.0, soc))
    return acts


def _net(prices, acts, dt, spec) -> float:
    return float(np.sum(prices * acts) * dt - spec.deg_cost * np.sum(np.maximum(acts, 0.0)) * dt)


def _per_day_rows(ds: MarketDataset, days: Sequence[int], cfg: AblationConfig):
    spec = cfg.sim.spec
    da = ds.da_hourly()
    naive = np.empty(len(days))
    naive_or = np.empty(len(days))
    dp = np.empty(len(days))
    dp_or = np.empty(len(days))
    skipped = 0
    fc = make_forecaster(cfg.base_forecaster, ds)
    roll = RollConfig.from_rules(ds.rules)
    for i, d in enumerate(days):
        acts = naive_spread_actions(da[d], spec, cfg.naive_hours)
        naive[i] = _net(da[d], acts, 1.0, spec)
        s = solve_dp(DispatchProblem(da[d], spec, 0.0, dt=1.0))
        naive_or[i] = s.net_revenue
        xb = ds.xbid.day(d)
        tpl = DispatchProblem(np.asarray(xb.values), spec, 0.0, dt=0.25, action_levels=cfg.sim.action_levels,
                              soc_levels=cfg.sim.soc_levels)
        dp_or[i] = solve_dp(tpl).net_revenue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dp[i] = rolling_intrinsic(fc, xb, roll, tpl).net_revenue
        except SkippedDay:
            dp[i] = 0.0
            skipped += 1
    return naive, naive_or, dp, dp_or, skipped


def _daily_row(name, rev, oracle, days_per_week, note="") -> tuple[AblationRow, np.ndarray]:
    keep = oracle > 0
    n_ex = int((~keep).sum())
    ratio = float(rev[keep].sum() / oracle[keep].sum()) if keep.any() and oracle[keep].sum() > 0 else math.nan
    weekly = rev[: rev.size // days_per_week * days_per_week].reshape(-1, days_per_week).sum(axis=1)
    flagged = not math.isfinite(ratio)
    if flagged:
        note = (note + "; " if note else "") + "no day with a positive oracle revenue"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tail = cvar(weekly) if weekly.size else math.nan
    return AblationRow(name, _LAYERS[name], float(rev.mean()), ratio, math.nan, tail, int(rev.size), n_ex,
                       flagged, note), weekly


def _system_row(name, res: SimulationResult | None, oracle: SimulationResult | None, note="") -> AblationRow:
    if res is None or oracle is None or not res.weeks:
        return AblationRow(name, _LAYERS[name], math.nan, math.nan, math.nan, math.nan, 0, 0, True,
                           note or "configuration infeasible on this dataset")
    o = oracle.total_revenue
    ratio = res.total_revenue / o if o > 0 else math.nan
    weekly = res.weekly_revenue()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tail = cvar(weekly)
    skipped = len(res.skipped_days())
    if skipped:
        note = (note + "; " if note else "") + f"{skipped} days fell back to the DA position"
    flagged = not math.isfinite(ratio) or bool(res.skipped_weeks)
    return AblationRow(name, _LAYERS[name], res.total_revenue / max(res.n_days, 1), ratio, math.nan, tail,
                       res.n_days, 0 if o > 0 else len(res.weeks), flagged, note)


# --------------------------------------------------------------------------- driver


def default_weeks(ds: MarketDataset, cfg: AblationConfig) -> tuple[int, ...]:
    if cfg.weeks is not None:
        return tuple(cfg.weeks)
    start = cfg.train_weeks if ds.n_weeks > cfg.train_weeks else 1
    return tuple(range(start, ds.n_weeks))


def run_ablation(ds: MarketDataset, cfg: AblationConfig = AblationConfig()) -> AblationResult:
    """Evaluate the six chained configurations plus the side row for Layers 2 and 3 alone."""
    if ds.n_weeks < 4:
        raise ValueError("ablation needs at least four weeks of data")
    weeks = default_weeks(ds, cfg)
    if not weeks or min(weeks) < 1:
        raise ValueError("evaluation weeks need at least one earlier week of history")
    days = [d for w in weeks for d in range(7 * w, 7 * w + 7)]
    base = replace(cfg.sim, forecaster=cfg.base_forecaster, oracle=False, reserves=True, day_ahead=True,
                   strategy=BidStrategy(BidMode.STATIC, cfg.static_quantile), regimes=None)

    naive, naive_or, dp, dp_or, dp_skipped = _per_day_rows(ds, days, cfg)
    weekly: dict[str, np.ndarray] = {}
    rows: dict[str, AblationRow] = {}
    rows["naive_da_spread"], weekly["naive_da_spread"] = _daily_row("naive_da_spread", naive, naive_or, 7,
                                                                    "vs DA-only oracle")
    rows["dp_only"], weekly["dp_only"] = _daily_row(
        "dp_only", dp, dp_or, 7,
        "vs standalone XBID oracle" + (f"; {dp_skipped} days skipped" if dp_skipped else ""))

    oracle = simulate(ds, weeks, replace(base, oracle=True))
    static = simulate(ds, weeks, base)
    rows["l1_static_q40"] = _system_row("l1_static_q40", static, oracle, "vs full-system oracle")

    regime_res = full = None
    note = ""
    try:
        if min(weeks) < cfg.train_weeks:
            raise RegimeError(f"evaluation starts before week {cfg.train_weeks}, the end of HMM training")
        run = walk_forward(ds, cfg.train_weeks, cfg.n_states, cfg.sim.seed, window=cfg.sim.window,
                           restarts=cfg.restarts)
        policy = BidStrategy(BidMode.REGIME, cfg.static_quantile, run.policy.as_mapping())
        regime_cfg = replace(base, strategy=policy, regimes=run.states)
        regime_res = simulate(ds, weeks, regime_cfg)
        full = simulate(ds, weeks, replace(regime_cfg, forecaster=cfg.forecaster))
    except RegimeError as exc:
        note = f"regime policy unavailable: {exc}"
    rows["l1_regime"] = _system_row("l1_regime", regime_res, oracle, note or "vs full-system oracle")
    rows["full_system"] = _system_row("full_system", full, oracle, note or "vs full-system oracle")
    rows["full_oracle"] = _system_row("full_oracle", oracle, oracle, "upper bound")

    side_cfg = replace(base, reserves=False)
    side = simulate(ds, weeks, side_cfg)
    side_or = simulate(ds, weeks, replace(side_cfg, oracle=True))
    side_row = _system_row(SIDE_ROW, side, side_or, "vs L2+L3 oracle; outside the attribution chain")
    side_row = replace(side_row, flagged=True)

    for name, res in (("l1_static_q40", static), ("l1_regime", regime_res), ("full_system", full),
                      ("full_oracle", oracle), (SIDE_ROW, side)):
        weekly[name] = res.weekly_revenue() if res is not None else np.array([])

    ordered = []
    prev = math.nan
    for name in CHAIN:
        r = rows[name]
        ordered.append(replace(r, delta_vcr=r.vcr - prev if math.isfinite(prev) else math.nan))
        prev = r.vcr
    ordered.append(side_row)
    return AblationResult(ordered, weeks, weekly)
