"""Weekly capacity allocation across FCR, aFRR and XBID (Layer 1).

Reserve commitments fix a state-of-charge buffer; the rest of the power goes to
intraday trading. Capacity is sold pay-as-bid: a block bid earns its own price
when the block clears at or above it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .battery import BatterySpec
from .dataset import BLOCKS_PER_DAY, MarketDataset
from .dispatch import DispatchProblem, value_tables
from .market_data import format_utc
from .tables import write_table

BLOCK_HOURS = 4.0
WEEK_BLOCKS = 7 * BLOCKS_PER_DAY
FCR_ACTIVATION_H = 0.5
AFRR_ACTIVATION_H = 1.0


class AllocationError(ValueError):
    """Infeasible reserve commitment or empty search space."""


def soc_buffer(p_fcr: float, p_afrr: float, e_max: float) -> float:
    """Energy share held back for worst-case activation: 30 min of FCR plus 60 min of aFRR."""
    if p_fcr < 0 or p_afrr < 0:
        raise AllocationError("reserve powers must be nonnegative")
    if e_max <= 0:
        raise AllocationError("e_max must be positive")
    b = (p_fcr * FCR_ACTIVATION_H + p_afrr * AFRR_ACTIVATION_H) / e_max
    if b > 1 + 1e-12:
        raise AllocationError(f"reserve buffer {b:.3f} exceeds the battery energy")
    return b


@dataclass(frozen=True)
class WeeklyAllocation:
    p_fcr: float
    p_afrr_up: float
    p_afrr_dn: float
    p_xbid: float
    soc_min: float
    soc_max: float

    def __post_init__(self):
        if min(self.p_fcr, self.p_afrr_up, self.p_afrr_dn, self.p_xbid) < -1e-12:
            raise AllocationError("allocations must be nonnegative")
        if self.soc_min > self.soc_max + 1e-12:
            raise AllocationError("soc_min above soc_max")

    @classmethod
    def build(cls, p_fcr: float, p_afrr_up: float, p_afrr_dn: float, spec: BatterySpec,
              p_xbid: float | None = None) -> "WeeklyAllocation":
        """Derive the SoC band from the reserves; XBID gets the residual power unless given."""
        committed = p_fcr + max(p_afrr_up, p_afrr_dn)
        if p_xbid is None:
            p_xbid = max(0.0, spec.p_max - committed)
        if committed + p_xbid > spec.p_max + 1e-9:
            raise AllocationError("power budget exceeded")
        lo = soc_buffer(p_fcr, p_afrr_up, spec.e_max)
        hi = 1.0 - soc_buffer(p_fcr, p_afrr_dn, spec.e_max)
        if lo > hi + 1e-12:
            raise AllocationError("upward and downward buffers overlap")
        return cls(p_fcr, p_afrr_up, p_afrr_dn, p_xbid, lo, hi)

    def check(self, spec: BatterySpec) -> None:
        if self.p_fcr + max(self.p_afrr_up, self.p_afrr_dn) + self.p_xbid > spec.p_max + 1e-9:
            raise AllocationError("power budget exceeded")
        if self.soc_min + 1e-12 < soc_buffer(self.p_fcr, self.p_afrr_up, spec.e_max):
            raise AllocationError("soc_min below the reserve buffer")


# --------------------------------------------------------------------------- clearing and bids


@dataclass(frozen=True, eq=False)
class ClearingDistribution:
    """Sorted historical clearing prices of one product and block."""

    prices: np.ndarray

    def __post_init__(self):
        p = np.sort(np.asarray(self.prices, dtype=float).ravel())
        if p.size == 0:
            raise AllocationError("clearing distribution is empty")
        if not np.all(np.isfinite(p)):
            raise AllocationError("clearing prices must be finite")
        object.__setattr__(self, "prices", p)

    def quantile(self, percentile: float) -> float:
        return float(np.percentile(self.prices, percentile))


def acceptance_probability(bid: float, dist: ClearingDistribution) -> float:
    """Share of historical clearing prices at or above ``bid`` (ties accepted)."""
    p = dist.prices
    return float((p.size - np.searchsorted(p, bid, side="left")) / p.size)


def block_distributions(history: np.ndarray) -> list[ClearingDistribution]:
    """One distribution per block of the week from a (weeks, 42) history."""
    h = np.atleast_2d(np.asarray(history, dtype=float))
    if h.shape[1] != WEEK_BLOCKS or h.shape[0] == 0:
        raise AllocationError("history must have shape (weeks, 42) with at least one week")
    return [ClearingDistribution(h[:, b]) for b in range(WEEK_BLOCKS)]


class BidMode(str, enum.Enum):
    STATIC = "static_quantile"
    REGIME = "regime_policy"


@dataclass(frozen=True)
class BidStrategy:
    """Bid percentile per week: fixed, or looked up from the week's regime."""

    mode: BidMode = BidMode.STATIC
    quantile: float = 40.0
    policy: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", BidMode(self.mode))
        for q in (self.quantile, *self.policy.values()):
            if not 20.0 <= q <= 60.0:
                raise AllocationError("bid percentiles must lie in [20, 60]")
        if self.mode is BidMode.REGIME and not self.policy:
            raise AllocationError("regime policy needs a percentile map")

    def percentile(self, regime: int | None = None) -> float:
        if self.mode is BidMode.STATIC or regime is None:
            return self.quantile
        return float(self.policy.get(int(regime), self.quantile))


@dataclass(frozen=True, eq=False)
class MarketDistributions:
    fcr: list[ClearingDistribution]
    afrr_up: list[ClearingDistribution]
    afrr_dn: list[ClearingDistribution]

    def bids(self, percentile: float) -> dict[str, np.ndarray]:
        return {k: np.array([d.quantile(percentile) for d in getattr(self, k)])
                for k in ("fcr", "afrr_up", "afrr_dn")}


# --------------------------------------------------------------------------- scenarios


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Capacity clearing paths (n, 42) per product and one hourly XBID day (n, 24) per scenario."""

    fcr: np.ndarray
    afrr_up: np.ndarray
    afrr_dn: np.ndarray
    xbid_day: np.ndarray

    def __post_init__(self):
        n = self.fcr.shape[0]
        if n < 1:
            raise AllocationError("need at least one scenario")
        for a in (self.fcr, self.afrr_up, self.afrr_dn):
            if a.shape != (n, WEEK_BLOCKS):
                raise AllocationError("capacity paths must have shape (n, 42)")
        if self.xbid_day.ndim != 2 or self.xbid_day.shape[0] != n:
            raise AllocationError("xbid_day must have one row per scenario")

    @property
    def n(self) -> int:
        return self.fcr.shape[0]


def hourly_xbid(ds: MarketDataset) -> np.ndarray:
    """(days, 24): hourly means of the quarter-hour XBID prices."""
    return ds.xbid.days().reshape(ds.n_days, 24, 4).mean(axis=2)


def bootstrap_scenarios(ds: MarketDataset, week: int, n: int = 30, window: int = 52,
                        seed: int = 0) -> ScenarioSet:
    """Resample whole weeks from the ``window`` weeks before ``week``; each scenario's
    XBID day is one day drawn from its week, so daily spreads are not averaged away."""
    first = max(0, week - window)
    if week - first < 1:
        raise AllocationError("no history before this week")
    rng = np.random.default_rng(np.random.SeedSequence([seed, week]))
    pick = first + rng.integers(0, week - first, n)
    day = 7 * pick + rng.integers(0, 7, n)
    return ScenarioSet(ds.capacity_blocks("fcr")[pick], ds.capacity_blocks("afrr_up")[pick],
                       ds.capacity_blocks("afrr_dn")[pick], hourly_xbid(ds)[day])


def history_distributions(ds: MarketDataset, week: int, window: int = 52) -> MarketDistributions:
    first = max(0, week - window)
    if week - first < 1:
        raise AllocationError("no history before this week")
    return MarketDistributions(*(block_distributions(ds.capacity_blocks(k)[first:week])
                                 for k in ("fcr", "afrr_up", "afrr_dn")))


# --------------------------------------------------------------------------- revenue


def capacity_revenue(alloc: WeeklyAllocation, bids: Mapping[str, np.ndarray], scenarios: ScenarioSet) -> np.ndarray:
    """Per-scenario pay-as-bid revenue of the reserve commitments."""
    out = np.zeros(scenarios.n)
    for key, mw in (("fcr", alloc.p_fcr), ("afrr_up", alloc.p_afrr_up), ("afrr_dn", alloc.p_afrr_dn)):
        if mw <= 0:
            continue
        b = np.asarray(bids[key], float)
        accepted = getattr(scenarios, key) >= b[None, :]
        out += mw * BLOCK_HOURS * np.sum(accepted * b[None, :], axis=1)
    return out


@dataclass(frozen=True)
class XbidTerm:
    """Hourly DP on a scenario's XBID day, scaled to a week. The day starts mid-band
    and must end no lower, so stored energy is not sold for free."""

    soc_levels: int = 51
    action_levels: int = 11
    days: float = 7.0

    def values(self, p_xbid: float, soc_min: float, soc_max: float, spec: BatterySpec,
               xbid_day: np.ndarray) -> np.ndarray:
        if p_xbid <= 1e-12 or soc_max - soc_min <= 1e-12:
            return np.zeros(xbid_day.shape[0])
        mid = 0.5 * (soc_min + soc_max)
        prob = DispatchProblem(xbid_day[0], spec.with_power(p_xbid), soc_init=mid, soc_min=soc_min,
                               soc_max=soc_max, dt=1.0, action_levels=self.action_levels,
                               soc_levels=self.soc_levels, terminal=(mid, soc_max))
        V = value_tables(prob, xbid_day)
        k = (self.soc_levels - 1) // 2
        return self.days * V[:, 0, k]


def expected_week_revenue(alloc: WeeklyAllocation, strategy: BidStrategy, scenarios: ScenarioSet,
                          dists: MarketDistributions, spec: BatterySpec, regime: int | None = None,
                          xbid: XbidTerm = XbidTerm()) -> float:
    alloc.check(spec)
    bids = dists.bids(strategy.percentile(regime))
    cap = capacity_revenue(alloc, bids, scenarios)
    x = xbid.values(alloc.p_xbid, alloc.soc_min, alloc.soc_max, spec, scenarios.xbid_day)
    return float(np.mean(cap + x))


# --------------------------------------------------------------------------- optimiser


@dataclass(frozen=True)
class AllocationConfig:
    step_mw: float = 0.1
    fcr_energy_share: float = 0.5
    xbid_floor_mw: float = 0.0
    xbid: XbidTerm = XbidTerm()


def fcr_cap(spec: BatterySpec, share: float = 0.5) -> float:
    """Largest symmetric FCR commitment whose two-sided buffer fits in ``share`` of the energy."""
    return share * spec.e_max / (2 * FCR_ACTIVATION_H)


def candidate_grid(spec: BatterySpec, cfg: AllocationConfig = AllocationConfig()) -> np.ndarray:
    """Feasible (p_fcr, p_afrr_up, p_afrr_dn) triples on the MW grid, lexicographic order."""
    n = int(round(spec.p_max / cfg.step_mw))
    steps = np.arange(n + 1) * cfg.step_mw
    f, u, d = np.meshgrid(steps, steps, steps, indexing="ij")
    f, u, d = f.ravel(), u.ravel(), d.ravel()
    e = spec.e_max
    ok = (f + np.maximum(u, d) + cfg.xbid_floor_mw <= spec.p_max + 1e-9)
    ok &= f <= fcr_cap(spec, cfg.fcr_energy_share) + 1e-9
    ok &= (f * FCR_ACTIVATION_H + u * AFRR_ACTIVATION_H) / e <= 1 + 1e-12
    ok &= (f * FCR_ACTIVATION_H + d * AFRR_ACTIVATION_H) / e <= 1 + 1e-12
    ok &= ((f * FCR_ACTIVATION_H + u) + (f * FCR_ACTIVATION_H + d)) / e <= 1 + 1e-12
    return np.column_stack([f[ok], u[ok], d[ok]])


@dataclass(frozen=True)
class AllocationResult:
    allocation: WeeklyAllocation
    expected_revenue: float
    bid_percentile: float
    evaluated: int


def optimize_allocation(scenarios: ScenarioSet, strategy: BidStrategy, dists: MarketDistributions,
                        spec: BatterySpec, regime: int | None = None,
                        cfg: AllocationConfig = AllocationConfig(),
                        candidates: np.ndarray | None = None) -> AllocationResult:
    """Exact argmax of expected weekly revenue over the candidate grid.

    Candidates are visited in order of an upper bound (capacity revenue plus the
    XBID value with the widest SoC band); the search stops once no remaining
    bound reaches the best exact value. Ties go to the earliest grid point.
    """
    cand = candidate_grid(spec, cfg) if candidates is None else np.atleast_2d(np.asarray(candidates, float))
    if cand.size == 0:
        raise AllocationError("no feasible allocation")
    pct = strategy.percentile(regime)
    bids = dists.bids(pct)
    # capacity revenue is linear in each MW figure
    unit = {k: np.mean(np.sum((getattr(scenarios, k) >= bids[k][None, :]) * bids[k][None, :], axis=1)) * BLOCK_HOURS
            for k in ("fcr", "afrr_up", "afrr_dn")}
    f_mw, u_mw, d_mw = cand[:, 0], cand[:, 1], cand[:, 2]
    cap = f_mw * unit["fcr"] + u_mw * unit["afrr_up"] + d_mw * unit["afrr_dn"]
    p_x = np.maximum(0.0, spec.p_max - f_mw - np.maximum(u_mw, d_mw))
    # the XBID day starts mid-band and is cyclic, so only the band width matters
    reserved = 2 * FCR_ACTIVATION_H * f_mw + AFRR_ACTIVATION_H * (u_mw + d_mw)
    key_p = np.round(p_x / cfg.step_mw).astype(np.int64)
    key_w = np.round(reserved / cfg.step_mw).astype(np.int64)
    cache: dict[tuple[int, int], float] = {}

    def xbid_value(kp: int, kw: int) -> float:
        v = cache.get((kp, kw))
        if v is None:
            width = max(0.0, 1.0 - kw * cfg.step_mw / spec.e_max)
            v = float(np.mean(cfg.xbid.values(kp * cfg.step_mw, 0.0, width, spec, scenarios.xbid_day)))
            cache[(kp, kw)] = v
        return v

    # best capacity revenue per XBID key; ties keep the earliest grid point
    by_key = np.lexsort((np.arange(len(cand)), -cap, key_w, key_p))
    kp_s, kw_s = key_p[by_key], key_w[by_key]
    first = np.ones(by_key.size, dtype=bool)
    first[1:] = (kp_s[1:] != kp_s[:-1]) | (kw_s[1:] != kw_s[:-1])
    heads = by_key[first]

    # upper bound from a coarse lattice: the XBID value grows with power and band width
    coarse = max(1, int(round(1.0 / cfg.step_mw)))
    kp_hi = -(-key_p[heads] // coarse) * coarse
    kw_lo = (key_w[heads] // coarse) * coarse
    n_p = int(round(spec.p_max / cfg.step_mw))
    ub = cap[heads] + np.array([xbid_value(int(min(p, n_p)), int(w)) for p, w in zip(kp_hi, kw_lo)])
    order = np.lexsort((heads, -ub))
    best_i, best_v = -1, -math.inf
    for j in order:
        i = int(heads[j])
        tol = 1e-9 * max(1.0, abs(best_v)) if best_i >= 0 else 0.0
        if best_i >= 0 and ub[j] < best_v - tol:
            break
        v = cap[i] + xbid_value(int(key_p[i]), int(key_w[i]))
        if best_i < 0 or v > best_v + tol or (abs(v - best_v) <= tol and i < best_i):
            best_i, best_v = i, v
    f, u, d = cand[best_i]
    alloc = WeeklyAllocation.build(float(f), float(u), float(d), spec, float(p_x[best_i]))
    return AllocationResult(alloc, float(best_v), pct, len(cache))


@dataclass(frozen=True)
class WeekPlan:
    week_start: np.datetime64
    result: AllocationResult


def plan_weeks(ds: MarketDataset, strategy: BidStrategy, spec: BatterySpec, weeks: Sequence[int],
               regimes: Mapping[int, int] | None = None, n_scenarios: int = 30, window: int = 52,
               seed: int = 0, cfg: AllocationConfig = AllocationConfig()) -> list[WeekPlan]:
    plans = []
    for w in weeks:
        sc = bootstrap_scenarios(ds, w, n_scenarios, window, seed)
        dist = history_distributions(ds, w, window)
        r = (regimes or {}).get(w)
        plans.append(WeekPlan(ds.day_start(7 * w), optimize_allocation(sc, strategy, dist, spec, r, cfg)))
    return plans


def write_allocation_report(path: str | Path, plans: Sequence[WeekPlan]) -> Path:
    rows = []
    for p in plans:
        a = p.result.allocation
        rows.append((format_utc(p.week_start), a.p_fcr, a.p_afrr_up, a.p_afrr_dn, a.p_xbid, a.soc_min,
                     p.result.bid_percentile, p.result.expected_revenue))
    return write_table(path, ["week_start", "p_fcr", "p_afrr_up", "p_afrr_dn", "p_xbid", "soc_min",
                              "bid_percentile", "expected_revenue_eur"], rows)
