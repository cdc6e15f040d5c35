"""Intraday dynamic-programming dispatch, rolling intrinsic re-optimisation and the
daily receding-horizon schedule. All three share one backward-induction engine.

State is SoC on a uniform grid over ``[soc_min, soc_max]``; the value function is
linearly interpolated between grid points. The forward pass tracks the exact
(continuous) SoC and re-evaluates every action against the interpolated table.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .battery import BatterySpec, SocTrajectory, soc_delta
from .market_data import GateClosureRules, PriceSeries, Timeline, format_utc
from .tables import write_table

NEG = -1e30
_BAND_TOL = 1e-9


class DispatchError(ValueError):
    pass


class SkippedDay(RuntimeError):
    """A day could not be dispatched (e.g. no forecast at some roll)."""


# --------------------------------------------------------------------------- kernels


@njit(cache=True)
def _backward(prices, reward, ageing, lo_idx, weight, feasible, v_terminal):
    n_batch, horizon = prices.shape
    n_soc, n_act = lo_idx.shape
    V = np.empty((n_batch, horizon + 1, n_soc))
    for b in range(n_batch):
        for s in range(n_soc):
            V[b, horizon, s] = v_terminal[s]
        for t in range(horizon - 1, -1, -1):
            p = prices[b, t]
            for s in range(n_soc):
                best = NEG
                for a in range(n_act):
                    if not feasible[s, a]:
                        continue
                    i = lo_idx[s, a]
                    w = weight[s, a]
                    if w == 0.0:
                        v = V[b, t + 1, i]
                    else:
                        v = (1.0 - w) * V[b, t + 1, i] + w * V[b, t + 1, i + 1]
                    q = p * reward[s, a] - ageing[s, a] + v
                    if q > best:
                        best = q
                if best < 0.5 * NEG:
                    best = NEG
                V[b, t, s] = best
    return V


@njit(cache=True)
def _interp(row, x, lo, step, n):
    f = (x - lo) / step
    i = int(math.floor(f))
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    w = f - i
    if w <= 1e-9:
        return row[i]
    if w >= 1.0 - 1e-9:
        return row[i + 1]
    return (1.0 - w) * row[i] + w * row[i + 1]


@njit(cache=True)
def _move(soc, a, actions, dsoc, lo, hi, clip, k_dis, k_chg):
    """Next SoC and delivered power for nominal action ``a``; ``ok`` False when the
    move leaves the band and clipping is off."""
    nxt = soc + dsoc[a]
    power = actions[a]
    if nxt < lo - 1e-9 or nxt > hi + 1e-9:
        if not clip:
            return nxt, power, False
        nxt = lo if nxt < lo else hi
        d = nxt - soc
        if abs(d) <= 1e-12:
            # already sitting on the bound up to rounding: an idle step
            return soc, 0.0, True
        power = -d * k_dis if d < 0 else -d * k_chg
        return nxt, power, True
    if nxt < lo:
        nxt = lo
    if nxt > hi:
        nxt = hi
    return nxt, power, True


@njit(cache=True)
def _forward(prices, V, soc0, actions, dsoc, order, lo, hi, step, clip, k_dis, k_chg, dt, deg):
    horizon = prices.shape[0]
    n_act = dsoc.shape[0]
    n_soc = V.shape[1]
    power = np.empty(horizon)
    socs = np.empty(horizon + 1)
    socs[0] = soc0
    q = np.empty(n_act)
    pw = np.empty(n_act)
    nx = np.empty(n_act)
    soc = soc0
    for t in range(horizon):
        qmax = 2.0 * NEG
        for a in range(n_act):
            nxt, pa, ok = _move(soc, a, actions, dsoc, lo, hi, clip, k_dis, k_chg)
            if not ok:
                q[a] = 2.0 * NEG
                continue
            v = _interp(V[t + 1], nxt, lo, step, n_soc)
            q[a] = prices[t] * pa * dt - deg * max(pa, 0.0) * dt + v
            pw[a] = pa
            nx[a] = nxt
            if q[a] > qmax:
                qmax = q[a]
        tol = 1e-9 * abs(qmax) + 1e-12
        pick = order[0]
        for k in range(n_act):
            a = order[k]
            if q[a] >= qmax - tol:
                pick = a
                break
        power[t] = pw[pick]
        soc = nx[pick]
        socs[t + 1] = soc
    return power, socs


# --------------------------------------------------------------------------- grid


@dataclass(frozen=True)
class _Grid:
    actions: np.ndarray
    dsoc: np.ndarray
    order: np.ndarray
    soc: np.ndarray
    reward: np.ndarray
    ageing: np.ndarray
    lo_idx: np.ndarray
    weight: np.ndarray
    feasible: np.ndarray
    lo: float
    hi: float
    step: float
    clip: bool
    k_dis: float
    k_chg: float


@lru_cache(maxsize=256)
def _grid(spec: BatterySpec, dt: float, lo: float, hi: float, n_act: int, n_soc: int, clip: bool) -> _Grid:
    actions = np.linspace(-spec.p_max, spec.p_max, n_act)
    actions[n_act // 2] = 0.0
    dsoc = soc_delta(actions, dt, spec)
    # tie-break: smaller |delta| first, then charge before discharge
    order = np.array(sorted(range(n_act), key=lambda a: (abs(actions[a]), actions[a])), dtype=np.int64)
    soc = np.linspace(lo, hi, n_soc)
    step = (hi - lo) / (n_soc - 1)
    # MW delivered per unit SoC change, for moves truncated at a bound
    k_dis = spec.eta_d * spec.e_max / dt
    k_chg = spec.e_max / (spec.eta_c * dt)
    nxt = soc[:, None] + dsoc[None, :]
    power = np.broadcast_to(actions, nxt.shape).copy()
    out = (nxt < lo - _BAND_TOL) | (nxt > hi + _BAND_TOL)
    if clip:
        feasible = np.ones(nxt.shape, dtype=np.bool_)
        nxt = np.where(out, np.where(nxt < lo, lo, hi), nxt)
        d = nxt - soc[:, None]
        power = np.where(out, np.where(d < 0, -d * k_dis, -d * k_chg), power)
    else:
        feasible = ~out
    reward = power * dt
    ageing = spec.deg_cost * np.maximum(power, 0.0) * dt
    f = (np.clip(nxt, lo, hi) - lo) / step
    lo_idx = np.clip(np.floor(f), 0, n_soc - 2).astype(np.int64)
    weight = np.clip(f - lo_idx, 0.0, 1.0)
    # snap weights that are rounding noise away from a grid point
    weight[np.abs(weight) < 1e-9] = 0.0
    hit = (np.abs(weight - 1.0) < 1e-9) & (lo_idx < n_soc - 2)
    lo_idx[hit] += 1
    weight[hit] = 0.0
    g = _Grid(actions, dsoc, order, soc, reward, ageing, lo_idx, weight, feasible, lo, hi, step, clip,
              k_dis, k_chg)
    for arr in (actions, dsoc, order, soc, reward, ageing, lo_idx, weight, feasible):
        arr.setflags(write=False)
    return g


# --------------------------------------------------------------------------- problem


def _as_prices(forecast):
    if isinstance(forecast, PriceSeries):
        return np.asarray(forecast.values, dtype=float), forecast.timeline
    return np.asarray(forecast, dtype=float), None


@dataclass(frozen=True, eq=False)
class DispatchProblem:
    """One deterministic dispatch over a price vector.

    ``terminal`` optionally forces the final SoC into ``[lo, hi]``. With
    ``clip_to_bounds`` an action that would overshoot the SoC band is truncated
    so the battery stops exactly at the bound.
    """

    forecast: np.ndarray | PriceSeries
    spec: BatterySpec = field(default_factory=BatterySpec)
    soc_init: float = 0.0
    soc_min: float = 0.0
    soc_max: float = 1.0
    dt: float | None = None
    action_levels: int = 21
    soc_levels: int = 101
    terminal: tuple[float, float] | None = None
    clip_to_bounds: bool = True

    def __post_init__(self):
        if self.soc_min > self.soc_max:
            raise DispatchError(f"infeasible bounds: soc_min {self.soc_min} > soc_max {self.soc_max}")
        if not (self.soc_min - 1e-12 <= self.soc_init <= self.soc_max + 1e-12):
            raise DispatchError("soc_init outside [soc_min, soc_max]")
        if not (0.0 <= self.soc_min and self.soc_max <= 1.0):
            raise DispatchError("soc bounds must lie within [0, 1]")
        if self.action_levels < 3 or self.action_levels % 2 == 0:
            raise DispatchError("action_levels must be odd and >= 3")
        if self.soc_levels < 11:
            raise DispatchError("soc_levels must be >= 11")
        prices, tl = _as_prices(self.forecast)
        if prices.ndim != 1 or prices.size == 0:
            raise DispatchError("forecast must be a nonempty 1-d price vector")
        finite = np.isfinite(prices)
        if not finite.any():
            raise DispatchError("forecast is all gaps")
        if not finite.all():
            raise DispatchError("forecast has gaps; resolve them with a gap policy first")
        if self.dt is None:
            object.__setattr__(self, "dt", tl.dt_hours if tl is not None else 0.25)

    @property
    def prices(self) -> np.ndarray:
        return _as_prices(self.forecast)[0]

    @property
    def timeline(self) -> Timeline:
        tl = _as_prices(self.forecast)[1]
        if tl is None:
            tl = Timeline(np.datetime64("1970-01-01T00:00:00"), np.timedelta64(int(round(self.dt * 3600)), "s"),
                          self.prices.size)
        return tl

    def replace(self, **kw) -> "DispatchProblem":
        base = dict(forecast=self.forecast, spec=self.spec, soc_init=self.soc_init, soc_min=self.soc_min,
                    soc_max=self.soc_max, dt=self.dt, action_levels=self.action_levels,
                    soc_levels=self.soc_levels, terminal=self.terminal, clip_to_bounds=self.clip_to_bounds)
        base.update(kw)
        return DispatchProblem(**base)

    def grid(self) -> _Grid:
        return _grid(self.spec, float(self.dt), float(self.soc_min), float(self.soc_max),
                     self.action_levels, self.soc_levels, bool(self.clip_to_bounds))

    def terminal_values(self, g: _Grid) -> np.ndarray:
        if self.terminal is None:
            return np.zeros(g.soc.size)
        lo, hi = self.terminal
        ok = (g.soc >= lo - 1e-9) & (g.soc <= hi + 1e-9)
        return np.where(ok, 0.0, NEG)


@dataclass(frozen=True, eq=False)
class Schedule:
    timeline: Timeline
    actions: np.ndarray
    trajectory: SocTrajectory
    price_used: np.ndarray
    realized: np.ndarray
    revenue: float
    degradation: float
    planned_value: float
    value_table_start: float = math.nan

    @property
    def net_revenue(self) -> float:
        """Realised revenue minus the in-DP ageing charge on discharged energy."""
        return self.revenue - self.degradation

    def slot_revenue(self) -> np.ndarray:
        return self.realized * self.actions * self.timeline.dt_hours

    def to_csv(self, path) -> None:
        rows = (
            (format_utc(t), a, s, pu, pr, r)
            for t, a, s, pu, pr, r in zip(self.timeline.times(), self.actions, self.trajectory.soc[:-1],
                                          self.price_used, self.realized, self.slot_revenue())
        )
        write_table(path, ["timestamp", "action_mw", "soc", "price_used", "realized_price", "revenue_eur"], rows)


def _settle(timeline, actions, socs, used, realized, spec, dt, planned, v0) -> Schedule:
    realized = np.asarray(realized, dtype=float)
    revenue = float(np.sum(realized * actions * dt))
    ageing = float(np.sum(spec.deg_cost * np.maximum(actions, 0.0) * dt))
    return Schedule(timeline, np.asarray(actions, dtype=float), SocTrajectory(timeline, np.clip(socs, 0, 1)),
                    np.asarray(used, dtype=float), realized, revenue, ageing, float(planned), float(v0))


def _idle(problem: DispatchProblem, realized) -> Schedule:
    n = problem.prices.size
    return _settle(problem.timeline, np.zeros(n), np.full(n + 1, problem.soc_init), problem.prices,
                   problem.prices if realized is None else realized, problem.spec, problem.dt, 0.0, 0.0)


def value_tables(problem: DispatchProblem, prices: np.ndarray | None = None) -> np.ndarray:
    """Backward induction. ``prices`` may be (B, T) to solve a batch on one grid."""
    g = problem.grid()
    p = problem.prices if prices is None else prices
    p2 = np.ascontiguousarray(np.atleast_2d(p), dtype=float)
    return _backward(p2, g.reward, g.ageing, g.lo_idx, g.weight, g.feasible, problem.terminal_values(g))


def _run_forward(g: _Grid, prices, V, soc0, spec: BatterySpec, dt: float):
    return _forward(np.ascontiguousarray(prices, dtype=float), V, float(soc0), g.actions, g.dsoc, g.order, g.lo,
                    g.hi, g.step, g.clip, g.k_dis, g.k_chg, dt, spec.deg_cost)


def _path(problem: DispatchProblem, prices: np.ndarray, V: np.ndarray, soc0: float):
    acts, socs = _run_forward(problem.grid(), prices, V, soc0, problem.spec, problem.dt)
    planned = float(np.sum(prices * acts * problem.dt) - problem.spec.deg_cost * np.sum(np.maximum(acts, 0)) * problem.dt)
    return acts, socs, planned


def _degenerate(problem: DispatchProblem) -> bool:
    return problem.soc_max - problem.soc_min < 1e-12


def solve_dp(problem: DispatchProblem, realized=None) -> Schedule:
    """Optimal schedule under the problem's forecast; revenue at ``realized`` prices
    (forecast prices when omitted)."""
    if _degenerate(problem):
        return _idle(problem, realized)
    prices = problem.prices
    V = value_tables(problem)[0]
    g = problem.grid()
    v0 = float(np.interp(problem.soc_init, g.soc, V[0]))
    if v0 < 0.5 * NEG:
        raise DispatchError("terminal band unreachable from soc_init")
    acts, socs, planned = _path(problem, prices, V, problem.soc_init)
    real = prices if realized is None else _as_prices(realized)[0]
    return _settle(problem.timeline, acts, socs, prices, real, problem.spec, problem.dt, planned, v0)


def solve_dp_batch(problem: DispatchProblem, forecasts: np.ndarray, realized: np.ndarray):
    """Solve one problem template for many price vectors.

    Returns ``(actions, socs, revenue)`` with shapes (B, T), (B, T+1), (B,);
    ``revenue`` is the gross realised revenue, as in :attr:`Schedule.revenue`.
    """
    forecasts = np.atleast_2d(np.asarray(forecasts, dtype=float))
    realized = np.atleast_2d(np.asarray(realized, dtype=float))
    B, T = forecasts.shape
    if _degenerate(problem):
        return np.zeros((B, T)), np.full((B, T + 1), problem.soc_init), np.zeros(B)
    g = problem.grid()
    V = value_tables(problem, forecasts)
    acts = np.empty((B, T))
    socs = np.empty((B, T + 1))
    for b in range(B):
        acts[b], socs[b] = _run_forward(g, forecasts[b], V[b], problem.soc_init, problem.spec, problem.dt)
    return acts, socs, np.sum(realized * acts * problem.dt, axis=1)


# --------------------------------------------------------------------------- rolling intrinsic


@dataclass(frozen=True)
class RollConfig:
    roll_interval_min: int = 15
    gate_lead_min: int = 30

    def __post_init__(self):
        if self.gate_lead_min not in (30, 60):
            raise DispatchError("gate lead must be 30 or 60 minutes")
        if self.roll_interval_min <= 0 or self.gate_lead_min % self.roll_interval_min:
            raise DispatchError("roll interval must divide the gate lead")

    @classmethod
    def from_rules(cls, rules: GateClosureRules, roll_interval_min: int = 15) -> "RollConfig":
        return cls(roll_interval_min, rules.xbid_lead_min)


def rolling_intrinsic(
    forecaster,
    realized: PriceSeries,
    cfg: RollConfig,
    template: DispatchProblem,
) -> Schedule:
    """Re-solve the remaining-day DP at each slot's gate closure and commit that slot.

    ``forecaster`` needs ``forecast(issue_time, targets)`` and ``prepare_day``.

    ``template`` supplies battery, bounds, grid sizes, soc_init and terminal band;
    its forecast field is ignored. Revenue is settled at ``realized`` prices.
    """
    tl = realized.timeline
    real = np.asarray(realized.values, dtype=float)
    if not np.all(np.isfinite(real)):
        raise SkippedDay("realized prices have gaps")
    T = tl.length
    dt = tl.dt_hours
    lead = np.timedelta64(cfg.gate_lead_min * 60, "s")
    problem = template.replace(forecast=real, dt=dt)
    if _degenerate(problem):
        return _idle(problem, real)
    g = problem.grid()
    vT = problem.terminal_values(g)
    forecaster.prepare_day(tl.start)

    acts = np.empty(T)
    socs = np.empty(T + 1)
    used = np.empty(T)
    socs[0] = template.soc_init
    planned = 0.0
    cache_start, cache_prices, cache_V = -1, None, None
    relaxed = False
    times = tl.times()
    for k in range(T):
        issue = times[k] - lead
        try:
            f = np.asarray(forecaster.forecast(issue, tl.slice(k, T - k)), dtype=float)
        except SkippedDay:
            raise
        except Exception as exc:  # forecaster failure: skip this day
            raise SkippedDay(f"forecast failed at roll {k}: {exc}") from exc
        if f.shape != (T - k,) or not np.all(np.isfinite(f)):
            raise SkippedDay(f"forecast unusable at roll {k}")
        if cache_prices is not None and np.array_equal(cache_prices[k - cache_start:], f):
            V = cache_V[k - cache_start:]
        else:
            V = _backward(f[None, :], g.reward, g.ageing, g.lo_idx, g.weight, g.feasible, vT)[0]
            if np.interp(socs[k], g.soc, V[0]) < 0.5 * NEG and not relaxed:
                warnings.warn("terminal SoC band unreachable; dropping it for the rest of the day", stacklevel=2)
                relaxed = True
                vT = np.zeros_like(vT)
                V = _backward(f[None, :], g.reward, g.ageing, g.lo_idx, g.weight, g.feasible, vT)[0]
            cache_start, cache_prices, cache_V = k, f, V
        a, s = _run_forward(g, f[:1], V[:2], socs[k], template.spec, dt)
        acts[k] = a[0]
        socs[k + 1] = s[1]
        used[k] = f[0]
        planned += (f[0] * a[0] - template.spec.deg_cost * max(a[0], 0.0)) * dt
    return _settle(tl, acts, socs, used, real, template.spec, dt, planned, math.nan)


# --------------------------------------------------------------------------- daily MPC


def solve_daily_mpc(
    da_prices,
    forecasts: Sequence | None,
    spec: BatterySpec,
    soc_init: float,
    soc_min: float = 0.0,
    soc_max: float = 1.0,
    p_max: float | None = None,
    discount: float = 0.8,
    action_levels: int = 21,
    soc_levels: int = 101,
) -> tuple[Schedule, float]:
    """Hourly DP over today's realised DA prices plus up to four forecast days.

    Day ``d`` prices are weighted by ``discount ** d``. Only day-0 actions are
    returned, together with the day-0 closing SoC used as Layer-3 terminal target.
    """
    da, tl = _as_prices(da_prices)
    days = [da]
    for i, f in enumerate(forecasts or []):
        if f is None:
            warnings.warn(f"forecast day {i + 1} missing; horizon truncated", stacklevel=2)
            break
        days.append(np.asarray(_as_prices(f)[0], dtype=float))
    if len(days) < 5:
        warnings.warn(f"horizon has {len(days)} of 5 days", stacklevel=2)
    weights = np.concatenate([np.full(d.size, discount ** i) for i, d in enumerate(days)])
    prices = np.concatenate(days) * weights
    n0 = da.size
    dt = tl.dt_hours if tl is not None else 1.0
    s = spec if p_max is None else spec.with_power(max(p_max, 1e-9))
    problem = DispatchProblem(prices, s, soc_init, soc_min, soc_max, dt, action_levels, soc_levels)
    if p_max is not None and p_max <= 1e-9 or _degenerate(problem):
        idle = _idle(problem.replace(forecast=da), da)
        return idle, soc_init
    V = value_tables(problem)[0]
    acts, socs, _ = _path(problem, prices, V, soc_init)
    day_tl = tl if tl is not None else Timeline(np.datetime64("1970-01-01T00:00:00"), np.timedelta64(3600, "s"), n0)
    a0 = acts[:n0]
    planned = float(np.sum(da * a0 * dt) - s.deg_cost * np.sum(np.maximum(a0, 0) * dt))
    sched = _settle(day_tl, a0, socs[: n0 + 1], da, da, s, dt, planned, math.nan)
    return sched, float(socs[n0])
