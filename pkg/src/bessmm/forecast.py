"""Benchmark forecasters and synthetic forecasts with a controlled Kendall tau.

Forecasters read market data only through :class:`MarketView`, which cuts
every series at the issue time using each slot's publication time. A value
that is not yet public is therefore unreachable from forecasting code.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from numba import njit
from scipy.special import ndtri

from .market_data import (
    DAY,
    FeatureRecord,
    GateClosureRules,
    MarketTag,
    PriceSeries,
    Timeline,
    as_feature,
    format_utc,
)
from .ranking import average_rank, concordance_balance, kendall_tau
from .tables import write_table


class ForecastUnavailable(RuntimeError):
    """The inputs a forecaster needs are not public at the issue time."""


class SynthesisError(RuntimeError):
    def __init__(self, msg: str, best_tau: float):
        super().__init__(f"{msg} (best achieved tau {best_tau:.4f})")
        self.best_tau = best_tau


# --------------------------------------------------------------------------- data access


class MarketView:
    """Issue-time-filtered access to named features on one shared timeline."""

    def __init__(self, features: dict[str, FeatureRecord]):
        if not features:
            raise ValueError("MarketView needs at least one feature")
        tls = {f.timeline for f in features.values()}
        if len(tls) != 1:
            raise ValueError("all features must share one timeline")
        self.timeline: Timeline = tls.pop()
        self._features = dict(features)

    @classmethod
    def from_series(cls, rules: GateClosureRules, **series: PriceSeries) -> "MarketView":
        return cls({name: as_feature(s, rules, name) for name, s in series.items()})

    @classmethod
    def from_dataset(cls, ds, rules: GateClosureRules | None = None) -> "MarketView":
        return cls.from_series(rules or ds.rules, xbid=ds.xbid, da=ds.da)

    def names(self) -> list[str]:
        return sorted(self._features)

    def visible_count(self, name: str, issue_time) -> int:
        """Number of leading slots of ``name`` public at ``issue_time``."""
        f = self._features[name]
        return int(np.searchsorted(f.available_at, np.datetime64(issue_time, "s"), side="right"))

    def visible(self, name: str, issue_time) -> np.ndarray:
        """Public prefix of ``name`` (publication times are nondecreasing)."""
        return self._features[name].values[: self.visible_count(name, issue_time)]

    def index(self, ts) -> int:
        i = self.timeline.index_of(ts)
        if i < 0:
            raise ForecastUnavailable(f"{format_utc(ts)} outside the data timeline")
        return i

    def poisoned(self, name: str, after, value: float = 1e6) -> "MarketView":
        """Copy in which every slot of ``name`` published after ``after`` holds ``value``."""
        f = self._features[name]
        vals = np.where(f.available_at > np.datetime64(after, "s"), value, f.values)
        feats = dict(self._features)
        feats[name] = FeatureRecord(f.name, f.timeline, vals, f.available_at)
        return MarketView(feats)


# --------------------------------------------------------------------------- forecasters


class Forecaster:
    """Produces prices for ``targets`` from information public at ``issue_time``."""

    name = "forecaster"
    oracle = False

    def forecast(self, issue_time: np.datetime64, targets: Timeline) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def prepare_day(self, day_start: np.datetime64) -> None:
        """Called once before the rolls of a delivery day."""


class OracleForecaster(Forecaster):
    """Perfect foresight: returns the realised prices (exempt from the availability rule)."""

    name = "oracle"
    oracle = True

    def __init__(self, realized: PriceSeries):
        self.realized = realized

    def forecast(self, issue_time, targets):
        i = self.realized.timeline.index_of(targets.start)
        if i < 0 or i + targets.length > self.realized.timeline.length:
            raise ForecastUnavailable("targets outside realised series")
        return np.array(self.realized.values[i:i + targets.length])


def oracle_forecast(realized: PriceSeries) -> OracleForecaster:
    return OracleForecaster(realized)


class PersistenceForecaster(Forecaster):
    """Same slot yesterday. Slots of yesterday still unsettled at issue time are
    forward-filled from the latest public price, at most ``max_fill`` of them."""

    name = "persistence"

    def __init__(self, view: MarketView, series: str = "xbid", max_fill: int = 2):
        self.view = view
        self.series = series
        self.max_fill = max_fill
        self.lag = int(DAY // view.timeline.resolution)

    def forecast(self, issue_time, targets):
        first = self.view.index(targets.start)
        hist = self.view.visible(self.series, issue_time)
        m = hist.size
        src = np.arange(first, first + targets.length) - self.lag
        if src[0] < 0:
            raise ForecastUnavailable("no previous day")
        if m == 0 or src[-1] - (m - 1) > self.max_fill:
            raise ForecastUnavailable("previous day not settled at issue time")
        return hist[np.minimum(src, m - 1)].copy()


def persistence_forecast(view: MarketView, max_fill: int = 2) -> PersistenceForecaster:
    return PersistenceForecaster(view, max_fill=max_fill)


def _da_filled(da: np.ndarray, stop: int, lag: int) -> np.ndarray:
    """Public DA prices up to ``stop``; uncleared slots repeat the price ``lag`` slots earlier."""
    if stop <= da.size:
        return da[:stop]
    if da.size < lag or stop - lag > da.size:
        raise ForecastUnavailable("day-ahead prices not cleared at issue time")
    out = np.empty(stop)
    out[:da.size] = da
    for t in range(da.size, stop):
        out[t] = out[t - lag]
    return out


class DAAnchorForecaster(Forecaster):
    """The cleared day-ahead price of each slot's hour.

    Slots whose auction has not cleared yet (the tail of a UTC day that belongs to
    the next local delivery day) take the cleared price 24 hours earlier.
    """

    name = "da_anchor"

    def __init__(self, view: MarketView, series: str = "da"):
        self.view = view
        self.series = series
        self.lag = int(DAY // view.timeline.resolution)

    def forecast(self, issue_time, targets):
        first = self.view.index(targets.start)
        da = _da_filled(self.view.visible(self.series, issue_time), first + targets.length, self.lag)
        return da[first:].copy()


def da_anchor_forecast(view: MarketView) -> DAAnchorForecaster:
    return DAAnchorForecaster(view)


@njit(cache=True)
def _ar_rollout(beta, hist, da, hour, dow, lags, start, stop):
    """Predict slots ``start..stop-1``; ``hist`` holds the public prices before
    ``start`` and predictions are fed back as lags."""
    x = np.empty(stop)
    x[:start] = hist[:start]
    n_lag = lags.shape[0]
    k = 1 + 2 * n_lag
    for t in range(start, stop):
        v = beta[0]
        for j in range(n_lag):
            v += beta[1 + j] * x[t - lags[j]] + beta[1 + n_lag + j] * da[t - lags[j]]
        v += beta[k] * da[t]
        h = hour[t]
        if h > 0:
            v += beta[k + h]  # hour 0 is the baseline
        w = dow[t]
        if w > 0:
            v += beta[k + 23 + w]
        x[t] = v
    return x[start:stop]


class LearnedARForecaster(Forecaster):
    """Linear autoregression on lagged prices, hour-of-day, day-of-week and the DA
    anchor (current and at the same lags, so the model can track the gap to DA).

    Refit every delivery day on a trailing window of public data; multi-step
    forecasts roll the model forward from the latest public price.
    """

    name = "learned_ar"

    def __init__(self, view: MarketView, window_days: int = 28, min_days: int = 7,
                 lags: Iterable[int] = (1, 2, 3, 4, 5, 6, 7, 8, 96), ridge: float = 1e-3,
                 lead: np.timedelta64 | None = None):
        self.view = view
        self.window_days = window_days
        self.min_days = min_days
        self.lags = np.array(sorted(lags), dtype=np.int64)
        self.ridge = ridge
        self.lead = lead if lead is not None else np.timedelta64(30 * 60, "s")
        self.ridge_fits = 0
        self._beta: np.ndarray | None = None
        self._beta_day: np.datetime64 | None = None
        times = view.timeline.times()
        secs = (times - np.datetime64("1970-01-01T00:00:00", "s")).astype(np.int64)
        self.hour = ((secs // 3600) % 24).astype(np.int64)
        self.dow = (((secs // 86400) + 3) % 7).astype(np.int64)

    @property
    def n_params(self) -> int:
        return 1 + 2 * self.lags.size + 1 + 23 + 6

    def design(self, x: np.ndarray, da: np.ndarray, rows: np.ndarray) -> np.ndarray:
        X = np.zeros((rows.size, self.n_params))
        X[:, 0] = 1.0
        n_lag = self.lags.size
        for j, lag in enumerate(self.lags):
            X[:, 1 + j] = x[rows - lag]
            X[:, 1 + n_lag + j] = da[rows - lag]
        k = 1 + 2 * n_lag
        X[:, k] = da[rows]
        h = self.hour[rows]
        X[np.flatnonzero(h > 0), k + h[h > 0]] = 1.0
        w = self.dow[rows]
        X[np.flatnonzero(w > 0), k + 23 + w[w > 0]] = 1.0
        return X

    def fit(self, issue_time) -> np.ndarray:
        x = self.view.visible("xbid", issue_time)
        da = self.view.visible("da", issue_time)
        spd = int(DAY // self.view.timeline.resolution)
        end = min(x.size, da.size)
        first = max(int(self.lags.max()), end - self.window_days * spd)
        if end - first < self.min_days * spd:
            raise ForecastUnavailable("training window too short")
        rows = np.arange(first, end)
        X = self.design(x, da, rows)
        y = x[rows]
        p = X.shape[1]
        if np.linalg.matrix_rank(X) < p:
            self.ridge_fits += 1
            warnings.warn("rank-deficient AR design; using ridge fallback", stacklevel=2)
            G = X.T @ X
            lam = self.ridge * np.trace(G) / p
            return np.linalg.solve(G + lam * np.eye(p), X.T @ y)
        return np.linalg.lstsq(X, y, rcond=None)[0]

    def prepare_day(self, day_start):
        day_start = np.datetime64(day_start, "s")
        if self._beta_day != day_start:
            self._beta_day = day_start
            try:
                self._beta = self.fit(day_start - self.lead)
            except ForecastUnavailable:
                self._beta = None

    def forecast(self, issue_time, targets):
        first = self.view.index(targets.start)
        day_start = self.view.timeline.start + (first // 96) * DAY
        self.prepare_day(day_start)
        if self._beta is None:
            raise ForecastUnavailable("model not trained")
        x = self.view.visible("xbid", issue_time)
        stop = first + targets.length
        da = _da_filled(self.view.visible("da", issue_time), stop, int(DAY // self.view.timeline.resolution))
        m = x.size
        if m < int(self.lags.max()):
            raise ForecastUnavailable("not enough history")
        if m > first:  # never happens for genuine forecasts, kept for partial-day queries
            return _ar_rollout(self._beta, x, da, self.hour, self.dow, self.lags, first, stop)
        return _ar_rollout(self._beta, x, da, self.hour, self.dow, self.lags, m, stop)[first - m:]


def learned_ar_forecast(view: MarketView, window_days: int = 28, lead_min: int = 30) -> LearnedARForecaster:
    return LearnedARForecaster(view, window_days, lead=np.timedelta64(lead_min * 60, "s"))


class HybridForecaster(Forecaster):
    """ML values for slots starting within ``horizon_h`` hours of issue, anchor beyond."""

    name = "hybrid"

    def __init__(self, ml: Forecaster, anchor: Forecaster, horizon_h: float = 8.0):
        self.ml = ml
        self.anchor = anchor
        self.horizon = np.timedelta64(int(round(horizon_h * 3600)), "s")

    def prepare_day(self, day_start):
        self.ml.prepare_day(day_start)
        self.anchor.prepare_day(day_start)

    def forecast(self, issue_time, targets):
        near = targets.times() - np.datetime64(issue_time, "s") <= self.horizon
        out = np.empty(targets.length)
        if near.any():
            out[near] = np.asarray(self.ml.forecast(issue_time, targets))[near]
        if (~near).any():
            out[~near] = np.asarray(self.anchor.forecast(issue_time, targets))[~near]
        return out


def hybrid_forecast(ml: Forecaster, anchor: Forecaster, horizon_h: float = 8.0) -> HybridForecaster:
    return HybridForecaster(ml, anchor, horizon_h)


def benchmark_suite(ds, rules: GateClosureRules | None = None) -> list[Forecaster]:
    """Oracle, persistence, DA anchor, learned AR and hybrid on one dataset."""
    rules = rules or ds.rules
    view = MarketView.from_dataset(ds, rules)
    ar = LearnedARForecaster(view, lead=rules.xbid_lead)
    da = DAAnchorForecaster(view)
    return [OracleForecaster(ds.xbid), PersistenceForecaster(view), da, ar, HybridForecaster(ar, da)]


def write_forecast_dump(path, rows: Iterable[tuple]) -> Path:
    """``rows`` of (issue_time, target_time, value, forecaster)."""
    return write_table(path, ["issue_time", "target_time", "value", "forecaster"],
                       ((format_utc(a), format_utc(b), v, n) for a, b, v, n in rows))


# --------------------------------------------------------------------------- synthetic forecasts


class SynthMethod(str, enum.Enum):
    ALPHA = "alpha_interp"
    RANK = "rank_perturb"
    COPULA = "gauss_copula"


@dataclass(frozen=True)
class SynthTarget:
    """Target Kendall tau of a synthetic forecast. When ``target_tau + tolerance``
    exceeds 1 the acceptance window is clipped at 1."""

    target_tau: float
    tolerance: float = 0.03
    method: SynthMethod = SynthMethod.ALPHA
    seed: int = 0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 <= self.target_tau <= 1.0:
            raise ValueError("target_tau must lie in [0, 1]")
        object.__setattr__(self, "method", SynthMethod(self.method))

    def hit(self, tau: float) -> bool:
        return abs(tau - self.target_tau) <= self.tolerance + 1e-12


class SynthResult(NamedTuple):
    values: np.ndarray
    tau: float
    param: float


PROBES = 31
MAX_DRAWS = 200


def _tau(f, y) -> float:
    n = y.size
    return concordance_balance(f, y) / (n * (n - 1) / 2)


@njit(cache=True)
def _tau_nb(f, y):
    n = y.shape[0]
    return concordance_balance(f, y) / (n * (n - 1) / 2)


@njit(cache=True)
def _mix(y, eps, a):
    return a * y + (1.0 - a) * eps


@njit(cache=True)
def _median_tau_alpha(y, eps, alpha):
    taus = np.empty(eps.shape[0])
    for k in range(eps.shape[0]):
        taus[k] = _tau_nb(_mix(y, eps[k], alpha), y)
    return np.median(taus)


@njit(cache=True)
def _calibrate_alpha(y, eps, target, tol):
    # bisection on alpha in [0, 1]; median tau is nondecreasing in alpha
    lo, hi = 0.0, 1.0
    best_a, best_v = 1.0, _median_tau_alpha(y, eps, 1.0)
    v0 = _median_tau_alpha(y, eps, 0.0)
    if abs(v0 - target) < abs(best_v - target):
        best_a, best_v = 0.0, v0
    for _ in range(60):
        if abs(best_v - target) <= tol:
            break
        mid = 0.5 * (lo + hi)
        v = _median_tau_alpha(y, eps, mid)
        if abs(v - target) < abs(best_v - target):
            best_a, best_v = mid, v
        if v < target:
            lo = mid
        else:
            hi = mid
    return best_a


@njit(cache=True)
def _alpha_draws(y, alpha, target, tol, seed, max_draws):
    """Draw eps until a draw (with alpha refined on that draw) meets the target.
    Returns (values, tau, alpha, ok)."""
    np.random.seed(seed)
    n = y.shape[0]
    mu = y.mean()
    sd = y.std()
    best_f = y.copy()
    best_tau = 1e9
    best_a = alpha
    eps = np.empty(n)
    for _ in range(max_draws):
        for i in range(n):
            eps[i] = np.random.normal(mu, sd)
        a = alpha
        tau = _tau_nb(_mix(y, eps, a), y)
        if abs(tau - target) > tol + 1e-12:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                v = _tau_nb(_mix(y, eps, mid), y)
                if abs(v - target) < abs(tau - target):
                    a, tau = mid, v
                if abs(tau - target) <= 0.5 * tol:
                    break
                if v < target:
                    lo = mid
                else:
                    hi = mid
        if abs(tau - target) < abs(best_tau - target):
            best_f = _mix(y, eps, a)
            best_tau = tau
            best_a = a
        if abs(best_tau - target) <= tol + 1e-12:
            return best_f, best_tau, best_a, True
    return best_f, best_tau, best_a, False


def _check_input(y) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1 or y.size < 10:
        raise ValueError("y_true must be 1-d with at least 10 values")
    if not np.all(np.isfinite(y)):
        raise ValueError("y_true must be finite")
    return y


def calibrate_alpha(y_true, target_tau: float, seed: int = 0, tol: float = 0.01) -> float:
    """Alpha whose median tau over 31 probe draws is closest to ``target_tau``."""
    y = _check_input(y_true)
    rng = np.random.default_rng(seed)
    eps = rng.normal(y.mean(), y.std(), (PROBES, y.size))
    return float(_calibrate_alpha(y, eps, float(target_tau), tol))


def synth_alpha(y_true, tgt: SynthTarget, alpha: float | None = None) -> SynthResult:
    """``a*y + (1-a)*eps`` with eps ~ N(mean(y), sd(y)). Alpha is calibrated on probe
    draws, then refined on the returned draw so its own tau lands in tolerance."""
    y = _check_input(y_true)
    rng = np.random.default_rng(tgt.seed)
    if tgt.target_tau >= 1.0:
        return SynthResult(y.copy(), _tau(y, y), 1.0)
    if alpha is None:
        alpha = calibrate_alpha(y, tgt.target_tau, int(rng.integers(2 ** 63 - 1)))
    f, tau, a, ok = _alpha_draws(y, float(alpha), float(tgt.target_tau), float(tgt.tolerance),
                                 int(rng.integers(2 ** 31 - 1)), MAX_DRAWS)
    if not ok:
        raise SynthesisError("alpha interpolation missed the target", tau)
    return SynthResult(f, float(tau), float(a))


@njit(cache=True)
def _rank_walk(f, y, target, seed, max_steps):
    np.random.seed(seed)
    n = f.shape[0]
    denom = n * (n - 1) / 2
    pos = np.argsort(f, kind="mergesort")
    bal = concordance_balance(f, y)
    # exact O(1) updates need distinct forecast values
    distinct = True
    for k in range(n - 1):
        if f[pos[k]] == f[pos[k + 1]]:
            distinct = False
            break
    prev = f.copy()
    prev_bal = bal
    steps = 0
    while bal / denom > target and steps < max_steps:
        steps += 1
        k = np.random.randint(0, n - 1)
        i = pos[k]
        j = pos[k + 1]
        if f[i] == f[j]:
            continue
        dy = y[i] - y[j]
        if dy == 0.0:
            continue
        s = 1 if dy < 0 else -1  # f[i] < f[j]: concordant when y[i] < y[j]
        if s < 0:
            continue  # only moves toward the target are accepted
        prev[i] = f[i]
        prev[j] = f[j]
        prev_bal = bal
        tmp = f[i]
        f[i] = f[j]
        f[j] = tmp
        pos[k] = j
        pos[k + 1] = i
        if distinct:
            bal -= 2
        else:
            bal = concordance_balance(f, y)
    # keep whichever of the last two states is closer
    if abs(prev_bal / denom - target) < abs(bal / denom - target):
        return prev, prev_bal / denom
    return f, bal / denom


def synth_rank_perturb(y_true, tgt: SynthTarget) -> SynthResult:
    """A permutation of ``y_true``: random swaps of rank-adjacent values, each
    accepted only when it moves tau toward the target."""
    y = _check_input(y_true)
    rng = np.random.default_rng(tgt.seed)
    seed = int(rng.integers(2 ** 31 - 1))
    max_steps = 200 * y.size * y.size
    f, tau = _rank_walk(y.copy(), y, float(tgt.target_tau), seed, max_steps)
    if not tgt.hit(tau):
        raise SynthesisError("rank perturbation missed the target", tau)
    return SynthResult(f, float(tau), float(tau))


@njit(cache=True)
def _copula_values(y_sorted, z1, xi, rho_s):
    rho = 2.0 * math.sin(math.pi * rho_s / 6.0)
    c = math.sqrt(max(0.0, 1.0 - rho * rho))
    n = y_sorted.shape[0]
    out = np.empty(n)
    for i in range(n):
        u = 0.5 * (1.0 + math.erf((rho * z1[i] + c * xi[i]) / math.sqrt(2.0)))
        k = int(math.ceil(u * n)) - 1
        if k < 0:
            k = 0
        if k > n - 1:
            k = n - 1
        out[i] = y_sorted[k]
    return out


@njit(cache=True)
def _median_tau_copula(ys, z1, y, probes, r):
    taus = np.empty(probes.shape[0])
    for k in range(probes.shape[0]):
        taus[k] = _tau_nb(_copula_values(ys, z1, probes[k], r), y)
    return np.median(taus)


@njit(cache=True)
def _calibrate_copula(ys, z1, y, probes, target, tol):
    lo, hi = -1.0, 1.0
    best_r, best_v = 1.0, _median_tau_copula(ys, z1, y, probes, 1.0)
    for _ in range(60):
        if abs(best_v - target) <= tol:
            break
        mid = 0.5 * (lo + hi)
        v = _median_tau_copula(ys, z1, y, probes, mid)
        if abs(v - target) < abs(best_v - target):
            best_r, best_v = mid, v
        if v < target:
            lo = mid
        else:
            hi = mid
    return best_r


@njit(cache=True)
def _copula_draws(ys, z1, y, rho_s, target, tol, seed, max_draws):
    np.random.seed(seed)
    n = y.shape[0]
    xi = np.empty(n)
    best_f = y.copy()
    best_tau = 1e9
    best_r = rho_s
    for _ in range(max_draws):
        for i in range(n):
            xi[i] = np.random.normal()
        r = rho_s
        tau = _tau_nb(_copula_values(ys, z1, xi, r), y)
        if abs(tau - target) > tol + 1e-12:
            lo, hi = -1.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                v = _tau_nb(_copula_values(ys, z1, xi, mid), y)
                if abs(v - target) < abs(tau - target):
                    r, tau = mid, v
                if abs(tau - target) <= 0.5 * tol:
                    break
                if v < target:
                    lo = mid
                else:
                    hi = mid
        if abs(tau - target) < abs(best_tau - target):
            best_f = _copula_values(ys, z1, xi, r)
            best_tau = tau
            best_r = r
        if abs(best_tau - target) <= tol + 1e-12:
            return best_f, best_tau, best_r, True
    return best_f, best_tau, best_r, False


def copula_scores(y_true) -> tuple[np.ndarray, np.ndarray]:
    """Normal scores of ``y_true`` and its sorted values."""
    y = _check_input(y_true)
    return ndtri((average_rank(y) - 0.5) / y.size), np.sort(y)


def calibrate_copula(y_true, target_tau: float, seed: int = 0, tol: float = 0.01) -> float:
    """Spearman parameter whose median tau over 31 probe draws is closest to the target."""
    y = _check_input(y_true)
    z1, ys = copula_scores(y)
    probes = np.random.default_rng(seed).standard_normal((PROBES, y.size))
    return float(_calibrate_copula(ys, z1, y, probes, float(target_tau), tol))


def synth_copula(y_true, tgt: SynthTarget, rho_s: float | None = None) -> SynthResult:
    """Gaussian copula on the normal scores of ``y_true``; the correlated margin is
    mapped through the empirical quantile function of ``y_true``. The Gaussian
    correlation is ``2 sin(pi rho_s / 6)``."""
    y = _check_input(y_true)
    rng = np.random.default_rng(tgt.seed)
    z1, ys = copula_scores(y)
    if tgt.target_tau >= 1.0:
        f = _copula_values(ys, z1, np.zeros(y.size), 1.0)
        return SynthResult(f, _tau(f, y), 1.0)
    if rho_s is None:
        rho_s = calibrate_copula(y, tgt.target_tau, int(rng.integers(2 ** 63 - 1)))
    f, tau, r, ok = _copula_draws(ys, z1, y, float(rho_s), float(tgt.target_tau), float(tgt.tolerance),
                                  int(rng.integers(2 ** 31 - 1)), MAX_DRAWS)
    if not ok:
        raise SynthesisError("copula missed the target", tau)
    return SynthResult(f, float(tau), float(r))


def calibrate(y_true, target_tau: float, method: SynthMethod | str, seed: int = 0) -> float | None:
    """Per-day generator parameter that can be reused across draws (None for rank_perturb)."""
    method = SynthMethod(method)
    if target_tau >= 1.0 or method is SynthMethod.RANK:
        return None
    if method is SynthMethod.ALPHA:
        return calibrate_alpha(y_true, target_tau, seed)
    return calibrate_copula(y_true, target_tau, seed)


def synthesize(y_true, tgt: SynthTarget, param: float | None = None) -> SynthResult:
    """Dispatch to the generator named by ``tgt.method``; ``param`` is a cached
    calibration from :func:`calibrate`."""
    if tgt.method is SynthMethod.ALPHA:
        return synth_alpha(y_true, tgt, param)
    if tgt.method is SynthMethod.RANK:
        return synth_rank_perturb(y_true, tgt)
    return synth_copula(y_true, tgt, param)


__all__ = [
    "DAAnchorForecaster",
    "Forecaster",
    "ForecastUnavailable",
    "HybridForecaster",
    "LearnedARForecaster",
    "MarketView",
    "OracleForecaster",
    "PersistenceForecaster",
    "SynthMethod",
    "SynthResult",
    "SynthTarget",
    "SynthesisError",
    "benchmark_suite",
    "calibrate",
    "calibrate_alpha",
    "calibrate_copula",
    "da_anchor_forecast",
    "hybrid_forecast",
    "kendall_tau",
    "learned_ar_forecast",
    "oracle_forecast",
    "persistence_forecast",
    "synth_alpha",
    "synth_copula",
    "synth_rank_perturb",
    "synthesize",
    "write_forecast_dump",
]
