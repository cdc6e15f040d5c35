"""Swiss hydro natural experiment: reservoir anomalies against balancing revenue.

Weekly reservoir levels are turned into week-of-year z-scores, split into
LOW / MEDIUM / HIGH regimes and related to downward-reserve prices and revenue
through OLS, Spearman correlation and a lead-lag scan.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .market_data import format_utc, to_utc64
from .ranking import average_rank
from .tables import read_table, write_table

LOW_Z = -0.8
HIGH_Z = 0.7
SIGMA_FLOOR = 1e-9


class HydroError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReservoirSeries:
    week_start: np.ndarray
    level: np.ndarray
    unit: str = "%"

    def __post_init__(self):
        ws = np.asarray(self.week_start, dtype="datetime64[s]")
        lv = np.asarray(self.level, dtype=float)
        if ws.shape != lv.shape or lv.ndim != 1:
            raise HydroError("week_start and level must be aligned 1-d arrays")
        if np.any(lv < 0) or not np.all(np.isfinite(lv)):
            raise HydroError("reservoir levels must be finite and nonnegative")
        if np.any(np.diff(ws) <= np.timedelta64(0, "s")):
            raise HydroError("weeks must be strictly increasing")
        object.__setattr__(self, "week_start", ws)
        object.__setattr__(self, "level", lv)


@dataclass(frozen=True, eq=False)
class AnomalySeries:
    week_start: np.ndarray
    z: np.ndarray


def week_of_year(week_start) -> np.ndarray:
    """ISO week numbers with week 53 folded into 52."""
    days = np.asarray(week_start, dtype="datetime64[D]")
    out = np.array([date.fromisoformat(str(d)).isocalendar()[1] for d in days], dtype=np.int64)
    return np.minimum(out, 52)


def seasonal_zscore(levels: ReservoirSeries, climatology: slice | None = None) -> AnomalySeries:
    """z against each week-of-year's mean and standard deviation over the climatology span."""
    woy = week_of_year(levels.week_start)
    x = levels.level
    span = np.zeros(x.size, dtype=bool)
    span[climatology if climatology is not None else slice(None)] = True
    z = np.empty(x.size)
    for w in np.unique(woy):
        m = woy == w
        ref = x[m & span]
        if ref.size < 2:
            raise HydroError("each week of year needs at least two years of climatology")
        mu = ref.mean()
        sd = max(ref.std(), SIGMA_FLOOR)
        z[m] = (x[m] - mu) / sd
    return AnomalySeries(levels.week_start, z)


class HydroRegime(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


def classify_regime(z) -> np.ndarray:
    """Strict thresholds: boundary values stay MEDIUM."""
    z = np.asarray(z.z if isinstance(z, AnomalySeries) else z, dtype=float)
    out = np.full(z.shape, HydroRegime.MEDIUM.value, dtype=object)
    out[z > HIGH_Z] = HydroRegime.HIGH.value
    out[z < LOW_Z] = HydroRegime.LOW.value
    return out


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True)
class Correlation:
    rho: float
    p_value: float
    n: int


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return math.nan if den == 0 else float(a @ b) / den


def _t_p(r: float, n: int) -> float:
    if not math.isfinite(r):
        return math.nan
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return float(2 * stats.t.sf(abs(t), n - 2))


def spearman(x, y, permutations: int = 0, seed: int = 0) -> Correlation:
    """Rank correlation; p from the t approximation, or from ``permutations``
    seeded shuffles when positive. Zero rank variance gives NaN."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise HydroError("spearman needs two aligned 1-d arrays")
    if x.size < 5:
        raise HydroError("spearman needs at least 5 pairs")
    rx, ry = average_rank(x), average_rank(y)
    rho = _pearson(rx, ry)
    if permutations > 0 and math.isfinite(rho):
        rng = np.random.default_rng(seed)
        null = np.array([_pearson(rx, rng.permutation(ry)) for _ in range(permutations)])
        p = float((1 + np.sum(np.abs(null) >= abs(rho) - 1e-12)) / (permutations + 1))
    else:
        p = _t_p(rho, x.size)
    return Correlation(rho, p, int(x.size))


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r2: float
    p_value: float
    n: int
    slope_se: float

    def __post_init__(self):
        if self.n < 3:
            raise HydroError("regression needs n >= 3")


def ols_fit(z, revenue) -> RegressionResult:
    """Univariate least squares of ``revenue`` on ``z`` with a two-sided t-test on the slope."""
    x = np.asarray(z.z if isinstance(z, AnomalySeries) else z, dtype=float)
    y = np.asarray(revenue, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise HydroError("ols_fit needs two aligned 1-d arrays")
    n = x.size
    if n < 3:
        raise HydroError("ols_fit needs at least 3 observations")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise HydroError("z has zero variance")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    sst = float(((y - y.mean()) ** 2).sum())
    sse = float(resid @ resid)
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    if n > 2 and sse > 0:
        se = math.sqrt(sse / (n - 2) / sxx)
        p = float(2 * stats.t.sf(abs(slope / se), n - 2))
    else:
        se, p = 0.0, 0.0
    return RegressionResult(slope, intercept, r2, p, n, se)


@dataclass(frozen=True, eq=False)
class LeadLagResult:
    lags: np.ndarray
    rho: np.ndarray
    p_value: np.ndarray

    @property
    def peak_lag(self) -> int:
        """Lag with the largest absolute correlation (first on ties)."""
        ok = np.isfinite(self.rho)
        if not ok.any():
            raise HydroError("no lag with a defined correlation")
        a = np.where(ok, np.abs(self.rho), -1.0)
        return int(self.lags[int(np.argmax(a))])


def leadlag_scan(z, price, lags: Sequence[int] = range(9), min_overlap: int = 10) -> LeadLagResult:
    """Spearman of ``z`` shifted forward by L weeks against ``price``; lags with
    fewer than ``min_overlap`` pairs are omitted."""
    zz = np.asarray(z.z if isinstance(z, AnomalySeries) else z, dtype=float)
    p = np.asarray(price, dtype=float)
    if zz.shape != p.shape:
        raise HydroError("z and price must be aligned")
    kept, rho, pv = [], [], []
    for L in lags:
        n = zz.size - L
        if L < 0 or n < max(min_overlap, 5):
            continue
        c = spearman(zz[: zz.size - L], p[L:])
        kept.append(L)
        rho.append(c.rho)
        pv.append(c.p_value)
    return LeadLagResult(np.array(kept, dtype=np.int64), np.array(rho), np.array(pv))


@dataclass(frozen=True)
class RegimeRow:
    regime: str
    n_weeks: int
    srl_price: float
    revenue: float
    da_price: float


@dataclass(frozen=True, eq=False)
class RegimeTable:
    rows: tuple[RegimeRow, ...]

    @property
    def high_low_ratio(self) -> float:
        by = {r.regime: r for r in self.rows}
        lo, hi = by[HydroRegime.LOW.value], by[HydroRegime.HIGH.value]
        if lo.n_weeks == 0 or hi.n_weeks == 0 or lo.revenue == 0:
            return math.nan
        return hi.revenue / lo.revenue

    def to_csv(self, path: str | Path) -> Path:
        ratio = self.high_low_ratio
        return write_table(path, ["regime", "n_weeks", "mean_srl_dn_price", "mean_weekly_revenue", "mean_da_price",
                                  "high_low_revenue_ratio"],
                           [(r.regime, r.n_weeks, r.srl_price, r.revenue, r.da_price, ratio) for r in self.rows])


def regime_table(regimes, srl_price, revenue, da_price) -> RegimeTable:
    lab = np.asarray(regimes, dtype=object)
    cols = [np.asarray(c, dtype=float) for c in (srl_price, revenue, da_price)]
    if any(c.shape != lab.shape for c in cols):
        raise HydroError("regime table inputs must be aligned")
    rows = []
    for g in HydroRegime:
        m = lab == g.value
        n = int(m.sum())
        means = [float(c[m].mean()) if n else math.nan for c in cols]
        rows.append(RegimeRow(g.value, n, *means))
    return RegimeTable(tuple(rows))


# --------------------------------------------------------------------------- pipeline and I/O


@dataclass(frozen=True, eq=False)
class HydroReport:
    anomaly: AnomalySeries
    regimes: np.ndarray
    table: RegimeTable
    ols_total: RegressionResult
    ols_srl: RegressionResult | None
    price_corr: Correlation
    leadlag: LeadLagResult


def run_pipeline(levels: ReservoirSeries, srl_price, revenue, da_price, srl_revenue=None,
                 lags: Sequence[int] = range(9)) -> HydroReport:
    z = seasonal_zscore(levels)
    reg = classify_regime(z)
    table = regime_table(reg, srl_price, revenue, da_price)
    ols_srl = ols_fit(z, srl_revenue) if srl_revenue is not None else None
    return HydroReport(z, reg, table, ols_fit(z, revenue), ols_srl, spearman(z.z, srl_price),
                       leadlag_scan(z, srl_price, lags))


def write_hydro_outputs(report: HydroReport, revenue, directory: str | Path) -> list[Path]:
    d = Path(directory)
    out = [report.table.to_csv(d / "hydro_regimes.csv")]
    out.append(write_table(d / "hydro_scatter.csv", ["z", "revenue"], zip(report.anomaly.z, np.asarray(revenue))))
    o = report.ols_total
    stats_rows = [("ols_total_slope", o.slope), ("ols_total_se", o.slope_se), ("ols_total_r2", o.r2),
                  ("ols_total_p", o.p_value), ("ols_n", o.n), ("spearman_rho_price", report.price_corr.rho),
                  ("spearman_p_price", report.price_corr.p_value), ("leadlag_peak", report.leadlag.peak_lag)]
    if report.ols_srl is not None:
        stats_rows += [("ols_srl_slope", report.ols_srl.slope), ("ols_srl_p", report.ols_srl.p_value)]
    out.append(write_table(d / "hydro_stats.csv", ["statistic", "value"], stats_rows))
    out.append(write_table(d / "hydro_leadlag.csv", ["lag_weeks", "rho", "p_value"],
                           zip(report.leadlag.lags, report.leadlag.rho, report.leadlag.p_value)))
    return out


def read_levels_csv(path: str | Path, unit: str = "%") -> ReservoirSeries:
    rows = read_table(path)
    if not rows or "week_start" not in rows[0] or "level" not in rows[0]:
        raise HydroError(f"{path}: expected columns week_start,level")
    return ReservoirSeries(np.array([to_utc64(r["week_start"]) for r in rows]),
                           np.array([float(r["level"]) for r in rows]), unit)


def read_prices_csv(path: str | Path) -> dict[str, np.ndarray]:
    """``week_start,price[,revenue][,da_price][,srl_revenue]`` columns as arrays."""
    rows = read_table(path)
    if not rows or "week_start" not in rows[0] or "price" not in rows[0]:
        raise HydroError(f"{path}: expected columns week_start,price")
    out = {"week_start": np.array([to_utc64(r["week_start"]) for r in rows])}
    for k in ("price", "revenue", "da_price", "srl_revenue"):
        if k in rows[0]:
            out[k] = np.array([float(r[k]) for r in rows])
    return out


def write_levels_csv(path: str | Path, levels: ReservoirSeries) -> Path:
    return write_table(path, ["week_start", "level"],
                       ((format_utc(w), v) for w, v in zip(levels.week_start, levels.level)))


def write_prices_csv(path: str | Path, week_start, price, revenue=None, da_price=None) -> Path:
    cols = [("price", price), ("revenue", revenue), ("da_price", da_price)]
    cols = [(k, np.asarray(v)) for k, v in cols if v is not None]
    return write_table(path, ["week_start"] + [k for k, _ in cols],
                       ((format_utc(w), *(v[i] for _, v in cols)) for i, w in enumerate(week_start)))
