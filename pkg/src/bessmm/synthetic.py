"""Seeded synthetic markets: quarter-hourly XBID and DA prices, 4-hour reserve
capacity blocks with persistent regimes, and weekly Swiss hydro series.

Price model per day ``d`` and hour ``h``::

    da[d, h]   = level[d] + s[w] * shape[d](h) + noise
    xbid[d, q] = da[d, h(q)] + intra-hour ramp + s[w] * ar1[q]

``s[w]`` is a weekly volatility multiplier (calm or stressed). In ``shuffled``
mode every day draws an independent shape from random harmonics, so yesterday
carries no information about today's ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import BLOCK, BLOCKS_PER_DAY, MarketDataset
from .market_data import GateClosureRules, MarketTag, PriceSeries, Timeline

DEFAULT_START = np.datetime64("2024-01-01T00:00:00", "s")


@dataclass(frozen=True)
class PriceModel:
    base_level: float = 90.0
    seasonal_amp: float = 15.0
    weekend_drop: float = 12.0
    shape_amp: float = 35.0
    day_shapes: str = "shuffled"
    da_noise: float = 5.0
    qh_ramp: float = 0.35
    ar_phi: float = 0.85
    ar_sd: float = 7.0
    high_vol_prob: float = 0.3
    high_vol_scale: float = 2.0
    fcr_levels: tuple[float, ...] = (8.0, 14.0, 24.0, 40.0)
    afrr_up_levels: tuple[float, ...] = (1.5, 2.5, 4.5, 8.0)
    afrr_dn_levels: tuple[float, ...] = (1.2, 2.0, 3.5, 6.0)
    regime_stay: float = 0.85
    cap_noise: float = 0.25

    def __post_init__(self):
        if self.day_shapes not in ("shuffled", "recurring"):
            raise ValueError("day_shapes must be 'shuffled' or 'recurring'")
        if not 0 <= self.ar_phi < 1:
            raise ValueError("ar_phi must lie in [0, 1)")
        if not (len(self.fcr_levels) == len(self.afrr_up_levels) == len(self.afrr_dn_levels)):
            raise ValueError("capacity level tuples must share one regime count")


def _daily_shapes(rng, days: int, model: PriceModel) -> np.ndarray:
    hours = np.arange(24) + 0.5
    if model.day_shapes == "shuffled":
        out = np.zeros((days, 24))
        for k in (1, 2, 3):
            amp = model.shape_amp * rng.uniform(0.5, 1.0, (days, 1)) / k
            phase = rng.uniform(0, 2 * np.pi, (days, 1))
            out += amp * np.cos(2 * np.pi * k * hours[None, :] / 24 - phase)
        return out
    typical = (-0.6 * np.cos(2 * np.pi * hours / 24) - 0.5 * np.cos(4 * np.pi * (hours - 1) / 24)
               + 0.15 * np.cos(6 * np.pi * hours / 24))
    scale = rng.uniform(0.8, 1.2, (days, 1))
    wiggle = 0.15 * rng.standard_normal((days, 24))
    return model.shape_amp * (scale * typical[None, :] + wiggle)


def _markov_chain(rng, n: int, k: int, stay: float) -> np.ndarray:
    states = np.empty(n, dtype=np.int64)
    states[0] = rng.integers(k)
    for i in range(1, n):
        states[i] = states[i - 1] if rng.random() < stay else rng.integers(k)
    return states


def generate_market(
    days: int,
    seed: int,
    model: PriceModel | None = None,
    start: np.datetime64 = DEFAULT_START,
    rules: GateClosureRules | None = None,
) -> MarketDataset:
    """Draw ``days`` whole UTC days of prices. Identical seeds give identical data."""
    if days < 1:
        raise ValueError("days must be >= 1")
    model = model or PriceModel()
    rng = np.random.default_rng(seed)
    weeks = -(-days // 7)
    d = np.arange(days)

    high_vol = rng.random(weeks) < model.high_vol_prob
    vol = np.where(high_vol, model.high_vol_scale, 1.0)[d // 7]
    level = (model.base_level + model.seasonal_amp * np.cos(2 * np.pi * d / 365.0)
             - model.weekend_drop * (((d + int(_weekday(start))) % 7) >= 5))
    shapes = _daily_shapes(rng, days, model)
    da = level[:, None] + vol[:, None] * shapes + model.da_noise * vol[:, None] * rng.standard_normal((days, 24))

    # intra-hour ramp follows the local slope of the hourly curve
    padded = np.concatenate([da[:, :1], da, da[:, -1:]], axis=1)
    slope = 0.5 * (padded[:, 2:] - padded[:, :-2])
    quarter = (np.arange(4) - 1.5) / 4.0
    ramp = model.qh_ramp * slope[:, :, None] * quarter[None, None, :]
    n = days * 96
    innov = rng.standard_normal(n) * model.ar_sd * np.sqrt(1 - model.ar_phi ** 2)
    ar = np.empty(n)
    ar[0] = model.ar_sd * rng.standard_normal()
    for t in range(1, n):
        ar[t] = model.ar_phi * ar[t - 1] + innov[t]
    xbid = (np.repeat(da, 4, axis=1) + ramp.reshape(days, 96)) + vol[:, None] * ar.reshape(days, 96)

    k = len(model.fcr_levels)
    cap_state = _markov_chain(rng, weeks, k, model.regime_stay)
    n_blocks = days * BLOCKS_PER_DAY
    block_week = (np.arange(n_blocks) // BLOCKS_PER_DAY) // 7
    block_pattern = 1.0 + 0.15 * np.cos(2 * np.pi * (np.arange(n_blocks) % BLOCKS_PER_DAY) / BLOCKS_PER_DAY)

    def capacity(levels):
        mu = np.asarray(levels)[cap_state[block_week]]
        z = rng.standard_normal(n_blocks)
        return mu * block_pattern * np.exp(model.cap_noise * z - 0.5 * model.cap_noise ** 2)

    fcr = capacity(model.fcr_levels)
    up = capacity(model.afrr_up_levels)
    dn = capacity(model.afrr_dn_levels)

    tl = Timeline(start, np.timedelta64(900, "s"), n)
    btl = Timeline(start, BLOCK, n_blocks)
    meta = {"seed": seed, "high_vol_weeks": high_vol, "capacity_regime": cap_state, "model": model}
    return MarketDataset(
        PriceSeries.from_values(tl, xbid.ravel(), MarketTag.XBID, provenance="synthetic"),
        PriceSeries.from_values(tl, np.repeat(da, 4, axis=1).ravel(), MarketTag.DA, provenance="synthetic"),
        PriceSeries.from_values(btl, fcr, MarketTag.FCR, provenance="synthetic"),
        PriceSeries.from_values(btl, up, MarketTag.AFRR_UP, provenance="synthetic"),
        PriceSeries.from_values(btl, dn, MarketTag.AFRR_DN, provenance="synthetic"),
        rules or GateClosureRules(),
        meta,
    )


def _weekday(ts: np.datetime64) -> int:
    # 1970-01-01 was a Thursday
    return int((np.datetime64(ts, "D").astype(np.int64) + 3) % 7)


# --------------------------------------------------------------------------- hydro


@dataclass(frozen=True, eq=False)
class HydroData:
    week_start: np.ndarray
    level: np.ndarray
    srl_dn_price: np.ndarray
    revenue: np.ndarray
    da_price: np.ndarray
    anomaly: np.ndarray = field(repr=False)


def generate_hydro(
    years: int,
    seed: int,
    lag: int = 3,
    price_gain: float = 6.0,
    revenue_per_sd: float = 6000.0,
    noise: float = 1.0,
    start: np.datetime64 = np.datetime64("2020-01-06T00:00:00", "s"),
) -> HydroData:
    """Weekly reservoir fill (% of capacity) with a seasonal cycle and a persistent
    anomaly; downward-reserve prices respond to the anomaly ``lag`` weeks later."""
    if years < 2:
        raise ValueError("need at least two years of weeks")
    rng = np.random.default_rng(seed)
    n = years * 52
    weeks = start + np.arange(n) * np.timedelta64(7 * 86400, "s")
    woy = np.arange(n) % 52
    seasonal = 50.0 + 30.0 * np.sin(2 * np.pi * (woy - 16) / 52)
    a = np.empty(n)
    a[0] = rng.standard_normal()
    for t in range(1, n):
        a[t] = 0.9 * a[t - 1] + np.sqrt(1 - 0.81) * rng.standard_normal()
    level = np.clip(seasonal + 8.0 * a, 0.0, None)
    shifted = np.concatenate([np.zeros(lag), a[: n - lag]]) if lag else a
    srl = np.maximum(20.0 + price_gain * shifted + noise * 3.0 * rng.standard_normal(n), 0.0)
    revenue = 15000.0 + revenue_per_sd * a + noise * 4000.0 * rng.standard_normal(n)
    da = 80.0 - 5.0 * a + 10.0 * rng.standard_normal(n)
    return HydroData(weeks, level, srl, revenue, da, a)
