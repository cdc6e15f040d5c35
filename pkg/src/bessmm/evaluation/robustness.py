"""Calm-versus-volatile split of benchmark results."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..tables import write_table
from .benchmark import DailyScores


@dataclass(frozen=True)
class SplitRow:
    name: str
    vcr_low: float
    vcr_high: float
    tau_low: float
    tau_high: float

    @property
    def vcr_gap(self) -> float:
        """High-volatility VCR minus low-volatility VCR."""
        return self.vcr_high - self.vcr_low

    @property
    def tau_gap(self) -> float:
        return self.tau_high - self.tau_low


@dataclass(frozen=True, eq=False)
class VolatilitySplit:
    threshold: float
    high_weeks: np.ndarray
    low_weeks: np.ndarray
    rows: list[SplitRow]

    def row(self, name: str) -> SplitRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self, path: str | Path) -> Path:
        return write_table(path, ["forecaster", "vcr_low_vol", "vcr_high_vol", "vcr_gap", "tau_low_vol",
                                  "tau_high_vol", "n_low_weeks", "n_high_weeks"],
                           ((r.name, r.vcr_low, r.vcr_high, r.vcr_gap, r.tau_low, r.tau_high,
                             self.low_weeks.size, self.high_weeks.size) for r in self.rows))


def _ratio(rev, orc) -> float:
    keep = orc > 0
    return float(rev[keep].sum() / orc[keep].sum()) if keep.any() else math.nan


def volatility_split(scores: Sequence[DailyScores], xbid_days: np.ndarray) -> VolatilitySplit:
    """Split weeks at the median of their realised daily price volatility.

    ``xbid_days`` holds the realised (days, slots) prices of the whole dataset;
    each forecaster's days are grouped into calendar weeks (day // 7). Weeks at or
    below the median count as calm.
    """
    xbid_days = np.asarray(xbid_days, float)
    week_of = np.arange(xbid_days.shape[0]) // 7
    weeks = np.unique(week_of[np.asarray(scores[0].days)])
    if weeks.size < 8:
        raise ValueError("volatility split needs at least 8 weeks")
    vol = np.array([xbid_days[week_of == w].std(axis=1).mean() for w in weeks])
    thr = float(np.median(vol))
    high = weeks[vol > thr]
    low = weeks[vol <= thr]
    rows = []
    for s in scores:
        ok = s.ok
        wk = np.asarray(s.days) // 7
        hi = ok & np.isin(wk, high)
        lo = ok & np.isin(wk, low)
        rows.append(SplitRow(s.name, _ratio(s.revenue[lo], s.oracle[lo]), _ratio(s.revenue[hi], s.oracle[hi]),
                             float(np.mean(s.tau[lo])) if lo.any() else math.nan,
                             float(np.mean(s.tau[hi])) if hi.any() else math.nan))
    return VolatilitySplit(thr, high, low, rows)
