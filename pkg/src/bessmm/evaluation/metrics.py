"""Forecast error, decision value and tail statistics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from ..ranking import kendall_tau
from ..tables import write_table

__all__ = [
    "EvalReport",
    "VcrSummary",
    "cvar",
    "kendall_tau",
    "mae",
    "ranking_inconsistency",
    "rmse",
    "summarize_vcr",
    "vcr",
    "write_eval_table",
]


def mae(f, y) -> float:
    return float(np.mean(np.abs(np.asarray(f, float) - np.asarray(y, float))))


def rmse(f, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(f, float) - np.asarray(y, float)) ** 2)))


def vcr(revenue_f: float, revenue_oracle: float) -> float:
    """Raw capture ratio; NaN when the oracle revenue is not positive."""
    if not revenue_oracle > 0:
        return math.nan
    return revenue_f / revenue_oracle


@dataclass(frozen=True)
class VcrSummary:
    """Aggregate over days: ``ratio`` is total forecast revenue over total oracle
    revenue on days with a positive oracle; ``clamped`` is its reporting value."""

    ratio: float
    daily_mean: float
    n_days: int
    n_excluded: int

    @property
    def clamped(self) -> float:
        return float(np.clip(self.ratio, 0.0, 1.0)) if math.isfinite(self.ratio) else math.nan


def summarize_vcr(revenue_f, revenue_oracle) -> VcrSummary:
    f = np.asarray(revenue_f, float)
    o = np.asarray(revenue_oracle, float)
    keep = o > 0
    n = int(keep.sum())
    if n == 0:
        return VcrSummary(math.nan, math.nan, 0, int(o.size))
    return VcrSummary(float(f[keep].sum() / o[keep].sum()), float(np.mean(f[keep] / o[keep])), n,
                      int(o.size - n))


@dataclass(frozen=True)
class EvalReport:
    name: str
    mae: float
    rmse: float
    tau: float
    vcr: float
    n_days: int
    n_excluded: int = 0
    revenue: float = math.nan

    def __post_init__(self):
        if self.mae < 0 or self.rmse < 0:
            raise ValueError("error metrics must be nonnegative")
        if math.isfinite(self.tau) and not -1 - 1e-12 <= self.tau <= 1 + 1e-12:
            raise ValueError("tau outside [-1, 1]")


def ranking_inconsistency(reports: Sequence[EvalReport]) -> float:
    """Share of forecaster pairs where the lower-MAE one also has the lower VCR."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    bad = 0
    pairs = 0
    for a, b in combinations(reports, 2):
        pairs += 1
        if (a.mae - b.mae) * (a.vcr - b.vcr) > 0:
            bad += 1
    return bad / pairs


def _ranks(values, descending=False) -> list[int]:
    v = np.asarray(values, float)
    order = np.argsort(-v if descending else v, kind="mergesort")
    r = np.empty(v.size, dtype=int)
    r[order] = np.arange(1, v.size + 1)
    return r.tolist()


def write_eval_table(path: str | Path, reports: Sequence[EvalReport]) -> Path:
    ri = ranking_inconsistency(reports) if len(reports) >= 2 else math.nan
    mae_rank = _ranks([r.mae for r in reports])
    vcr_rank = _ranks([r.vcr for r in reports], descending=True)
    rows = [
        (r.name, r.mae, r.rmse, r.tau, r.vcr, mr, vr, r.n_days, r.n_excluded, ri)
        for r, mr, vr in zip(reports, mae_rank, vcr_rank)
    ]
    return write_table(path, ["forecaster", "mae", "rmse", "tau", "vcr", "mae_rank", "vcr_rank", "n_days",
                              "n_excluded_days", "ranking_inconsistency"], rows)


def cvar(revenues, level: float = 0.05) -> float:
    """Mean of the worst ``ceil(level * n)`` revenues."""
    r = np.sort(np.asarray(revenues, float))
    if r.size == 0:
        raise ValueError("no revenues")
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    if r.size < 1 / level:
        warnings.warn(f"only {r.size} observations for a {level:.0%} tail", stacklevel=2)
    k = math.ceil(level * r.size - 1e-12)
    return float(np.mean(r[:k]))
