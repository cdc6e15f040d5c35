"""A bundle of aligned market series plus CSV persistence for it."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market_data import (
    DAY,
    GateClosureRules,
    MarketDataError,
    MarketTag,
    PriceSeries,
    Timeline,
    read_series_csv,
    write_series_csv,
)

BLOCK = np.timedelta64(4 * 3600, "s")
BLOCKS_PER_DAY = 6


@dataclass(frozen=True, eq=False)
class MarketDataset:
    """Quarter-hourly XBID and DA (DA replicated per quarter) plus 4-hour capacity blocks.

    All energy series share one timeline made of whole UTC days.
    """

    xbid: PriceSeries
    da: PriceSeries
    fcr: PriceSeries
    afrr_up: PriceSeries
    afrr_dn: PriceSeries
    rules: GateClosureRules = field(default_factory=GateClosureRules)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        tl = self.xbid.timeline
        if tl.resolution != np.timedelta64(900, "s") or tl.length % 96:
            raise MarketDataError("XBID series must cover whole days at 15-minute resolution")
        if self.da.timeline != tl:
            raise MarketDataError("DA and XBID timelines differ")
        for s in (self.fcr, self.afrr_up, self.afrr_dn):
            if s.timeline.resolution != BLOCK or s.timeline.start != tl.start:
                raise MarketDataError("capacity series must be 4-hour blocks starting with the energy timeline")
            if s.timeline.length != self.n_days * BLOCKS_PER_DAY:
                raise MarketDataError("capacity series length does not match the energy days")

    @property
    def timeline(self) -> Timeline:
        return self.xbid.timeline

    @property
    def n_days(self) -> int:
        return self.xbid.timeline.length // 96

    @property
    def n_weeks(self) -> int:
        return self.n_days // 7

    def day_start(self, d: int) -> np.datetime64:
        return self.timeline.start + d * DAY

    def xbid_days(self) -> np.ndarray:
        return self.xbid.days()

    def da_hourly(self) -> np.ndarray:
        """(days, 24) DA prices."""
        return self.da.days()[:, ::4]

    def capacity_blocks(self, tag: str) -> np.ndarray:
        """(weeks, 42) block prices for ``fcr``, ``afrr_up`` or ``afrr_dn``."""
        s = getattr(self, tag)
        n = self.n_weeks * 7 * BLOCKS_PER_DAY
        return np.asarray(s.values[:n]).reshape(self.n_weeks, 7 * BLOCKS_PER_DAY)

    def subset_days(self, first: int, count: int) -> "MarketDataset":
        b = BLOCKS_PER_DAY
        return MarketDataset(
            self.xbid.window(first * 96, count * 96),
            self.da.window(first * 96, count * 96),
            self.fcr.window(first * b, count * b),
            self.afrr_up.window(first * b, count * b),
            self.afrr_dn.window(first * b, count * b),
            self.rules,
            dict(self.meta),
        )

    def with_rules(self, rules: GateClosureRules) -> "MarketDataset":
        return MarketDataset(self.xbid, self.da, self.fcr, self.afrr_up, self.afrr_dn, rules, dict(self.meta))


_FILES = {"xbid": "xbid.csv", "da": "da.csv", "fcr": "fcr.csv", "afrr_up": "afrr_up.csv", "afrr_dn": "afrr_dn.csv"}
_TAGS = {"xbid": MarketTag.XBID, "da": MarketTag.DA, "fcr": MarketTag.FCR, "afrr_up": MarketTag.AFRR_UP,
         "afrr_dn": MarketTag.AFRR_DN}


def save_dataset(ds: MarketDataset, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for key, name in _FILES.items():
        p = directory / name
        write_series_csv(getattr(ds, key), p)
        out.append(p)
    return out


def load_dataset(directory: str | Path, rules: GateClosureRules | None = None,
                 paths: dict[str, str | Path] | None = None) -> MarketDataset:
    """Read the five series. ``paths`` overrides individual file locations.

    DA may be given hourly; it is replicated onto the quarter-hour grid.
    """
    directory = Path(directory)
    paths = {k: Path(v) for k, v in (paths or {}).items()}
    files = {k: paths.get(k, directory / v) for k, v in _FILES.items()}
    xbid = read_series_csv(files["xbid"], market_tag=MarketTag.XBID, resolution=np.timedelta64(900, "s"))
    tl = xbid.timeline
    if tl.length % 96:
        days = tl.length // 96
        if days == 0:
            raise MarketDataError("XBID file covers less than one day")
        xbid = xbid.window(0, days * 96)
        tl = xbid.timeline
    da = read_series_csv(files["da"], timeline=tl, market_tag=MarketTag.DA)
    if da.gaps:
        hourly = read_series_csv(files["da"], timeline=tl, market_tag=MarketTag.DA, mode="hourly-to-quarter")
        if len(hourly.gaps) < len(da.gaps):
            da = hourly
    n_blocks = tl.length // 96 * BLOCKS_PER_DAY
    btl = Timeline(tl.start, BLOCK, n_blocks)
    caps = {k: read_series_csv(files[k], timeline=btl, market_tag=_TAGS[k]) for k in ("fcr", "afrr_up", "afrr_dn")}
    for k, s in [("xbid", xbid), ("da", da), *caps.items()]:
        if s.gaps:
            raise MarketDataError(f"{k} has {len(s.gaps)} gap slots; apply a gap policy before loading")
    return MarketDataset(xbid, da, caps["fcr"], caps["afrr_up"], caps["afrr_dn"], rules or GateClosureRules())


def read_run_config(path: str | Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    return cp
