"""Market and exogenous time series: alignment, sanitising and information availability.

All timestamps are held as ``numpy.datetime64[s]`` in UTC. Gate closures quoted in
local market time (Europe/Berlin, i.e. CET/CEST) are converted with ``zoneinfo`` so
DST switches are handled per delivery day.
"""
from __future__ import annotations

import configparser
import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

import numpy as np

DAY = np.timedelta64(86400, "s")
QUARTER_HOUR = np.timedelta64(900, "s")
HOUR = np.timedelta64(3600, "s")
WEEK = np.timedelta64(7 * 86400, "s")


class MarketDataError(ValueError):
    """Raised for malformed or unusable market data."""


class EmptySeriesError(MarketDataError):
    pass


class MarketTag(str, enum.Enum):
    FCR = "FCR"
    AFRR_UP = "aFRR_up"
    AFRR_DN = "aFRR_dn"
    DA = "DA"
    XBID = "XBID"
    SRL_UP = "SRL_up"
    SRL_DN = "SRL_dn"


# --------------------------------------------------------------------------- time


def to_utc64(ts: str | datetime | np.datetime64, source_tz: str = "UTC") -> np.datetime64:
    """Parse an ISO-8601 string (offset or ``Z`` suffix) or datetime into UTC seconds.

    Naive timestamps are interpreted in ``source_tz``.
    """
    if isinstance(ts, np.datetime64):
        return ts.astype("datetime64[s]")
    if isinstance(ts, str):
        s = ts.strip()
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=ZoneInfo(source_tz))
    utc = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(utc, "s")


def format_utc(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "+00:00"


def utc_day(ts: np.datetime64) -> np.datetime64:
    return np.datetime64(ts, "D")


@dataclass(frozen=True)
class Timeline:
    """Uniform slot grid: ``length`` contiguous slots of ``resolution`` from ``start``."""

    start: np.datetime64
    resolution: np.timedelta64
    length: int

    def __post_init__(self):
        object.__setattr__(self, "start", np.datetime64(self.start, "s"))
        object.__setattr__(self, "resolution", np.timedelta64(self.resolution, "s"))
        res = int(self.resolution.astype(int))
        if res <= 0:
            raise MarketDataError("resolution must be positive")
        if res < 86400 and 86400 % res:
            raise MarketDataError("sub-daily resolution must divide 24 h")
        if self.length < 0:
            raise MarketDataError("length must be nonnegative")

    @classmethod
    def quarter_hourly(cls, start, days: int) -> "Timeline":
        return cls(to_utc64(start) if isinstance(start, str) else start, QUARTER_HOUR, 96 * days)

    @property
    def dt_hours(self) -> float:
        return int(self.resolution.astype(int)) / 3600.0

    @property
    def slots_per_day(self) -> int:
        return int(86400 // int(self.resolution.astype(int)))

    @property
    def end(self) -> np.datetime64:
        return self.start + self.resolution * self.length

    def times(self) -> np.ndarray:
        return self.start + self.resolution * np.arange(self.length)

    def index_of(self, ts) -> int:
        """Slot index containing ``ts`` or -1 when outside the grid."""
        off = int((np.datetime64(ts, "s") - self.start).astype(int))
        res = int(self.resolution.astype(int))
        if off < 0 or off >= res * self.length:
            return -1
        return off // res

    def slice(self, first: int, count: int) -> "Timeline":
        return Timeline(self.start + self.resolution * first, self.resolution, count)


# --------------------------------------------------------------------------- series


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """One value per slot. Gap slots hold NaN and are listed in ``gaps``."""

    timeline: Timeline
    values: np.ndarray
    market_tag: MarketTag | None = None
    gaps: tuple[int, ...] = ()
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size != self.timeline.length:
            raise MarketDataError(
                f"series has {vals.size} values for a timeline of {self.timeline.length} slots"
            )
        nan = np.flatnonzero(~np.isfinite(vals))
        if set(nan.tolist()) != set(self.gaps):
            raise MarketDataError("non-finite values are only allowed at declared gap slots")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "gaps", tuple(sorted(int(g) for g in self.gaps)))
        if self.market_tag is not None:
            object.__setattr__(self, "market_tag", MarketTag(self.market_tag))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    @classmethod
    def from_values(cls, timeline: Timeline, values, market_tag=None, **meta) -> "PriceSeries":
        vals = np.asarray(values, dtype=float)
        gaps = tuple(np.flatnonzero(~np.isfinite(vals)).tolist())
        return cls(timeline, vals, market_tag, gaps, meta)

    def __len__(self) -> int:
        return self.timeline.length

    def day(self, i: int) -> "PriceSeries":
        n = self.timeline.slots_per_day
        return self.window(i * n, n)

    def window(self, first: int, count: int) -> "PriceSeries":
        vals = self.values[first:first + count]
        return PriceSeries.from_values(self.timeline.slice(first, count), vals, self.market_tag, **self.meta)

    def days(self) -> np.ndarray:
        """Values reshaped to (days, slots_per_day); trailing partial day dropped."""
        n = self.timeline.slots_per_day
        d = len(self.values) // n
        return self.values[: d * n].reshape(d, n)


@dataclass(frozen=True)
class BidRecord:
    price: float
    volume: float

    def __post_init__(self):
        if not math.isfinite(self.price):
            raise MarketDataError("bid price must be finite")
        if not self.volume > 0:
            raise MarketDataError("bid volume must be positive")


def vwa_price(bids: Sequence[BidRecord]) -> float:
    """Volume-weighted average price of accepted bids."""
    if not bids:
        raise MarketDataError("no bids")
    vol = math.fsum(b.volume for b in bids)
    if vol <= 0:
        raise MarketDataError("zero total volume")
    return math.fsum(b.price * b.volume for b in bids) / vol


REPLICATION_MODES = ("exact", "hourly-to-quarter")


def align_to_grid(
    raw: Iterable[tuple],
    timeline: Timeline,
    market_tag: MarketTag | str | None = None,
    mode: str = "exact",
    source_tz: str = "UTC",
) -> PriceSeries:
    """Place raw ``(timestamp, value)`` records on ``timeline``.

    In ``hourly-to-quarter`` mode each record covers the hour starting at its
    timestamp and is copied into every slot of that hour. Duplicates resolve
    last-write-wins. Unmatched slots become gaps; records outside the grid are
    listed in ``meta['outside']``.
    """
    if mode not in REPLICATION_MODES:
        raise MarketDataError(f"unknown replication mode {mode!r}")
    records = list(raw)
    if not records:
        raise EmptySeriesError("no input records")

    parsed = sorted(
        ((to_utc64(ts, source_tz), i, float(v)) for i, (ts, v, *_) in enumerate(records)),
        key=lambda r: (r[0], r[1]),
    )
    span = 1
    if mode == "hourly-to-quarter":
        span = int(HOUR // timeline.resolution)
        if span < 1:
            raise MarketDataError("hourly-to-quarter needs a sub-hourly timeline")

    vals = np.full(timeline.length, np.nan)
    written = np.zeros(timeline.length, dtype=bool)
    outside: list[str] = []
    duplicates = 0
    seen: set = set()
    for ts, _, v in parsed:
        if not math.isfinite(v):
            continue
        if ts in seen:
            duplicates += 1
        seen.add(ts)
        idx = timeline.index_of(ts)
        if idx < 0:
            outside.append(format_utc(ts))
            continue
        sl = slice(idx, min(idx + span, timeline.length))
        vals[sl] = v
        written[sl] = True

    if duplicates:
        warnings.warn(f"{duplicates} duplicate timestamps resolved last-write-wins", stacklevel=2)
    gaps = tuple(np.flatnonzero(~written).tolist())
    return PriceSeries(
        timeline,
        vals,
        market_tag,
        gaps,
        {"outside": tuple(outside), "duplicates": duplicates, "mode": mode},
    )


# --------------------------------------------------------------------------- gaps


GAP_POLICIES = ("skip-day", "forward-fill")


def apply_gap_policy(series: PriceSeries, policy: str, max_fill: int = 2):
    """Resolve gaps under an explicit policy.

    Returns ``(values, skipped_days)``. ``forward-fill`` fills runs of at most
    ``max_fill`` slots from the preceding value; longer runs (or a leading gap)
    mark their day skipped. ``skip-day`` marks every day containing a gap.
    """
    if policy not in GAP_POLICIES:
        raise MarketDataError(f"unknown gap policy {policy!r}")
    vals = np.array(series.values, dtype=float)
    n = series.timeline.slots_per_day
    skipped: set[int] = set()
    if policy == "skip-day":
        skipped = {g // n for g in series.gaps}
        return vals, sorted(skipped)
    gaps = list(series.gaps)
    i = 0
    while i < len(gaps):
        j = i
        while j + 1 < len(gaps) and gaps[j + 1] == gaps[j] + 1:
            j += 1
        first, last = gaps[i], gaps[j]
        if first == 0 or last - first + 1 > max_fill:
            skipped.update(range(first // n, last // n + 1))
        else:
            vals[first:last + 1] = vals[first - 1]
        i = j + 1
    return vals, sorted(skipped)


# --------------------------------------------------------------------------- availability


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """A feature with the UTC time at which each slot's value becomes public."""

    name: str
    timeline: Timeline
    values: np.ndarray
    available_at: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        avail = np.array(self.available_at, dtype="datetime64[s]")
        avail.setflags(write=False)
        if vals.size != self.timeline.length or avail.size != self.timeline.length:
            raise MarketDataError(f"feature {self.name!r}: length mismatch with timeline")
        if avail.size > 1 and np.any(avail[1:] < avail[:-1]):
            raise MarketDataError(f"feature {self.name!r}: available_at must be nondecreasing")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "available_at", avail)

    def visible(self, issue_time) -> np.ndarray:
        """Values with every slot not yet public at ``issue_time`` set to NaN."""
        mask = self.available_at <= np.datetime64(issue_time, "s")
        return np.where(mask, self.values, np.nan)


def availability_filter(features: Sequence[FeatureRecord], issue_time):
    """Keep only feature slots published at or before ``issue_time``.

    Returns ``(filtered, removed)`` where hidden slots are NaN in the filtered
    records and ``removed`` counts the hidden slots that held a value.
    """
    t = np.datetime64(issue_time, "s")
    out = []
    removed = 0
    for f in features:
        hide = f.available_at > t
        removed += int(np.count_nonzero(hide & np.isfinite(f.values)))
        out.append(FeatureRecord(f.name, f.timeline, np.where(hide, np.nan, f.values), f.available_at))
    return out, removed


@dataclass(frozen=True)
class GateClosureRules:
    """Gate closures in local market time for delivery day D (closures on D-1)."""

    fcr_close: time = time(8, 0)
    afrr_close: time = time(9, 0)
    da_close: time = time(12, 0)
    xbid_open: time = time(15, 0)
    xbid_lead_min: int = 30
    local_tz: str = "Europe/Berlin"

    def __post_init__(self):
        if not (self.fcr_close < self.afrr_close < self.da_close < self.xbid_open):
            raise MarketDataError("gate closures must be ordered FCR < aFRR < DA < XBID open")
        if self.xbid_lead_min not in (30, 60):
            raise MarketDataError("xbid lead must be 30 (DE) or 60 (CH) minutes")

    @classmethod
    def preset(cls, market: str) -> "GateClosureRules":
        market = market.upper()
        if market == "DE":
            return cls()
        if market == "CH":
            return cls(xbid_lead_min=60, local_tz="Europe/Zurich")
        raise MarketDataError(f"unknown market preset {market!r}")

    @property
    def xbid_lead(self) -> np.timedelta64:
        return np.timedelta64(self.xbid_lead_min * 60, "s")

    def _local_d_minus_1(self, delivery_day: date, at: time) -> np.datetime64:
        local = datetime.combine(delivery_day - timedelta(days=1), at, tzinfo=ZoneInfo(self.local_tz))
        return to_utc64(local)

    def close_for(self, tag: MarketTag | str, delivery_day: date) -> np.datetime64:
        tag = MarketTag(tag)
        at = {
            MarketTag.FCR: self.fcr_close,
            MarketTag.AFRR_UP: self.afrr_close,
            MarketTag.AFRR_DN: self.afrr_close,
            MarketTag.DA: self.da_close,
        }.get(tag)
        if at is None:
            raise MarketDataError(f"no D-1 gate for {tag.value}")
        return self._local_d_minus_1(delivery_day, at)

    def xbid_gate(self, slot_start) -> np.datetime64:
        return np.datetime64(slot_start, "s") - self.xbid_lead


def _local_delivery_days(times: np.ndarray, tz: str) -> list[date]:
    zone = ZoneInfo(tz)
    return [
        datetime.fromtimestamp(int(t.astype("datetime64[s]").astype(int)), tz=zone).date()
        for t in times
    ]


def publication_times(timeline: Timeline, tag: MarketTag | str, rules: GateClosureRules) -> np.ndarray:
    """When each slot of a ``tag`` series becomes public.

    Auction products are public at their D-1 gate closure (cleared result); realised
    continuous-market prices are public at the end of their own slot. Weekly tenders
    (SRL) are public at the start of their week.
    """
    tag = MarketTag(tag)
    times = timeline.times()
    if tag == MarketTag.XBID:
        return times + timeline.resolution
    if tag in (MarketTag.SRL_UP, MarketTag.SRL_DN):
        return times.copy()
    days = _local_delivery_days(times, rules.local_tz)
    cache: dict[date, np.datetime64] = {}
    out = np.empty(times.size, dtype="datetime64[s]")
    for i, d in enumerate(days):
        if d not in cache:
            cache[d] = rules.close_for(tag, d)
        out[i] = cache[d]
    return out


def as_feature(series: PriceSeries, rules: GateClosureRules, name: str | None = None) -> FeatureRecord:
    if series.market_tag is None:
        raise MarketDataError("series needs a market tag to derive availability")
    return FeatureRecord(
        name or series.market_tag.value,
        series.timeline,
        series.values,
        publication_times(series.timeline, series.market_tag, rules),
    )


# --------------------------------------------------------------------------- files


def read_records_csv(path: str | Path, source_tz: str = "UTC") -> dict[str, list]:
    """Read ``timestamp,value[,volume][,available_at]`` into column lists."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "value"} <= set(reader.fieldnames):
            raise MarketDataError(f"{path}: header must contain timestamp,value")
        cols: dict[str, list] = {"timestamp": [], "value": []}
        optional = [c for c in ("volume", "available_at") if c in reader.fieldnames]
        for c in optional:
            cols[c] = []
        for row in reader:
            cols["timestamp"].append(to_utc64(row["timestamp"], source_tz))
            cols["value"].append(float(row["value"]) if row["value"] not in ("", "nan", "NaN") else math.nan)
            if "volume" in cols:
                cols["volume"].append(float(row["volume"]))
            if "available_at" in cols:
                raw = row["available_at"]
                cols["available_at"].append(to_utc64(raw, source_tz) if raw else cols["timestamp"][-1])
    if not cols["timestamp"]:
        raise EmptySeriesError(f"{path}: no rows")
    return cols


def write_series_csv(series: PriceSeries, path: str | Path) -> None:
    """Write ``timestamp,value`` with shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for t, v in zip(series.timeline.times(), series.values):
            w.writerow([format_utc(t), repr(float(v)) if math.isfinite(v) else ""])


def read_series_csv(
    path: str | Path,
    timeline: Timeline | None = None,
    market_tag: MarketTag | str | None = None,
    mode: str = "exact",
    source_tz: str = "UTC",
    resolution: np.timedelta64 | None = None,
) -> PriceSeries:
    """Ingest a series CSV. Without ``timeline`` the grid is inferred from the first
    timestamp, ``resolution`` (default: smallest positive spacing) and the last one.

    When a ``volume`` column is present, rows sharing a timestamp are bids and are
    collapsed by volume-weighted average; otherwise the series is tagged as an
    uncorrected arithmetic mean for SRL products.
    """
    cols = read_records_csv(path, source_tz)
    ts = np.array(cols["timestamp"], dtype="datetime64[s]")
    values = cols["value"]
    provenance = "as-published"
    if "volume" in cols:
        groups: dict[np.datetime64, list[BidRecord]] = {}
        for t, p, v in zip(ts, values, cols["volume"]):
            groups.setdefault(t, []).append(BidRecord(p, v))
        ts = np.array(sorted(groups), dtype="datetime64[s]")
        values = [vwa_price(groups[t]) for t in ts]
        provenance = "volume-weighted"
    elif market_tag is not None and MarketTag(market_tag) in (MarketTag.SRL_UP, MarketTag.SRL_DN):
        provenance = "arithmetic-mean, uncorrected"
    if timeline is None:
        uniq = np.unique(ts)
        if resolution is None:
            steps = np.diff(uniq)
            if steps.size == 0:
                raise MarketDataError(f"{path}: cannot infer resolution from a single row")
            resolution = steps.min()
        res = np.timedelta64(resolution, "s")
        length = int((uniq[-1] - uniq[0]) // res) + 1
        timeline = Timeline(uniq[0], res, length)
    s = align_to_grid(zip(ts, values), timeline, market_tag, mode)
    meta = dict(s.meta)
    meta["provenance"] = provenance
    meta["source"] = str(path)
    return PriceSeries(s.timeline, s.values, s.market_tag, s.gaps, meta)


def read_feature_csv(path: str | Path, name: str, timeline: Timeline, source_tz: str = "UTC") -> FeatureRecord:
    """Feature file with optional ``available_at`` column (default: slot timestamp)."""
    cols = read_records_csv(path, source_tz)
    s = align_to_grid(zip(cols["timestamp"], cols["value"]), timeline)
    avail = timeline.times().copy()
    if "available_at" in cols:
        for t, a in zip(cols["timestamp"], cols["available_at"]):
            i = timeline.index_of(t)
            if i >= 0:
                avail[i] = a
    return FeatureRecord(name, timeline, s.values, avail)


@dataclass(frozen=True)
class SeriesConfig:
    market_tag: MarketTag
    resolution: np.timedelta64
    source_tz: str = "UTC"
    replication: str = "exact"
    gap_policy: str = "skip-day"


def read_series_config(path: str | Path, section: str = "series") -> SeriesConfig:
    """Key-value ingestion config (INI syntax)."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise MarketDataError(f"cannot read config {path}")
    sec = cp[section]
    res_txt = sec.get("resolution", "15min").strip().lower()
    units = {"15min": 900, "1h": 3600, "hourly": 3600, "1w": 7 * 86400, "weekly": 7 * 86400, "4h": 14400}
    if res_txt not in units:
        raise MarketDataError(f"unknown resolution {res_txt!r}")
    cfg = SeriesConfig(
        MarketTag(sec["market"]),
        np.timedelta64(units[res_txt], "s"),
        sec.get("timezone", "UTC"),
        sec.get("replication", "exact"),
        sec.get("gap_policy", "skip-day"),
    )
    if cfg.replication not in REPLICATION_MODES:
        raise MarketDataError(f"unknown replication mode {cfg.replication!r}")
    if cfg.gap_policy not in GAP_POLICIES:
        raise MarketDataError(f"unknown gap policy {cfg.gap_policy!r}")
    return cfg
