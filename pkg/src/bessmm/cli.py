"""Command-line entry point.

Every command reads an optional INI config, applies the ``--seed``, ``--out`` and
``--market`` overrides, writes its artifacts under the output directory and
finishes with ``manifest.json``. Exit codes: 0 success, 1 invalid config or
arguments, 2 data or runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__

# --------------------------------------------------------------------------- configuration

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(v: str) -> bool:
    try:
        return _BOOL[v.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {v!r}") from None


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _names(v: str) -> tuple[str, ...]:
    return tuple(x for x in v.replace(",", " ").split())


def _weeks(v: str) -> tuple[int, ...] | None:
    """``all``, ``3-6`` or an explicit list."""
    v = v.strip()
    if v in ("", "all"):
        return None
    if "-" in v and "," not in v:
        a, b = v.split("-")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(x) for x in v.replace(",", " ").split())


SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"seed": (int, 0), "out": (str, "out"), "market": (str, "DE")},
    "data": {"dir": (str, ""), "xbid": (str, ""), "da": (str, ""), "fcr": (str, ""), "afrr_up": (str, ""),
             "afrr_dn": (str, ""), "days": (int, 0), "day_shapes": (str, "shuffled"), "data_seed": (int, -1)},
    "battery": {"p_max": (float, 10.0), "e_max": (float, 10.0), "eta_c": (float, 0.95), "eta_d": (float, 0.95),
                "deg_cost": (float, 4.0), "dod_exponent": (float, 1.5)},
    "simulate": {"weeks": (_weeks, None), "forecaster": (str, "hybrid"), "strategy": (str, "static"),
                 "quantile": (float, 40.0), "oracle": (_bool, False), "reserves": (_bool, True),
                 "day_ahead": (_bool, True), "n_scenarios": (int, 30), "window": (int, 52),
                 "train_weeks": (int, 20), "n_states": (int, 4), "restarts": (int, 10), "step_mw": (float, 0.1)},
    "tau-scan": {"methods": (_names, ("alpha_interp", "rank_perturb", "gauss_copula")), "grid": (_floats, ()),
                 "grid_points": (int, 25), "n_reps": (int, 40), "tolerance": (float, 0.03)},
    "ablate": {"weeks": (_weeks, None), "forecaster": (str, "hybrid"), "base_forecaster": (str, "da_anchor"),
               "quantile": (float, 40.0), "train_weeks": (int, 20), "n_states": (int, 4), "restarts": (int, 10),
               "n_scenarios": (int, 30), "window": (int, 52), "step_mw": (float, 0.1)},
    "eval": {"warmup_days": (int, 9), "forecasters": (_names, ())},
    "hydro": {"levels": (str, ""), "prices": (str, ""), "years": (int, 6), "lag": (int, 3), "max_lag": (int, 8)},
    "synth-data": {"hydro_years": (int, 6)},
}

# synthetic dataset length when no data directory is configured
_DEFAULT_DAYS = {"simulate": 182, "tau-scan": 365, "ablate": 182, "eval": 90, "synth-data": 182}


class ValidationError(Exception):
    """Bad arguments or configuration (exit code 1)."""


@dataclass
class RunConfig:
    command: str
    values: dict[str, dict[str, Any]]
    source: Path | None = None
    inputs: list[Path] = field(default_factory=list)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out(self) -> Path:
        return Path(self.values["run"]["out"])

    def canonical(self) -> str:
        """Stable text form used for the config hash (output dir excluded)."""
        used = {"run", "battery", self.command} | ({"data"} if self.command != "hydro" else set())
        flat = {s: {k: _plain(v) for k, v in sorted(d.items()) if not (s == "run" and k == "out")}
                for s, d in sorted(self.values.items()) if s in used}
        return json.dumps({"command": self.command, "config": flat}, sort_keys=True)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def load_config(command: str, path: str | None, overrides: dict[str, Any]) -> RunConfig:
    cp = configparser.ConfigParser()
    src = None
    if path:
        src = Path(path)
        if not src.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            cp.read(src)
        except configparser.Error as exc:
            raise ValidationError(f"cannot parse config: {exc}") from exc
    values: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ValidationError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            if cp.has_option(section, key):
                try:
                    values[section][key] = conv(cp.get(section, key))
                except ValueError as exc:
                    raise ValidationError(f"[{section}] {key}: {exc}") from exc
            else:
                values[section][key] = default
    for k, v in overrides.items():
        if v is not None:
            values["run"][k] = v
    values["run"]["market"] = str(values["run"]["market"]).upper()
    if values["run"]["market"] not in ("DE", "CH"):
        raise ValidationError("market must be DE or CH")
    cfg = RunConfig(command, values, src)
    _check_paths(cfg)
    return cfg


def _check_paths(cfg: RunConfig) -> None:
    base = cfg.source.parent if cfg.source else Path(".")
    for section, keys in (("data", ("dir", "xbid", "da", "fcr", "afrr_up", "afrr_dn")), ("hydro", ("levels", "prices"))):
        for k in keys:
            v = cfg[section][k]
            if not v:
                continue
            p = Path(v)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise ValidationError(f"[{section}] {k}: path does not exist: {v}")
            cfg[section][k] = str(p)
            if p.is_file():
                cfg.inputs.append(p)
    d = cfg["data"]["dir"]
    if d:
        cfg.inputs.extend(sorted(q for q in Path(d).glob("*.csv")))
    if cfg["data"]["day_shapes"] not in ("shuffled", "recurring"):
        raise ValidationError("[data] day_shapes must be shuffled or recurring")


# --------------------------------------------------------------------------- shared builders


def _spec(cfg: RunConfig):
    from .battery import BatterySpec

    b = cfg["battery"]
    try:
        return BatterySpec(b["p_max"], b["e_max"], b["eta_c"], b["eta_d"], b["deg_cost"], b["dod_exponent"])
    except ValueError as exc:
        raise ValidationError(f"[battery] {exc}") from exc


def _rules(cfg: RunConfig):
    from .market_data import GateClosureRules

    return GateClosureRules.preset(cfg["run"]["market"])


def _dataset(cfg: RunConfig):
    from .dataset import load_dataset
    from .synthetic import PriceModel, generate_market

    d = cfg["data"]
    paths = {k: d[k] for k in ("xbid", "da", "fcr", "afrr_up", "afrr_dn") if d[k]}
    if d["dir"] or paths:
        if not d["dir"] and len(paths) < 5:
            raise ValidationError("[data] needs dir or all five series paths")
        ds = load_dataset(d["dir"] or ".", _rules(cfg), paths)
        if d["days"]:
            ds = ds.subset_days(0, min(d["days"], ds.n_days))
        return ds
    days = d["days"] or _DEFAULT_DAYS.get(cfg.command, 182)
    seed = d["data_seed"] if d["data_seed"] >= 0 else cfg.seed
    return generate_market(days, seed, PriceModel(day_shapes=d["day_shapes"]), rules=_rules(cfg))


def _alloc_cfg(step: float):
    from .allocation import AllocationConfig

    if step <= 0:
        raise ValidationError("step_mw must be positive")
    return AllocationConfig(step_mw=step)


# --------------------------------------------------------------------------- commands


def cmd_synth_data(cfg: RunConfig, out: Path) -> list[Path]:
    from .dataset import save_dataset
    from .hydro import ReservoirSeries, write_levels_csv, write_prices_csv
    from .synthetic import generate_hydro

    paths = save_dataset(_dataset(cfg), out / "market")
    h = generate_hydro(cfg["synth-data"]["hydro_years"], cfg.seed)
    paths.append(write_levels_csv(out / "hydro" / "levels.csv", ReservoirSeries(h.week_start, h.level)))
    paths.append(write_prices_csv(out / "hydro" / "prices.csv", h.week_start, h.srl_dn_price, h.revenue,
                                  h.da_price))
    return paths


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    from .allocation import BidMode, BidStrategy
    from .plotting import plot_simulation
    from .regime import walk_forward, write_regime_report
    from .system import FORECASTERS, SimConfig, simulate, write_simulation

    s = cfg["simulate"]
    if s["forecaster"] not in FORECASTERS:
        raise ValidationError(f"[simulate] forecaster must be one of {', '.join(FORECASTERS)}")
    if s["strategy"] not in ("static", "regime"):
        raise ValidationError("[simulate] strategy must be static or regime")
    ds = _dataset(cfg)
    weeks = s["weeks"] or tuple(range(max(1, ds.n_weeks - 4), ds.n_weeks))
    if min(weeks) < 1 or max(weeks) >= ds.n_weeks:
        raise ValidationError(f"[simulate] weeks must lie in 1..{ds.n_weeks - 1}")
    strategy = BidStrategy(BidMode.STATIC, s["quantile"])
    regimes = None
    paths = []
    if s["strategy"] == "regime":
        if min(weeks) < s["train_weeks"]:
            raise ValidationError("[simulate] regime strategy needs weeks at or after train_weeks")
        run = walk_forward(ds, s["train_weeks"], s["n_states"], cfg.seed, window=s["window"],
                           restarts=s["restarts"])
        strategy = BidStrategy(BidMode.REGIME, s["quantile"], run.policy.as_mapping())
        regimes = run.states
        paths.append(write_regime_report(out / "regimes.csv", ds, run))
    sim = SimConfig(spec=_spec(cfg), strategy=strategy, regimes=regimes, forecaster=s["forecaster"],
                    reserves=s["reserves"], day_ahead=s["day_ahead"], oracle=s["oracle"],
                    n_scenarios=s["n_scenarios"], window=s["window"], seed=cfg.seed, alloc=_alloc_cfg(s["step_mw"]))
    res = simulate(ds, weeks, sim)
    for w, why in res.skipped_weeks:
        print(f"week {w} skipped: {why}", file=sys.stderr)
    for d, why in res.skipped_days():
        print(f"day {d}: Layer 3 skipped ({why})", file=sys.stderr)
    paths += write_simulation(res, out)
    paths.append(plot_simulation(res, out / "simulate.png"))
    return paths


def cmd_tau_scan(cfg: RunConfig, out: Path) -> list[Path]:
    from .dispatch import DispatchProblem
    from .evaluation.scan import tau_scan
    from .forecast import SynthMethod
    from .plotting import plot_tau_scan
    from .tables import write_table

    t = cfg["tau-scan"]
    try:
        methods = [SynthMethod(m) for m in t["methods"]]
    except ValueError as exc:
        raise ValidationError(f"[tau-scan] {exc}") from exc
    grid = np.asarray(t["grid"], float) if t["grid"] else np.linspace(0.0, 1.0, t["grid_points"])
    if grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
        raise ValidationError("[tau-scan] grid must be strictly increasing within [0, 1]")
    if t["n_reps"] < 30:
        raise ValidationError("[tau-scan] n_reps must be at least 30")
    ds = _dataset(cfg)
    days = ds.xbid_days()
    tpl = DispatchProblem(days[0], _spec(cfg))
    results = []
    paths = []
    for m in methods:
        r = tau_scan(days, m, grid, t["n_reps"], tpl, cfg.seed, t["tolerance"])
        results.append(r)
        paths.append(r.to_csv(out / f"tau_scan_{m.value}.csv"))
    ref = next((r for r in results if r.method == SynthMethod.ALPHA.value), None)
    rows = []
    for r in results:
        k = int(np.argmin(np.abs(r.grid - r.tau_star))) if np.isfinite(r.tau_star) else -1
        gap = r.tau_star_interp - ref.tau_star_interp if ref is not None else float("nan")
        rows.append((r.method, r.tau_star, r.tau_star_interp, r.vcr_ci[k] if k >= 0 else float("nan"),
                     gap, int(r.flagged.sum()), r.n_days, r.n_excluded_days))
    paths.append(write_table(out / "tau_scan_summary.csv",
                             ["method", "tau_star", "tau_star_interp", "vcr_ci_at_tau_star", "gap_vs_alpha_interp",
                              "flagged_points", "n_days", "n_excluded_days"], rows))
    paths.append(plot_tau_scan(results, out / "tau_scan.png"))
    return paths


def cmd_ablate(cfg: RunConfig, out: Path) -> list[Path]:
    from .allocation import BidStrategy
    from .evaluation.ablation import AblationConfig, run_ablation
    from .plotting import plot_ablation
    from .system import FORECASTERS, SimConfig
    from .tables import write_table

    a = cfg["ablate"]
    for k in ("forecaster", "base_forecaster"):
        if a[k] not in FORECASTERS:
            raise ValidationError(f"[ablate] {k} must be one of {', '.join(FORECASTERS)}")
    ds = _dataset(cfg)
    sim = SimConfig(spec=_spec(cfg), strategy=BidStrategy(quantile=a["quantile"]), n_scenarios=a["n_scenarios"],
                    window=a["window"], seed=cfg.seed, alloc=_alloc_cfg(a["step_mw"]))
    acfg = AblationConfig(sim=sim, forecaster=a["forecaster"], base_forecaster=a["base_forecaster"],
                          static_quantile=a["quantile"], train_weeks=a["train_weeks"], n_states=a["n_states"],
                          restarts=a["restarts"], weeks=a["weeks"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_ablation(ds, acfg)
    paths = [res.to_csv(out / "ablation.csv")]
    rows = [(name, i, float(v)) for name, arr in res.weekly.items() for i, v in enumerate(arr)]
    paths.append(write_table(out / "ablation_weekly.csv", ["configuration", "week_index", "net_revenue_eur"], rows))
    paths.append(plot_ablation(res, out / "ablation.png"))
    return paths


def cmd_eval(cfg: RunConfig, out: Path) -> list[Path]:
    from .evaluation.benchmark import default_days, run_benchmark, write_daily_scores
    from .evaluation.robustness import volatility_split
    from .forecast import benchmark_suite
    from .plotting import plot_eval

    e = cfg["eval"]
    ds = _dataset(cfg)
    suite = benchmark_suite(ds)
    if e["forecasters"]:
        known = {f.name: f for f in suite}
        bad = [n for n in e["forecasters"] if n not in known]
        if bad:
            raise ValidationError(f"[eval] unknown forecasters: {', '.join(bad)}")
        suite = [known[n] for n in e["forecasters"]]
    days = default_days(ds, e["warmup_days"])
    res = run_benchmark(ds, suite, days, _spec(cfg))
    for name, skipped in res.skipped.items():
        print(f"{name}: {len(skipped)} days skipped", file=sys.stderr)
    paths = [res.to_csv(out / "eval_table.csv"), write_daily_scores(out / "eval_daily.csv", res)]
    weeks = len({d // 7 for d in days})
    if weeks >= 8:
        paths.append(volatility_split(res.scores, ds.xbid_days()).to_csv(out / "volatility_split.csv"))
    paths.append(plot_eval(res.reports, out / "eval.png"))
    return paths


def cmd_hydro(cfg: RunConfig, out: Path) -> list[Path]:
    from .hydro import ReservoirSeries, read_levels_csv, read_prices_csv, run_pipeline, write_hydro_outputs
    from .plotting import plot_hydro
    from .synthetic import generate_hydro

    h = cfg["hydro"]
    if bool(h["levels"]) != bool(h["prices"]):
        raise ValidationError("[hydro] give both levels and prices, or neither for synthetic data")
    if h["levels"]:
        lv = read_levels_csv(h["levels"])
        pr = read_prices_csv(h["prices"])
        if "revenue" not in pr:
            raise ValidationError("[hydro] prices file needs a revenue column")
        if len(pr["week_start"]) != len(lv.week_start) or np.any(pr["week_start"] != lv.week_start):
            raise ValidationError("[hydro] levels and prices must share the same weeks")
        price, revenue = pr["price"], pr["revenue"]
        da = pr.get("da_price", np.full(price.size, np.nan))
        srl_rev = pr.get("srl_revenue")
    else:
        d = generate_hydro(h["years"], cfg.seed, lag=h["lag"])
        lv = ReservoirSeries(d.week_start, d.level)
        price, revenue, da, srl_rev = d.srl_dn_price, d.revenue, d.da_price, None
    rep = run_pipeline(lv, price, revenue, da, srl_rev, range(h["max_lag"] + 1))
    paths = write_hydro_outputs(rep, revenue, out)
    paths.append(plot_hydro(rep.anomaly.z, revenue, rep.ols_total, rep.leadlag, out / "hydro.png"))
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "tau-scan": cmd_tau_scan,
    "ablate": cmd_ablate,
    "hydro": cmd_hydro,
    "eval": cmd_eval,
    "synth-data": cmd_synth_data,
}


# --------------------------------------------------------------------------- manifest


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, out: Path, outputs: list[Path], wall_clock: float) -> Path:
    """``wall_clock_s`` is the only field that varies between identical reruns."""
    manifest = {
        "command": cfg.command,
        "code_version": __version__,
        "config_hash": hashlib.sha256(cfg.canonical().encode()).hexdigest(),
        "config": json.loads(cfg.canonical())["config"],
        "inputs": {str(p): sha256(p) for p in sorted(set(cfg.inputs))},
        "outputs": [{"path": p.relative_to(out).as_posix(), "sha256": sha256(p)}
                    for p in sorted(set(outputs))],
        "wall_clock_s": round(wall_clock, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bessmm", description="Battery multi-market trading and forecast-value evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="INI config file")
        s.add_argument("--seed", type=int, metavar="N", help="master seed (overrides [run] seed)")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
        s.add_argument("--market", choices=["DE", "CH"], help="gate-closure preset (overrides [run] market)")
    return p


def _runtime_errors() -> tuple[type[BaseException], ...]:
    from .allocation import AllocationError
    from .dispatch import DispatchError
    from .forecast import ForecastUnavailable, SynthesisError
    from .hydro import HydroError
    from .market_data import MarketDataError
    from .regime import RegimeError

    return (AllocationError, DispatchError, ForecastUnavailable, SynthesisError, HydroError, MarketDataError,
            RegimeError, ValueError, FileNotFoundError)


def main(argv: list[str] | None = None) -> int:
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.command, args.config, {"seed": args.seed, "out": args.out, "market": args.market})
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[cfg.command](cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _runtime_errors() as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    write_manifest(cfg, out, outputs, time.perf_counter() - t0)
    print(f"wrote {len(outputs)} files to {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
