"""Acceptance suite: one PASS/FAIL line per criterion.

Each test computes its evidence and hands a verdict to :func:`record`, which
prints it, stores it for the terminal summary and then asserts, so a failing
criterion shows up both as a failed test and as a FAIL line at the end of the run.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bessmm.allocation import BidStrategy, plan_weeks, soc_buffer
from bessmm.battery import BatterySpec, degradation_cost, rainflow_cycles
from bessmm.cli import main
from bessmm.dispatch import DispatchProblem, solve_dp
from bessmm.evaluation.benchmark import default_days, run_benchmark
from bessmm.evaluation.metrics import EvalReport, cvar, ranking_inconsistency
from bessmm.evaluation.scan import tau_scan
from bessmm.forecast import (
    DAAnchorForecaster,
    ForecastUnavailable,
    HybridForecaster,
    LearnedARForecaster,
    MarketView,
    PersistenceForecaster,
    SynthesisError,
    SynthMethod,
    SynthTarget,
    synthesize,
)
from bessmm.hydro import (
    HIGH_Z,
    LOW_Z,
    ReservoirSeries,
    classify_regime,
    leadlag_scan,
    ols_fit,
    seasonal_zscore,
    spearman,
    week_of_year,
)
from bessmm.market_data import BidRecord, Timeline, vwa_price
from bessmm.ranking import kendall_tau
from bessmm.regime import (
    RegimeModel,
    best_permutation_accuracy,
    fit_baum_welch,
    sample_hmm,
    viterbi_path,
)
from bessmm.synthetic import PriceModel, generate_hydro, generate_market

from conftest import ACCEPTANCE
from oracles import average_ranks, dp_enumerate, kendall_pairs, rainflow_astm, viterbi_enumerate
from test_cli import SMALL
from test_dispatch import random_instance

SCAN_DAYS = 365
SCAN_SEED = 11
SCAN_REPS = 40
SCAN_POINTS = 25


def record(n: int, ok: bool, detail: str):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# --------------------------------------------------------------------------- shared tau scans


@pytest.fixture(scope="module")
def scan_days():
    return generate_market(SCAN_DAYS, 2024).xbid_days()


@pytest.fixture(scope="module")
def scans(scan_days):
    tpl = DispatchProblem(scan_days[0], BatterySpec())
    grid = np.linspace(0.0, 1.0, SCAN_POINTS)
    out = {}
    for m in SynthMethod:
        t0 = time.perf_counter()
        r = tau_scan(scan_days, m, grid, SCAN_REPS, tpl, SCAN_SEED)
        out[m] = (r, time.perf_counter() - t0)
    return out


@pytest.mark.slow
def test_criterion_01_tau_saturation(scans):
    r, secs = scans[SynthMethod.ALPHA]
    tau, v = r.achieved_tau, r.vcr_mean
    a = tau >= 0.85
    b = tau >= 0.95
    c = tau <= 0.05
    ok_a = bool(a.any() and np.all(v[a] >= 0.95))
    ok_b = bool(b.any() and np.all(v[b] >= 0.97))
    ok_c = bool(c.any() and np.all(v[c] <= 0.60))
    ok_t = secs <= 600
    worst_a = ", ".join(f"tau {t:.4f} -> VCR {x:.4f}" for t, x in zip(tau[a], v[a]) if x < 0.95) or "none"
    detail = (f"(a) VCR>=0.95 for tau>=0.85: {ok_a} [below: {worst_a}]; "
              f"(b) min VCR for tau>=0.95 = {v[b].min() if b.any() else math.nan:.4f}: {ok_b}; "
              f"(c) max VCR for tau<=0.05 = {v[c].max() if c.any() else math.nan:.4f}: {ok_c}; "
              f"runtime {secs:.0f}s <= 600s: {ok_t}")
    record(1, ok_a and ok_b and ok_c and ok_t, detail)


@pytest.mark.slow
def test_criterion_02_method_ordering(scans):
    alpha = scans[SynthMethod.ALPHA][0]
    rank = scans[SynthMethod.RANK][0]
    cop = scans[SynthMethod.COPULA][0]
    ok = rank.tau_star_interp > alpha.tau_star_interp and cop.tau_star_interp > alpha.tau_star_interp
    detail = (f"tau* interp alpha {alpha.tau_star_interp:.4f}, rank {rank.tau_star_interp:.4f} "
              f"(gap {rank.tau_star_interp - alpha.tau_star_interp:+.4f}), copula {cop.tau_star_interp:.4f} "
              f"(gap {cop.tau_star_interp - alpha.tau_star_interp:+.4f}); informational band 0.05-0.15; "
              f"grid estimator alpha {alpha.tau_star:.4f} rank {rank.tau_star:.4f} copula {cop.tau_star:.4f}")
    record(2, bool(ok), detail)


# --------------------------------------------------------------------------- synthesis tolerance


def test_criterion_03_calibration_tolerance():
    days = generate_market(60, 3).xbid_days()
    targets = (0.0, 0.3, 0.5, 0.7, 0.85, 0.95)
    worst = (2.0, "")
    ok = True
    for m in SynthMethod:
        for tgt in targets:
            hits = 0
            for seed in range(500):
                y = days[seed % len(days)]
                try:
                    r = synthesize(y, SynthTarget(tgt, 0.03, m, seed))
                except SynthesisError:
                    continue
                hits += abs(kendall_tau(r.values, y) - tgt) <= 0.03
            rate = hits / 500
            if rate < worst[0]:
                worst = (rate, f"{m.value}@{tgt}")
            ok &= rate >= 0.95
    record(3, ok, f"lowest hit rate {worst[0]:.3f} at {worst[1]} (need >= 0.95 of 500 draws, 18 cells)")


# --------------------------------------------------------------------------- dispatch


def test_criterion_04_dp_correctness():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        prices, spec, dt, soc0, n_soc = random_instance(rng)
        s = solve_dp(DispatchProblem(prices, spec, soc0, 0.0, 1.0, dt, 3, n_soc))
        best, _ = dp_enumerate(prices, dt, spec.p_max, spec.e_max, spec.eta_c, spec.eta_d, spec.deg_cost,
                               soc0, 0.0, 1.0)
        worst = max(worst, abs(s.planned_value - best))
    unit = BatterySpec(p_max=1, e_max=1, eta_c=1, eta_d=1, deg_cost=0)
    ex = solve_dp(DispatchProblem(np.array([10.0, 50, 20, 60]), unit, action_levels=3, soc_levels=11))
    ok = worst <= 1e-9 and abs(ex.revenue - 20.0) <= 1e-9
    record(4, ok, f"1000 instances, max |DP - enumeration| = {worst:.2e} (float summation order only); "
                  f"4-slot example = {ex.revenue:.6f} EUR")


def _random_increasing(rng, keep_sign=True):
    """A strictly increasing map built from random pieces. With ``keep_sign`` it
    fixes 0, so every price keeps its sign."""
    knots = np.sort(np.r_[rng.uniform(-100, 400, 11), 0.0])
    vals = np.cumsum(rng.uniform(0.01, 50, 12))
    vals = vals - vals[np.flatnonzero(knots == 0.0)[0]]
    if not keep_sign:
        vals = vals + rng.uniform(-500, 500)
    kind = rng.integers(3)
    a = rng.uniform(0.2, 3.0)

    def f(x):
        # the slopes outside the knot range keep it strictly increasing
        lo = vals[0] + (x - knots[0]) * 0.5
        hi = vals[-1] + (x - knots[-1]) * 0.5
        y = np.where(x < knots[0], lo, np.where(x > knots[-1], hi, np.interp(x, knots, vals)))
        if kind == 1:
            y = np.sinh(y / 200 * a)
        elif kind == 2:
            y = y + a * np.cbrt(x)
        return y

    return f


def test_criterion_05_ordinal_invariance():
    rng = np.random.default_rng(5)
    lossless = BatterySpec(deg_cost=0, eta_c=1, eta_d=1)
    lossy = BatterySpec(deg_cost=0, eta_c=0.95, eta_d=0.95)
    days = generate_market(10, 9).xbid_days()
    bad_t = bad_s = bad_shift = 0
    for i in range(50):
        base = days[i % len(days)]
        f = _random_increasing(rng)
        warped = f(base)
        assert np.all(np.diff(warped[np.argsort(base)]) > 0) and np.all(np.sign(warped) == np.sign(base))
        ref = solve_dp(DispatchProblem(base, lossless)).actions
        bad_t += not np.array_equal(solve_dp(DispatchProblem(warped, lossless)).actions, ref)
        c = float(np.exp(rng.uniform(np.log(0.01), np.log(100))))
        ref_l = solve_dp(DispatchProblem(base, lossy)).actions
        bad_s += not np.array_equal(solve_dp(DispatchProblem(base * c, lossy)).actions, ref_l)
        # diagnostic only: maps that move prices across zero change the value of
        # ending the day charged, which V_T = 0 makes a real economic difference
        g = _random_increasing(rng, keep_sign=False)
        bad_shift += not np.array_equal(solve_dp(DispatchProblem(g(base), lossless)).actions, ref)
    record(5, bad_t == 0 and bad_s == 0,
           f"schedules changed under {bad_t}/50 sign-preserving increasing transforms (lossless) and "
           f"{bad_s}/50 scalings (eta 0.95); diagnostic: {bad_shift}/50 changed under sign-crossing maps")


# --------------------------------------------------------------------------- metrics


def _pearson_loop(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    return sab / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))


def test_criterion_06_metric_oracles():
    rng = np.random.default_rng(6)
    k_bad = 0
    for _ in range(200):
        n = int(rng.integers(2, 97))
        f = rng.integers(0, 10, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        y = rng.integers(0, 10, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        k_bad += kendall_tau(f, y) != kendall_pairs(f, y)
    err = {"spearman": 0.0, "cvar": 0.0, "ols": 0.0, "vwa": 0.0}
    for _ in range(200):
        n = int(rng.integers(5, 80))
        x = np.round(rng.normal(size=n), 1)
        z = x + rng.normal(size=n)
        ref = _pearson_loop(list(average_ranks(x)), list(average_ranks(z)))
        err["spearman"] = max(err["spearman"], abs(spearman(x, z).rho - ref))
        r = rng.normal(size=n + 20)
        k = math.ceil(0.05 * r.size)
        err["cvar"] = max(err["cvar"], abs(cvar(r) - sum(sorted(r.tolist())[:k]) / k))
        X = np.column_stack([np.ones(n), x])
        b = np.linalg.solve(X.T @ X, X.T @ z)
        fit = ols_fit(x, z)
        res = z - X @ b
        se = math.sqrt(res @ res / (n - 2) * np.linalg.inv(X.T @ X)[1, 1])
        err["ols"] = max(err["ols"], abs(fit.intercept - b[0]), abs(fit.slope - b[1]), abs(fit.slope_se - se))
        p = rng.uniform(-50, 300, n)
        v = rng.uniform(0.1, 10, n)
        num = den = 0.0
        for a_, b_ in zip(p, v):
            num += a_ * b_
            den += b_
        err["vwa"] = max(err["vwa"], abs(vwa_price([BidRecord(float(a_), float(b_)) for a_, b_ in zip(p, v)])
                                         - num / den))
    ok = k_bad == 0 and all(e <= 1e-9 for e in err.values())
    record(6, ok, f"kendall mismatches {k_bad}/200; max errors " + ", ".join(f"{k} {e:.1e}" for k, e in err.items()))


# --------------------------------------------------------------------------- allocation


def test_criterion_07_soc_buffer_and_fcr_cap():
    spec = BatterySpec()
    buf = soc_buffer(5, 0, 10)
    ds = generate_market(21 * 7, 11, PriceModel(fcr_levels=(60.0, 75.0, 90.0, 110.0)))
    plans = plan_weeks(ds, BidStrategy(), spec, range(1, 21), n_scenarios=10)
    p = [pl.result.allocation.p_fcr for pl in plans]
    ok = buf == 0.25 and len(p) == 20 and all(x == 5.0 for x in p)
    record(7, ok, f"soc_buffer(5, 0, 10) = {buf!r}; p_fcr == 5.0 MW in {sum(x == 5.0 for x in p)}/{len(p)} weeks")


# --------------------------------------------------------------------------- benchmark suite


def test_criterion_08_benchmark_ordering():
    ds = generate_market(90, 2024)
    rep = {r.name: r for r in run_benchmark(ds, days=default_days(ds)).reports}
    v = {k: r.vcr for k, r in rep.items()}
    order = v["hybrid"] >= v["learned_ar"] >= v["da_anchor"] > v["persistence"]
    oracle = abs(v["oracle"] - 1.0) <= 1e-12
    agree = [EvalReport("a", 1, 1, 0.9, 0.9, 1), EvalReport("b", 2, 2, 0.5, 0.5, 1),
             EvalReport("c", 3, 3, 0.1, 0.1, 1)]
    ri = ranking_inconsistency(agree)
    ptau = rep["persistence"].tau
    ok = oracle and order and ri == 0.0 and abs(ptau) <= 0.1
    record(8, ok, "VCR " + ", ".join(f"{k} {x:.4f}" for k, x in v.items())
           + f"; RI on coinciding ranks {ri}; persistence mean tau {ptau:+.4f}")


# --------------------------------------------------------------------------- regimes


def test_criterion_09_hmm():
    two = RegimeModel(np.array([0.6, 0.4]), np.array([[0.9, 0.1], [0.2, 0.8]]),
                      np.array([[-1.0, 0.0], [1.5, 1.0]]), np.array([[0.5, 1.0], [0.4, 0.8]]))
    worst_drop = 0.0
    acc = []
    for seed in range(5):
        s, X = sample_hmm(two, 300, seed=seed)
        for k in (2, 3):
            fit = fit_baum_welch(X, k, seed=seed, restarts=5)
            for tr in fit.traces:
                if tr.size > 1:
                    worst_drop = min(worst_drop, float(np.min(np.diff(tr))))
            if k == 2:
                acc.append(best_permutation_accuracy(s, viterbi_path(fit.model, X), 2))
    rng = np.random.default_rng(9)
    vit_bad = 0
    for i in range(200):
        T = 1 + i % 8
        A = rng.dirichlet(np.ones(2), 2)
        pi = rng.dirichlet(np.ones(2))
        m = RegimeModel(pi, A, rng.normal(size=(2, 2)), rng.uniform(0.2, 2.0, (2, 2)))
        X = rng.normal(size=(T, 2))
        ref, _ = viterbi_enumerate(np.log(pi), np.log(A), m.log_emission(X))
        vit_bad += not np.array_equal(viterbi_path(m, X), ref)
    ok = worst_drop >= -1e-8 and vit_bad == 0 and min(acc) >= 0.9
    record(9, ok, f"largest log-lik decrease {-worst_drop:.1e} over 50 EM runs; Viterbi mismatches {vit_bad}/200; "
                  f"recovery accuracy min {min(acc):.3f} over 5 datasets")


# --------------------------------------------------------------------------- hydro


def test_criterion_10_hydro():
    worst_mean = 0.0
    for seed in range(20):
        h = generate_hydro(6, seed)
        z = seasonal_zscore(ReservoirSeries(h.week_start, h.level)).z
        woy = week_of_year(h.week_start)
        worst_mean = max(worst_mean, max(abs(z[woy == w].mean()) for w in np.unique(woy)))
    cover = lag_hits = 0
    for seed in range(200):
        h = generate_hydro(6, seed, lag=4)
        zs = seasonal_zscore(ReservoirSeries(h.week_start, h.level))
        rng = np.random.default_rng(seed + 1000)
        rev = 10_000 + 2_500 * zs.z + rng.normal(0, 3_000, zs.z.size)
        r = ols_fit(zs.z, rev)
        cover += abs(r.slope - 2_500) <= 2 * r.slope_se
        lag_hits += abs(leadlag_scan(zs, h.srl_dn_price).peak_lag - 4) <= 1
    bounds = list(classify_regime(np.array([LOW_Z, HIGH_Z])))
    ok = worst_mean <= 1e-9 and cover >= 190 and lag_hits >= 180 and bounds == ["MEDIUM", "MEDIUM"]
    record(10, ok, f"max |group mean z| {worst_mean:.1e}; slope within 2 SE {cover}/200; "
                   f"lead-lag within 1 week {lag_hits}/200; boundaries {bounds}")


# --------------------------------------------------------------------------- rainflow


def _counts(cycles):
    out: dict[float, float] = {}
    for d, w in cycles:
        k = round(d, 12)
        out[k] = out.get(k, 0.0) + w
    return out


def test_criterion_11_rainflow():
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(500):
        x = rng.random(int(rng.integers(2, 60)))
        if rng.random() < 0.3:
            x = np.round(x, 1)
        bad += _counts(rainflow_cycles(x)) != rainflow_astm(x)
    one = rainflow_cycles(np.array([0.0, 1.0, 0.0]))
    cost = degradation_cost([(1.0, 1.0)], BatterySpec())
    ok = bad == 0 and one == [(1.0, 1.0)] and abs(cost - 40.0) <= 1e-12
    record(11, ok, f"oracle mismatches {bad}/500; 0->1->0 gives {one}; full-cycle cost {cost} EUR")


# --------------------------------------------------------------------------- determinism and leakage


def _digest(out):
    return {p.relative_to(out).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"}


LEAK_DS = generate_market(21, 5)
LEAK_BAD: list[int] = []


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(8 * 96, 20 * 96 - 16), st.integers(1, 96))
def _leak_property(first, length):
    slot = np.timedelta64(900, "s")
    lead = LEAK_DS.rules.xbid_lead
    targets = Timeline(LEAK_DS.xbid.timeline.start + first * slot, slot, length)
    issue = targets.start - lead
    view = MarketView.from_dataset(LEAK_DS)
    bad = view.poisoned("xbid", issue).poisoned("da", issue)

    def suite(v):
        ar = LearnedARForecaster(v, lead=lead)
        da = DAAnchorForecaster(v)
        return [PersistenceForecaster(v), da, ar, HybridForecaster(ar, da)]

    for clean, dirty in zip(suite(view), suite(bad)):
        try:
            a = clean.forecast(issue, targets)
        except ForecastUnavailable:
            try:
                dirty.forecast(issue, targets)
                LEAK_BAD.append(first)
            except ForecastUnavailable:
                pass
            continue
        if not np.array_equal(a, dirty.forecast(issue, targets)):
            LEAK_BAD.append(first)


def test_criterion_12_determinism_and_leakage(tmp_path):
    differing = []
    for cmd, text in sorted(SMALL.items()):
        cfg = tmp_path / f"{cmd}.ini"
        cfg.write_text(text)
        runs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{cmd}-{tag}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert main([cmd, "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
            m = json.loads((out / "manifest.json").read_text())
            m.pop("wall_clock_s")
            runs.append((_digest(out), m))
        if runs[0] != runs[1]:
            differing.append(cmd)
    LEAK_BAD.clear()
    _leak_property()
    ok = not differing and not LEAK_BAD
    record(12, ok, f"{len(SMALL)} commands rerun, differing: {differing or 'none'}; "
                   f"poisoned-future mismatches {len(LEAK_BAD)} over 200 issue times x 4 forecasters")
