import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessmm.evaluation.metrics import (
    EvalReport,
    cvar,
    mae,
    ranking_inconsistency,
    rmse,
    summarize_vcr,
    vcr,
    write_eval_table,
)
from bessmm.hydro import ols_fit, spearman
from bessmm.market_data import BidRecord, vwa_price
from bessmm.ranking import kendall_tau
from bessmm.tables import read_table

from oracles import average_ranks, kendall_pairs


def pearson_loop(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    return sab / math.sqrt(saa * sbb)


def test_kendall_matches_pair_count_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        f = rng.integers(0, 8, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        y = rng.integers(0, 8, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        assert kendall_tau(f, y) == kendall_pairs(f, y)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=40))
def test_kendall_property(pairs):
    f = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    t = kendall_tau(f, y)
    assert t == kendall_pairs(f, y)
    assert kendall_tau(y, f) == t
    assert kendall_tau(-f, y) == -t


def test_spearman_matches_rank_pearson():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(5, 50))
        x = np.round(rng.normal(size=n), 1)
        y = x + rng.normal(size=n)
        ref = pearson_loop(list(average_ranks(x)), list(average_ranks(y)))
        assert spearman(x, y).rho == pytest.approx(ref, abs=1e-9)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(5, 80))
        x = rng.normal(size=n)
        y = 3.0 - 2.0 * x + rng.normal(size=n)
        X = np.column_stack([np.ones(n), x])
        b = np.linalg.solve(X.T @ X, X.T @ y)
        r = ols_fit(x, y)
        assert r.intercept == pytest.approx(b[0], abs=1e-9)
        assert r.slope == pytest.approx(b[1], abs=1e-9)
        resid = y - X @ b
        se = math.sqrt(resid @ resid / (n - 2) * np.linalg.inv(X.T @ X)[1, 1])
        assert r.slope_se == pytest.approx(se, abs=1e-9)


def test_cvar_matches_sorted_tail():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(20, 200))
        r = rng.normal(size=n)
        k = math.ceil(0.05 * n)
        ref = sum(sorted(r.tolist())[:k]) / k
        assert cvar(r) == pytest.approx(ref, abs=1e-9)


def test_cvar_small_sample_warns():
    with pytest.warns(UserWarning):
        assert cvar([3.0, 1.0, 2.0]) == 1.0
    with pytest.raises(ValueError):
        cvar([])


def test_vwa_matches_loop():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        p = rng.uniform(-50, 300, n)
        v = rng.uniform(0.1, 10, n)
        bids = [BidRecord(float(a), float(b)) for a, b in zip(p, v)]
        num = 0.0
        den = 0.0
        for a, b in zip(p, v):
            num += a * b
            den += b
        assert vwa_price(bids) == pytest.approx(num / den, abs=1e-9)


def test_error_metrics():
    assert mae([1, 2, 3], [1, 2, 5]) == pytest.approx(2 / 3)
    assert rmse([1, 2, 3], [1, 2, 5]) == pytest.approx(math.sqrt(4 / 3))


def test_vcr_and_summary():
    assert vcr(5.0, 10.0) == 0.5
    assert math.isnan(vcr(5.0, 0.0))
    s = summarize_vcr([5, 1, 2], [10, 0, 10])
    assert s.ratio == pytest.approx(7 / 20)
    assert s.n_days == 2 and s.n_excluded == 1
    assert summarize_vcr([12], [10]).clamped == 1.0


def test_ranking_inconsistency_examples():
    agree = [EvalReport("a", 1, 1, 0.9, 0.9, 1), EvalReport("b", 2, 2, 0.5, 0.5, 1), EvalReport("c", 3, 3, 0, 0.1, 1)]
    assert ranking_inconsistency(agree) == 0.0
    flip = [EvalReport("a", 1, 1, 0.9, 0.1, 1), EvalReport("b", 2, 2, 0.5, 0.9, 1)]
    assert ranking_inconsistency(flip) == 1.0


def test_eval_table_columns(tmp_path):
    reps = [EvalReport("a", 1, 1, 0.9, 0.9, 3), EvalReport("b", 2, 2, 0.5, 0.5, 3)]
    rows = read_table(write_eval_table(tmp_path / "t.csv", reps))
    assert rows[0]["forecaster"] == "a" and rows[0]["vcr_rank"] == "1"
    assert float(rows[1]["ranking_inconsistency"]) == 0.0
