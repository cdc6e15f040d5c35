import dataclasses
import math

import numpy as np
import pytest

from bessmm.battery import BatterySpec
from bessmm.evaluation.ablation import CHAIN, SIDE_ROW, AblationConfig, naive_spread_actions, run_ablation
from bessmm.evaluation.benchmark import DailyScores, default_days, run_benchmark, write_daily_scores
from bessmm.evaluation.robustness import volatility_split
from bessmm.market_data import MarketTag, PriceSeries
from bessmm.system import SimConfig
from bessmm.synthetic import generate_market
from bessmm.tables import read_table

SPEC = BatterySpec()
DS = generate_market(28, 12)
FAST = SimConfig(SPEC, n_scenarios=5)


def test_naive_spread_example():
    p = np.r_[np.full(6, 10.0), np.full(12, 50.0), np.full(6, 90.0)]
    acts = naive_spread_actions(p, SPEC, hours=6)
    assert np.all(acts[:6] <= 0) and np.all(acts[18:] >= 0)
    assert np.all(acts[6:18] == 0)
    # one MWh-equivalent full charge then a full discharge
    assert -acts[:6].sum() * SPEC.eta_c == pytest.approx(SPEC.e_max)
    assert acts[18:].sum() / SPEC.eta_d == pytest.approx(SPEC.e_max)


def test_naive_spread_respects_order():
    # dear hours before cheap hours: nothing stored to sell
    p = np.r_[np.full(6, 90.0), np.full(12, 50.0), np.full(6, 10.0)]
    acts = naive_spread_actions(p, SPEC, hours=6)
    assert np.all(acts[:6] == 0)


@pytest.fixture(scope="module")
def oracle_ablation():
    cfg = AblationConfig(sim=FAST, base_forecaster="oracle", forecaster="da_anchor", weeks=(2, 3))
    return run_ablation(DS, cfg)


def test_dp_only_with_oracle_forecast_captures_everything(oracle_ablation):
    assert oracle_ablation.row("dp_only").vcr == pytest.approx(1.0, abs=1e-9)
    assert oracle_ablation.row("full_oracle").vcr == 1.0


def test_ablation_layout(oracle_ablation, tmp_path):
    names = [r.name for r in oracle_ablation.rows]
    assert names == list(CHAIN) + [SIDE_ROW]
    assert oracle_ablation.row(SIDE_ROW).flagged
    # regime rows cannot run before the HMM training span ends
    assert oracle_ablation.row("l1_regime").flagged and oracle_ablation.row("full_system").flagged
    r = oracle_ablation.row("dp_only")
    assert r.delta_vcr == pytest.approx(r.vcr - oracle_ablation.row("naive_da_spread").vcr)
    rows = read_table(oracle_ablation.to_csv(tmp_path / "a.csv"))
    assert [x["configuration"] for x in rows] == names


def test_flat_prices_flag_energy_rows():
    tl = DS.timeline
    ds = dataclasses.replace(DS, xbid=PriceSeries(tl, np.full(tl.length, 50.0), MarketTag.XBID),
                             da=PriceSeries(tl, np.full(tl.length, 50.0), MarketTag.DA))
    res = run_ablation(ds, AblationConfig(sim=FAST, base_forecaster="da_anchor", weeks=(2,)))
    for name in ("naive_da_spread", "dp_only"):
        row = res.row(name)
        assert row.flagged and math.isnan(row.vcr) and row.n_excluded == 7


def test_ablation_needs_four_weeks():
    with pytest.raises(ValueError):
        run_ablation(DS.subset_days(0, 21))


@pytest.fixture(scope="module")
def bench():
    ds = generate_market(70, 4)
    return ds, run_benchmark(ds, days=default_days(ds))


def test_benchmark_oracle_and_bounds(bench):
    _, res = bench
    rep = {r.name: r for r in res.reports}
    assert rep["oracle"].vcr == pytest.approx(1.0, abs=1e-9)
    assert rep["oracle"].mae == 0.0 and rep["oracle"].tau == 1.0
    for r in rep.values():
        assert r.vcr <= 1.0 + 1e-9


def test_benchmark_daily_csv(bench, tmp_path):
    _, res = bench
    rows = read_table(write_daily_scores(tmp_path / "d.csv", res))
    assert len(rows) == 5 * len(res.scores[0].days)
    assert list(rows[0]) == ["forecaster", "day", "mae", "rmse", "tau", "revenue_eur", "oracle_eur"]


def test_volatility_split(bench, tmp_path):
    ds, res = bench
    split = volatility_split(res.scores, ds.xbid_days())
    assert split.high_weeks.size + split.low_weeks.size == len({d // 7 for d in res.scores[0].days})
    assert split.row("oracle").vcr_low == pytest.approx(1.0) and split.row("oracle").vcr_high == pytest.approx(1.0)
    rows = read_table(split.to_csv(tmp_path / "v.csv"))
    assert len(rows) == 5


def test_volatility_split_needs_eight_weeks():
    d = np.arange(14)
    s = DailyScores("x", d, *(np.ones(14) for _ in range(5)))
    with pytest.raises(ValueError):
        volatility_split([s], np.ones((14, 96)))
