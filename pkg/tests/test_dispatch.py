import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessmm.battery import BatterySpec, apply_action
from bessmm.dispatch import (
    DispatchError,
    DispatchProblem,
    RollConfig,
    SkippedDay,
    rolling_intrinsic,
    solve_daily_mpc,
    solve_dp,
)
from bessmm.forecast import Forecaster
from bessmm.market_data import PriceSeries, Timeline
from bessmm.tables import read_table

from oracles import dp_enumerate

UNIT = BatterySpec(p_max=1, e_max=1, eta_c=1, eta_d=1, deg_cost=0)
DAY = Timeline(np.datetime64("2024-03-05T23:00:00"), np.timedelta64(900, "s"), 96)


class Fixed(Forecaster):
    """Returns a precomputed day vector for any issue time."""

    def __init__(self, values, timeline=DAY):
        self.values = np.asarray(values, float)
        self.timeline = timeline

    def forecast(self, issue_time, targets):
        i = self.timeline.index_of(targets.start)
        return self.values[i:i + targets.length]


def test_four_slot_example():
    s = solve_dp(DispatchProblem(np.array([10.0, 50, 20, 60]), UNIT, action_levels=3, soc_levels=11))
    assert s.revenue == pytest.approx(20.0) and s.planned_value == pytest.approx(20.0)
    np.testing.assert_array_equal(s.actions, [-1, 1, -1, 1])


def test_constant_prices_with_losses_stay_idle():
    s = solve_dp(DispatchProblem(np.full(24, 40.0), BatterySpec(deg_cost=0), soc_init=0.0))
    assert np.all(s.actions == 0) and s.revenue == 0


def test_degenerate_band_and_errors():
    s = solve_dp(DispatchProblem(np.arange(8.0), soc_init=0.4, soc_min=0.4, soc_max=0.4))
    assert np.all(s.actions == 0) and s.revenue == 0
    with pytest.raises(DispatchError):
        DispatchProblem(np.arange(8.0), soc_min=0.6, soc_max=0.4, soc_init=0.5)
    with pytest.raises(DispatchError):
        DispatchProblem(np.full(8, np.nan))


# transitions land on grid points, so the interpolated DP is exact
_ALIGNED = [
    # (eta_c, eta_d, unit move, soc levels)
    (1.0, 1.0, 0.25, 21),
    (0.8, 1.0, 0.25, 21),
    (1.0, 0.8, 0.2, 26),
    (1.0, 1.0, 0.1, 11),
]


def random_instance(rng):
    eta_c, eta_d, u, n_soc = _ALIGNED[rng.integers(len(_ALIGNED))]
    T = int(rng.integers(1, 9))
    dt = 0.25
    e_max = 1.0
    p_max = u * e_max / dt
    if eta_d < 1:
        p_max = u * eta_d * e_max / dt
    spec = BatterySpec(p_max, e_max, eta_c, eta_d, float(rng.choice([0.0, rng.uniform(0, 5)])))
    prices = np.round(rng.uniform(-20, 100, T), 2)
    step = 1.0 / (n_soc - 1)
    soc0 = step * int(rng.integers(0, n_soc))
    return prices, spec, dt, soc0, n_soc


@pytest.mark.parametrize("clip", [True, False])
def test_brute_force_equivalence_random(clip):
    rng = np.random.default_rng(11)
    for _ in range(150):
        prices, spec, dt, soc0, n_soc = random_instance(rng)
        prob = DispatchProblem(prices, spec, soc0, 0.0, 1.0, dt, 3, n_soc, clip_to_bounds=clip)
        s = solve_dp(prob)
        best, _ = dp_enumerate(prices, dt, spec.p_max, spec.e_max, spec.eta_c, spec.eta_d, spec.deg_cost,
                               soc0, 0.0, 1.0, clip=clip)
        assert s.planned_value == pytest.approx(best, abs=1e-9)
        assert s.value_table_start == pytest.approx(best, abs=1e-9)


def test_terminal_band_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(40):
        prices = np.round(rng.uniform(0, 80, 6), 1)
        prob = DispatchProblem(prices, UNIT, 0.5, 0.0, 1.0, 0.25, 3, 21, terminal=(0.45, 0.55))
        s = solve_dp(prob)
        best, _ = dp_enumerate(prices, 0.25, 1, 1, 1, 1, 0, 0.5, 0, 1, terminal=(0.45, 0.55))
        assert s.planned_value == pytest.approx(best, abs=1e-9)
        assert 0.45 - 1e-9 <= s.trajectory.soc[-1] <= 0.55 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 300), min_size=4, max_size=48), st.floats(0.0, 0.4), st.floats(0.6, 1.0),
       st.floats(0, 1))
def test_bound_safety_and_physics(prices, lo, hi, frac):
    spec = BatterySpec()
    soc0 = lo + frac * (hi - lo)
    s = solve_dp(DispatchProblem(np.array(prices), spec, soc0, lo, hi))
    soc = s.trajectory.soc
    assert np.all(soc >= lo - 1e-9) and np.all(soc <= hi + 1e-9)
    assert np.all(np.abs(s.actions) <= spec.p_max + 1e-9)
    for k, a in enumerate(s.actions):
        assert apply_action(soc[k], a, 0.25, spec, lo, hi) == pytest.approx(soc[k + 1], abs=1e-9)


def test_grid_refinement_converges():
    rng = np.random.default_rng(5)
    for _ in range(10):
        prices = 50 + 30 * np.sin(np.linspace(0, 4 * np.pi, 96)) + rng.normal(0, 8, 96)
        a = solve_dp(DispatchProblem(prices, soc_levels=101)).planned_value
        b = solve_dp(DispatchProblem(prices, soc_levels=201)).planned_value
        assert abs(a - b) <= 0.005 * abs(b)


def test_ordinal_invariance_lossless_and_scaling():
    rng = np.random.default_rng(8)
    spec = BatterySpec(deg_cost=0, eta_c=1, eta_d=1)
    base = rng.uniform(10, 90, 96)
    ref = solve_dp(DispatchProblem(base, spec)).actions
    for _ in range(5):
        k = rng.uniform(0.5, 3)
        warped = np.exp(base / 40 * k) + rng.uniform(-5, 5)
        np.testing.assert_array_equal(solve_dp(DispatchProblem(warped, spec)).actions, ref)
    lossy = BatterySpec(deg_cost=0)
    ref = solve_dp(DispatchProblem(base, lossy)).actions
    for c in (0.1, 2.5, 17.0):
        np.testing.assert_array_equal(solve_dp(DispatchProblem(base * c, lossy)).actions, ref)


def test_schedule_csv(tmp_path):
    s = solve_dp(DispatchProblem(PriceSeries.from_values(DAY, np.linspace(0, 95, 96))))
    s.to_csv(tmp_path / "s.csv")
    rows = read_table(tmp_path / "s.csv")
    assert len(rows) == 96 and list(rows[0]) == ["timestamp", "action_mw", "soc", "price_used", "realized_price",
                                                  "revenue_eur"]
    assert rows[0]["timestamp"].endswith("+00:00")


def day_prices(seed=0):
    rng = np.random.default_rng(seed)
    return 60 + 40 * np.sin(np.linspace(0, 2 * np.pi, 96) + 1) + rng.normal(0, 10, 96)


def test_rolling_oracle_equals_solve_dp():
    p = day_prices()
    real = PriceSeries.from_values(DAY, p)
    tmpl = DispatchProblem(p)
    r = rolling_intrinsic(Fixed(p), real, RollConfig(), tmpl)
    s = solve_dp(tmpl)
    assert r.revenue == pytest.approx(s.revenue, rel=1e-9)
    np.testing.assert_array_equal(r.actions, s.actions)


def test_rolling_identical_day_persistence_matches_oracle():
    p = day_prices(3)
    real = PriceSeries.from_values(DAY, p)
    a = rolling_intrinsic(Fixed(p.copy()), real, RollConfig(), DispatchProblem(p))
    b = rolling_intrinsic(Fixed(p), real, RollConfig(), DispatchProblem(p))
    assert a.revenue == b.revenue


def test_inverted_day_loses_money():
    tl = Timeline(DAY.start, np.timedelta64(900, "s"), 8)
    y = np.array([10.0, 80, 10, 80, 10, 80, 10, 80])
    today = y[::-1].copy()
    real = PriceSeries.from_values(tl, today)
    r = rolling_intrinsic(Fixed(y, tl), real, RollConfig(), DispatchProblem(today, UNIT, action_levels=3,
                                                                          soc_levels=21))
    best, _ = dp_enumerate(today, 0.25, 1, 1, 1, 1, 0, 0.0, 0, 1)
    assert r.revenue <= 0 < best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_oracle_dominance(seed):
    rng = np.random.default_rng(seed)
    p = day_prices(seed)
    f = p + rng.normal(0, 25, 96)
    real = PriceSeries.from_values(DAY, p)
    tmpl = DispatchProblem(p, soc_levels=51, action_levels=11)
    a = rolling_intrinsic(Fixed(f), real, RollConfig(), tmpl)
    o = rolling_intrinsic(Fixed(p), real, RollConfig(), tmpl)
    assert a.net_revenue <= o.net_revenue + 1e-6 * max(1.0, abs(o.net_revenue))


def test_rolling_skips_day_on_forecaster_failure():
    class Broken(Forecaster):
        def forecast(self, issue_time, targets):
            raise RuntimeError("feed down")

    p = day_prices()
    with pytest.raises(SkippedDay):
        rolling_intrinsic(Broken(), PriceSeries.from_values(DAY, p), RollConfig(), DispatchProblem(p))


def test_roll_config_validation():
    with pytest.raises(DispatchError):
        RollConfig(gate_lead_min=45)
    with pytest.raises(DispatchError):
        RollConfig(roll_interval_min=7)


def test_mpc_lambda_zero_and_one():
    rng = np.random.default_rng(1)
    da = np.concatenate([np.full(6, 20.0), np.full(11, 50.0), np.full(4, 90.0), np.full(3, 55.0)])
    da = da + rng.uniform(0, 1, 24)
    spec = BatterySpec()
    single = solve_dp(DispatchProblem(da, spec, 0.0, dt=1.0))
    fut = [rng.uniform(0, 200, 24) for _ in range(4)]
    s0, _ = solve_daily_mpc(da, fut, spec, 0.0, discount=0.0)
    np.testing.assert_array_equal(s0.actions, single.actions)
    s1, soc_T = solve_daily_mpc(da, [da] * 4, spec, 0.0, discount=1.0)
    np.testing.assert_array_equal(s1.actions, single.actions)
    assert soc_T == pytest.approx(single.trajectory.soc[-1])


def test_mpc_respects_allocation_bounds_and_truncates():
    rng = np.random.default_rng(4)
    da = rng.uniform(0, 120, 24)
    with pytest.warns(UserWarning, match="horizon"):
        s, _ = solve_daily_mpc(da, [rng.uniform(0, 120, 24), None], BatterySpec(), 0.5, soc_min=0.25,
                               soc_max=0.9, p_max=6.0)
    assert s.trajectory.soc.min() >= 0.25 - 1e-9 and s.trajectory.soc.max() <= 0.9 + 1e-9
    assert np.abs(s.actions).max() <= 6.0 + 1e-9
