import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessmm.allocation import block_distributions
from bessmm.regime import (
    RegimeError,
    RegimeModel,
    best_permutation_accuracy,
    compute_features,
    fit_baum_welch,
    log_likelihood,
    optimize_bid_policy,
    sample_hmm,
    viterbi_path,
    walk_forward,
    week_revenue,
    write_regime_report,
)
from bessmm.synthetic import generate_market
from bessmm.tables import read_table

from oracles import viterbi_enumerate

TWO = RegimeModel(np.array([0.6, 0.4]), np.array([[0.9, 0.1], [0.2, 0.8]]),
                  np.array([[-1.0, 0.0], [1.5, 1.0]]), np.array([[0.5, 1.0], [0.4, 0.8]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_viterbi_matches_enumeration(T, seed):
    rng = np.random.default_rng(seed)
    A = rng.dirichlet(np.ones(2), 2)
    pi = rng.dirichlet(np.ones(2))
    m = RegimeModel(pi, A, rng.normal(size=(2, 2)), rng.uniform(0.2, 2.0, (2, 2)))
    X = rng.normal(size=(T, 2))
    path = viterbi_path(m, X)
    ref, _ = viterbi_enumerate(np.log(pi), np.log(A), m.log_emission(X))
    np.testing.assert_array_equal(path, ref)


def test_em_loglik_nondecreasing_every_restart():
    _, X = sample_hmm(TWO, 200, seed=1)
    fit = fit_baum_welch(X, 2, seed=0, restarts=10)
    for tr in fit.traces:
        assert np.all(np.diff(tr) >= -1e-8)
    assert fit.loglik == pytest.approx(log_likelihood(fit.model, X))


def test_two_state_recovery():
    s, X = sample_hmm(TWO, 300, seed=4)
    fit = fit_baum_welch(X, 2, seed=0)
    assert best_permutation_accuracy(s, viterbi_path(fit.model, X), 2) >= 0.9


def test_states_sorted_by_first_feature_mean():
    _, X = sample_hmm(TWO, 200, seed=2)
    fit = fit_baum_welch(X, 2, seed=3)
    assert fit.model.means[0, 0] <= fit.model.means[1, 0]


def test_fit_is_seeded():
    _, X = sample_hmm(TWO, 120, seed=5)
    a = fit_baum_welch(X, 2, seed=7, restarts=3)
    b = fit_baum_welch(X, 2, seed=7, restarts=3)
    np.testing.assert_array_equal(a.model.A, b.model.A)


def test_model_validation():
    with pytest.raises(RegimeError):
        RegimeModel(np.array([0.5, 0.6]), TWO.A, TWO.means, TWO.variances)
    with pytest.raises(RegimeError):
        fit_baum_welch(np.zeros((5, 2)), 2)


def test_variance_floor_warns_on_constant_feature():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=60), np.zeros(60)])
    with pytest.warns(UserWarning, match="floored"):
        fit_baum_welch(X, 2, seed=0, restarts=2)


def test_feature_standardisation_uses_fit_span_only():
    fcr = np.arange(30.0)
    acc = np.linspace(0, 1, 30)
    mask = np.arange(30) < 15
    a = compute_features(fcr, acc, mask)
    b = compute_features(np.r_[fcr[:15], fcr[15:] * 100], acc, mask)
    np.testing.assert_array_equal(a.values[a.weeks < 15], b.values[b.weeks < 15])


def test_policy_beats_every_fixed_percentile_in_sample():
    rng = np.random.default_rng(6)
    weeks = 30
    blocks = rng.gamma(4.0, 5.0, (weeks + 10, 42))
    states = rng.integers(0, 3, weeks)
    blocks[10:][states == 2] *= 2.0
    dists = [block_distributions(blocks[w:w + 10]) for w in range(weeks)]
    clearing = blocks[10:]
    pol = optimize_bid_policy(states, clearing, dists, 3)
    total = sum(week_revenue(clearing[w], dists[w], pol.percentiles[states[w]]) for w in range(weeks))
    for q in range(20, 61, 5):
        fixed = sum(week_revenue(clearing[w], dists[w], q) for w in range(weeks))
        assert total >= fixed - 1e-9


def test_unseen_state_falls_back():
    blocks = np.ones((3, 42))
    dists = [block_distributions(blocks[:1])] * 2
    with pytest.warns(UserWarning):
        pol = optimize_bid_policy(np.array([0, 0]), blocks[1:], dists, 2)
    assert pol.percentiles[1] == 40.0


def test_walk_forward_on_synthetic_market(tmp_path):
    ds = generate_market(26 * 7, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = walk_forward(ds, 20, 4, seed=0, restarts=3)
    assert sorted(run.states) == list(range(20, 26))
    assert set(run.policy.as_mapping()) == {0, 1, 2, 3}
    rows = read_table(write_regime_report(tmp_path / "r.csv", ds, run))
    assert len(rows) > 0
    with pytest.raises(RegimeError):
        walk_forward(ds, 10, 4)
