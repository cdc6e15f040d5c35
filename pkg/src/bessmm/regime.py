"""Weekly market regimes from FCR price features, and a per-regime bid percentile.

A diagonal-Gaussian hidden Markov model is fitted by Baum-Welch and decoded
with Viterbi. The bid policy picks, for every regime, the percentile that
earned the most capacity revenue on that regime's training weeks.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocation import BLOCK_HOURS, ClearingDistribution, block_distributions
from .market_data import PriceSeries, format_utc
from .tables import write_table

WINDOW = 4
LABELS = ("low-vol", "normal", "post-crisis", "crisis")
PERCENTILE_GRID = tuple(range(20, 61, 5))
VAR_FLOOR = 1e-6


class RegimeError(ValueError):
    pass


# --------------------------------------------------------------------------- features


@dataclass(frozen=True, eq=False)
class RegimeFeatures:
    """Raw weekly features (rolling mean, rolling sd, week-over-week change,
    aFRR acceptance) and the standardisation fitted on them."""

    raw: np.ndarray
    weeks: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return (self.raw - self.mean) / self.scale

    def restandardize(self, other: "RegimeFeatures") -> "RegimeFeatures":
        """Same raw features, standardised with ``other``'s stored parameters."""
        return RegimeFeatures(self.raw, self.weeks, other.mean, other.scale)

    def subset(self, mask) -> "RegimeFeatures":
        return RegimeFeatures(self.raw[mask], self.weeks[mask], self.mean, self.scale)


def raw_features(fcr_weekly, afrr_acceptance) -> np.ndarray:
    """(weeks, 4) features before warm-up removal; the first rows hold NaN."""
    p = np.asarray(fcr_weekly.values if isinstance(fcr_weekly, PriceSeries) else fcr_weekly, dtype=float)
    acc = np.asarray(afrr_acceptance, dtype=float)
    if p.shape != acc.shape or p.ndim != 1:
        raise RegimeError("FCR prices and aFRR acceptance must be 1-d and aligned")
    n = p.size
    out = np.full((n, 4), np.nan)
    for t in range(WINDOW - 1, n):
        w = p[t - WINDOW + 1:t + 1]
        out[t, 0] = w.mean()
        out[t, 1] = w.std()
    out[1:, 2] = np.diff(p)
    out[:, 3] = acc
    return out


def compute_features(fcr_weekly, afrr_acceptance, fit_mask=None) -> RegimeFeatures:
    """Features from week 4 on, standardised over ``fit_mask`` (default: all kept weeks)."""
    raw = raw_features(fcr_weekly, afrr_acceptance)
    if raw.shape[0] < WINDOW + 1:
        raise RegimeError(f"need at least {WINDOW + 1} weeks of history")
    weeks = np.arange(WINDOW, raw.shape[0])
    raw = raw[WINDOW:]
    if not np.all(np.isfinite(raw)):
        raise RegimeError("features contain gaps after warm-up")
    fit = raw if fit_mask is None else raw[np.asarray(fit_mask)[WINDOW:]]
    if fit.shape[0] == 0:
        raise RegimeError("empty standardisation span")
    mean = fit.mean(axis=0)
    scale = fit.std(axis=0)
    scale[scale == 0] = 1.0
    return RegimeFeatures(raw, weeks, mean, scale)


def afrr_acceptance(afrr_blocks: Sequence[np.ndarray], window: int = 52, percentile: float = 40.0) -> np.ndarray:
    """Weekly share of aFRR blocks whose clearing price reached a trailing-window
    percentile bid. ``afrr_blocks`` are (weeks, 42) arrays (up and down). Week 0 has
    no history and is NaN."""
    n = afrr_blocks[0].shape[0]
    out = np.full(n, np.nan)
    for t in range(1, n):
        first = max(0, t - window)
        hits = total = 0
        for h in afrr_blocks:
            bids = np.percentile(h[first:t], percentile, axis=0)
            hits += int(np.sum(h[t] >= bids))
            total += bids.size
        out[t] = hits / total
    return out


def dataset_features(ds, window: int = 52) -> tuple[np.ndarray, np.ndarray]:
    """(weekly mean FCR price, weekly aFRR acceptance) of a market dataset."""
    fcr = ds.capacity_blocks("fcr").mean(axis=1)
    acc = afrr_acceptance([ds.capacity_blocks("afrr_up"), ds.capacity_blocks("afrr_dn")], window)
    return fcr, acc


# --------------------------------------------------------------------------- HMM


@dataclass(frozen=True, eq=False)
class RegimeModel:
    pi: np.ndarray
    A: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        k = self.pi.size
        if self.A.shape != (k, k) or self.means.shape[0] != k or self.variances.shape != self.means.shape:
            raise RegimeError("inconsistent model shapes")
        if not np.allclose(self.A.sum(axis=1), 1.0, atol=1e-9) or not math.isclose(self.pi.sum(), 1.0,
                                                                                   abs_tol=1e-9):
            raise RegimeError("pi and the rows of A must sum to 1")
        if np.any(self.variances < VAR_FLOOR * (1 - 1e-9)):
            raise RegimeError("variances below the floor")

    @property
    def n_states(self) -> int:
        return self.pi.size

    def log_emission(self, X: np.ndarray) -> np.ndarray:
        """(T, K) log densities of diagonal Gaussians."""
        X = np.atleast_2d(X)
        d = X[:, None, :] - self.means[None, :, :]
        return -0.5 * np.sum(np.log(2 * np.pi * self.variances)[None] + d * d / self.variances[None], axis=2)

    def dump(self) -> str:
        lines = [f"n_states = {self.n_states}", "pi = " + " ".join(repr(float(x)) for x in self.pi)]
        for i in range(self.n_states):
            lines.append(f"A[{i}] = " + " ".join(repr(float(x)) for x in self.A[i]))
        for i in range(self.n_states):
            lines.append(f"mean[{i}] = " + " ".join(repr(float(x)) for x in self.means[i]))
            lines.append(f"var[{i}] = " + " ".join(repr(float(x)) for x in self.variances[i]))
        return "\n".join(lines) + "\n"


def _forward_backward(model: RegimeModel, X: np.ndarray):
    """Scaled recursions. Returns (log-likelihood, gamma (T,K), xi_sum (K,K))."""
    logb = model.log_emission(X)
    shift = logb.max(axis=1, keepdims=True)
    B = np.exp(logb - shift)
    T, K = B.shape
    alpha = np.empty((T, K))
    c = np.empty(T)
    a = model.pi * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ model.A) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.ones((T, K))
    xi = np.zeros((K, K))
    for t in range(T - 2, -1, -1):
        nb = B[t + 1] * beta[t + 1]
        beta[t] = (model.A @ nb) / c[t + 1]
        xi += model.A * np.outer(alpha[t], nb) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    ll = float(np.sum(np.log(c)) + shift.sum())
    return ll, gamma, xi


def log_likelihood(model: RegimeModel, X) -> float:
    return _forward_backward(model, np.atleast_2d(np.asarray(X, float)))[0]


def _m_step(X, gamma, xi, floor):
    pi = gamma[0] / gamma[0].sum()
    rows = xi.sum(axis=1, keepdims=True)
    # a state visited only at the last step has no outgoing transitions to count
    A = np.where(rows > 0, xi / np.where(rows > 0, rows, 1.0), 1.0 / xi.shape[1])
    w = gamma.sum(axis=0)
    w_safe = np.where(w > 0, w, 1.0)
    means = (gamma.T @ X) / w_safe[:, None]
    var = np.einsum("tk,tkd->kd", gamma, (X[:, None, :] - means[None]) ** 2) / w_safe[:, None]
    floored = bool(np.any(var < floor))
    var = np.maximum(var, floor)
    return RegimeModel(pi, A, means, var), floored


@dataclass(frozen=True, eq=False)
class FitResult:
    model: RegimeModel
    loglik: float
    trace: np.ndarray
    traces: tuple[np.ndarray, ...]
    restart: int


def _initial_model(X, k, rng) -> RegimeModel:
    T, D = X.shape
    idx = rng.choice(T, size=k, replace=T < k)
    means = X[idx] + 0.1 * rng.standard_normal((k, D)) * (X.std(axis=0) + 1e-3)
    var = np.tile(np.maximum(X.var(axis=0), VAR_FLOOR), (k, 1))
    A = np.full((k, k), 0.3 / max(k - 1, 1))
    np.fill_diagonal(A, 0.7 if k > 1 else 1.0)
    return RegimeModel(np.full(k, 1.0 / k), A, means, var)


def _canonical(model: RegimeModel) -> RegimeModel:
    """Reorder states by the mean of the first feature (ascending)."""
    o = np.argsort(model.means[:, 0], kind="mergesort")
    return RegimeModel(model.pi[o], model.A[np.ix_(o, o)], model.means[o], model.variances[o])


def fit_baum_welch(features, n_states: int = 4, seed: int = 0, max_iter: int = 200, tol: float = 1e-6,
                   restarts: int = 10, var_floor: float = VAR_FLOOR) -> FitResult:
    """EM from ``restarts`` seeded starts; the best final log-likelihood wins.
    States are returned sorted by the mean of the first feature."""
    X = np.atleast_2d(np.asarray(features.values if isinstance(features, RegimeFeatures) else features, float))
    if X.shape[0] < 4 * n_states:
        raise RegimeError(f"need at least {4 * n_states} observations for {n_states} states")
    best: FitResult | None = None
    traces = []
    warned = False
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        model = _initial_model(X, n_states, rng)
        ll, gamma, xi = _forward_backward(model, X)
        trace = [ll]
        for _ in range(max_iter):
            model, floored = _m_step(X, gamma, xi, var_floor)
            if floored and not warned:
                warnings.warn("emission variance floored", stacklevel=2)
                warned = True
            ll, gamma, xi = _forward_backward(model, X)
            trace.append(ll)
            if ll - trace[-2] < tol:
                break
        t = np.array(trace)
        traces.append(t)
        if best is None or ll > best.loglik:
            best = FitResult(model, ll, t, (), r)
    assert best is not None
    return FitResult(_canonical(best.model), best.loglik, best.trace, tuple(traces), best.restart)


def viterbi_path(model: RegimeModel, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features.values if isinstance(features, RegimeFeatures) else features, float))
    logb = model.log_emission(X)
    with np.errstate(divide="ignore"):
        logA = np.log(model.A)
        delta = np.log(model.pi) + logb[0]
    T, K = logb.shape
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        s = delta[:, None] + logA
        back[t] = np.argmax(s, axis=0)
        delta = s[back[t], np.arange(K)] + logb[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def sample_hmm(model: RegimeModel, T: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw (states, observations) from the model."""
    rng = np.random.default_rng(seed)
    s = np.empty(T, dtype=np.int64)
    s[0] = rng.choice(model.n_states, p=model.pi)
    for t in range(1, T):
        s[t] = rng.choice(model.n_states, p=model.A[s[t - 1]])
    X = model.means[s] + np.sqrt(model.variances[s]) * rng.standard_normal((T, model.means.shape[1]))
    return s, X


def best_permutation_accuracy(truth, found, n_states: int) -> float:
    """Label agreement after the best relabelling of ``found``."""
    from itertools import permutations

    truth = np.asarray(truth)
    found = np.asarray(found)
    return max(float(np.mean(np.asarray(p)[found] == truth)) for p in permutations(range(n_states)))


def label(state: int, n_states: int) -> str:
    return LABELS[state] if n_states == len(LABELS) else f"state{state}"


# --------------------------------------------------------------------------- bid policy


@dataclass(frozen=True)
class BidPolicy:
    percentiles: tuple[float, ...]

    def __post_init__(self):
        if any(not 20 <= p <= 60 for p in self.percentiles):
            raise RegimeError("percentiles must lie in [20, 60]")

    def as_mapping(self) -> dict[int, float]:
        return {i: float(p) for i, p in enumerate(self.percentiles)}


def week_revenue(clearing: np.ndarray, dists: Sequence[ClearingDistribution], percentile: float,
                 p_mw: float = 1.0) -> float:
    """Pay-as-bid revenue of one week's blocks at a percentile bid."""
    bids = np.array([d.quantile(percentile) for d in dists])
    return float(p_mw * BLOCK_HOURS * np.sum(bids * (clearing >= bids)))


def optimize_bid_policy(states, clearing: np.ndarray, dists: Sequence[Sequence[ClearingDistribution]],
                        n_states: int = 4, p_mw: float = 1.0, grid=PERCENTILE_GRID,
                        fallback: float = 40.0) -> BidPolicy:
    """Per state, the grid percentile with the highest summed revenue over that state's weeks.
    ``clearing`` is (weeks, blocks); ``dists[w]`` holds the block distributions for week ``w``.
    Ties go to the lower percentile."""
    states = np.asarray(states)
    if states.size != clearing.shape[0] or len(dists) != clearing.shape[0]:
        raise RegimeError("states, clearing and distributions must cover the same weeks")
    rev = np.array([[week_revenue(clearing[w], dists[w], q, p_mw) for q in grid] for w in range(states.size)])
    out = []
    for s in range(n_states):
        m = states == s
        if not m.any():
            warnings.warn(f"state {s} never observed; using percentile {fallback:g}", stacklevel=2)
            out.append(float(fallback))
            continue
        out.append(float(grid[int(np.argmax(rev[m].sum(axis=0)))]))
    return BidPolicy(tuple(out))


def trailing_distributions(blocks: np.ndarray, weeks: Sequence[int], window: int = 52):
    """Block distributions from the ``window`` weeks before each requested week."""
    out = []
    for w in weeks:
        first = max(0, w - window)
        if w - first < 1:
            raise RegimeError("week has no history")
        out.append(block_distributions(blocks[first:w]))
    return out


# --------------------------------------------------------------------------- walk-forward


@dataclass(frozen=True, eq=False)
class RegimeRun:
    fit: FitResult
    features: RegimeFeatures
    policy: BidPolicy
    train_states: np.ndarray
    states: dict[int, int]

    def percentile(self, week: int) -> float | None:
        s = self.states.get(week)
        return None if s is None else self.policy.percentiles[s]


def walk_forward(ds, train_weeks: int, n_states: int = 4, seed: int = 0, refresh_weeks: int = 4,
                 window: int = 52, restarts: int = 10) -> RegimeRun:
    """Fit on weeks before ``train_weeks``; afterwards the regime of week ``t`` is the
    last Viterbi state over features up to ``t - 1``, refreshed every ``refresh_weeks``."""
    fcr, acc = dataset_features(ds, window)
    n = fcr.size
    if train_weeks > n or train_weeks < WINDOW + 4 * n_states:
        raise RegimeError("training span too short or beyond the data")
    fit_mask = np.arange(n) < train_weeks
    feats = compute_features(fcr, acc, fit_mask)
    train = feats.subset(feats.weeks < train_weeks)
    fit = fit_baum_welch(train, n_states, seed, restarts=restarts)
    train_states = viterbi_path(fit.model, train)
    blocks = ds.capacity_blocks("fcr")
    pol_weeks = [int(w) for w in train.weeks]
    policy = optimize_bid_policy(train_states, blocks[pol_weeks], trailing_distributions(blocks, pol_weeks, window),
                                 n_states)
    states: dict[int, int] = {}
    current = int(train_states[-1])
    for t in range(train_weeks, n):
        if (t - train_weeks) % refresh_weeks == 0:
            seen = feats.subset(feats.weeks < t)
            current = int(viterbi_path(fit.model, seen)[-1])
        states[t] = current
    return RegimeRun(fit, feats, policy, train_states, states)


def write_regime_report(path: str | Path, ds, run: RegimeRun) -> Path:
    k = run.fit.model.n_states
    rows = []
    for w, s in sorted({**{int(w): int(s) for w, s in zip(run.features.weeks, run.train_states)},
                        **run.states}.items()):
        rows.append((format_utc(ds.day_start(7 * w)), s, label(s, k), run.policy.percentiles[s]))
    return write_table(path, ["week_start", "state", "label", "percentile"], rows)

