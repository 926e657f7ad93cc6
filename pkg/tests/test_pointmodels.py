import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epfkit.errors import ConvergenceError, HistoryError, ValidationError
from epfkit.marketdata import MarketDataset
from epfkit.pointmodels import (EXPERT_FEATURES, LEAR_FEATURES, ForecastSet, RegularizationSpec,
                                expert_features, forward_chaining_folds, lambda_grid, lambda_max,
                                lear_features, naive_forecast, ols_fit, penalized_objective,
                                regularized_fit, rolling_backtest, select_lambda)
from epfkit.synth import SynthSpec, synth_generate

from oracles import elastic_net_objective, normal_equations, proximal_gradient


def _dataset(prices, exog=0.0, start=dt.date(2022, 1, 3)):
    prices = np.asarray(prices, dtype=float)
    D = prices.shape[0]
    return MarketDataset(
        days=[start + dt.timedelta(days=i) for i in range(D)],
        prices_da=prices,
        exog1=np.full((D, 24), float(exog)),
        exog2=np.full((D, 24), float(exog)),
    )


def _problem(seed, n=200, k=20, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k)) * rng.uniform(0.5, 3.0, k) + rng.normal(size=k)
    beta = rng.normal(size=k)
    return X, X @ beta + 2.0 + noise * rng.normal(size=n)


# ---------------------------------------------------------------- features

def test_naive_copies_last_week():
    prices = np.tile(np.arange(1.0, 25.0), (10, 1)) * np.arange(1, 11)[:, None]
    ds = _dataset(prices)
    np.testing.assert_array_equal(naive_forecast(ds, ds.days[8]), prices[1])
    assert np.all(naive_forecast(_dataset(np.full((8, 24), 7.0)), 7) == 7.0)
    with pytest.raises(HistoryError):
        naive_forecast(ds, ds.days[6])


def test_expert_features_constant_history():
    ds = _dataset(np.full((10, 24), 30.0))
    x = expert_features(ds, 8, 5)
    assert x.shape == (15,) == (len(EXPERT_FEATURES),)
    assert np.all(x[:6] == 30.0)
    assert np.all(x[6:8] == 0.0)
    assert x[8:].sum() == 1.0
    assert x[8 + ds.days[8].isoweekday() - 1] == 1.0


def test_expert_features_read_off():
    prices = np.full((10, 24), 5.0)
    prices[7] = np.arange(1.0, 25.0)
    ds = _dataset(prices)
    x = expert_features(ds, 8, 3)
    assert x[0] == 3.0  # P[d-1, h]
    assert x[3] == 24.0 and x[4] == 24.0 and x[5] == 1.0
    with pytest.raises(HistoryError):
        expert_features(ds, 6, 1)


def test_lear_features_layout():
    rng = np.random.default_rng(0)
    D = 12
    ds = MarketDataset([dt.date(2022, 1, 3) + dt.timedelta(days=i) for i in range(D)],
                       rng.normal(size=(D, 24)), rng.random((D, 24)), rng.random((D, 24)))
    t = 10
    x = lear_features(ds, t)
    assert x.shape == (247,) == (len(LEAR_FEATURES),)
    assert x[23] == ds.prices_da[t - 1, 23]  # entry 24
    assert x[95] == ds.prices_da[t - 7, 23]  # entry 96
    np.testing.assert_array_equal(x[24:48], ds.prices_da[t - 2])
    np.testing.assert_array_equal(x[96:120], ds.exog1[t])
    np.testing.assert_array_equal(x[120:144], ds.exog1[t - 1])
    np.testing.assert_array_equal(x[144:168], ds.exog1[t - 7])
    np.testing.assert_array_equal(x[168:192], ds.exog2[t])
    np.testing.assert_array_equal(x[216:240], ds.exog2[t - 7])
    assert x[240:].sum() == 1.0
    np.testing.assert_array_equal(lear_features(ds, t, 1), lear_features(ds, t, 24))


def test_lear_constant_dataset():
    x = lear_features(_dataset(np.full((9, 24), 3.0), exog=1.0), 8)
    assert np.all(x[:96] == 3.0)
    assert x[240:].sum() == 1.0


# --------------------------------------------------------------------- OLS

def test_ols_identity():
    fit = ols_fit(np.eye(3), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(fit.coefficients, [1, 2, 3], atol=1e-14)


def test_ols_interpolates_linear_target():
    X, _ = _problem(1, 50, 4)
    y = X @ np.array([1.0, -2.0, 0.5, 3.0])
    fit = ols_fit(X, y)
    assert np.max(np.abs(y - fit.predict(X))) < 1e-10


def test_ols_matches_normal_equations():
    X, y = _problem(2, 300, 8)
    A = np.column_stack([np.ones(len(y)), X])
    fit = ols_fit(X, y, intercept=True)
    np.testing.assert_allclose(fit.coefficients, normal_equations(A, y), rtol=1e-8, atol=1e-8)


def test_ols_rank_deficient_minimum_norm():
    X, y = _problem(3, 40, 3)
    X = np.column_stack([X, X[:, 0]])
    with pytest.warns(RuntimeWarning):
        fit = ols_fit(X, y)
    assert fit.rank_deficient
    assert fit.coefficients[0] == pytest.approx(fit.coefficients[3])


def test_ols_rejects_non_finite():
    X = np.ones((5, 2))
    X[0, 0] = np.inf
    with pytest.raises(ValidationError):
        ols_fit(X, np.ones(5))


# ------------------------------------------------------------- regularized

@pytest.mark.parametrize("seed", range(5))
def test_zero_penalty_is_ols(seed):
    X, y = _problem(seed)
    fit = regularized_fit(X, y, RegularizationSpec("lasso", 0.0))
    ols = ols_fit(X, y, intercept=True)
    np.testing.assert_allclose(fit.coefficients, ols.coefficients, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_null_threshold(seed):
    X, y = _problem(seed)
    lmax = lambda_max(X, y)
    Z = (X - X.mean(0)) / X.std(0)
    assert lmax == pytest.approx(np.max(np.abs(Z.T @ (y - y.mean()))) / len(y))
    for lam in (lmax, 2 * lmax):
        fit = regularized_fit(X, y, RegularizationSpec("lasso", lam))
        assert np.all(fit.weights == 0.0)
        assert fit.intercept_value == pytest.approx(y.mean())
    below = regularized_fit(X, y, RegularizationSpec("lasso", 0.99 * lmax))
    assert below.nonzero >= 1


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("kind", ["lasso", "elasticnet"])
def test_matches_proximal_gradient(seed, kind):
    X, y = _problem(seed, 120, 5)
    lam1 = 0.1 * lambda_max(X, y)
    lam2 = 0.05 if kind == "elasticnet" else 0.0
    spec = RegularizationSpec(kind, lam1, lam2)
    fit = regularized_fit(X, y, spec)
    b0, w = proximal_gradient(X, y, lam1, lam2)
    ours = penalized_objective(X, y, fit.coefficients, spec)
    ref = elastic_net_objective(X, y, b0, w, lam1, lam2)
    assert ours == pytest.approx(elastic_net_objective(X, y, fit.intercept_value, fit.weights,
                                                       lam1, lam2), abs=1e-12)
    assert abs(ours - ref) < 1e-6
    np.testing.assert_allclose(fit.weights, w, atol=1e-5)


def test_ridge_closed_form():
    X, y = _problem(7, 100, 6)
    lam2 = 0.3
    fit = regularized_fit(X, y, RegularizationSpec("ridge", lambda2=lam2))
    Z = (X - X.mean(0)) / X.std(0)
    n = len(y)
    b = np.linalg.solve(Z.T @ Z / n + 2 * lam2 * np.eye(6), Z.T @ (y - y.mean()) / n)
    np.testing.assert_allclose(fit.weights * X.std(0), b, atol=1e-7)


def test_without_standardization():
    X, y = _problem(8, 100, 4)
    fit = regularized_fit(X, y, RegularizationSpec("lasso", 0.0), standardize=False)
    np.testing.assert_allclose(fit.coefficients, ols_fit(X, y, intercept=True).coefficients,
                               atol=1e-6)


def test_convergence_error_carries_last_iterate():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(200, 1))
    X = z + 1e-3 * rng.normal(size=(200, 6))  # nearly collinear columns
    y = X @ np.arange(6.0) + rng.normal(size=200)
    with pytest.raises(ConvergenceError) as err:
        regularized_fit(X, y, RegularizationSpec("lasso", 1e-6), max_sweeps=2)
    assert err.value.last_iterate.coefficients.shape == (7,)
    assert err.value.n_iter == 2


def test_spec_validation():
    with pytest.raises(ValidationError):
        RegularizationSpec("lasso", 1.0, 1.0)
    with pytest.raises(ValidationError):
        RegularizationSpec("ridge", -1.0)
    with pytest.raises(ValidationError):
        RegularizationSpec("none", 0.1)
    with pytest.raises(ValidationError):
        RegularizationSpec("bridge")


@pytest.mark.parametrize("seed", range(10))
def test_lasso_path_support_shrinks(seed):
    X, y = _problem(seed, 150, 10, noise=3.0)
    counts = [regularized_fit(X, y, RegularizationSpec("lasso", lam)).nonzero
              for lam in lambda_grid(X, y, n=25)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1.0), st.floats(0.0, 0.5))
def test_objective_not_above_ols_point(seed, frac, lam2):
    X, y = _problem(seed, 80, 6)
    lam1 = frac * lambda_max(X, y)
    spec = RegularizationSpec("elasticnet", lam1, lam2)
    fit = regularized_fit(X, y, spec)
    ols = ols_fit(X, y, intercept=True)
    assert penalized_objective(X, y, fit.coefficients, spec) \
        <= penalized_objective(X, y, ols.coefficients, spec) + 1e-10


# ------------------------------------------------------------ lambda search

def test_folds_are_chronological():
    folds = forward_chaining_folds(100, 3)
    assert len(folds) == 3
    for train, val in folds:
        assert train.max() < val.min()
        assert train[0] == 0
    assert folds[-1][1][-1] == 99
    with pytest.raises(ValidationError):
        forward_chaining_folds(3, 3)


def test_single_element_grid():
    X, y = _problem(0, 60, 5)
    spec = select_lambda(X, y, [0.37])
    assert spec.kind == "lasso" and spec.lambda1 == 0.37


def test_pure_noise_picks_largest():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(150, 15))
        y = rng.normal(size=150)
        grid = lambda_grid(X, y, n=20)
        wins += select_lambda(X, y, grid).lambda1 == grid[0]
    assert wins > 5


def test_noiseless_target_picks_smallest():
    wins = 0
    for seed in range(10):
        X, y = _problem(seed, 150, 8, noise=0.0)
        grid = lambda_grid(X, y, n=20)
        wins += select_lambda(X, y, grid).lambda1 == grid[-1]
    assert wins > 5


def test_degenerate_folds_rejected():
    X, y = _problem(0, 60, 3)
    with pytest.raises(ValidationError):
        select_lambda(X, y, [1.0, 0.1], folds=[(np.arange(30), np.arange(30, 60))])
    with pytest.raises(ValidationError):
        select_lambda(X, y, [1.0, 0.1], folds=[(np.arange(30), np.arange(20, 40)),
                                               (np.arange(40), np.arange(40, 60))])


# --------------------------------------------------------- rolling backtest

def test_naive_backtest_is_lagged_prices():
    ds = synth_generate(SynthSpec(days=80, seed=2))
    fs = rolling_backtest(ds, "naive", test_range=(20, 79))
    np.testing.assert_array_equal(fs.values, ds.prices_da[13:73])
    assert fs.days == ds.days[20:80]


def test_expert_fits_weekly_periodic_prices():
    weeks = 12
    base = np.add.outer(np.arange(7) * 3.0, 40 + 10 * np.sin(np.arange(24) / 4))
    prices = np.tile(base, (weeks, 1))
    ds = _dataset(prices, exog=1.0)
    fs = rolling_backtest(ds, "expert", window_days=35)
    err = np.abs(fs.values - prices[42:])
    assert err.mean() < 1e-6


def test_backtest_determinism_and_history():
    ds = synth_generate(SynthSpec(days=120, seed=5))
    a = rolling_backtest(ds, "lear", window_days=60, test_range=(100, 104))
    b = rolling_backtest(ds, "lear", window_days=60, test_range=(100, 104))
    assert np.array_equal(a.values, b.values)
    assert len(a.meta["lambda_by_hour"]) == 24
    with pytest.raises(HistoryError):
        rolling_backtest(ds, "expert", window_days=60, test_range=(60, 70))


@pytest.mark.parametrize("model,vst", [("expert", False), ("expert", True), ("lear", False)])
def test_no_lookahead(model, vst):
    ds = synth_generate(SynthSpec(days=110, seed=9, spike_prob=0.02))
    t = 100
    base = rolling_backtest(ds, model, window_days=60, test_range=(t, t), vst=vst)
    prices = ds.prices_da.copy()
    prices[t:] += 1000.0 * np.random.default_rng(0).normal(size=prices[t:].shape)
    mutated = rolling_backtest(ds.with_prices(prices), model, window_days=60,
                               test_range=(t, t), vst=vst)
    np.testing.assert_array_equal(base.values, mutated.values)


def test_vst_backtest_close_to_plain():
    ds = synth_generate(SynthSpec(days=130, seed=4))
    plain = rolling_backtest(ds, "expert", window_days=90, test_range=(120, 129))
    vst = rolling_backtest(ds, "expert", window_days=90, test_range=(120, 129), vst=True)
    real = ds.prices_da[120:130]
    assert np.mean(np.abs(vst.values - real)) < 1.5 * np.mean(np.abs(plain.values - real))


def test_forecast_set_csv_round_trip(tmp_path):
    ds = synth_generate(SynthSpec(days=80, seed=2))
    fs = rolling_backtest(ds, "naive")
    fs.save(tmp_path / "f.csv")
    back = ForecastSet.load(tmp_path / "f.csv", "naive")
    assert back.days == fs.days
    np.testing.assert_allclose(back.values, fs.values, rtol=1e-9)
    meta = json.loads((tmp_path / "f.csv.json").read_text())
    assert meta["model_id"] == "naive"
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "date," + ",".join(f"h{h}" for h in range(1, 25))
