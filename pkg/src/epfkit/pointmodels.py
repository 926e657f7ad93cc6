"""Regressor construction, linear estimators and the rolling daily backtest."""

from __future__ import annotations

import datetime as dt
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numba
import numpy as np
import pandas as pd

from .errors import ConvergenceError, HistoryError, ValidationError
from .marketdata import H, apply_vst, fit_vst, invert_vst

logger = logging.getLogger(__name__)

CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000
CV_TOL = 1e-5
CV_MAX_SWEEPS = 2_000
N_LAMBDA = 60
LAMBDA_RATIO = 1e-4
DEFAULT_WINDOW = 364

EXPERT_FEATURES = (
    "P[d-1,h]", "P[d-2,h]", "P[d-7,h]", "P[d-1,24]", "Pmax[d-1]", "Pmin[d-1]",
    "X1[d,h]", "X2[d,h]", "D1", "D2", "D3", "D4", "D5", "D6", "D7",
)
LEAR_FEATURES = tuple(
    [f"P[d-{lag},{i}]" for lag in (1, 2, 3, 7) for i in range(1, 25)]
    + [f"X{k}[{tag},{i}]" for k in (1, 2) for tag in ("d", "d-1", "d-7") for i in range(1, 25)]
    + [f"D{k}" for k in range(1, 8)]
)
assert len(LEAR_FEATURES) == 247


@dataclass(frozen=True)
class RegularizationSpec:
    """Penalty ``lambda1 * sum|b| + lambda2 * sum b**2`` added to ``RSS / (2N)``."""

    kind: str = "none"
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "ridge", "lasso", "elasticnet"):
            raise ValidationError(f"unknown regularization kind {self.kind!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("penalties must be nonnegative")
        if self.kind == "none" and (self.lambda1 or self.lambda2):
            raise ValidationError("kind 'none' requires zero penalties")
        if self.kind == "lasso" and self.lambda2:
            raise ValidationError("lasso uses lambda1 only")
        if self.kind == "ridge" and self.lambda1:
            raise ValidationError("ridge uses lambda2 only")


@dataclass(frozen=True)
class ModelFit:
    """Estimated coefficients; ``coefficients[0]`` is the intercept when present."""

    coefficients: np.ndarray
    spec: RegularizationSpec = RegularizationSpec()
    intercept: bool = False
    window: tuple | None = None
    target_hour: int | None = None
    feature_names: tuple = ()
    rank_deficient: bool = False
    n_iter: int = 0
    beta_std: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def weights(self):
        return self.coefficients[1:] if self.intercept else self.coefficients

    @property
    def intercept_value(self):
        return float(self.coefficients[0]) if self.intercept else 0.0

    @property
    def nonzero(self):
        return int(np.count_nonzero(self.weights))

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.weights + self.intercept_value


@dataclass(frozen=True)
class ForecastSet:
    days: tuple
    values: np.ndarray
    model_id: str
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        days = tuple(self.days)
        values = np.array(self.values, dtype=float)
        if values.shape != (len(days), H):
            raise ValidationError(f"forecast values have shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("forecasts must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "values", values)

    def to_frame(self):
        df = pd.DataFrame(self.values, columns=[f"h{h}" for h in range(1, H + 1)])
        df.insert(0, "date", [d.isoformat() for d in self.days])
        return df

    def save(self, path, sidecar=True):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        if sidecar:
            meta = {"model_id": self.model_id, **self.meta}
            with open(str(path) + ".json", "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True, default=str)

    @classmethod
    def load(cls, path, model_id=None):
        df = pd.read_csv(path)
        cols = [f"h{h}" for h in range(1, H + 1)]
        missing = [c for c in ["date", *cols] if c not in df.columns]
        if missing:
            raise ValidationError(f"forecast CSV lacks columns {missing}")
        days = [dt.date.fromisoformat(str(s)) for s in df["date"]]
        return cls(days, df[cols].to_numpy(float), model_id or str(path))


# ---------------------------------------------------------------- features

def _check_history(index):
    if index < 7:
        raise HistoryError(f"day index {index} has fewer than 7 days of history")


def _expert_block(prices, exog1, exog2, dummies, idx):
    idx = np.asarray(idx)
    n = idx.size
    out = np.empty((n, H, 15))
    out[:, :, 0] = prices[idx - 1]
    out[:, :, 1] = prices[idx - 2]
    out[:, :, 2] = prices[idx - 7]
    out[:, :, 3] = prices[idx - 1, H - 1][:, None]
    out[:, :, 4] = prices[idx - 1].max(axis=1)[:, None]
    out[:, :, 5] = prices[idx - 1].min(axis=1)[:, None]
    out[:, :, 6] = exog1[idx]
    out[:, :, 7] = exog2[idx]
    out[:, :, 8:] = dummies[idx][:, None, :]
    return out


def _lear_block(prices, exog1, exog2, dummies, idx):
    idx = np.asarray(idx)
    parts = [prices[idx - lag] for lag in (1, 2, 3, 7)]
    for x in (exog1, exog2):
        parts += [x[idx], x[idx - 1], x[idx - 7]]
    parts.append(dummies[idx])
    return np.concatenate(parts, axis=1)


def _panels(dataset):
    return dataset.prices_da, dataset.exog1, dataset.exog2, dataset.calendar.dummies


def expert_features(dataset, day, hour):
    """15 regressors of the expert ARX model for ``(day, hour)``, ``hour`` in 1..24.

    Order: P[d-1,h], P[d-2,h], P[d-7,h], P[d-1,24], max and min of day d-1,
    X1[d,h], X2[d,h], weekday dummies D1..D7 (Monday = D1).
    """
    t = dataset.index_of(day)
    _check_history(t)
    if not 1 <= hour <= H:
        raise ValidationError(f"hour must be in 1..24, got {hour}")
    return _expert_block(*_panels(dataset), [t])[0, hour - 1].copy()


def lear_features(dataset, day, hour=None):
    """247 LEAR regressors for ``day``; the vector is shared by all hours."""
    t = dataset.index_of(day)
    _check_history(t)
    if hour is not None and not 1 <= hour <= H:
        raise ValidationError(f"hour must be in 1..24, got {hour}")
    return _lear_block(*_panels(dataset), [t])[0].copy()


def naive_forecast(dataset, day):
    """Similar-day forecast: the prices of one week earlier."""
    t = dataset.index_of(day)
    _check_history(t)
    return dataset.prices_da[t - 7].copy()


# --------------------------------------------------------------- estimators

def _validate_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"incompatible shapes X{X.shape}, y{y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("design and target must be finite")
    return X, y


def ols_fit(X, y, intercept=False, feature_names=(), **provenance):
    """Least squares through an SVD; rank-deficient designs get the minimum-norm solution."""
    X, y = _validate_xy(X, y)
    n, k = X.shape
    if n < k + intercept:
        raise ValidationError(f"need N >= K, got N={n}, K={k + intercept}")
    A = np.column_stack([np.ones(n), X]) if intercept else X
    beta, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    deficient = rank < A.shape[1]
    if deficient:
        warnings.warn(f"rank-deficient design ({rank} < {A.shape[1]}), "
                      "returning the minimum-norm solution", RuntimeWarning, stacklevel=2)
    return ModelFit(beta, RegularizationSpec(), intercept, feature_names=tuple(feature_names),
                    rank_deficient=bool(deficient), **provenance)


@numba.njit(cache=True)
def _cd_gram(G, c, beta, lam1, lam2, tol, max_sweeps):
    # Covariance-update coordinate descent on 0.5 b'Gb - c'b + lam1|b|_1 + lam2|b|^2.
    k = beta.shape[0]
    q = G @ beta
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(k):
            gjj = G[j, j]
            if gjj <= 0.0:
                if beta[j] != 0.0:
                    beta[j] = 0.0
                continue
            old = beta[j]
            z = c[j] - q[j] + gjj * old
            if z > lam1:
                new = (z - lam1) / (gjj + 2.0 * lam2)
            elif z < -lam1:
                new = (z + lam1) / (gjj + 2.0 * lam2)
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for i in range(k):
                    q[i] += G[i, j] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            return sweep, True
    return max_sweeps, False


@dataclass
class _Prepared:
    G: np.ndarray
    c: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    n: int
    y_scale: float = 1.0


def _prepare(X, y, intercept, standardize):
    n = X.shape[0]
    x_mean = X.mean(axis=0) if intercept else np.zeros(X.shape[1])
    y_mean = float(y.mean()) if intercept else 0.0
    Xc = X - x_mean
    if standardize:
        scale = Xc.std(axis=0) if intercept else np.sqrt((Xc ** 2).mean(axis=0))
        scale = np.where(scale > 0, scale, 1.0)
        Xc = Xc / scale
    else:
        scale = np.ones(X.shape[1])
    yc = y - y_mean
    y_scale = float(np.sqrt(np.mean(yc ** 2)))
    return _Prepared(Xc.T @ Xc / n, Xc.T @ yc / n, x_mean, scale, y_mean, n,
                     y_scale if y_scale > 0 else 1.0)


def _penalties(spec):
    lam1 = spec.lambda1 if spec.kind in ("lasso", "elasticnet") else 0.0
    lam2 = spec.lambda2 if spec.kind in ("ridge", "elasticnet") else 0.0
    return lam1, lam2


def _active_set_polish(prep, beta, lam1, lam2):
    # Solve the KKT system on the current support; accept only if it is optimal.
    active = np.flatnonzero(beta)
    if active.size == 0 or active.size > prep.n:
        return None
    sign = np.sign(beta[active])
    A = prep.G[np.ix_(active, active)] + 2.0 * lam2 * np.eye(active.size)
    try:
        b_act = np.linalg.solve(A, prep.c[active] - lam1 * sign)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.sign(b_act) == sign):
        return None
    cand = np.zeros_like(beta)
    cand[active] = b_act
    grad = prep.c - prep.G @ cand
    inactive = np.ones(beta.size, dtype=bool)
    inactive[active] = False
    if np.any(np.abs(grad[inactive]) > lam1 * (1 + 1e-10) + 1e-14):
        return None
    return cand


def _solve(prep, spec, beta0=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS, chunk=200):
    lam1, lam2 = _penalties(spec)
    beta = np.zeros(prep.G.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    tol_eff = float(tol) * prep.y_scale
    done = 0
    while done < max_sweeps:
        n, ok = _cd_gram(prep.G, prep.c, beta, float(lam1), float(lam2), tol_eff,
                         int(min(chunk, max_sweeps - done)))
        done += n
        if ok:
            return beta, done, True
        cand = _active_set_polish(prep, beta, lam1, lam2)
        if cand is not None:
            beta = cand
    return beta, done, False


def _to_original(prep, beta_std, intercept):
    w = beta_std / prep.x_scale
    if intercept:
        return np.concatenate([[prep.y_mean - prep.x_mean @ w], w])
    return w


def regularized_fit(X, y, spec, intercept=True, standardize=True, warm_start=None,
                    feature_names=(), tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS, **provenance):
    """Penalized least squares by cyclic coordinate descent with soft-thresholding.

    Minimizes ``RSS / (2N) + lambda1 * sum|b_j| + lambda2 * sum b_j**2`` over
    the (optionally standardized) columns; the intercept is never penalized.
    Coefficients are returned on the original scale of ``X``.

    Parameters
    ----------
    warm_start : ndarray, optional
        Starting coefficients on the standardized scale, typically the
        ``beta_std`` of a fit at a neighbouring penalty or day.

    Raises
    ------
    ConvergenceError
        If the largest coefficient change (standardized columns, measured in
        units of the target's root-mean-square deviation) stays above ``tol`` after
        ``max_sweeps`` sweeps; ``last_iterate`` holds the unconverged fit.
    """
    X, y = _validate_xy(X, y)
    prep = _prepare(X, y, intercept, standardize)
    beta, n_iter, ok = _solve(prep, spec, warm_start, tol, max_sweeps)
    fit = ModelFit(_to_original(prep, beta, intercept), spec, intercept,
                   feature_names=tuple(feature_names), n_iter=n_iter, beta_std=beta,
                   **provenance)
    if not ok:
        raise ConvergenceError(f"coordinate descent did not converge in {max_sweeps} sweeps",
                               last_iterate=fit, n_iter=n_iter)
    return fit


def penalized_objective(X, y, coefficients, spec, intercept=True, standardize=True):
    """Objective value of ``coefficients`` (original scale) under ``spec``."""
    X, y = _validate_xy(X, y)
    coefficients = np.asarray(coefficients, dtype=float)
    b0, w = (coefficients[0], coefficients[1:]) if intercept else (0.0, coefficients)
    prep = _prepare(X, y, intercept, standardize)
    w_std = w * prep.x_scale
    lam1, lam2 = _penalties(spec)
    r = y - X @ w - b0
    return float(r @ r / (2 * len(y)) + lam1 * np.abs(w_std).sum() + lam2 * (w_std ** 2).sum())


def lambda_max(X, y, intercept=True, standardize=True):
    """Smallest LASSO penalty for which every coefficient is zero."""
    X, y = _validate_xy(X, y)
    prep = _prepare(X, y, intercept, standardize)
    return float(np.max(np.abs(prep.c)))


def lambda_grid(X, y, n=N_LAMBDA, ratio=LAMBDA_RATIO, intercept=True, standardize=True):
    """Descending log-spaced grid from ``lambda_max`` down to ``lambda_max * ratio``."""
    top = lambda_max(X, y, intercept, standardize)
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, n)


def forward_chaining_folds(n, n_folds=3, min_train=None):
    """Chronological splits: validation blocks tile the tail, training is all that precedes."""
    if min_train is None:
        min_train = n // 2
    block = (n - min_train) // n_folds
    if n_folds < 2 or block < 1 or min_train < 1:
        raise ValidationError(f"cannot build {n_folds} forward-chaining folds from {n} rows")
    folds = []
    for k in range(n_folds):
        stop = min_train + k * block
        end = n if k == n_folds - 1 else stop + block
        folds.append((np.arange(stop), np.arange(stop, end)))
    return folds


def _path_mae(X, y, grid, train, val, kind, intercept, tol, max_sweeps):
    prep = _prepare(X[train], y[train], intercept, True)
    beta = None
    maes = np.empty(len(grid))
    for i, lam in enumerate(grid):
        spec = _spec_for(kind, lam)
        beta, _, ok = _solve(prep, spec, beta, tol, max_sweeps)
        if not ok:
            logger.debug("path point lambda=%g not converged, using last iterate", lam)
        coef = _to_original(prep, beta, intercept)
        pred = X[val] @ (coef[1:] if intercept else coef) + (coef[0] if intercept else 0.0)
        maes[i] = np.mean(np.abs(y[val] - pred))
    return maes


def _spec_for(kind, lam):
    if kind == "lasso":
        return RegularizationSpec("lasso", lambda1=float(lam))
    if kind == "ridge":
        return RegularizationSpec("ridge", lambda2=float(lam))
    raise ValidationError(f"select_lambda supports lasso and ridge, not {kind!r}")


def select_lambda(X, y, grid=None, folds=None, kind="lasso", intercept=True,
                  tol=CV_TOL, max_sweeps=CV_MAX_SWEEPS):
    """Pick the penalty with the lowest mean validation MAE over chronological folds.

    Ties go to the larger penalty. Returns a :class:`RegularizationSpec`.
    Path fits use a looser tolerance than :func:`regularized_fit`; only their
    validation error matters here.
    """
    X, y = _validate_xy(X, y)
    if grid is None:
        grid = lambda_grid(X, y, intercept=intercept)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    if grid.size == 0 or np.any(grid <= 0):
        raise ValidationError("lambda grid must be nonempty and positive")
    if folds is None:
        folds = forward_chaining_folds(len(y))
    if len(folds) < 2:
        raise ValidationError("need at least 2 chronological folds")
    for train, val in folds:
        train, val = np.asarray(train), np.asarray(val)
        if train.size < 2 or val.size < 1 or train.max() >= val.min():
            raise ValidationError("degenerate fold: training must precede a nonempty validation block")
    if grid.size == 1:
        return _spec_for(kind, grid[0])
    scores = np.mean([_path_mae(X, y, grid, tr, va, kind, intercept, tol, max_sweeps)
                      for tr, va in folds], axis=0)
    return _spec_for(kind, grid[int(np.argmin(scores))])


# ------------------------------------------------------------ rolling backtest

def _resolve_range(dataset, test_range, first_allowed):
    if test_range is None:
        start, stop = first_allowed, dataset.n_days - 1
    else:
        start, stop = (dataset.index_of(x) for x in test_range)
    if start < first_allowed:
        raise HistoryError(f"first test day needs {first_allowed} days of history, "
                           f"has {start}")
    return start, stop


def rolling_backtest(dataset, model, window_days=DEFAULT_WINDOW, test_range=None, vst=False,
                     lambda_refresh=0, n_lambda=N_LAMBDA, cv_folds=3):
    """Daily-recalibrated out-of-sample forecasts over ``test_range``.

    For every test day ``d`` the model is estimated on the ``window_days`` days
    ending at ``d - 1`` (one regression per hour) and used to forecast all 24
    hours of ``d``. Only prices dated ``d - 1`` or earlier and the exogenous
    forecasts for ``d`` enter the forecast.

    Parameters
    ----------
    model : {"naive", "expert", "lear"}
    test_range : (first, last), optional
        Inclusive dates or row indices. Defaults to every admissible day.
    vst : bool
        Fit the asinh transform on each calibration window and invert forecasts.
    lambda_refresh : int
        LEAR only: re-run the cross-validated penalty search every this many
        test days; ``0`` selects once, on the first calibration window.
    """
    if model not in ("naive", "expert", "lear"):
        raise ValidationError(f"unknown model {model!r}")
    if model == "naive":
        start, stop = _resolve_range(dataset, test_range, 7)
        idx = np.arange(start, stop + 1)
        values = dataset.prices_da[idx - 7] if idx.size else np.empty((0, H))
        return ForecastSet([dataset.days[i] for i in idx], values, "naive",
                           {"model": "naive", "lag_days": 7})
    if window_days < 1:
        raise ValidationError("window_days must be positive")
    start, stop = _resolve_range(dataset, test_range, window_days + 7)

    block = _expert_block if model == "expert" else _lear_block
    names = EXPERT_FEATURES if model == "expert" else LEAR_FEATURES
    full = None if vst else block(*_panels(dataset), np.arange(7, dataset.n_days))

    out = np.empty((stop - start + 1, H))
    lambdas = [None] * H
    warm = [None] * H
    nonzero = []
    for row, t in enumerate(range(start, stop + 1)):
        cal = np.arange(t - window_days, t)
        if vst:
            lo = t - window_days - 7
            params = fit_vst(dataset.subset(t - window_days, t))
            work = apply_vst(dataset.subset(lo, t + 1), params)
            F = block(*_panels(work), np.arange(7, t + 1 - lo))
            Fcal, Ft = F[:-1], F[-1]
            Y = work.prices_da[7:-1]
        else:
            F, offset = full, 7
            Fcal, Ft = F[cal - offset], F[t - offset]
            Y = dataset.prices_da[cal]
        for h in range(H):
            y = Y[:, h]
            if model == "expert":
                with warnings.catch_warnings():
                    # intercept-free with a full dummy set: never rank deficient in practice
                    warnings.simplefilter("ignore", RuntimeWarning)
                    fit = ols_fit(Fcal[:, h], y)
                pred = Ft[h] @ fit.coefficients
            else:
                if lambdas[h] is None or (lambda_refresh and row % lambda_refresh == 0):
                    folds = forward_chaining_folds(len(y), cv_folds)
                    grid = lambda_grid(Fcal, y, n=n_lambda)
                    lambdas[h] = select_lambda(Fcal, y, grid, folds)
                try:
                    fit = regularized_fit(Fcal, y, lambdas[h], warm_start=warm[h])
                except ConvergenceError as exc:
                    logger.warning("day %s hour %d: %s", dataset.days[t], h + 1, exc)
                    fit = exc.last_iterate
                warm[h] = fit.beta_std
                nonzero.append(fit.nonzero)
                pred = fit.predict(Ft[None, :])[0]
            out[row, h] = pred
        if vst:
            out[row] = invert_vst(out[row], params)

    meta = {
        "model": model,
        "window_days": window_days,
        "vst": bool(vst),
        "first_day": dataset.days[start].isoformat(),
        "last_day": dataset.days[stop].isoformat(),
        "n_features": len(names),
    }
    if model == "lear":
        meta["lambda_by_hour"] = [s.lambda1 for s in lambdas]
        meta["mean_nonzero"] = float(np.mean(nonzero)) if nonzero else 0.0
    return ForecastSet(dataset.days[start:stop + 1], out, model, meta)
