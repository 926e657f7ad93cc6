"""Quantile fans and path ensembles built on top of point forecasts."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.optimize import linprog

from .errors import ConfigError, HistoryError, ValidationError
from .marketdata import H

PERCENTILES = tuple(np.round(np.arange(1, 100) / 100, 2))


def _check_levels(levels):
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise ValidationError("levels must be a nonempty 1-d grid")
    if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
        raise ValidationError("levels must be strictly increasing inside (0, 1)")
    return levels


@dataclass(frozen=True)
class QuantileFan:
    """Quantile forecasts ``values[d, h, k]`` at probability ``levels[k]``.

    Values are sorted along the level axis on construction, so crossing
    quantiles are repaired by rearrangement.
    """

    days: tuple
    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        days = tuple(self.days)
        levels = _check_levels(self.levels)
        values = np.sort(np.array(self.values, dtype=float), axis=-1)
        if values.shape != (len(days), H, levels.size):
            raise ValidationError(f"fan values have shape {values.shape}, expected "
                                  f"({len(days)}, {H}, {levels.size})")
        if not np.all(np.isfinite(values)):
            raise ValidationError("fan values must be finite")
        levels.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    def level_index(self, level):
        hit = np.flatnonzero(np.isclose(self.levels, level, rtol=0, atol=1e-9))
        if hit.size == 0:
            raise ConfigError(f"level {level} not in fan")
        return int(hit[0])

    def quantile(self, level):
        """``D x 24`` panel at one probability level."""
        return self.values[:, :, self.level_index(level)]

    def day_index(self, day):
        if isinstance(day, (int, np.integer)):
            return int(day)
        if isinstance(day, str):
            day = dt.date.fromisoformat(day)
        try:
            return self.days.index(day)
        except ValueError:
            raise ConfigError(f"{day} not covered by the fan") from None

    def to_frame(self):
        D, _, L = self.values.shape
        return pd.DataFrame({
            "date": np.repeat([d.isoformat() for d in self.days], H * L),
            "hour": np.tile(np.repeat(np.arange(1, H + 1), L), D),
            "level": np.tile(self.levels, D * H),
            "value": self.values.ravel(),
        })

    def save(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def load(cls, path):
        df = pd.read_csv(path)
        missing = {"date", "hour", "level", "value"} - set(df.columns)
        if missing:
            raise ValidationError(f"fan CSV lacks columns {sorted(missing)}")
        df = df.sort_values(["date", "hour", "level"], kind="stable")
        days = sorted({dt.date.fromisoformat(s) for s in df["date"]})
        levels = np.unique(df["level"].to_numpy(float))
        expected = len(days) * H * levels.size
        if len(df) != expected:
            raise ValidationError(f"fan CSV has {len(df)} rows, expected {expected}")
        values = df["value"].to_numpy(float).reshape(len(days), H, levels.size)
        return cls(days, levels, values)


@dataclass(frozen=True)
class QraFit:
    level: float
    beta: np.ndarray  # intercept first
    window: tuple | None = None
    hour: int | None = None
    objective: float = float("nan")

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.beta[0] + X @ self.beta[1:]


@dataclass(frozen=True)
class PathEnsemble:
    day: dt.date
    paths: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        paths = np.array(self.paths, dtype=float)
        if paths.ndim != 2 or paths.shape[1] != H or paths.shape[0] < 1:
            raise ValidationError(f"paths must be M x 24 with M >= 1, got {paths.shape}")
        if not np.all(np.isfinite(paths)):
            raise ValidationError("paths must be finite")
        paths.setflags(write=False)
        object.__setattr__(self, "paths", paths)

    def to_frame(self):
        df = pd.DataFrame(self.paths, columns=[f"h{h}" for h in range(1, H + 1)])
        df.insert(0, "path_id", np.arange(1, len(df) + 1))
        df.insert(0, "date", self.day.isoformat())
        return df


def save_paths(ensembles, path):
    frames = [e.to_frame() for e in ensembles]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["date", "path_id", *[f"h{h}" for h in range(1, H + 1)]])
    df.to_csv(path, index=False, float_format="%.10g")


# ----------------------------------------------------------- error shifting

def _realized(forecasts, dataset):
    idx = np.array([dataset.index_of(d) for d in forecasts.days], dtype=int)
    if idx.size and np.any(np.diff(idx) != 1):
        raise ValidationError("forecast days must be consecutive")
    return dataset.prices_da[idx] if idx.size else np.empty((0, H))


def error_shift_quantiles(forecasts, dataset, levels=PERCENTILES, lookback_days=182,
                          method="linear"):
    """Point forecast plus empirical quantiles of its recent errors.

    For every forecast day with at least ``lookback_days`` earlier forecast
    days, the hour-``h`` quantiles of the trailing errors
    ``P - P_hat`` are added to the point forecast of hour ``h``. ``method`` is
    passed to :func:`numpy.quantile`; the default interpolates the empirical
    CDF linearly.
    """
    levels = _check_levels(levels)
    if lookback_days < 1:
        raise ValidationError("lookback_days must be positive")
    errors = _realized(forecasts, dataset) - forecasts.values
    n = len(forecasts.days)
    if n <= lookback_days:
        raise HistoryError(f"need more than {lookback_days} forecast days, have {n}")
    out = np.empty((n - lookback_days, H, levels.size))
    for row, t in enumerate(range(lookback_days, n)):
        q = np.quantile(errors[t - lookback_days:t], levels, axis=0, method=method)
        out[row] = forecasts.values[t][:, None] + q.T
    return QuantileFan(forecasts.days[lookback_days:], levels, out)


# --------------------------------------------------------------------- QRA

def check_loss(residual, level):
    """Sum of check functions ``(level - 1{r < 0}) * r``."""
    r = np.asarray(residual, dtype=float)
    return float(np.sum(r * (level - (r < 0))))


def qra_fit(expert_forecasts, prices, level, window=None, hour=None):
    """Linear quantile regression of ``prices`` on expert forecasts plus an intercept.

    Solved exactly as a linear program (HiGHS dual simplex) with the
    residual split into positive and negative parts.
    """
    X = np.asarray(expert_forecasts, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(prices, dtype=float)
    n, k = X.shape
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    if y.shape != (n,) or k < 1:
        raise ValidationError(f"incompatible shapes X{X.shape}, y{y.shape}")
    if n < 10 * k:
        raise ValidationError(f"need N >= 10 K observations, got N={n}, K={k}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("QRA inputs must be finite")
    if np.any(np.ptp(X, axis=0) == 0):
        raise ValidationError("constant expert column is collinear with the intercept")
    A = np.column_stack([np.ones(n), X])
    p = k + 1
    cost = np.concatenate([np.zeros(p), np.full(n, level), np.full(n, 1.0 - level)])
    A_eq = np.hstack([A, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise ValidationError(f"quantile regression LP failed: {res.message}")
    beta = _polish_vertex(A, y, res.x[:p], level)
    return QraFit(float(level), beta, window, hour, check_loss(y - A @ beta, level))


def _polish_vertex(A, y, beta, level):
    # Re-solve the basic equations exactly: an optimal vertex interpolates p observations.
    p = A.shape[1]
    r = np.abs(y - A @ beta)
    idx = np.argsort(r, kind="stable")[:p]
    try:
        exact = np.linalg.solve(A[idx], y[idx])
    except np.linalg.LinAlgError:
        return beta
    if check_loss(y - A @ exact, level) <= check_loss(y - A @ beta, level):
        return exact
    return beta


def qra_predict(fits, expert_forecasts, levels, hours=range(1, H + 1)):
    """Quantiles for one day from per-(level, hour) fits, sorted across levels.

    Parameters
    ----------
    fits : mapping
        ``{(level, hour): QraFit}`` with ``hour`` in 1..24.
    expert_forecasts : array_like, shape (24, K)
        Expert point forecasts for the day.
    """
    levels = _check_levels(levels)
    X = np.asarray(expert_forecasts, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    out = np.empty((len(hours), levels.size))
    for i, h in enumerate(hours):
        for j, a in enumerate(levels):
            fit = _lookup(fits, a, h)
            out[i, j] = fit.predict(X[h - 1])[0]
    return np.sort(out, axis=1)


def _lookup(fits, level, hour):
    fit = fits.get((level, hour))
    if fit is None:
        for (a, h), f in fits.items():
            if h == hour and abs(a - level) < 1e-9:
                return f
        raise ConfigError(f"no QRA fit for level {level}, hour {hour}")
    return fit


def qra_fan(forecast_sets, dataset, levels=PERCENTILES, window_days=182, refit_every=1):
    """Rolling QRA over aligned expert forecasts.

    Each day's quantiles use fits on the preceding ``window_days`` forecast
    days; fits are refreshed every ``refit_every`` days.
    """
    levels = _check_levels(levels)
    if not forecast_sets:
        raise ConfigError("QRA needs at least one expert forecast set")
    days = forecast_sets[0].days
    for fs in forecast_sets[1:]:
        if fs.days != days:
            raise ConfigError("expert forecast sets are not aligned")
    X = np.stack([fs.values for fs in forecast_sets], axis=-1)  # D x 24 x K
    y = _realized(forecast_sets[0], dataset)
    n = len(days)
    if n <= window_days:
        raise HistoryError(f"need more than {window_days} forecast days, have {n}")
    out = np.empty((n - window_days, H, levels.size))
    fits = {}
    for row, t in enumerate(range(window_days, n)):
        if row % refit_every == 0:
            span = (days[t - window_days], days[t - 1])
            fits = {(a, h + 1): qra_fit(X[t - window_days:t, h], y[t - window_days:t, h], a,
                                        span, h + 1)
                    for h in range(H) for a in levels}
        out[row] = qra_predict(fits, X[t], levels)
    return QuantileFan(days[window_days:], levels, out)


# ------------------------------------------------------------------- paths

def bootstrap_paths(forecasts, dataset, day, M, lookback_days=182, seed=None):
    """Forecast for ``day`` plus whole-day error vectors resampled with replacement.

    Drawing all 24 hours of an error vector together keeps the intra-day
    dependence of the errors in the simulated trajectories.
    """
    if M < 1:
        raise ValidationError("M must be at least 1")
    if isinstance(day, str):
        day = dt.date.fromisoformat(day)
    try:
        t = forecasts.days.index(day)
    except ValueError:
        raise HistoryError(f"{day} has no point forecast") from None
    if t < lookback_days or lookback_days < 1:
        raise HistoryError(f"need {lookback_days} earlier forecast days before {day}, have {t}")
    sub = forecasts.days[t - lookback_days:t]
    idx = np.array([dataset.index_of(d) for d in sub])
    errors = dataset.prices_da[idx] - forecasts.values[t - lookback_days:t]
    rng = np.random.default_rng(seed)
    draw = rng.integers(0, lookback_days, size=M)
    return PathEnsemble(day, forecasts.values[t][None, :] + errors[draw], seed)


def path_fan(ensembles, levels=PERCENTILES, method="linear"):
    """Marginal quantiles of path ensembles, one day per ensemble."""
    levels = _check_levels(levels)
    values = np.stack([np.quantile(e.paths, levels, axis=0, method=method).T for e in ensembles])
    return QuantileFan([e.day for e in ensembles], levels, values)

