"""Point metrics, forecast-comparison tests, reliability tests and scoring rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist
from scipy.special import xlogy

from .errors import (ConfigError, DegenerateScaleError, DegenerateTestError,
                     ValidationError)
from .marketdata import H

PIT_EPS = 1e-6


@dataclass(frozen=True)
class ErrorPanel:
    """Realized minus forecast, ``D x 24``."""

    errors: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        e = np.array(self.errors, dtype=float)
        if e.ndim != 2 or not np.all(np.isfinite(e)):
            raise ValidationError("error panel must be a finite 2-d array")
        e.setflags(write=False)
        object.__setattr__(self, "errors", e)

    @classmethod
    def from_forecasts(cls, forecasts, dataset):
        idx = [dataset.index_of(d) for d in forecasts.days]
        return cls(dataset.prices_da[idx] - forecasts.values, forecasts.model_id)


@dataclass(frozen=True)
class LossSeries:
    """Per-observation losses, ``D x 24`` (hourly) or length ``D`` (daily)."""

    values: np.ndarray
    kind: str = "abs"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim not in (1, 2) or (v.ndim == 2 and v.shape[1] != H):
            raise ValidationError(f"loss series must be D or D x 24, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("losses must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def granularity(self):
        return "hourly" if self.values.ndim == 2 else "daily"

    @classmethod
    def from_errors(cls, errors, kind="abs"):
        e = errors.errors if isinstance(errors, ErrorPanel) else np.asarray(errors, float)
        if kind == "abs":
            return cls(np.abs(e), "abs")
        if kind == "sq":
            return cls(e ** 2, "sq")
        raise ValidationError(f"unknown point loss {kind!r}")


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    null_description: str
    observations: int
    details: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValidationError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self):
        return {"statistic": float(self.statistic), "p_value": float(self.p_value),
                "null": self.null_description, "observations": int(self.observations),
                **{k: v for k, v in self.details.items()}}


@dataclass(frozen=True)
class HitSeries:
    hits: np.ndarray
    nominal: float

    def __post_init__(self):
        h = np.asarray(self.hits).ravel()
        if not np.all((h == 0) | (h == 1)):
            raise ValidationError("hits must be zero/one")
        h = h.astype(int)
        h.setflags(write=False)
        object.__setattr__(self, "hits", h)
        if not 0.0 < self.nominal < 1.0:
            raise ValidationError("nominal coverage must lie in (0, 1)")


@dataclass(frozen=True)
class Coverage:
    hits: HitSeries
    picp: float
    ace: float
    pinc: float


# ------------------------------------------------------------ point metrics

def point_metrics(errors):
    e = errors.errors if isinstance(errors, ErrorPanel) else np.asarray(errors, float)
    if e.size == 0:
        raise ValidationError("empty error panel")
    return {"MAE": float(np.mean(np.abs(e))), "RMSE": float(np.sqrt(np.mean(e ** 2)))}


def relative_metrics(errors, naive_errors, insample_naive_mae):
    """rMAE against the out-of-sample naive MAE and MASE against the in-sample one."""
    mae = point_metrics(errors)["MAE"]
    naive_mae = point_metrics(naive_errors)["MAE"]
    if naive_mae == 0 or insample_naive_mae == 0:
        raise DegenerateScaleError("naive MAE is zero")
    return {"rMAE": mae / naive_mae, "MASE": mae / float(insample_naive_mae)}


def insample_naive_mae(dataset, stop):
    """MAE of the weekly naive forecast over rows ``7..stop-1``."""
    p = dataset.prices_da[:stop]
    if p.shape[0] <= 7:
        raise DegenerateScaleError("in-sample naive MAE needs more than 7 days")
    return float(np.mean(np.abs(p[7:] - p[:-7])))


# ------------------------------------------------------ comparison tests

def _two_sided(z):
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def long_run_variance(x, lags):
    """Newey-West (Bartlett) estimate of the long-run variance of ``x``."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    v = x @ x / n
    for k in range(1, lags + 1):
        v += 2.0 * (1.0 - k / (lags + 1)) * (x[k:] @ x[:-k]) / n
    return float(v)


def loss_differential(loss1, loss2, variant="multivariate", hour=None, p=None):
    """Daily loss differential for the chosen DM variant.

    ``per_hour`` takes column ``hour`` (1..24) of hourly losses. ``multivariate``
    turns each day's losses into a norm: with absolute or squared point losses
    ``(sum_h L_dh) ** (1/p)`` equals the ``p``-norm of the daily error vector
    (``p`` = 1 or 2, inferred from the loss kind); any other loss is summed.
    Daily series pass through unchanged.
    """
    a, b = loss1.values, loss2.values
    if a.shape != b.shape:
        raise ValidationError(f"loss series shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return a - b
    if variant == "per_hour":
        if hour is None or not 1 <= hour <= H:
            raise ValidationError("per_hour variant needs hour in 1..24")
        return a[:, hour - 1] - b[:, hour - 1]
    if variant != "multivariate":
        raise ValidationError(f"unknown DM variant {variant!r}")
    if p is None:
        p = 2 if loss1.kind == "sq" else 1
    if p not in (1, 2):
        raise ValidationError("p must be 1 or 2")
    return a.sum(axis=1) ** (1.0 / p) - b.sum(axis=1) ** (1.0 / p)


def dm_test(loss1, loss2, variant="multivariate", hour=None, p=None, one_step=True):
    """Diebold-Mariano test of equal mean loss.

    The statistic is ``sqrt(N) * mean / sd`` of the daily differential. With
    ``one_step`` the plain sample variance is used; otherwise a Newey-West
    long-run variance with ``floor(N ** (1/3))`` lags. ``details`` holds the
    one-sided p-value for the alternative that model 1 has larger losses.
    """
    delta = loss_differential(loss1, loss2, variant, hour, p)
    n = delta.size
    if n < 2:
        raise ValidationError("DM test needs at least two observations")
    lags = 0 if one_step else int(np.floor(n ** (1 / 3)))
    var = long_run_variance(delta, lags) if lags else float(np.var(delta))
    if not var > 0:
        raise DegenerateTestError("loss differential has zero variance",
                                  {"mean": float(np.mean(delta))})
    stat = float(np.sqrt(n) * np.mean(delta) / np.sqrt(var))
    return TestResult(stat, _two_sided(stat),
                      "equal expected loss (mean differential = 0)", n,
                      {"p_value_one_sided": float(stats.norm.sf(stat)),
                       "variant": variant, "lags": lags})


def gw_test(delta, lags=1):
    """Giacomini-White test of conditional predictive ability.

    Tests that the daily differential is unpredictable from
    ``[1, delta_{d-1}, ..., delta_{d-lags}]``. The statistic is
    ``T * hbar' Omega^+ hbar`` for the moment series ``h_d = x_{d-1} delta_d``
    with the heteroskedasticity-robust ``Omega = mean(h h')``; it equals ``T``
    times the uncentred R^2 of regressing a constant on ``h``. Chi-square with
    ``rank(Omega)`` degrees of freedom (``lags + 1`` unless the differential is
    constant).
    """
    d = delta.values if isinstance(delta, LossSeries) else np.asarray(delta, dtype=float)
    if d.ndim != 1:
        raise ValidationError("GW test takes a daily differential series")
    if lags < 1:
        raise ValidationError("lags must be >= 1")
    n = d.size
    if n <= 10 * (lags + 1):
        raise ValidationError(f"GW test needs more than {10 * (lags + 1)} observations")
    X = np.column_stack([np.ones(n - lags)] + [d[lags - k:n - k] for k in range(1, lags + 1)])
    h = X * d[lags:, None]
    T = h.shape[0]
    if not np.any(h):
        raise DegenerateTestError("moment series is identically zero", {"observations": T})
    coef, _, rank, _ = np.linalg.lstsq(h, np.ones(T), rcond=None)
    fitted = h @ coef
    stat = float(fitted @ fitted)  # T times the uncentred R^2
    p = float(stats.chi2.sf(stat, rank))
    return TestResult(stat, min(max(p, 0.0), 1.0),
                      "differential unpredictable from constant and its lags", T,
                      {"lags": lags, "df": int(rank)})


# ---------------------------------------------------------- reliability

def coverage_stats(fan, prices, interval):
    """Hits of the closed interval between two fan levels, PICP, ACE and PINC."""
    lo, hi = interval
    if not lo < hi:
        raise ConfigError("interval must be (lower level, upper level)")
    L = fan.quantile(lo)
    U = fan.quantile(hi)
    P = np.asarray(prices, dtype=float)
    if P.shape != L.shape:
        raise ValidationError(f"prices shape {P.shape} differs from fan {L.shape}")
    pinc = hi - lo
    hits = ((P >= L) & (P <= U)).astype(int)
    picp = float(hits.mean())
    return Coverage(HitSeries(hits.ravel(), pinc), picp, picp - pinc, pinc)


def _bernoulli_ll(n0, n1, p):
    return xlogy(n0, 1.0 - p) + xlogy(n1, p)


def kupiec_test(hits):
    """Likelihood-ratio test of unconditional coverage, chi-square(1)."""
    h = hits.hits
    n = h.size
    if n < 30:
        raise ValidationError("Kupiec test needs at least 30 observations")
    n1 = int(h.sum())
    n0 = n - n1
    a = hits.nominal
    stat = float(-2.0 * (_bernoulli_ll(n0, n1, a) - _bernoulli_ll(n0, n1, n1 / n)))
    stat = max(stat, 0.0)
    return TestResult(stat, float(stats.chi2.sf(stat, 1)),
                      f"hit probability equals {a}", n,
                      {"hit_rate": n1 / n, "degenerate": n1 in (0, n)})


def _transitions(h):
    prev, cur = h[:-1], h[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    return n00, n01, n10, n11


def christoffersen_test(hits, kind="conditional_coverage"):
    """Markov independence test, or its sum with Kupiec's statistic for conditional coverage."""
    if kind not in ("independence", "conditional_coverage"):
        raise ValidationError(f"unknown Christoffersen variant {kind!r}")
    h = hits.hits
    n = h.size
    if n < 30:
        raise ValidationError("Christoffersen test needs at least 30 observations")
    n00, n01, n10, n11 = _transitions(h)
    uc = kupiec_test(hits)
    counts = {"n00": n00, "n01": n01, "n10": n10, "n11": n11}
    if n00 + n01 == 0 or n10 + n11 == 0:
        raise DegenerateTestError("only one state observed; transition matrix undefined",
                                  {**counts, "uc_statistic": uc.statistic,
                                   "uc_p_value": uc.p_value})
    pi01 = n01 / (n00 + n01)
    pi11 = n11 / (n10 + n11)
    pi = (n01 + n11) / (n - 1)
    ll_markov = _bernoulli_ll(n00, n01, pi01) + _bernoulli_ll(n10, n11, pi11)
    ll_iid = _bernoulli_ll(n00 + n10, n01 + n11, pi)
    ind = max(float(-2.0 * (ll_iid - ll_markov)), 0.0)
    if kind == "independence":
        return TestResult(ind, float(stats.chi2.sf(ind, 1)),
                          "hits independent against first-order Markov", n, counts)
    cc = ind + uc.statistic
    return TestResult(cc, float(stats.chi2.sf(cc, 2)),
                      f"independent hits with probability {hits.nominal}", n,
                      {**counts, "independence_statistic": ind,
                       "uc_statistic": uc.statistic})


def _pit_cell(v, lv, p):
    n = v.size
    i_l = np.searchsorted(v, p, side="left")
    i_r = np.searchsorted(v, p, side="right")
    if i_r > i_l:  # p equals one or more quantile values
        return float(lv[i_l:i_r].mean())
    if i_r == 0:
        j = np.flatnonzero(v > v[0])
        if j.size == 0:
            return 0.0
        j = j[0]
        slope = (lv[j] - lv[0]) / (v[j] - v[0])
        return float(max(0.0, lv[0] - slope * (v[0] - p)))
    if i_l == n:
        j = np.flatnonzero(v < v[-1])
        if j.size == 0:
            return 1.0
        j = j[-1]
        slope = (lv[-1] - lv[j]) / (v[-1] - v[j])
        return float(min(1.0, lv[-1] + slope * (p - v[-1])))
    a, b = i_l - 1, i_l
    w = (p - v[a]) / (v[b] - v[a])
    return float(lv[a] + w * (lv[b] - lv[a]))


def pit_series(fan, prices):
    """Predictive CDF of each realized price, interpolated linearly on the fan.

    Beyond the outermost quantiles the first (last) segment is extended
    linearly and clamped to [0, 1]; a price equal to a run of tied quantile
    values gets the mean of their levels.
    """
    P = np.asarray(prices, dtype=float)
    D = len(fan.days)
    if P.shape != (D, H):
        raise ValidationError(f"prices shape {P.shape} differs from fan ({D}, {H})")
    out = np.empty((D, H))
    for d in range(D):
        for h in range(H):
            out[d, h] = _pit_cell(fan.values[d, h], fan.levels, P[d, h])
    return out


def fan_sample(fan, u):
    """Prices whose PIT under ``fan`` equals ``u`` (a ``D x 24`` array in [0, 1])."""
    u = np.asarray(u, dtype=float)
    lv = fan.levels
    out = np.empty(u.shape)
    for d in range(u.shape[0]):
        for h in range(H):
            v = fan.values[d, h]
            x = u[d, h]
            if x < lv[0]:
                slope = (lv[1] - lv[0]) / (v[1] - v[0])
                out[d, h] = v[0] - (lv[0] - x) / slope
            elif x > lv[-1]:
                slope = (lv[-1] - lv[-2]) / (v[-1] - v[-2])
                out[d, h] = v[-1] + (x - lv[-1]) / slope
            else:
                out[d, h] = np.interp(x, lv, v)
    return out


def berkowitz_test(pit):
    """Joint LR test that ``Phi^-1(PIT)`` is i.i.d. standard normal, chi-square(3).

    The alternative is a Gaussian AR(1) with free mean, variance and
    autoregressive coefficient, estimated by conditional maximum likelihood.
    """
    u = np.asarray(pit, dtype=float).ravel()
    if u.size < 50:
        raise ValidationError("Berkowitz test needs at least 50 observations")
    z = stats.norm.ppf(np.clip(u, PIT_EPS, 1.0 - PIT_EPS))
    if not np.all(np.isfinite(z)):
        raise ValidationError("non-finite normal scores")
    y, x = z[1:], z[:-1]
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sigma2 = float(resid @ resid / y.size)
    if not sigma2 > 0:
        raise DegenerateTestError("zero residual variance in AR(1) fit")
    m = y.size
    ll_alt = -0.5 * m * (np.log(2 * np.pi * sigma2) + 1.0)
    ll_null = -0.5 * m * np.log(2 * np.pi) - 0.5 * float(y @ y)
    stat = max(float(-2.0 * (ll_null - ll_alt)), 0.0)
    mu = coef[0] / (1.0 - coef[1]) if coef[1] != 1 else np.nan
    return TestResult(stat, float(stats.chi2.sf(stat, 3)),
                      "normal scores i.i.d. N(0, 1)", int(u.size),
                      {"intercept": float(coef[0]), "ar1": float(coef[1]),
                       "variance": sigma2, "mean": float(mu)})


# --------------------------------------------------------- scoring rules

def pinball_loss(quantile, price, level):
    """Elementwise check loss of an ``level``-quantile forecast."""
    q = np.asarray(quantile, dtype=float)
    p = np.asarray(price, dtype=float)
    return np.where(p < q, (1.0 - level) * (q - p), level * (p - q))


def pinball(fan, prices, level):
    """Per-cell pinball losses at one level and their mean."""
    loss = pinball_loss(fan.quantile(level), prices, level)
    return LossSeries(loss, f"pinball({level})"), float(loss.mean())


def aggregate_pinball(fan, prices, per_cell=False):
    """Pinball averaged over every level, hour and day (APS)."""
    P = np.asarray(prices, dtype=float)[:, :, None]
    loss = pinball_loss(fan.values, P, fan.levels[None, None, :]).mean(axis=2)
    if per_cell:
        return LossSeries(loss, "aps")
    return float(loss.mean())


def crps_sample(samples, price):
    """Sample CRPS ``mean|X - y| - (1 / 2M^2) sum_ij |X_i - X_j|``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m < 1:
        raise ValidationError("CRPS needs at least one sample")
    first = np.mean(np.abs(x - price))
    # sum_ij |x_i - x_j| = 2 sum_i (2i - m - 1) x_(i)
    spread = 2.0 * np.sum((2 * np.arange(1, m + 1) - m - 1) * x)
    return float(first - spread / (2.0 * m * m))


def crps_fan(fan, prices):
    """CRPS per cell, treating each cell's quantile values as an equal-weight sample."""
    P = np.asarray(prices, dtype=float)
    x = fan.values  # already sorted along levels
    m = x.shape[-1]
    first = np.mean(np.abs(x - P[:, :, None]), axis=-1)
    w = 2 * np.arange(1, m + 1) - m - 1
    spread = 2.0 * (x * w).sum(axis=-1)
    return LossSeries(first - spread / (2.0 * m * m), "crps")


def energy_score(ensemble, realized):
    """Energy score of an ``M x dim`` ensemble against the realized vector."""
    paths = ensemble.paths if hasattr(ensemble, "paths") else np.asarray(ensemble, float)
    paths = np.atleast_2d(paths)
    y = np.asarray(realized, dtype=float).ravel()
    if paths.shape[1] != y.size:
        raise ValidationError("realized vector dimension differs from the paths")
    m = paths.shape[0]
    first = np.mean(np.linalg.norm(paths - y, axis=1))
    second = 2.0 * pdist(paths).sum() / (m * m) if m > 1 else 0.0
    return float(first - 0.5 * second)


# ---------------------------------------------------------- reports

def comparison_matrix(losses, test="dm", **kwargs):
    """Pairwise test results ``{a: {b: result}}`` over a dict of LossSeries."""
    names = list(losses)
    out = {}
    for a in names:
        out[a] = {}
        for b in names:
            if a == b:
                continue
            try:
                if test == "dm":
                    res = dm_test(losses[a], losses[b], **kwargs)
                else:
                    delta = loss_differential(losses[a], losses[b],
                                              kwargs.get("variant", "multivariate"))
                    res = gw_test(delta, kwargs.get("lags", 1))
                out[a][b] = res.to_dict()
            except DegenerateTestError as exc:
                out[a][b] = {"error": str(exc)}
    return out
