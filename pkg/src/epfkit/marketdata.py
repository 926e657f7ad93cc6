"""Hourly market data panels: loading, validation and the asinh transform.

A :class:`MarketDataset` stores every series as a ``D x 24`` matrix whose
row ``d`` is a delivery day and column ``h - 1`` is load period ``h``.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (DegenerateScaleError, GapError, HistoryError, ParseError,
                     ValidationError)

logger = logging.getLogger(__name__)

H = 24
MIN_VST_DAYS = 30

DEFAULT_SCHEMA = {
    "timestamp": "timestamp",
    "price_da": "price_da",
    "price_id": "price_id",
    "price_bal": "price_bal",
    "load_fc": "load_fc",
    "res_fc": "res_fc",
}
_OPTIONAL = ("price_id", "price_bal")


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CalendarFrame:
    weekday: np.ndarray  # ISO weekday, Monday = 1
    dummies: np.ndarray  # D x 7, column j-1 is 1 iff weekday == j

    @classmethod
    def from_days(cls, days):
        weekday = np.array([d.isoweekday() for d in days], dtype=int)
        dummies = np.zeros((len(days), 7))
        dummies[np.arange(len(days)), weekday - 1] = 1.0
        weekday.setflags(write=False)
        dummies.setflags(write=False)
        return cls(weekday, dummies)


@dataclass(frozen=True)
class MarketDataset:
    """Immutable ``D x 24`` panel of prices and exogenous day-ahead forecasts.

    Parameters
    ----------
    days : sequence of datetime.date
        Consecutive delivery days.
    prices_da : array_like, shape (D, 24)
        Day-ahead prices.
    exog1, exog2 : array_like, shape (D, 24)
        System load forecast and RES generation forecast.
    prices_id, prices_bal : array_like, optional
        Intraday and balancing prices.
    meta : mapping
        Free-form provenance (repair counts, generator info).
    """

    days: tuple
    prices_da: np.ndarray
    exog1: np.ndarray
    exog2: np.ndarray
    prices_id: np.ndarray | None = None
    prices_bal: np.ndarray | None = None
    meta: Mapping = field(default_factory=dict)
    calendar: CalendarFrame = field(init=False, repr=False)

    def __post_init__(self):
        days = tuple(self.days)
        object.__setattr__(self, "days", days)
        for name in ("prices_da", "exog1", "exog2", "prices_id", "prices_bal"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(days)
        for name in ("prices_da", "exog1", "exog2", "prices_id", "prices_bal"):
            a = getattr(self, name)
            if a is None:
                continue
            if a.shape != (n, H):
                raise ValidationError(f"{name} has shape {a.shape}, expected ({n}, {H})")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} contains non-finite values")
        for a, b in zip(days, days[1:]):
            if b - a != dt.timedelta(days=1):
                raise ValidationError(f"days not consecutive: {a} -> {b}")
        object.__setattr__(self, "calendar", CalendarFrame.from_days(days))

    @property
    def n_days(self):
        return len(self.days)

    def index_of(self, day):
        """Row index of ``day`` (a date or an integer index)."""
        if isinstance(day, (int, np.integer)):
            if not 0 <= day < self.n_days:
                raise IndexError(f"day index {day} out of range")
            return int(day)
        if isinstance(day, str):
            day = dt.date.fromisoformat(day)
        if isinstance(day, dt.datetime):
            day = day.date()
        offset = (day - self.days[0]).days
        if not 0 <= offset < self.n_days:
            raise HistoryError(f"{day} is outside the dataset range")
        return offset

    def subset(self, start, stop):
        """Rows ``start:stop`` as a new dataset (integer indices)."""
        sl = slice(start, stop)
        return MarketDataset(
            days=self.days[sl],
            prices_da=self.prices_da[sl],
            exog1=self.exog1[sl],
            exog2=self.exog2[sl],
            prices_id=None if self.prices_id is None else self.prices_id[sl],
            prices_bal=None if self.prices_bal is None else self.prices_bal[sl],
            meta=dict(self.meta),
        )

    def with_prices(self, prices):
        """Copy with ``prices_da`` replaced, e.g. to model the intraday series."""
        return replace(self, prices_da=prices)

    def to_frame(self):
        """Long hourly frame in the CSV column layout (UTC offset +00:00)."""
        stamps = [
            dt.datetime.combine(d, dt.time(h), tzinfo=dt.timezone.utc).isoformat()
            for d in self.days for h in range(H)
        ]
        cols = {"timestamp": stamps, "price_da": self.prices_da.ravel()}
        if self.prices_id is not None:
            cols["price_id"] = self.prices_id.ravel()
        if self.prices_bal is not None:
            cols["price_bal"] = self.prices_bal.ravel()
        cols["load_fc"] = self.exog1.ravel()
        cols["res_fc"] = self.exog2.ravel()
        return pd.DataFrame(cols)


def save_dataset(dataset, path):
    dataset.to_frame().to_csv(path, index=False, float_format="%.10g")


def _parse_timestamp(text, row):
    s = str(text).strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        ts = dt.datetime.fromisoformat(s)
    except ValueError:
        raise ParseError(f"row {row}: malformed timestamp {text!r}", row=row) from None
    return ts


def load_dataset(path, schema=None):
    """Read an hourly CSV into a validated :class:`MarketDataset`.

    Timestamps carry local market time (optionally with a UTC offset). Rows are
    placed on the local wall-clock grid: a duplicated clock-change hour is
    averaged, a single missing hour is linearly interpolated from its
    neighbours, and any longer hole raises :class:`GapError`. Counts of
    repaired cells are stored in ``dataset.meta["repairs"]``.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    raw.columns = [c.strip() for c in raw.columns]
    required = ["timestamp", "price_da", "load_fc", "res_fc"]
    missing = [k for k in required if cols[k] not in raw.columns]
    if missing:
        raise ParseError(f"missing required columns: {[cols[k] for k in missing]}")
    present = required + [k for k in _OPTIONAL if cols[k] in raw.columns]
    if len(raw) == 0:
        raise ParseError("no data rows")

    local, instants = [], []
    values = {k: np.empty(len(raw)) for k in present if k != "timestamp"}
    for i, rec in enumerate(raw.to_dict("records")):
        row = i + 2  # 1-based file line, header is line 1
        ts = _parse_timestamp(rec[cols["timestamp"]], row)
        if ts.minute or ts.second or ts.microsecond:
            raise ParseError(f"row {row}: timestamp {ts} is not on the hour", row=row)
        local.append(ts.replace(tzinfo=None))
        instants.append(ts.astimezone(dt.timezone.utc).replace(tzinfo=None)
                        if ts.tzinfo is not None else ts)
        for k in values:
            text = rec[cols[k]].strip()
            try:
                values[k][i] = float(text)
            except ValueError:
                raise ParseError(f"row {row}: column {cols[k]!r} has non-numeric value {text!r}",
                                 row=row) from None
            if not np.isfinite(values[k][i]):
                raise ParseError(f"row {row}: column {cols[k]!r} is not finite", row=row)

    for k in ("load_fc", "res_fc"):
        bad = np.flatnonzero(values[k] < 0)
        if bad.size:
            raise ValidationError(f"row {bad[0] + 2}: negative exogenous value in {cols[k]!r}")

    order = np.argsort(np.array(instants, dtype="datetime64[s]"), kind="stable")
    first = min(local).date()
    last = max(local).date()
    n_days = (last - first).days + 1
    n_cells = n_days * H
    slot = np.array([((t.date() - first).days * H + t.hour) for t in local])[order]

    sums = {k: np.zeros(n_cells) for k in values}
    counts = np.zeros(n_cells, dtype=int)
    np.add.at(counts, slot, 1)
    for k in values:
        np.add.at(sums[k], slot, values[k][order])
    duplicated = int(np.sum(counts > 1))
    empty = counts == 0
    # any run of more than one missing local hour is a gap
    runs = np.diff(np.concatenate([[0], empty.astype(int), [0]]))
    starts, ends = np.flatnonzero(runs == 1), np.flatnonzero(runs == -1)
    for s, e in zip(starts, ends):
        if e - s > 1 or s == 0 or e == n_cells:
            day = first + dt.timedelta(days=int(s // H))
            raise GapError(f"{e - s} missing hour(s) starting {day} hour {s % H + 1}")

    panels = {}
    filled = np.flatnonzero(~empty)
    for k in values:
        flat = np.full(n_cells, np.nan)
        flat[filled] = sums[k][filled] / counts[filled]
        if empty.any():
            idx = np.flatnonzero(empty)
            flat[idx] = np.interp(idx, filled, flat[filled])
        panels[k] = flat.reshape(n_days, H)

    repairs = {"duplicated_hours_averaged": duplicated,
               "missing_hours_interpolated": int(empty.sum())}
    if duplicated or empty.any():
        logger.info("repaired %s in %s", repairs, path)
    days = [first + dt.timedelta(days=i) for i in range(n_days)]
    return MarketDataset(
        days=days,
        prices_da=panels["price_da"],
        exog1=panels["load_fc"],
        exog2=panels["res_fc"],
        prices_id=panels.get("price_id"),
        prices_bal=panels.get("price_bal"),
        meta={"source": str(path), "repairs": repairs},
    )


@dataclass(frozen=True)
class VstParams:
    center: float
    scale: float
    exog_mean: tuple = (0.0, 0.0)
    exog_std: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise DegenerateScaleError("VST scale must be positive")


def fit_vst(dataset):
    """Estimate asinh parameters from the day-ahead prices of ``dataset``."""
    if dataset.n_days < MIN_VST_DAYS:
        raise HistoryError(f"asinh transform needs at least {MIN_VST_DAYS} days, "
                           f"got {dataset.n_days}")
    p = dataset.prices_da.ravel()
    center = float(np.median(p))
    scale = float(stats.median_abs_deviation(p, scale="normal"))
    if not scale > 0:
        raise DegenerateScaleError("median absolute deviation of prices is zero")
    means, stds = [], []
    for x in (dataset.exog1, dataset.exog2):
        m, s = float(x.mean()), float(x.std())
        means.append(m)
        stds.append(s if s > 0 else 1.0)
    return VstParams(center, scale, tuple(means), tuple(stds))


def apply_vst(dataset, params):
    """Transform every price panel and standardize the exogenous panels."""
    def tr(a):
        return None if a is None else np.arcsinh((a - params.center) / params.scale)

    return replace(
        dataset,
        prices_da=tr(dataset.prices_da),
        prices_id=tr(dataset.prices_id),
        prices_bal=tr(dataset.prices_bal),
        exog1=(dataset.exog1 - params.exog_mean[0]) / params.exog_std[0],
        exog2=(dataset.exog2 - params.exog_mean[1]) / params.exog_std[1],
    )


def asinh_transform(dataset):
    """Return ``(transformed dataset, VstParams)``.

    Prices become ``asinh((P - median) / MAD)`` with the MAD scaled to match the
    standard deviation under normality; exogenous panels are standardized.
    """
    params = fit_vst(dataset)
    return apply_vst(dataset, params), params


def invert_vst(values, params):
    return params.center + params.scale * np.sinh(np.asarray(values, dtype=float))
