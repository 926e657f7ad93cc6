"""Economic evaluation: DA/ID spread strategy, battery limit orders, Sharpe ratio, FIEI."""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, DegenerateScaleError, ValidationError
from .marketdata import H


class NegativeFieiWarning(UserWarning):
    """Forecast-based cost below the perfect-foresight cost."""


@dataclass(frozen=True)
class DecisionPanel:
    """``values[d, h] = 1`` sells in the day-ahead market, ``0`` in the intraday market."""

    days: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (len(self.days), H) or not np.all((v == 0) | (v == 1)):
            raise ValidationError("decisions must be a D x 24 zero/one panel")
        v = v.astype(int)
        v.setflags(write=False)
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class TradeLedger:
    """Trade records with a ``profit`` and running ``cumulative`` column."""

    entries: pd.DataFrame
    granularity: str  # "hourly" or "daily"
    summary: Mapping = field(default_factory=dict)

    @property
    def profits(self):
        return self.entries["profit"].to_numpy(float)

    @property
    def total(self):
        return float(self.entries["profit"].sum()) if len(self.entries) else 0.0

    def save(self, path, summary_path=None):
        self.entries.to_csv(path, index=False, float_format="%.10g")
        if summary_path is not None:
            with open(summary_path, "w") as fh:
                json.dump(dict(self.summary), fh, indent=2, sort_keys=True)


def _ledger(records, granularity, extra_summary=None):
    df = pd.DataFrame(records)
    if len(df):
        df["cumulative"] = df["profit"].cumsum()
    else:
        df = pd.DataFrame(columns=["date", "profit", "cumulative"])
    ledger = TradeLedger(df, granularity)
    summary = {"total_profit": ledger.total, "entries": int(len(df)), "granularity": granularity}
    try:
        summary["sharpe_ratio"] = sharpe_ratio(ledger)
    except DegenerateScaleError:
        summary["sharpe_ratio"] = None
    summary.update(extra_summary or {})
    return TradeLedger(df, granularity, summary)


# ------------------------------------------------------- DA / ID spread

def da_id_decision(da_fc, id_fc):
    """Sell in the day-ahead market where its forecast strictly exceeds the intraday forecast."""
    if da_fc.days != id_fc.days or da_fc.values.shape != id_fc.values.shape:
        raise ConfigError("day-ahead and intraday forecasts are not aligned")
    return DecisionPanel(da_fc.days, (da_fc.values > id_fc.values).astype(int))


def spread_profit(decisions, dataset):
    """Hourly income over always selling 1 MW day-ahead.

    ``profit = Y * P_DA + (1 - Y) * P_ID - P_DA``.
    """
    if dataset.prices_id is None:
        raise ConfigError("spread strategy needs intraday prices")
    idx = [dataset.index_of(d) for d in decisions.days]
    Y = decisions.values
    da = dataset.prices_da[idx] if idx else np.empty((0, H))
    idp = dataset.prices_id[idx] if idx else np.empty((0, H))
    profit = Y * da + (1 - Y) * idp - da
    records = {
        "date": np.repeat([d.isoformat() for d in decisions.days], H),
        "hour": np.tile(np.arange(1, H + 1), len(idx)),
        "decision": Y.ravel(),
        "price_da": da.ravel(),
        "price_id": idp.ravel(),
        "profit": profit.ravel(),
    }
    return _ledger(records, "hourly",
                   {"share_sold_day_ahead": float(Y.mean()) if Y.size else None})


def sharpe_ratio(ledger):
    """Mean revenue over its sample standard deviation (ddof = 1)."""
    x = ledger.profits if isinstance(ledger, TradeLedger) else np.asarray(ledger, float)
    if x.size < 2:
        raise DegenerateScaleError("Sharpe ratio needs at least two revenues")
    if np.ptp(x) == 0:
        raise DegenerateScaleError("revenues have zero dispersion")
    return float(np.mean(x) / np.std(x, ddof=1))


def fiei(cost_with_forecast, cost_perfect):
    """Share of the forecast-driven cost attributable to forecast errors."""
    if cost_with_forecast == 0:
        raise DegenerateScaleError("cost with forecast is zero")
    value = (cost_with_forecast - cost_perfect) / cost_with_forecast
    if value < 0:
        warnings.warn("negative FIEI: forecast-based cost below the perfect-foresight cost",
                      NegativeFieiWarning, stacklevel=2)
    return value


# -------------------------------------------------------------- battery

@dataclass(frozen=True)
class BatteryConfig:
    alpha: float = 0.5
    mode: str = "balancing_fallback"  # or "next_day_close"
    capacity_mw: float = 1.25
    efficiency: float = 0.8
    min_level_mw: float = 0.25

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.efficiency <= 1:
            raise ConfigError("efficiency must lie in (0, 1]")
        if not self.min_level_mw < self.capacity_mw:
            raise ConfigError("min_level_mw must be below capacity_mw")
        if self.mode not in ("balancing_fallback", "next_day_close"):
            raise ConfigError(f"unknown battery mode {self.mode!r}")

    @property
    def levels(self):
        """(lower, upper) fan levels bounding the central ``alpha`` interval."""
        return (1 - self.alpha) / 2, (1 + self.alpha) / 2


@dataclass(frozen=True)
class BatteryOrder:
    day: dt.date
    h1: int
    h2: int
    bid_price: float
    ask_price: float
    buy_mw: float = 1.0
    sell_mw: float = 0.8

    def __post_init__(self):
        if not 1 <= self.h1 < self.h2 <= H:
            raise ValidationError(f"need 1 <= h1 < h2 <= 24, got {self.h1}, {self.h2}")


def _order_objective(upper, lower, efficiency):
    obj = efficiency * lower[None, :] - upper[:, None]  # [h1, h2]
    obj[np.tril_indices(H)] = -np.inf
    return obj


def battery_optimize(fan, day, config):
    """Best charge hour ``h1`` and discharge hour ``h2 > h1`` for one day.

    Maximizes ``efficiency * L[h2] - U[h1]`` over the 276 ordered pairs, where
    ``U`` and ``L`` are the upper and lower bounds of the central
    ``config.alpha`` interval. Ties go to the smallest ``h1``, then ``h2``.
    """
    lo, hi = config.levels
    d = fan.day_index(day)
    upper = fan.values[d, :, fan.level_index(hi)]
    lower = fan.values[d, :, fan.level_index(lo)]
    obj = _order_objective(upper, lower, config.efficiency)
    flat = int(np.argmax(obj))  # row-major: first maximum has smallest h1, then h2
    i, j = divmod(flat, H)
    return BatteryOrder(fan.days[d], i + 1, j + 1, float(upper[i]), float(lower[j]),
                        1.0, config.efficiency)


@dataclass(frozen=True)
class BatterySettlement:
    order: BatteryOrder
    buy_accepted: bool
    sell_accepted: bool
    buy_price: float
    sell_price: float
    profit: float

    def record(self):
        o = self.order
        return {"date": o.day.isoformat(), "h1": o.h1, "h2": o.h2,
                "bid": o.bid_price, "ask": o.ask_price,
                "buy_accepted": int(self.buy_accepted), "sell_accepted": int(self.sell_accepted),
                "buy_price": self.buy_price, "sell_price": self.sell_price,
                "profit": self.profit}


def battery_settle(order, dataset, config):
    """Settle one day's order pair against realized day-ahead prices.

    The bid executes iff ``P[h1] <= bid`` and the offer iff ``P[h2] >= ask``.
    A rejected leg is transacted at the balancing price of the same hour, or
    (``next_day_close``) at the next day's day-ahead price for that hour. The
    sell volume is ``order.sell_mw`` whichever market takes it.
    """
    t = dataset.index_of(order.day)
    p1 = dataset.prices_da[t, order.h1 - 1]
    p2 = dataset.prices_da[t, order.h2 - 1]
    buy_ok = bool(p1 <= order.bid_price)
    sell_ok = bool(p2 >= order.ask_price)
    if not (buy_ok and sell_ok):
        if config.mode == "balancing_fallback":
            if dataset.prices_bal is None:
                raise ConfigError("balancing_fallback mode needs balancing prices")
            fallback = dataset.prices_bal[t]
        else:
            if t + 1 >= dataset.n_days:
                raise ConfigError(f"no next-day prices to close the position of {order.day}")
            fallback = dataset.prices_da[t + 1]
        if not buy_ok:
            p1 = fallback[order.h1 - 1]
        if not sell_ok:
            p2 = fallback[order.h2 - 1]
    profit = order.sell_mw * p2 - order.buy_mw * p1
    return BatterySettlement(order, buy_ok, sell_ok, float(p1), float(p2), float(profit))


def run_battery_backtest(fan, dataset, config, days=None):
    """One order pair per fan day, settled and accumulated into a daily ledger."""
    days = fan.days if days is None else tuple(days)
    settled = [battery_settle(battery_optimize(fan, d, config), dataset, config) for d in days]
    records = [s.record() for s in settled]
    extra = {
        "alpha": config.alpha,
        "mode": config.mode,
        "buy_acceptance_rate": float(np.mean([s.buy_accepted for s in settled])) if settled else None,
        "sell_acceptance_rate": float(np.mean([s.sell_accepted for s in settled])) if settled else None,
    }
    return _ledger(records, "daily", extra)
