"""Synthetic hourly market generator with seasonality, spikes and negative prices."""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .marketdata import H, MarketDataset

# default coefficients for the expert-model data-generating process, in feature order
# P[d-1,h], P[d-2,h], P[d-7,h], P[d-1,24], Pmax[d-1], Pmin[d-1]
EXPERT_AR = (0.35, 0.15, 0.2, 0.1, 0.05, 0.05)


@dataclass(frozen=True)
class SynthSpec:
    days: int = 400
    start: str = "2020-01-01"
    process: str = "seasonal"  # or "expert"
    base_level: float = 50.0
    daily_amplitude: float = 10.0
    weekly_amplitude: float = 5.0
    ar_phi: float = 0.8
    noise_sd: float = 3.0
    spike_prob: float = 0.0
    spike_scale: float = 50.0
    negative_prob: float = 0.0
    negative_scale: float = 20.0
    load_level: float = 20_000.0
    load_amplitude: float = 4_000.0
    load_noise: float = 500.0
    res_level: float = 6_000.0
    res_amplitude: float = 3_000.0
    res_noise: float = 1_000.0
    load_day_sd: float = 1_000.0
    res_day_sd: float = 2_500.0
    coupling_load: float = 0.002
    coupling_res: float = -0.002
    id_spread_sd: float = 4.0
    bal_spread_sd: float = 6.0
    expert_ar: tuple = EXPERT_AR
    seed: int = 0

    def __post_init__(self):
        if self.days < 60:
            raise ConfigError("synthetic datasets need at least 60 days")
        if self.process not in ("seasonal", "expert"):
            raise ConfigError(f"unknown process {self.process!r}")
        for name in ("spike_prob", "negative_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        if not -1.0 < self.ar_phi < 1.0:
            raise ConfigError("ar_phi must lie in (-1, 1)")
        for name in ("noise_sd", "load_noise", "res_noise", "load_day_sd", "res_day_sd",
                     "id_spread_sd", "bal_spread_sd",
                     "spike_scale", "negative_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if len(self.expert_ar) != 6:
            raise ConfigError("expert_ar needs six coefficients")
        try:
            dt.date.fromisoformat(self.start)
        except ValueError as exc:
            raise ConfigError(f"bad start date {self.start!r}") from exc

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys {sorted(unknown)}")
        d = dict(d)
        if "expert_ar" in d:
            d["expert_ar"] = tuple(d["expert_ar"])
        return cls(**d)

    def to_dict(self):
        out = asdict(self)
        out["expert_ar"] = list(self.expert_ar)
        return out


def synth_generate(spec):
    """Draw a :class:`MarketDataset` from ``spec``; identical seeds give identical panels.

    ``dataset.meta["spike_count"]`` and ``["negative_count"]`` record how many
    cells received a spike or were forced negative.
    """
    rng = np.random.default_rng(spec.seed)
    D = spec.days
    start = dt.date.fromisoformat(spec.start)
    days = [start + dt.timedelta(days=i) for i in range(D)]
    hours = np.arange(H)
    weekday = np.array([d.isoweekday() for d in days])

    daily = np.sin(2 * np.pi * (hours - 7) / H)
    weekly = np.cos(2 * np.pi * (weekday - 1) / 7)
    solar = np.clip(np.sin(np.pi * (hours - 6) / 12), 0, None)
    # day-level weather factors shift all 24 hours together
    load = spec.load_level + spec.load_amplitude * daily[None, :] \
        + spec.load_day_sd * rng.standard_normal((D, 1)) \
        + spec.load_noise * rng.standard_normal((D, H))
    res = spec.res_level + spec.res_amplitude * (solar[None, :] - solar.mean()) \
        + spec.res_day_sd * rng.standard_normal((D, 1)) \
        + spec.res_noise * rng.standard_normal((D, H))
    load = np.clip(load, 0, None)
    res = np.clip(res, 0, None)
    exog_part = spec.coupling_load * (load - spec.load_level) \
        + spec.coupling_res * (res - spec.res_level)
    season = spec.daily_amplitude * daily[None, :] + spec.weekly_amplitude * weekly[:, None]
    shocks = spec.noise_sd * rng.standard_normal((D, H))

    if spec.process == "seasonal":
        flat = shocks.ravel()
        noise = np.empty_like(flat)
        acc = 0.0
        for i, e in enumerate(flat):
            acc = spec.ar_phi * acc + e
            noise[i] = acc
        prices = spec.base_level + season + exog_part + noise.reshape(D, H)
    else:
        b = np.asarray(spec.expert_ar, dtype=float)
        # same-hour lags amplify the seasonal input; scale it back to the stated amplitude
        drive = season * (1.0 - b[:3].sum())
        # intercept chosen so the noise-free steady state averages base_level
        week = np.arange(7)
        profile = (spec.daily_amplitude * daily[None, :]
                   + spec.weekly_amplitude * np.cos(2 * np.pi * week / 7)[:, None]) \
            * (1.0 - b[:3].sum()) \
            + spec.coupling_load * spec.load_amplitude * daily[None, :] \
            + spec.coupling_res * spec.res_amplitude * (solar - solar.mean())[None, :]
        steady = _expert_recursion(b, 0.0, np.tile(profile, (52, 1)),
                                   np.zeros((7 * 52, H)), np.zeros((7, H)))
        level = (spec.base_level - steady[-28:].mean()) * (1.0 - b.sum())
        start_block = spec.base_level + season[:7] + exog_part[:7] + shocks[:7]
        prices = _expert_recursion(b, level, drive + exog_part, shocks, start_block)

    spikes = rng.random((D, H)) < spec.spike_prob
    prices = prices + spikes * spec.spike_scale * rng.exponential(1.0, (D, H))
    negative = rng.random((D, H)) < spec.negative_prob
    prices = np.where(negative, -spec.negative_scale * rng.random((D, H)), prices)

    prices_id = prices + spec.id_spread_sd * rng.standard_normal((D, H))
    prices_bal = prices_id + spec.bal_spread_sd * rng.standard_normal((D, H))
    return MarketDataset(
        days=days,
        prices_da=prices,
        exog1=load,
        exog2=res,
        prices_id=prices_id,
        prices_bal=prices_bal,
        meta={"generator": spec.to_dict(),
              "spike_count": int(spikes.sum()),
              "negative_count": int(negative.sum())},
    )


def _expert_recursion(b, level, drive, shocks, first7):
    n = drive.shape[0]
    prices = np.empty((n, H))
    prices[:7] = first7
    for d in range(7, n):
        prev = prices[d - 1]
        prices[d] = (level + b[0] * prev + b[1] * prices[d - 2] + b[2] * prices[d - 7]
                     + b[3] * prev[-1] + b[4] * prev.max() + b[5] * prev.min()
                     + drive[d] + shocks[d])
    return prices
