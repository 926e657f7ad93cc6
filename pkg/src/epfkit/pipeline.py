"""Config-driven end-to-end run: ingest, point models, probabilistic layer, scoring, trading."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DegenerateScaleError, DegenerateTestError, EpfError, \
    PipelineError, ValidationError
from .marketdata import load_dataset, save_dataset
from .pointmodels import rolling_backtest
from .probforecast import PERCENTILES, bootstrap_paths, error_shift_quantiles, path_fan, \
    qra_fan, save_paths
from .scoring import ErrorPanel, LossSeries, aggregate_pinball, berkowitz_test, \
    christoffersen_test, comparison_matrix, coverage_stats, crps_fan, energy_score, \
    insample_naive_mae, kupiec_test, pit_series, point_metrics, relative_metrics
from .synth import SynthSpec, synth_generate
from .trading import BatteryConfig, da_id_decision, run_battery_backtest, spread_profit

logger = logging.getLogger(__name__)

MODELS = ("naive", "expert", "lear")
INTERVALS = {"50": (0.25, 0.75), "90": (0.05, 0.95)}


@dataclass(frozen=True)
class RunConfig:
    """One experiment. Serialized as JSON; unknown keys are rejected.

    ``data`` is either ``{"path": "prices.csv"}`` or ``{"synthetic": {...}}``
    with :class:`SynthSpec` fields. ``evaluation`` holds optional inclusive
    ``start`` / ``stop`` dates; the default start is the first day for which
    every enabled layer has enough history.
    """

    data: dict
    output_dir: str = "out"
    models: tuple = ("naive", "expert")
    window_days: int = 364
    vst: bool = False
    lambda_refresh: int = 0
    levels: tuple = PERCENTILES
    lookback_days: int = 182
    error_shift_model: str = "expert"
    qra: bool = False
    qra_window: int = 182
    qra_refit_every: int = 7
    paths: int = 0
    evaluation: dict = field(default_factory=dict)
    spread: dict = field(default_factory=dict)  # {"model": "expert"}
    battery: dict = field(default_factory=dict)  # BatteryConfig fields
    battery_fan: str = "auto"  # error_shift, qra, paths; auto prefers qra
    seed: int | None = None

    def __post_init__(self):
        if set(self.data) not in ({"path"}, {"synthetic"}):
            raise ConfigError("data must be {'path': ...} or {'synthetic': {...}}")
        models = tuple(self.models)
        if not models or any(m not in MODELS for m in models) or len(set(models)) != len(models):
            raise ConfigError(f"models must be distinct entries of {MODELS}")
        if "naive" not in models:
            models = ("naive", *models)  # the relative metrics need the benchmark
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if self.window_days < 14 or self.lookback_days < 1 or self.qra_window < 1 \
                or self.qra_refit_every < 1:
            raise ConfigError("window_days >= 14; lookback_days, qra_window and "
                              "qra_refit_every >= 1")
        if self.error_shift_model not in models:
            raise ConfigError("error_shift_model must be one of the run's models")
        if self.paths < 0:
            raise ConfigError("paths must be nonnegative")
        if self.spread and self.spread.get("model", "expert") not in models:
            raise ConfigError("spread model must be one of the run's models")
        if self.battery:
            try:
                BatteryConfig(**self.battery)
            except TypeError as exc:
                raise ConfigError(f"bad battery section: {exc}") from exc
        if self.battery_fan not in ("auto", "error_shift", "qra", "paths"):
            raise ConfigError(f"unknown battery_fan {self.battery_fan!r}")
        enabled = {"auto": True, "error_shift": True, "qra": self.qra, "paths": self.paths > 0}
        if not enabled[self.battery_fan]:
            raise ConfigError(f"battery_fan {self.battery_fan!r} is not enabled")
        unknown = set(self.evaluation) - {"start", "stop"}
        if unknown:
            raise ConfigError(f"unknown evaluation keys {sorted(unknown)}")
        stochastic = "synthetic" in self.data or self.paths > 0
        if stochastic and self.seed is None:
            raise ConfigError("seed is required for synthetic data or path sampling")

    @classmethod
    def from_dict(cls, d):
        d = dict(d.get("config", d))  # a manifest carries its config
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "data" not in d:
            raise ConfigError("config needs a data section")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self):
        out = asdict(self)
        out["models"] = list(self.models)
        out["levels"] = list(self.levels)
        return out

    def digest(self):
        return hashlib.sha256(_dumps(self.to_dict()).encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    return x


def _dumps(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True, default=str) + "\n"


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(_dumps(obj))


def _guard(name, fn, *args, **kwargs):
    """Run a test whose degenerate cases are reported rather than fatal."""
    try:
        return fn(*args, **kwargs).to_dict()
    except (DegenerateTestError, DegenerateScaleError) as exc:
        return {"error": str(exc), "test": name}


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


def _ingest(cfg):
    if "path" in cfg.data:
        return load_dataset(cfg.data["path"])
    spec = dict(cfg.data["synthetic"])
    spec.setdefault("seed", cfg.seed)
    return synth_generate(SynthSpec.from_dict(spec))


def _ranges(cfg, ds):
    """Forecast start row and evaluation rows (inclusive)."""
    first_point = cfg.window_days + 7
    eval_start = first_point + cfg.lookback_days
    if cfg.qra:
        eval_start = max(eval_start, first_point + cfg.qra_window)
    if "start" in cfg.evaluation:
        requested = ds.index_of(cfg.evaluation["start"])
        if requested < eval_start:
            raise ConfigError(f"evaluation start {cfg.evaluation['start']} leaves less than "
                              f"{eval_start} days of history")
        eval_start = requested
    eval_stop = ds.index_of(cfg.evaluation["stop"]) if "stop" in cfg.evaluation \
        else ds.n_days - 1
    # the next-day close needs one more realized day
    if cfg.battery.get("mode") == "next_day_close" and "stop" not in cfg.evaluation:
        eval_stop -= 1
    if eval_start > eval_stop or eval_stop >= ds.n_days:
        raise ConfigError("empty or out-of-range evaluation period "
                          f"(needs at least {eval_start + 1} days, have {ds.n_days})")
    point_start = eval_start - max(cfg.lookback_days, cfg.qra_window if cfg.qra else 0)
    return point_start, eval_start, eval_stop


def _tail(fs, days):
    """Rows of a forecast set restricted to ``days``."""
    pos = {d: i for i, d in enumerate(fs.days)}
    rows = [pos[d] for d in days]
    return type(fs)(days, fs.values[rows], fs.model_id, fs.meta)


def _score_fan(fan, ds):
    P = ds.prices_da[[ds.index_of(d) for d in fan.days]]
    out = {"aps": aggregate_pinball(fan, P), "crps": float(crps_fan(fan, P).values.mean())}
    for label, interval in INTERVALS.items():
        try:
            cov = coverage_stats(fan, P, interval)
        except ConfigError as exc:
            out[f"pi{label}"] = {"error": str(exc)}
            continue
        out[f"pi{label}"] = {
            "picp": cov.picp, "pinc": cov.pinc, "ace": cov.ace,
            "kupiec": _guard("kupiec", kupiec_test, cov.hits),
            "christoffersen": _guard("christoffersen", christoffersen_test, cov.hits),
        }
    try:
        out["berkowitz"] = _guard("berkowitz", berkowitz_test, pit_series(fan, P))
    except ValidationError as exc:
        out["berkowitz"] = {"error": str(exc)}
    return out


def _restrict_fan(fan, days):
    rows = [fan.day_index(d) for d in days]
    return type(fan)(list(days), fan.levels, fan.values[rows])


def run_pipeline(config, output_dir=None):
    """Execute ``config`` and write its artifacts; returns the output path.

    Outputs are assembled in a temporary sibling directory and moved into
    place only when every stage succeeded, so a failed run leaves nothing
    behind. A stage failure raises :class:`PipelineError` tagged with the stage.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(config)
    out = Path(output_dir or cfg.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        files = _execute(cfg, tmp)
        manifest = {
            "config": cfg.to_dict(),
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "versions": _versions(),
            "outputs": {name: _sha256(tmp / name) for name in sorted(files)},
        }
        _write_json(tmp / "manifest.json", manifest)
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


def _execute(cfg, tmp):
    files = []

    with _Stage("ingest"):
        ds = _ingest(cfg)
        if "synthetic" in cfg.data:
            save_dataset(ds, tmp / "data.csv")
            files.append("data.csv")
        point_start, eval_start, eval_stop = _ranges(cfg, ds)
        eval_days = ds.days[eval_start:eval_stop + 1]
        fc_range = (point_start, eval_stop)

    with _Stage("point"):
        forecasts = {}
        for m in cfg.models:
            forecasts[m] = rolling_backtest(ds, m, cfg.window_days, fc_range, vst=cfg.vst,
                                            lambda_refresh=cfg.lambda_refresh)
            forecasts[m].save(tmp / f"forecast_{m}.csv", sidecar=False)
            files.append(f"forecast_{m}.csv")
        id_fc = None
        if cfg.spread:
            if ds.prices_id is None:
                raise ConfigError("spread strategy needs intraday prices")
            spread_model = cfg.spread.get("model", "expert")
            id_fc = rolling_backtest(ds.with_prices(ds.prices_id), spread_model, cfg.window_days,
                                     (eval_start, eval_stop), vst=cfg.vst,
                                     lambda_refresh=cfg.lambda_refresh)
            id_fc.save(tmp / f"forecast_id_{spread_model}.csv", sidecar=False)
            files.append(f"forecast_id_{spread_model}.csv")

    with _Stage("probabilistic"):
        fans = {}
        # point forecasts start early enough that every fan covers the evaluation days
        base = forecasts[cfg.error_shift_model]
        fans["error_shift"] = _restrict_fan(
            error_shift_quantiles(base, ds, cfg.levels, cfg.lookback_days), eval_days)
        if cfg.qra:
            experts = [forecasts[m] for m in cfg.models if m != "naive"]
            fans["qra"] = _restrict_fan(
                qra_fan(experts, ds, cfg.levels, cfg.qra_window, cfg.qra_refit_every), eval_days)
        ensembles = []
        if cfg.paths:
            seeds = np.random.SeedSequence(cfg.seed).generate_state(len(eval_days))
            ensembles = [bootstrap_paths(base, ds, d, cfg.paths, cfg.lookback_days, int(s))
                         for d, s in zip(eval_days, seeds)]
            save_paths(ensembles, tmp / "paths.csv")
            files.append("paths.csv")
            fans["paths"] = path_fan(ensembles, cfg.levels)
        for name, fan in fans.items():
            fan.save(tmp / f"fan_{name}.csv")
            files.append(f"fan_{name}.csv")

    with _Stage("scoring"):
        report = {"evaluation": {"start": eval_days[0].isoformat(),
                                 "stop": eval_days[-1].isoformat(),
                                 "days": len(eval_days)}}
        errors = {m: ErrorPanel.from_forecasts(_tail(f, eval_days), ds)
                  for m, f in forecasts.items()}
        scale = insample_naive_mae(ds, eval_start)
        point = {}
        for m, e in errors.items():
            point[m] = {**point_metrics(e), **relative_metrics(e, errors["naive"], scale)}
            if m == "lear":
                point[m]["lambda_by_hour"] = forecasts[m].meta["lambda_by_hour"]
                point[m]["mean_nonzero"] = forecasts[m].meta["mean_nonzero"]
        report["point"] = point
        losses = {m: LossSeries.from_errors(e, "abs") for m, e in errors.items()}
        if len(losses) > 1:
            report["tests"] = {
                "dm": comparison_matrix(losses, "dm"),
                "gw": _gw_matrix(losses),
            }
        report["probabilistic"] = {}
        for name, fan in fans.items():
            report["probabilistic"][name] = _score_fan(fan, ds)
        if ensembles:
            es = [energy_score(e, ds.prices_da[ds.index_of(e.day)]) for e in ensembles]
            report["probabilistic"]["paths"]["energy_score"] = float(np.mean(es))
        _write_json(tmp / "report.json", report)
        files.append("report.json")

    with _Stage("trading"):
        trading = {}
        if cfg.spread:
            da_fc = _tail(forecasts[cfg.spread.get("model", "expert")], eval_days)
            ledger = spread_profit(da_id_decision(da_fc, id_fc), ds)
            ledger.save(tmp / "ledger_spread.csv")
            files.append("ledger_spread.csv")
            trading["spread"] = dict(ledger.summary)
        if cfg.battery:
            bcfg = BatteryConfig(**cfg.battery)
            name = cfg.battery_fan
            if name == "auto":
                name = "qra" if "qra" in fans else "error_shift"
            fan = fans[name]
            ledger = run_battery_backtest(fan, ds, bcfg)
            ledger.save(tmp / "ledger_battery.csv")
            files.append("ledger_battery.csv")
            trading["battery"] = dict(ledger.summary)
        if trading:
            _write_json(tmp / "trading.json", trading)
            files.append("trading.json")
    return files


def _gw_matrix(losses):
    try:
        return comparison_matrix(losses, "gw")
    except ValidationError as exc:  # too few days for the regression
        return {"error": str(exc)}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions():
    import numba
    import pandas
    import scipy
    return {"epfkit": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pandas.__version__, "numba": numba.__version__}


__all__ = ["RunConfig", "run_pipeline", "EpfError"]
