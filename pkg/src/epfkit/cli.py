"""Command-line entry point: ``epfkit generate | run | score | trade``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import EpfError, PipelineError, ValidationError
from .marketdata import load_dataset, save_dataset
from .pipeline import RunConfig, _dumps, run_pipeline
from .pointmodels import ForecastSet
from .probforecast import QuantileFan
from .scoring import ErrorPanel, point_metrics
from .synth import SynthSpec, synth_generate
from .trading import BatteryConfig, run_battery_backtest


def _generate(args):
    with open(args.spec) as fh:
        spec = SynthSpec.from_dict(json.load(fh))
    save_dataset(synth_generate(spec), args.output)
    print(f"wrote {args.output}")


def _run(args):
    cfg = RunConfig.load(args.config)
    out = run_pipeline(cfg, args.output)
    print(f"wrote {out}")


def _score(args):
    ds = load_dataset(args.data)
    fc = ForecastSet.load(args.forecast)
    report = point_metrics(ErrorPanel.from_forecasts(fc, ds))
    text = _dumps({"forecast": args.forecast, "days": len(fc.days), **report})
    _emit(text, args.output)


def _trade(args):
    ds = load_dataset(args.data)
    fan = QuantileFan.load(args.fan)
    ledger = run_battery_backtest(fan, ds, BatteryConfig(alpha=args.alpha, mode=args.mode))
    ledger.save(args.output, args.summary)
    print(_dumps(ledger.summary), end="")


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")


def build_parser():
    p = argparse.ArgumentParser(prog="epfkit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="synthetic spec JSON -> dataset CSV")
    g.add_argument("spec")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_generate)

    r = sub.add_parser("run", help="run config (or manifest) JSON -> report directory")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="overrides output_dir from the config")
    r.set_defaults(func=_run)

    s = sub.add_parser("score", help="forecast CSV + data CSV -> metrics JSON")
    s.add_argument("forecast")
    s.add_argument("data")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_score)

    t = sub.add_parser("trade", help="fan CSV + data CSV -> battery ledger CSV")
    t.add_argument("fan")
    t.add_argument("data")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--summary")
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--mode", default="balancing_fallback",
                   choices=("balancing_fallback", "next_day_close"))
    t.set_defaults(func=_trade)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except EpfError as exc:
        cause = exc.cause if isinstance(exc, PipelineError) else exc
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(cause, ValidationError) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
