"""Day-ahead electricity price forecasting toolkit: data, point and probabilistic
forecasts, forecast evaluation and trading backtests."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DegenerateScaleError, DegenerateTestError,
                     EpfError, GapError, HistoryError, ParseError, PipelineError,
                     ValidationError)
from .marketdata import (MarketDataset, VstParams, apply_vst, asinh_transform, fit_vst,
                         invert_vst, load_dataset, save_dataset)
from .pointmodels import (ForecastSet, ModelFit, RegularizationSpec, expert_features,
                          lear_features, naive_forecast, ols_fit, regularized_fit,
                          rolling_backtest, select_lambda)
from .probforecast import (PathEnsemble, QuantileFan, bootstrap_paths, error_shift_quantiles,
                           qra_fan, qra_fit, qra_predict)
from .synth import SynthSpec, synth_generate
from .trading import (BatteryConfig, BatteryOrder, battery_optimize, battery_settle,
                      da_id_decision, fiei, run_battery_backtest, sharpe_ratio, spread_profit)
