"""EV charging load profiles from interval meter data.

Two estimators are provided. The first recovers average EV charging power
from line-fuse peaks by weighted least squares and samples constant-rate
sessions from start/end time distributions. The second extracts charging
events from EV meters by baseline subtraction, fits kernel densities to
them, and runs an annual Monte Carlo fleet simulation.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .data import (DailyProfile, LineFuseRecord, MeterDataError, MeterSeries, TimeGrid,
                   average_daily_profile, load_fuse_csv, load_meter_csv, profile_difference)
from .extraction import (ChargingEvent, SegmentationPolicy, align_valleys, build_baseline,
                         scale_to_baseline, segment_events, subtract_and_restore)
from .kde import KdeModel, fit_kde, kde_pdf, kde_sample
from .rates import (RateEstimate, TruncExpModel, WlsProblem, fit_truncated_exponential,
                    sample_rated_power, solve_wls)
from .scenario import (ScenarioConfig, TaperPolicy, categorize_by_rate, export_dataset,
                       simulate_fleet, summarize_fleet, two_phase_profile)
from .sessions import (ChargingSession, LoadDiffStats, SessionPolicy, aggregate_method1_profile,
                       derive_time_stats, moment_match_gamma, moment_match_lognormal, sample_session)
from .synth import SynthConfig, synthesize_meter_data

__all__ = [
    "__version__", "BACKEND", "DailyProfile", "LineFuseRecord", "MeterDataError", "MeterSeries",
    "TimeGrid", "average_daily_profile", "load_fuse_csv", "load_meter_csv", "profile_difference",
    "ChargingEvent", "SegmentationPolicy", "align_valleys", "build_baseline", "scale_to_baseline",
    "segment_events", "subtract_and_restore", "KdeModel", "fit_kde", "kde_pdf", "kde_sample",
    "RateEstimate", "TruncExpModel", "WlsProblem", "fit_truncated_exponential",
    "sample_rated_power", "solve_wls", "ScenarioConfig", "TaperPolicy", "categorize_by_rate",
    "export_dataset", "simulate_fleet", "summarize_fleet", "two_phase_profile", "ChargingSession",
    "LoadDiffStats", "SessionPolicy", "aggregate_method1_profile", "derive_time_stats",
    "moment_match_gamma", "moment_match_lognormal", "sample_session", "SynthConfig",
    "synthesize_meter_data",
]
