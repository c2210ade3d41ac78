"""Constant-rate charging sessions sampled from start/end time statistics.

Start and end times come from the EV minus non-EV load difference: the mean
start is where the difference rises through its daily mean in the afternoon,
the mean end is where it falls back through it the next morning. End times use
a 0-48 h axis (04:15 next day is 28.25) so that end > start without modular
arithmetic.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .data import DEFAULT_GRID, DailyProfile, MeterDataError, TimeGrid, atomic_write
from .rates import TruncExpModel, sample_rated_power
from .rng import substream

LOGNORMAL = "lognormal"
GAMMA = "gamma"
FAMILIES = (LOGNORMAL, GAMMA)


class SessionError(ValueError):
    pass


@dataclass(frozen=True)
class LoadDiffStats:
    mean_start_h: float
    std_start_h: float
    mean_end_h: float
    std_end_h: float

    def __post_init__(self):
        if not 0 <= self.mean_start_h < 24:
            raise SessionError("mean_start_h must lie in [0, 24)")
        if not self.mean_start_h < self.mean_end_h < self.mean_start_h + 24:
            raise SessionError("mean_end_h must lie within 24 h after mean_start_h")
        if not (self.std_start_h > 0 and self.std_end_h > 0):
            raise SessionError("standard deviations must be positive")


@dataclass(frozen=True)
class ChargeTimeModel:
    family: str
    p1: float
    p2: float
    axis_offset_h: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == LOGNORMAL and not self.p2 > 0:
            raise ValueError("log-normal scale must be > 0")
        if self.family == GAMMA and not (self.p1 > 0 and self.p2 > 0):
            raise ValueError("gamma shape and scale must be > 0")

    def moments(self) -> tuple[float, float]:
        """Distribution (mean, std) on the hour axis, offset included."""
        if self.family == LOGNORMAL:
            m, s = self.p1, self.p2
            mean = math.exp(m + 0.5 * s * s)
            std = mean * math.sqrt(math.expm1(s * s))
        else:
            k, theta = self.p1, self.p2
            mean = k * theta
            std = math.sqrt(k) * theta
        return mean + self.axis_offset_h, std

    def sample(self, rng: np.random.Generator, size=None):
        if self.family == LOGNORMAL:
            x = rng.lognormal(self.p1, self.p2, size)
        else:
            x = rng.gamma(self.p1, self.p2, size)
        return x + self.axis_offset_h


@dataclass(frozen=True)
class ChargingSession:
    start_h: float
    end_h: float
    rated_kw: float
    energy_kwh: float

    @property
    def duration_h(self) -> float:
        return self.end_h - self.start_h


@dataclass(frozen=True)
class SessionPolicy:
    capacity_kwh: float = 60.0
    max_duration_h: float = 24.0
    max_resamples: int = 100

    def __post_init__(self):
        if not self.capacity_kwh > 0:
            raise ValueError("capacity_kwh must be > 0")
        if not 0 < self.max_duration_h <= 24:
            raise ValueError("max_duration_h must lie in (0, 24]")


# ---------------------------------------------------------------------------
# Statistics from the load-difference profile
# ---------------------------------------------------------------------------

def _crossings(values: np.ndarray, level: float, slot_h: float):
    """Interpolated level crossings between consecutive slot midpoints (circular).

    Returns ``(times, directions)`` with times in ``[0.5*slot_h, 24 + 0.5*slot_h)``
    and direction +1 for upward, -1 for downward.
    """
    s = values - level
    nxt = np.roll(s, -1)
    t = (np.arange(values.size) + 0.5) * slot_h
    up = (s < 0) & (nxt >= 0)
    down = (s > 0) & (nxt <= 0)
    idx = np.flatnonzero(up | down)
    frac = -s[idx] / (nxt[idx] - s[idx])
    times = t[idx] + frac * slot_h
    return times, np.where(up[idx], 1, -1)


def _circ_dist(a: float, b: float) -> float:
    d = abs(a - b) % 24.0
    return min(d, 24.0 - d)


def derive_time_stats(diff: DailyProfile) -> LoadDiffStats:
    """Mean start/end from mean crossings; spread from the nearest zero crossing.

    The upward crossing of the daily mean in 12:00-24:00 gives the mean start,
    the downward crossing in 00:00-12:00 gives the mean end (reported +24).
    Ties go to the earliest crossing in each window. When ``diff`` never
    changes sign, its minimum is used as the zero reference.
    """
    v = np.asarray(diff.values, dtype=np.float64)
    slot_h = diff.grid.slot_hours
    if np.ptp(v) == 0:
        raise SessionError("difference profile is constant; no crossings")
    mean = float(v.mean())
    times, dirs = _crossings(v, mean, slot_h)
    clock = times % 24.0

    ups = np.sort(clock[(dirs > 0) & (clock >= 12.0)])
    downs = np.sort(clock[(dirs < 0) & (clock < 12.0)])
    if ups.size == 0:
        raise SessionError("no upward mean crossing between 12:00 and 24:00")
    if downs.size == 0:
        raise SessionError("no downward mean crossing between 00:00 and 12:00")
    start = float(ups[0])
    end = float(downs[0]) + 24.0

    zeros, _ = _crossings(v, 0.0, slot_h)
    if zeros.size == 0:
        zeros = np.array([(np.argmin(v) + 0.5) * slot_h])
    zeros = zeros % 24.0
    std_start = float(min(_circ_dist(start, z) for z in zeros))
    std_end = float(min(_circ_dist(end, z) for z in zeros))
    if std_start == 0 or std_end == 0:
        raise SessionError("a mean crossing coincides with a zero crossing; spread is zero")
    return LoadDiffStats(start, std_start, end, std_end)


# ---------------------------------------------------------------------------
# Moment matching
# ---------------------------------------------------------------------------

def _check_moments(mean: float, std: float):
    if not (mean > 0 and std > 0):
        raise ValueError("mean and std must be positive")


def moment_match_lognormal(mean: float, std: float) -> ChargeTimeModel:
    _check_moments(mean, std)
    s2 = math.log1p((std / mean) ** 2)
    return ChargeTimeModel(LOGNORMAL, math.log(mean) - 0.5 * s2, math.sqrt(s2))


def moment_match_gamma(mean: float, std: float) -> ChargeTimeModel:
    _check_moments(mean, std)
    return ChargeTimeModel(GAMMA, mean * mean / (std * std), std * std / mean)


def moment_match(family: str, mean: float, std: float) -> ChargeTimeModel:
    if family == LOGNORMAL:
        return moment_match_lognormal(mean, std)
    if family == GAMMA:
        return moment_match_gamma(mean, std)
    raise ValueError(f"unknown family {family!r}")


def time_models(stats: LoadDiffStats, family: str) -> tuple[ChargeTimeModel, ChargeTimeModel]:
    """Start and end models of one family, fitted on the 0-48 h axis."""
    return (moment_match(family, stats.mean_start_h, stats.std_start_h),
            moment_match(family, stats.mean_end_h, stats.std_end_h))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_sessions(n: int, start_model: ChargeTimeModel, end_model: ChargeTimeModel,
                    power_model: TruncExpModel, policy: SessionPolicy,
                    rng: np.random.Generator) -> list[ChargingSession]:
    """Draw ``n`` sessions; invalid durations resample start and end jointly."""
    start = np.mod(start_model.sample(rng, n), 24.0)
    end = np.asarray(end_model.sample(rng, n), dtype=np.float64)
    bad = ~((end - start > 0) & (end - start <= policy.max_duration_h))
    tries = 0
    while bad.any():
        tries += 1
        if tries > policy.max_resamples:
            raise SessionError(f"no valid session after {policy.max_resamples} resamples")
        k = int(bad.sum())
        start[bad] = np.mod(start_model.sample(rng, k), 24.0)
        end[bad] = end_model.sample(rng, k)
        bad = ~((end - start > 0) & (end - start <= policy.max_duration_h))

    rated = np.atleast_1d(sample_rated_power(power_model, rng, n))
    out = []
    for s, e, p in zip(start.tolist(), end.tolist(), rated.tolist()):
        energy = p * (e - s)
        if energy > policy.capacity_kwh:
            e = s + policy.capacity_kwh / p
            energy = policy.capacity_kwh
        out.append(ChargingSession(s, e, p, energy))
    return out


def sample_session(start_model: ChargeTimeModel, end_model: ChargeTimeModel,
                   power_model: TruncExpModel, policy: SessionPolicy,
                   rng: np.random.Generator) -> ChargingSession:
    return sample_sessions(1, start_model, end_model, power_model, policy, rng)[0]


def make_session_sampler(start_model: ChargeTimeModel, end_model: ChargeTimeModel,
                         power_model: TruncExpModel, policy: SessionPolicy, seed: int,
                         sessions_per_ev: int = 1) -> Callable[[int], list[ChargingSession]]:
    """Per-EV sampler drawing from a substream keyed on ``(seed, ev_index)``."""

    def sampler(ev_index: int) -> list[ChargingSession]:
        rng = substream(seed, ev_index)
        return sample_sessions(sessions_per_ev, start_model, end_model, power_model, policy, rng)

    return sampler


def rasterize_daily(sessions: Sequence[ChargingSession], grid: TimeGrid = DEFAULT_GRID) -> DailyProfile:
    """Sum sessions onto one daily grid; the part after midnight wraps to the morning."""
    spd = grid.slots_per_day
    if not sessions:
        return DailyProfile(np.zeros(spd), grid)
    starts = np.array([s.start_h for s in sessions])
    ends = np.array([s.end_h for s in sessions])
    powers = np.array([s.rated_kw for s in sessions])
    two_days = _kernels.rasterize(np.zeros(len(sessions), dtype=np.int64), starts, ends, powers,
                                  1, 2 * spd, grid.slot_hours)[0]
    return DailyProfile(two_days[:spd] + two_days[spd:], grid)


def aggregate_method1_profile(n_ev: int, sampler: Callable[[int], Sequence[ChargingSession]],
                              grid: TimeGrid = DEFAULT_GRID,
                              threads: int = 1) -> tuple[DailyProfile, list[ChargingSession]]:
    """Fleet profile: every EV's sessions overlap-weighted onto the daily grid.

    Returns the profile and the sessions in EV order, so the result does not
    depend on ``threads``.
    """
    if n_ev < 1:
        raise ValueError("n_ev must be >= 1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_ev = list(pool.map(sampler, range(n_ev)))
    else:
        per_ev = [sampler(i) for i in range(n_ev)]
    sessions = [s for group in per_ev for s in group]
    return rasterize_daily(sessions, grid), sessions


# ---------------------------------------------------------------------------
# Stats CSV
# ---------------------------------------------------------------------------

STATS_HEADER = ["quantity", "mean_h", "mean_hhmm", "std_h"]


def _hhmm(hours: float) -> str:
    minutes = int(round((hours % 24.0) * 60)) % 1440
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def write_time_stats_csv(path, stats: LoadDiffStats) -> None:
    with atomic_write(path) as fh:
        dump_time_stats(fh, stats)


def dump_time_stats(fh, stats: LoadDiffStats) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for name, mean, std in (("start", stats.mean_start_h, stats.std_start_h),
                            ("end", stats.mean_end_h, stats.std_end_h)):
        w.writerow([name, repr(float(mean)), _hhmm(mean), repr(float(std))])


def read_time_stats_csv(path) -> LoadDiffStats:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [h.strip() for h in rows[0]] != STATS_HEADER:
        raise MeterDataError(f"{path}: expected header {','.join(STATS_HEADER)}")
    table = {r[0].strip(): r for r in rows[1:]}
    try:
        return LoadDiffStats(float(table["start"][1]), float(table["start"][3]),
                             float(table["end"][1]), float(table["end"][3]))
    except (KeyError, IndexError, ValueError) as exc:
        raise MeterDataError(f"{path}: malformed stats ({exc})") from None
