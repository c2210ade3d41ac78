"""Synthetic meter data with known charging sessions, for tests and demos.

Household load is a smooth daily shape (morning and evening peaks, a small
overnight bump, a midday trough) scaled per meter, plus Gaussian noise. EV
meters get the same household load with charging sessions added on top; the
injected sessions are returned as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np

from . import _kernels
from .data import DEFAULT_GRID, MeterSeries, TimeGrid
from .extraction import EventRow
from .scenario import TaperPolicy, _two_phase_arrays


@dataclass(frozen=True)
class InjectedSession:
    """A session pinned to ``ev_index`` on ``day``; clock start may exceed 24."""

    ev_index: int
    day: int
    start_h: float
    power_kw: float
    energy_kwh: float


@dataclass(frozen=True)
class TruthEvent:
    meter_id: str
    start_h: float
    end_h: float
    energy_kwh: float
    power_kw: float


@dataclass(frozen=True)
class SynthConfig:
    n_nonev: int = 20
    n_ev: int = 20
    days: int = 30
    grid: TimeGrid = DEFAULT_GRID
    start_date: date = date(2023, 1, 1)
    base_kw: float = 0.5
    morning_kw: float = 1.2
    morning_h: float = 7.5
    morning_width_h: float = 1.5
    evening_kw: float = 2.0
    evening_h: float = 19.0
    evening_width_h: float = 2.5
    night_kw: float = 0.6
    night_h: float = 2.5
    night_width_h: float = 3.0
    amplitude_spread: float = 0.2
    noise_std_kw: float = 0.1
    session_probability: float = 0.8
    start_mean_h: float = 20.5
    start_std_h: float = 1.5
    start_window_h: tuple[float, float] = (16.0, 23.75)
    power_range_kw: tuple[float, float] = (7.0, 11.0)
    energy_range_kwh: tuple[float, float] = (10.0, 40.0)
    tapered: bool = True
    taper: TaperPolicy = field(default_factory=TaperPolicy)
    sessions: tuple[InjectedSession, ...] = ()

    def __post_init__(self):
        if self.n_nonev < 1 or self.n_ev < 0 or self.days < 1:
            raise ValueError("need n_nonev >= 1, n_ev >= 0, days >= 1")
        if self.noise_std_kw < 0:
            raise ValueError("noise_std_kw must be >= 0")
        if not 0 <= self.session_probability <= 1:
            raise ValueError("session_probability must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticData:
    series: list[MeterSeries]
    truth: list[TruthEvent]
    base: dict[str, np.ndarray]

    @property
    def ev(self) -> list[MeterSeries]:
        return [s for s in self.series if s.is_ev]

    @property
    def nonev(self) -> list[MeterSeries]:
        return [s for s in self.series if not s.is_ev]


def _bump(t: np.ndarray, center: float, width: float) -> np.ndarray:
    d = (t - center + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (d / width) ** 2)


def household_shape(cfg: SynthConfig) -> np.ndarray:
    """Noise-free daily household kW at slot midpoints."""
    t = (np.arange(cfg.grid.slots_per_day) + 0.5) * cfg.grid.slot_hours
    return (cfg.base_kw
            + cfg.morning_kw * _bump(t, cfg.morning_h, cfg.morning_width_h)
            + cfg.evening_kw * _bump(t, cfg.evening_h, cfg.evening_width_h)
            + cfg.night_kw * _bump(t, cfg.night_h, cfg.night_width_h))


def synthesize_meter_data(cfg: SynthConfig, rng: np.random.Generator) -> SyntheticData:
    spd = cfg.grid.slots_per_day
    n_slots = cfg.days * spd
    shape = np.tile(household_shape(cfg), cfg.days)
    lo, hi = 1 - cfg.amplitude_spread, 1 + cfg.amplitude_spread

    def household():
        amp = rng.uniform(lo, hi)
        noise = rng.normal(0.0, cfg.noise_std_kw, n_slots) if cfg.noise_std_kw > 0 else 0.0
        return np.maximum(amp * shape + noise, 0.0)

    series, base = [], {}
    for i in range(cfg.n_nonev):
        mid = f"N{i + 1:04d}"
        base[mid] = household()
        series.append(MeterSeries(mid, False, cfg.start_date, base[mid], cfg.grid))

    # random sessions, one per charging day
    ev_idx, t0, power, energy = [], [], [], []
    for e in range(cfg.n_ev):
        days = np.flatnonzero(rng.random(cfg.days) < cfg.session_probability)
        k = days.size
        starts = np.clip(rng.normal(cfg.start_mean_h, cfg.start_std_h, k), *cfg.start_window_h)
        ev_idx.append(np.full(k, e))
        t0.append(days * 24.0 + starts)
        power.append(rng.uniform(*cfg.power_range_kw, k))
        energy.append(rng.uniform(*cfg.energy_range_kwh, k))
    for s in cfg.sessions:
        if not 0 <= s.ev_index < cfg.n_ev:
            raise ValueError(f"injected session targets missing EV {s.ev_index}")
        ev_idx.append(np.array([s.ev_index]))
        t0.append(np.array([s.day * 24.0 + s.start_h]))
        power.append(np.array([s.power_kw]))
        energy.append(np.array([s.energy_kwh]))
    ev_idx = np.concatenate(ev_idx).astype(np.int64) if ev_idx else np.zeros(0, np.int64)
    t0 = np.concatenate(t0) if t0 else np.zeros(0)
    power = np.concatenate(power) if power else np.zeros(0)
    energy = np.concatenate(energy) if energy else np.zeros(0)

    if cfg.tapered:
        d1, d2, low = _two_phase_arrays(energy, power, cfg.taper)
    else:
        d1, d2, low = energy / power, np.zeros_like(energy), power
    t1 = t0 + d1
    t2 = t1 + d2
    k = t0.size
    order = np.argsort(np.concatenate([np.arange(k), np.arange(k)]), kind="stable")
    charging = _kernels.rasterize(np.concatenate([ev_idx, ev_idx])[order],
                                  np.concatenate([t0, t1])[order], np.concatenate([t1, t2])[order],
                                  np.concatenate([power, low])[order],
                                  max(cfg.n_ev, 1), n_slots, cfg.grid.slot_hours)

    horizon = cfg.days * 24.0
    truth = []
    for j in range(k):
        if t0[j] >= horizon:
            continue
        kept = (power[j] * (min(t1[j], horizon) - t0[j])
                + low[j] * max(min(t2[j], horizon) - t1[j], 0.0))
        truth.append(TruthEvent(f"E{ev_idx[j] + 1:04d}", float(t0[j]), float(min(t2[j], horizon)),
                                float(kept), float(power[j])))
    truth.sort(key=lambda ev: (ev.meter_id, ev.start_h))

    for e in range(cfg.n_ev):
        mid = f"E{e + 1:04d}"
        base[mid] = household()
        series.append(MeterSeries(mid, True, cfg.start_date, base[mid] + charging[e], cfg.grid))
    return SyntheticData(series, truth, base)


def truth_rows(data: SyntheticData, start_date: date) -> list[EventRow]:
    origin = datetime.combine(start_date, datetime.min.time())
    return [EventRow(t.meter_id, origin + timedelta(hours=t.start_h), origin + timedelta(hours=t.end_h),
                     t.energy_kwh, t.energy_kwh / (t.end_h - t.start_h)) for t in data.truth]


# ---------------------------------------------------------------------------
# Reference event population
# ---------------------------------------------------------------------------

def reference_events(rng: np.random.Generator, n: int = 2000, *,
                     evening_fraction: float = 0.9, start_mean_h: float = 21.5, start_std_h: float = 1.5,
                     energy_mode_kwh: float = 20.0, energy_log_sd: float = 0.45,
                     power_mean_kw: float = 10.5, power_sd_kw: float = 3.0,
                     power_range_kw: tuple[float, float] = (5.0, 18.0),
                     taper: TaperPolicy = TaperPolicy()) -> dict[str, np.ndarray]:
    """Events with evening-heavy starts, energy peaking near 20 kWh and 5-18 kW power.

    Most starts fall between 19:00 and 24:00; the rest are spread over the
    day. Energy is log-normal with the requested mode and weakly rises with
    power. End clock times follow from the taper model.
    """
    evening = rng.random(n) < evening_fraction
    start = np.where(evening, rng.normal(start_mean_h, start_std_h, n), rng.uniform(0.0, 24.0, n))
    start = np.mod(start, 24.0)
    power = np.clip(rng.normal(power_mean_kw, power_sd_kw, n), *power_range_kw)
    log_mu = np.log(energy_mode_kwh) + energy_log_sd ** 2
    energy = np.exp(log_mu + 0.04 * (power - power_mean_kw) + energy_log_sd * rng.standard_normal(n))
    d1, d2, _ = _two_phase_arrays(energy, power, taper)
    end = np.mod(start + d1 + d2, 24.0)
    return {"start_h": start, "end_h": end, "power_kw": power, "energy_kwh": energy}


def reference_event_rows(rng: np.random.Generator, n: int = 2000,
                         start_date: date = date(2023, 1, 1), **kwargs) -> list[EventRow]:
    ev = reference_events(rng, n, **kwargs)
    origin = datetime.combine(start_date, datetime.min.time())
    rows = []
    for i, (s, p, e) in enumerate(zip(ev["start_h"], ev["power_kw"], ev["energy_kwh"])):
        d1, d2, _ = _two_phase_arrays(e, p, kwargs.get("taper", TaperPolicy()))
        start = origin + timedelta(days=i, hours=float(s))
        end = start + timedelta(hours=float(d1 + d2))
        rows.append(EventRow(f"REF{i % 144 + 1:04d}", start, end, float(e), float(e / (d1 + d2))))
    return rows
