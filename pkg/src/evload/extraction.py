"""Isolate EV charging load from EV-meter series.

Pipeline per EV meter:

1. ``build_baseline`` averages the non-EV meters and min-max normalizes them.
2. ``scale_to_baseline`` min-max normalizes the EV series.
3. ``align_valleys`` finds the within-day rotation that puts the deepest 5%
   of the baseline on top of the deepest 5% of the EV series.
4. ``match_amplitude`` fits gain and bias of the aligned baseline to the
   household (non-charging) part of the normalized EV series.
5. ``subtract_and_restore`` subtracts, returns to kW, and floors at zero.
6. ``segment_events`` turns the residual into charging events.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .data import TIMESTAMP_FORMAT, MeterDataError, MeterSeries, TimeGrid, atomic_write

EVENT_HEADER = ["meter_id", "start_iso", "end_iso", "energy_kwh", "avg_power_kw"]
VALLEY_PERCENTILE = 5.0


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineCurve:
    values: np.ndarray
    source_min_kw: float
    source_max_kw: float


@dataclass(frozen=True)
class ScaleParams:
    scale: float
    offset: float

    def invert(self, normalized):
        return np.asarray(normalized) * self.scale + self.offset


@dataclass(frozen=True)
class AlignmentResult:
    shift_slots: int


@dataclass(frozen=True)
class AmplitudeMatch:
    gain: float = 1.0
    bias: float = 0.0


@dataclass(frozen=True)
class ChargingEvent:
    start_slot: int
    end_slot: int
    energy_kwh: float
    avg_power_kw: float


@dataclass(frozen=True)
class SegmentationPolicy:
    power_threshold_kw: float = 1.0
    min_duration_slots: int = 2
    merge_gap_slots: int = 2

    def __post_init__(self):
        if self.power_threshold_kw < 0:
            raise ValueError("power_threshold_kw must be >= 0")
        if self.min_duration_slots < 1:
            raise ValueError("min_duration_slots must be >= 1")
        if self.merge_gap_slots < 0:
            raise ValueError("merge_gap_slots must be >= 0")


@dataclass(frozen=True)
class EventRow:
    """One line of the events CSV."""

    meter_id: str
    start: datetime
    end: datetime
    energy_kwh: float
    avg_power_kw: float

    @property
    def start_hour(self) -> float:
        return self.start.hour + self.start.minute / 60.0 + self.start.second / 3600.0

    @property
    def end_hour(self) -> float:
        return self.end.hour + self.end.minute / 60.0 + self.end.second / 3600.0


def _normalize(x: np.ndarray):
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ExtractionError("signal has zero range")
    return (x - lo) / (hi - lo), lo, hi


def build_baseline(nonev: Iterable[MeterSeries]) -> BaselineCurve:
    nonev = list(nonev)
    if not nonev:
        raise ExtractionError("no non-EV meters for the baseline")
    n = nonev[0].readings.size
    if any(s.readings.size != n or s.grid != nonev[0].grid for s in nonev):
        raise ExtractionError("non-EV meters must share grid and length")
    mean = np.mean(np.stack([s.readings for s in nonev]), axis=0)
    values, lo, hi = _normalize(mean)
    return BaselineCurve(values, lo, hi)


def scale_to_baseline(ev: MeterSeries, baseline: BaselineCurve) -> tuple[np.ndarray, ScaleParams]:
    if ev.readings.size != baseline.values.size:
        raise ExtractionError("EV series and baseline differ in length")
    scaled, lo, hi = _normalize(ev.readings)
    return scaled, ScaleParams(hi - lo, lo)


def rotate_daily(x: np.ndarray, shift: int, slots_per_day: int) -> np.ndarray:
    """Roll each day of ``x`` by ``shift`` slots, wrapping within the day."""
    days = np.asarray(x).reshape(-1, slots_per_day)
    return np.roll(days, shift, axis=1).reshape(-1)


def _valley_centroid(folded: np.ndarray) -> float:
    if np.ptp(folded) == 0:
        raise ExtractionError("constant signal has no valley set")
    spd = folded.size
    valley = np.flatnonzero(folded <= np.percentile(folded, VALLEY_PERCENTILE))
    angles = 2 * np.pi * valley / spd
    c, s = np.cos(angles).sum(), np.sin(angles).sum()
    if np.hypot(c, s) < 1e-9 * valley.size:
        raise ExtractionError("valley set has no defined circular centroid")
    return float(np.arctan2(s, c) * spd / (2 * np.pi))


def align_valleys(scaled_ev: np.ndarray, baseline: BaselineCurve,
                  slots_per_day: int = 96) -> AlignmentResult:
    """Within-day shift moving the baseline's valley centroid onto the EV's.

    Both signals are folded to one mean day before locating the deepest 5%.
    """
    scaled_ev = np.asarray(scaled_ev)
    if scaled_ev.size != baseline.values.size or scaled_ev.size % slots_per_day:
        raise ExtractionError("signals must have equal whole-day lengths")
    ev_c = _valley_centroid(scaled_ev.reshape(-1, slots_per_day).mean(axis=0))
    base_c = _valley_centroid(baseline.values.reshape(-1, slots_per_day).mean(axis=0))
    delta = (ev_c - base_c) % slots_per_day
    if delta > slots_per_day / 2:
        delta -= slots_per_day
    shift = int(np.round(delta))
    if abs(shift) >= slots_per_day:
        shift = 0
    return AlignmentResult(shift)


def match_amplitude(scaled_ev: np.ndarray, aligned_baseline: np.ndarray,
                    clip: float = 3.0, max_iter: int = 50) -> AmplitudeMatch:
    """Fit ``scaled_ev ~ gain * baseline + bias`` on the household part only.

    Charging only ever adds load, so slots sitting well above the current fit
    are excluded and the fit repeated until the kept set stops changing.
    """
    y = np.asarray(scaled_ev, dtype=np.float64)
    b = np.asarray(aligned_baseline, dtype=np.float64)
    keep = np.ones(y.size, dtype=bool)
    gain, bias = 1.0, 0.0
    for _ in range(max_iter):
        A = np.column_stack([b[keep], np.ones(int(keep.sum()))])
        (gain, bias), *_ = np.linalg.lstsq(A, y[keep], rcond=None)
        r = y - (gain * b + bias)
        rk = r[keep]
        center = np.median(rk)
        spread = 1.4826 * np.median(np.abs(rk - center))
        new_keep = r <= center + max(clip * spread, 1e-9)
        if new_keep.sum() < 2 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
    return AmplitudeMatch(float(gain), float(bias))


def subtract_and_restore(scaled_ev: np.ndarray, baseline: BaselineCurve, alignment: AlignmentResult,
                         params: ScaleParams, slots_per_day: int = 96,
                         match: AmplitudeMatch | None = None) -> np.ndarray:
    """Residual charging load in kW, floored at zero.

    ``match`` defaults to a fit by :func:`match_amplitude`; pass
    ``AmplitudeMatch()`` to subtract the unit-range baseline unchanged.
    """
    scaled_ev = np.asarray(scaled_ev, dtype=np.float64)
    aligned = rotate_daily(baseline.values, alignment.shift_slots, slots_per_day)
    if match is None:
        match = match_amplitude(scaled_ev, aligned)
    residual = (scaled_ev - (match.gain * aligned + match.bias)) * params.scale
    return np.maximum(residual, 0.0)


def segment_events(residual: np.ndarray, policy: SegmentationPolicy = SegmentationPolicy(),
                   grid: TimeGrid = TimeGrid()) -> list[ChargingEvent]:
    residual = np.asarray(residual, dtype=np.float64)
    if not np.all(np.isfinite(residual)):
        raise ExtractionError("residual must be finite")
    starts, ends = _kernels.segment_runs(residual, policy.power_threshold_kw,
                                         policy.merge_gap_slots, policy.min_duration_slots)
    slot_h = grid.slot_hours
    events = []
    for a, b in zip(starts.tolist(), ends.tolist()):
        energy = float(residual[a:b].sum() * slot_h)
        events.append(ChargingEvent(a, b, energy, energy / (slot_h * (b - a))))
    return events


def extract_meter(ev: MeterSeries, baseline: BaselineCurve,
                  policy: SegmentationPolicy = SegmentationPolicy()) -> tuple[np.ndarray, list[ChargingEvent]]:
    """Run the whole extraction chain on one EV meter."""
    spd = ev.grid.slots_per_day
    scaled, params = scale_to_baseline(ev, baseline)
    alignment = align_valleys(scaled, baseline, spd)
    residual = subtract_and_restore(scaled, baseline, alignment, params, spd)
    return residual, segment_events(residual, policy, ev.grid)


def extract_events(series: Sequence[MeterSeries], policy: SegmentationPolicy = SegmentationPolicy(),
                   threads: int = 1) -> list[EventRow]:
    """Events for every EV meter in ``series``, baseline from its non-EV meters."""
    nonev = [s for s in series if not s.is_ev]
    evs = [s for s in series if s.is_ev]
    baseline = build_baseline(nonev)

    def one(ev: MeterSeries) -> list[EventRow]:
        _, events = extract_meter(ev, baseline, policy)
        return [event_row(ev, e) for e in events]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            groups = list(pool.map(one, evs))
    else:
        groups = [one(ev) for ev in evs]
    return [row for g in groups for row in g]


def event_row(series: MeterSeries, event: ChargingEvent) -> EventRow:
    return EventRow(series.meter_id, series.timestamp(event.start_slot), series.timestamp(event.end_slot),
                    event.energy_kwh, event.avg_power_kw)


# ---------------------------------------------------------------------------
# Events CSV
# ---------------------------------------------------------------------------

def _iso(ts: datetime) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


def write_events_csv(path, rows: Sequence[EventRow]) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENT_HEADER)
        for r in rows:
            writer.writerow([r.meter_id, _iso(r.start), _iso(r.end),
                             f"{r.energy_kwh:.4f}", f"{r.avg_power_kw:.4f}"])


def read_events_csv(path) -> list[EventRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EVENT_HEADER:
            raise MeterDataError(f"{path}: expected header {','.join(EVENT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MeterDataError(f"line {lineno}: expected 5 fields")
            try:
                start = datetime.strptime(row[1].strip(), TIMESTAMP_FORMAT)
                end = datetime.strptime(row[2].strip(), TIMESTAMP_FORMAT)
                energy, power = float(row[3]), float(row[4])
            except ValueError as exc:
                raise MeterDataError(f"line {lineno}: {exc}") from None
            if end <= start:
                raise MeterDataError(f"line {lineno}: end must follow start")
            rows.append(EventRow(row[0].strip(), start, end, energy, power))
    return rows


def hours_to_datetime(origin: datetime, hours: float) -> datetime:
    return origin + timedelta(hours=hours)
