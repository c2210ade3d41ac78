"""Time grid, meter and fuse records, daily profiles, and their CSV formats."""

from __future__ import annotations

import contextlib
import csv
import math
import os
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"

METER_HEADER = ["meter_id", "is_ev", "timestamp", "kw"]
FUSE_HEADER = ["fuse_id", "n_nonev", "n_ev", "peak_kw", "sigma"]
PROFILE_HEADER = ["slot_start_hhmm", "kw"]


class MeterDataError(ValueError):
    """Raised for malformed meter, fuse, or profile input."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    slot_minutes: int = 15
    slots_per_day: int = 96

    def __post_init__(self):
        if self.slot_minutes <= 0 or 1440 % self.slot_minutes:
            raise ValueError(f"slot_minutes must evenly divide 1440, got {self.slot_minutes}")
        if self.slots_per_day * self.slot_minutes != 1440:
            raise ValueError("slots_per_day * slot_minutes must equal 1440")

    @classmethod
    def from_minutes(cls, slot_minutes: int) -> TimeGrid:
        if slot_minutes <= 0 or 1440 % slot_minutes:
            raise ValueError(f"slot_minutes must evenly divide 1440, got {slot_minutes}")
        return cls(slot_minutes, 1440 // slot_minutes)

    @property
    def slot_hours(self) -> float:
        return self.slot_minutes / 60.0

    def slot_label(self, slot: int) -> str:
        minutes = (slot % self.slots_per_day) * self.slot_minutes
        return f"{minutes // 60:02d}:{minutes % 60:02d}"

    def slot_of_hour(self, hour: float) -> int:
        return int(math.floor(hour / self.slot_hours))


DEFAULT_GRID = TimeGrid()


@dataclass(frozen=True)
class MeterSeries:
    meter_id: str
    is_ev: bool
    start_date: date
    readings: np.ndarray
    grid: TimeGrid = DEFAULT_GRID

    def __post_init__(self):
        arr = _frozen(self.readings)
        if arr.ndim != 1 or arr.size == 0 or arr.size % self.grid.slots_per_day:
            raise MeterDataError(
                f"meter {self.meter_id}: length {arr.size} is not a positive multiple of "
                f"{self.grid.slots_per_day}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise MeterDataError(f"meter {self.meter_id}: readings must be finite and >= 0")
        object.__setattr__(self, "readings", arr)

    @property
    def n_days(self) -> int:
        return self.readings.size // self.grid.slots_per_day

    def by_day(self) -> np.ndarray:
        """Readings reshaped to ``(n_days, slots_per_day)``."""
        return self.readings.reshape(self.n_days, self.grid.slots_per_day)

    def timestamp(self, slot: int) -> datetime:
        origin = datetime.combine(self.start_date, datetime.min.time())
        return origin + timedelta(minutes=slot * self.grid.slot_minutes)


@dataclass(frozen=True)
class LineFuseRecord:
    fuse_id: str
    n_nonev: int
    n_ev: int
    peak_kw: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.n_nonev < 0 or self.n_ev < 0 or self.n_nonev + self.n_ev < 1:
            raise MeterDataError(f"fuse {self.fuse_id}: meter counts must be >= 0 and sum to >= 1")
        if not self.peak_kw > 0:
            raise MeterDataError(f"fuse {self.fuse_id}: peak_kw must be > 0")
        if not self.sigma > 0:
            raise MeterDataError(f"fuse {self.fuse_id}: sigma must be > 0")


@dataclass(frozen=True)
class DailyProfile:
    values: np.ndarray
    grid: TimeGrid = field(default=DEFAULT_GRID)

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.shape != (self.grid.slots_per_day,):
            raise ValueError(f"profile needs {self.grid.slots_per_day} values, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("profile values must be finite")
        object.__setattr__(self, "values", arr)

    def energy_kwh(self) -> float:
        return float(self.values.sum() * self.grid.slot_hours)


# ---------------------------------------------------------------------------
# Profile arithmetic
# ---------------------------------------------------------------------------

def average_daily_profile(series: Iterable[MeterSeries]) -> DailyProfile:
    """Mean over every meter-day of the reading at each clock slot."""
    series = list(series)
    if not series:
        raise ValueError("average_daily_profile needs at least one series")
    grid = series[0].grid
    if any(s.grid != grid for s in series):
        raise ValueError("all series must share one time grid")
    days = np.concatenate([s.by_day() for s in series], axis=0)
    return DailyProfile(days.mean(axis=0), grid)


def profile_difference(ev: DailyProfile, nonev: DailyProfile) -> DailyProfile:
    if ev.grid != nonev.grid:
        raise ValueError("profiles are on different grids")
    return DailyProfile(ev.values - nonev.values, ev.grid)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def atomic_write(path):
    """Open a text file for writing that appears at ``path`` only on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".",
                               prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise MeterDataError(f"line {lineno}: bad {what} {text!r}") from None
    if not math.isfinite(value):
        raise MeterDataError(f"line {lineno}: {what} must be finite")
    return value


def _check_header(reader, expected, required, path):
    header = next(reader, None)
    if header is None:
        raise MeterDataError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if header[:len(required)] != required or any(h not in expected for h in header):
        raise MeterDataError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    return header


def load_meter_csv(path, grid: TimeGrid = DEFAULT_GRID) -> list[MeterSeries]:
    """Read a ``meter_id,is_ev,timestamp,kw`` file into one series per meter.

    Rows of different meters may interleave, but each meter's timestamps must
    advance by exactly one slot, start at midnight, and cover whole days.
    """
    step = timedelta(minutes=grid.slot_minutes)
    meters: OrderedDict[str, dict] = OrderedDict()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(reader, METER_HEADER, METER_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MeterDataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            meter_id, is_ev_text, ts_text, kw_text = (c.strip() for c in row)
            if is_ev_text not in ("0", "1"):
                raise MeterDataError(f"line {lineno}: is_ev must be 0 or 1")
            try:
                ts = datetime.strptime(ts_text, TIMESTAMP_FORMAT)
            except ValueError:
                raise MeterDataError(f"line {lineno}: bad timestamp {ts_text!r}") from None
            kw = _parse_float(kw_text, "kw", lineno)
            if kw < 0:
                raise MeterDataError(f"line {lineno}: negative reading {kw}")
            entry = meters.get(meter_id)
            if entry is None:
                if ts.hour or ts.minute:
                    raise MeterDataError(f"line {lineno}: meter {meter_id} must start at 00:00")
                meters[meter_id] = {"is_ev": is_ev_text == "1", "first": ts, "last": ts, "kw": [kw]}
                continue
            if entry["is_ev"] != (is_ev_text == "1"):
                raise MeterDataError(f"line {lineno}: meter {meter_id} changes is_ev")
            delta = ts - entry["last"]
            if delta <= timedelta(0):
                raise MeterDataError(f"line {lineno}: non-monotonic timestamp for meter {meter_id}")
            if delta != step:
                raise MeterDataError(f"line {lineno}: gap in meter {meter_id} before {ts_text}")
            entry["last"] = ts
            entry["kw"].append(kw)
    out = []
    for meter_id, entry in meters.items():
        if len(entry["kw"]) % grid.slots_per_day:
            raise MeterDataError(
                f"meter {meter_id}: {len(entry['kw'])} readings is not a whole number of days")
        out.append(MeterSeries(meter_id, entry["is_ev"], entry["first"].date(), entry["kw"], grid))
    return out


def write_meter_csv(path, series: Sequence[MeterSeries]) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METER_HEADER)
        for s in series:
            flag = "1" if s.is_ev else "0"
            for i, kw in enumerate(s.readings):
                writer.writerow([s.meter_id, flag, s.timestamp(i).strftime(TIMESTAMP_FORMAT), repr(float(kw))])


def load_fuse_csv(path, default_sigma: float = 1.0) -> list[LineFuseRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = _check_header(reader, FUSE_HEADER, FUSE_HEADER[:4], path)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MeterDataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            fields = dict(zip(header, (c.strip() for c in row)))
            try:
                n_nonev = int(fields["n_nonev"])
                n_ev = int(fields["n_ev"])
            except ValueError:
                raise MeterDataError(f"line {lineno}: meter counts must be integers") from None
            sigma_text = fields.get("sigma", "")
            sigma = _parse_float(sigma_text, "sigma", lineno) if sigma_text else default_sigma
            records.append(LineFuseRecord(fields["fuse_id"], n_nonev, n_ev,
                                          _parse_float(fields["peak_kw"], "peak_kw", lineno), sigma))
    return records


def write_profile_csv(path, profile: DailyProfile) -> None:
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for s, kw in enumerate(profile.values):
            writer.writerow([profile.grid.slot_label(s), repr(float(kw))])


def load_profile_csv(path) -> DailyProfile:
    labels, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(reader, PROFILE_HEADER, PROFILE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MeterDataError(f"line {lineno}: expected 2 fields")
            labels.append(row[0].strip())
            values.append(_parse_float(row[1], "kw", lineno))
    if not values or 1440 % len(values):
        raise MeterDataError(f"{path}: {len(values)} slots do not tile a day")
    grid = TimeGrid.from_minutes(1440 // len(values))
    expected = [grid.slot_label(s) for s in range(grid.slots_per_day)]
    if labels != expected:
        raise MeterDataError(f"{path}: slot labels are not consecutive from 00:00")
    return DailyProfile(values, grid)
