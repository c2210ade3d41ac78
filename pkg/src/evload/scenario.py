"""Annual fleet simulation from KDE event models, with a two-phase power taper.

Each EV charges on a given day with a fixed probability. A charging day draws
a start time from the start-time KDE and an (average power, energy) pair from
the joint KDE. Power is held at the sampled average for the bulk of the energy
and then drops to a fraction of it, which stands in for the high state-of-charge
taper. Sessions are rasterized onto the slot grid and may run past midnight
into the next day.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .data import DEFAULT_GRID, TIMESTAMP_FORMAT, TimeGrid, atomic_write
from .extraction import EventRow, write_events_csv
from .kde import KdeModel
from .rng import substream

log = logging.getLogger(__name__)

MAX_REJECTION_ROUNDS = 1000


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TaperPolicy:
    threshold_kwh: float = 50.0
    taper_fraction: float = 0.70
    pre_taper_energy_fraction: float = 0.90

    def __post_init__(self):
        if not self.threshold_kwh > 0:
            raise ValueError("threshold_kwh must be > 0")
        if not 0 < self.taper_fraction < 1:
            raise ValueError("taper_fraction must lie in (0, 1)")
        if not 0 < self.pre_taper_energy_fraction < 1:
            raise ValueError("pre_taper_energy_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class PowerSegment:
    duration_h: float
    power_kw: float

    @property
    def energy_kwh(self) -> float:
        return self.duration_h * self.power_kw


def _two_phase_arrays(energy, power, policy: TaperPolicy):
    """Vectorized taper: (full-power hours, tapered hours, tapered kW)."""
    energy = np.asarray(energy, dtype=np.float64)
    power = np.asarray(power, dtype=np.float64)
    # exactly at the threshold the "or less" branch applies
    first = np.where(energy > policy.threshold_kwh, policy.threshold_kwh,
                     policy.pre_taper_energy_fraction * energy)
    second = energy - first
    low = policy.taper_fraction * power
    return first / power, second / low, low


def two_phase_profile(energy_kwh: float, avg_power_kw: float,
                      policy: TaperPolicy = TaperPolicy()) -> list[PowerSegment]:
    if not (energy_kwh > 0 and avg_power_kw > 0):
        raise ValueError("energy and power must be positive")
    d1, d2, low = _two_phase_arrays(energy_kwh, avg_power_kw, policy)
    return [PowerSegment(float(d1), float(avg_power_kw)), PowerSegment(float(d2), float(low))]


@dataclass(frozen=True)
class ScenarioConfig:
    fleet_size: int = 144
    days: int = 365
    daily_charge_probability: float = 0.9
    grid: TimeGrid = DEFAULT_GRID
    category_edges: tuple[float, ...] = (4.0, 7.0, 11.2, 15.0)
    master_seed: int | None = None
    runs: int = 1
    band_percentiles: tuple[float, float] = (5.0, 95.0)
    start_date: date = date(2023, 1, 1)

    def __post_init__(self):
        if self.fleet_size < 1 or self.days < 1 or self.runs < 1:
            raise ValueError("fleet_size, days and runs must be >= 1")
        if not 0 <= self.daily_charge_probability <= 1:
            raise ValueError("daily_charge_probability must lie in [0, 1]")
        edges = tuple(float(e) for e in self.category_edges)
        if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("category_edges must be strictly increasing")
        object.__setattr__(self, "category_edges", edges)
        lo, hi = self.band_percentiles
        if not 0 <= lo <= hi <= 100:
            raise ValueError("band_percentiles must satisfy 0 <= low <= high <= 100")


@dataclass(frozen=True)
class FleetSimulation:
    """Per-EV kW series plus a table of the sessions that produced them.

    ``load`` has shape ``(runs, fleet_size, days * slots_per_day)``. Session
    arrays are parallel; ``start_h``/``end_h`` are hours from the first day's
    midnight and ``power_kw`` is the sampled (pre-taper) average power.
    """

    config: ScenarioConfig
    load: np.ndarray
    run: np.ndarray
    ev: np.ndarray
    day: np.ndarray
    start_h: np.ndarray
    end_h: np.ndarray
    power_kw: np.ndarray
    energy_kwh: np.ndarray
    dropped_kwh: float = 0.0


@dataclass(frozen=True)
class FleetProfileSummary:
    mean_kw: np.ndarray
    band_low_kw: np.ndarray
    band_high_kw: np.ndarray
    grid: TimeGrid = field(default=DEFAULT_GRID)


def _sample_positive_pairs(model: KdeModel, rng: np.random.Generator, k: int) -> np.ndarray:
    pe = np.asarray(model.sample(rng, k), dtype=np.float64).reshape(k, 2)
    for _ in range(MAX_REJECTION_ROUNDS):
        bad = (pe[:, 0] <= 0) | (pe[:, 1] <= 0)
        if not bad.any():
            return pe
        pe[bad] = np.asarray(model.sample(rng, int(bad.sum()))).reshape(-1, 2)
    raise ScenarioError("joint model keeps producing nonpositive power/energy")


def _simulate_ev(config: ScenarioConfig, start_model: KdeModel, pe_model: KdeModel,
                 policy: TaperPolicy, seed: int, run: int, ev: int):
    rng = substream(seed, run, ev)
    slot_h = config.grid.slot_hours
    n_slots = config.days * config.grid.slots_per_day
    charging_days = np.flatnonzero(rng.random(config.days) < config.daily_charge_probability)
    k = charging_days.size
    if k == 0:
        empty = np.zeros(0)
        return np.zeros(n_slots), charging_days, empty, empty, empty, empty, 0.0
    start_clock = np.asarray(start_model.sample(rng, k), dtype=np.float64).reshape(k)
    pe = _sample_positive_pairs(pe_model, rng, k)
    power, energy = pe[:, 0], pe[:, 1]
    d1, d2, low = _two_phase_arrays(energy, power, policy)
    t0 = charging_days * 24.0 + start_clock
    t1 = t0 + d1
    t2 = t1 + d2
    rows = np.zeros(2 * k, dtype=np.int64)
    starts = np.concatenate([t0, t1])
    ends = np.concatenate([t1, t2])
    powers = np.concatenate([power, low])
    # interleave so each session's two phases are accumulated together
    order = np.argsort(np.concatenate([np.arange(k), np.arange(k)]), kind="stable")
    series = _kernels.rasterize(rows, starts[order], ends[order], powers[order], 1, n_slots, slot_h)[0]
    horizon = config.days * 24.0
    dropped = float(np.sum(power * np.clip(t1 - np.maximum(t0, horizon), 0.0, None)
                           + low * np.clip(t2 - np.maximum(t1, horizon), 0.0, None)))
    return series, charging_days, t0, t2, power, energy, dropped


def simulate_fleet(config: ScenarioConfig, start_model: KdeModel, joint_pe_model: KdeModel,
                   policy: TaperPolicy = TaperPolicy(), threads: int = 1) -> FleetSimulation:
    """Monte Carlo year(s) for the fleet; a pure function of its inputs and seed.

    Each (run, EV) pair draws from its own substream, so ``threads`` only
    changes scheduling, never results.
    """
    if start_model.dims != 1:
        raise ScenarioError("start model must be 1-D")
    if joint_pe_model.dims != 2:
        raise ScenarioError("power/energy model must be 2-D")
    if config.master_seed is None:
        raise ScenarioError("config.master_seed must be set before simulating")
    seed = config.master_seed
    jobs = [(r, e) for r in range(config.runs) for e in range(config.fleet_size)]

    def work(job):
        return _simulate_ev(config, start_model, joint_pe_model, policy, seed, *job)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    n_slots = config.days * config.grid.slots_per_day
    load = np.empty((config.runs, config.fleet_size, n_slots))
    run_ids, ev_ids, days, t0s, t2s, ps, es = [], [], [], [], [], [], []
    dropped = 0.0
    for (r, e), (series, cdays, t0, t2, p, en, drop) in zip(jobs, results):
        load[r, e] = series
        run_ids.append(np.full(cdays.size, r))
        ev_ids.append(np.full(cdays.size, e))
        days.append(cdays)
        t0s.append(t0)
        t2s.append(t2)
        ps.append(p)
        es.append(en)
        dropped += drop
    if dropped > 0:
        log.warning("dropped %.3f kWh of charging that runs past the simulated horizon", dropped)
    cat = np.concatenate
    return FleetSimulation(config, load, cat(run_ids).astype(np.int64), cat(ev_ids).astype(np.int64),
                           cat(days).astype(np.int64), cat(t0s), cat(t2s), cat(ps), cat(es), dropped)


def summarize_fleet(series, config: ScenarioConfig) -> FleetProfileSummary:
    """Mean and percentile band of the fleet's aggregate demand per clock slot.

    ``series`` is a :class:`FleetSimulation` or an array of per-EV series
    shaped ``(fleet, slots)`` or ``(runs, fleet, slots)``. Every (run, day)
    counts as one observed day.
    """
    load = series.load if isinstance(series, FleetSimulation) else np.asarray(series, dtype=np.float64)
    if load.size == 0:
        raise ScenarioError("no series to summarize")
    if load.ndim == 2:
        load = load[None]
    spd = config.grid.slots_per_day
    daily = load.sum(axis=1).reshape(-1, spd)
    mean = daily.mean(axis=0)
    lo_p, hi_p = config.band_percentiles
    low, high = np.percentile(daily, [lo_p, hi_p], axis=0)
    # percentiles of skewed samples can sit on the wrong side of the mean
    return FleetProfileSummary(mean, np.minimum(low, mean), np.maximum(high, mean), config.grid)


# ---------------------------------------------------------------------------
# Rate categories
# ---------------------------------------------------------------------------

BELOW = -1


def _fmt_edge(x: float) -> str:
    return f"{x:g}"


def category_labels(edges: Sequence[float]) -> dict[int, str]:
    """Code -> label; ``-1`` marks powers below the first edge."""
    labels = {BELOW: f"below-{_fmt_edge(edges[0])}kW"}
    for i, lo in enumerate(edges):
        labels[i] = f"{_fmt_edge(lo)}-{_fmt_edge(edges[i + 1])}kW" if i + 1 < len(edges) else f"{_fmt_edge(lo)}+kW"
    return labels


def categorize_by_rate(powers, edges: Sequence[float] = (4.0, 7.0, 11.2, 15.0)) -> np.ndarray:
    """Half-open, lower-inclusive bins ``[e_i, e_{i+1})``; last bin open-ended."""
    return np.searchsorted(np.asarray(edges, dtype=np.float64), np.asarray(powers, dtype=np.float64),
                           side="right") - 1


def ev_average_power(sim: FleetSimulation) -> np.ndarray:
    """Energy-weighted average charging power per (run, EV); NaN if it never charged."""
    shape = (sim.config.runs, sim.config.fleet_size)
    energy = np.zeros(shape)
    hours = np.zeros(shape)
    np.add.at(energy, (sim.run, sim.ev), sim.energy_kwh)
    np.add.at(hours, (sim.run, sim.ev), sim.end_h - sim.start_h)
    with np.errstate(invalid="ignore", divide="ignore"):
        return energy / hours


def category_profiles(sim: FleetSimulation, policy: TaperPolicy = TaperPolicy()) -> dict[int, np.ndarray]:
    """Annual aggregate kW per rate category, built from the sessions in it.

    Sessions are binned by their sampled average power. Returns code ->
    array shaped ``(runs, days * slots_per_day)``.
    """
    cfg = sim.config
    codes = categorize_by_rate(sim.power_kw, cfg.category_edges)
    d1, d2, low = _two_phase_arrays(sim.energy_kwh, sim.power_kw, policy)
    t1 = sim.start_h + d1
    n_slots = cfg.days * cfg.grid.slots_per_day
    out = {}
    for code in category_labels(cfg.category_edges):
        sel = codes == code
        k = int(sel.sum())
        rows = np.concatenate([sim.run[sel], sim.run[sel]])
        order = np.argsort(np.concatenate([np.arange(k), np.arange(k)]), kind="stable")
        starts = np.concatenate([sim.start_h[sel], t1[sel]])[order]
        ends = np.concatenate([t1[sel], t1[sel] + d2[sel]])[order]
        powers = np.concatenate([sim.power_kw[sel], low[sel]])[order]
        out[code] = _kernels.rasterize(rows[order], starts, ends, powers, cfg.runs, n_slots, cfg.grid.slot_hours)
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def simulation_events(sim: FleetSimulation) -> list[EventRow]:
    cfg = sim.config
    origin = datetime.combine(cfg.start_date, datetime.min.time())
    rows = []
    for r, e, t0, t2, en in zip(sim.run.tolist(), sim.ev.tolist(), sim.start_h.tolist(),
                                sim.end_h.tolist(), sim.energy_kwh.tolist()):
        meter = f"EV{e + 1:04d}" if cfg.runs == 1 else f"R{r + 1:03d}-EV{e + 1:04d}"
        rows.append(EventRow(meter, origin + timedelta(hours=t0), origin + timedelta(hours=t2),
                             en, en / (t2 - t0)))
    return rows


def write_summary_csv(path, summary: FleetProfileSummary) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "mean_kw", "band_low", "band_high"])
        for s in range(summary.mean_kw.size):
            w.writerow([summary.grid.slot_label(s), f"{summary.mean_kw[s]:.6f}",
                        f"{summary.band_low_kw[s]:.6f}", f"{summary.band_high_kw[s]:.6f}"])


def write_category_csv(path, profile: np.ndarray, config: ScenarioConfig) -> None:
    origin = datetime.combine(config.start_date, datetime.min.time())
    step = timedelta(minutes=config.grid.slot_minutes)
    stamps = [(origin + i * step).strftime(TIMESTAMP_FORMAT) for i in range(profile.shape[1])]
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "timestamp", "kw"])
        for r in range(profile.shape[0]):
            for ts, kw in zip(stamps, profile[r].tolist()):
                w.writerow([r + 1, ts, f"{kw:.4f}"])


def export_dataset(out_dir, events: Sequence[EventRow], sim: FleetSimulation | None = None,
                   policy: TaperPolicy = TaperPolicy(),
                   edges: Sequence[float] = (4.0, 7.0, 11.2, 15.0)) -> list[Path]:
    """Write ``events.csv`` plus one file per rate category.

    With a simulation, ``category_<label>.csv`` holds that category's annual
    aggregate profile. Without one, ``events_<label>.csv`` splits the events
    by their average power.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "events.csv"]
    write_events_csv(written[0], events)
    if sim is not None:
        labels = category_labels(sim.config.category_edges)
        for code, profile in category_profiles(sim, policy).items():
            path = out_dir / f"category_{labels[code]}.csv"
            write_category_csv(path, profile, sim.config)
            written.append(path)
    else:
        labels = category_labels(edges)
        codes = categorize_by_rate([e.avg_power_kw for e in events], edges) if events else np.zeros(0, int)
        for code, label in labels.items():
            path = out_dir / f"events_{label}.csv"
            write_events_csv(path, [e for e, c in zip(events, codes.tolist()) if c == code])
            written.append(path)
    return written


def end_time_validation(sim: FleetSimulation, end_model: KdeModel, bins: int = 48):
    """Compare generated end-of-session clock times with a fitted end-time KDE.

    Returns bin centers, the generated histogram density, the KDE density at
    the centers, and the total-variation distance between the two.
    """
    clock = np.mod(sim.end_h, 24.0)
    edges = np.linspace(0.0, 24.0, bins + 1)
    hist, _ = np.histogram(clock, bins=edges, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    kde = np.asarray(end_model.pdf(centers))
    width = edges[1] - edges[0]
    tv = 0.5 * float(np.sum(np.abs(hist - kde)) * width)
    return centers, hist, kde, tv


# ---------------------------------------------------------------------------
# key=value config file
# ---------------------------------------------------------------------------

_TAPER_KEYS = {f.name for f in fields(TaperPolicy)}


def load_scenario_config(path) -> tuple[ScenarioConfig, TaperPolicy]:
    """Parse a ``key = value`` file; ``#`` starts a comment. Unknown keys are errors."""
    cfg: dict = {}
    taper: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in ("fleet_size", "days", "runs"):
                cfg[key] = int(value)
            elif key == "master_seed":
                cfg[key] = int(value)
            elif key == "daily_charge_probability":
                cfg[key] = float(value)
            elif key == "slot_minutes":
                cfg["grid"] = TimeGrid.from_minutes(int(value))
            elif key == "category_edges":
                cfg[key] = tuple(float(v) for v in value.split(","))
            elif key == "band_percentiles":
                lo, hi = (float(v) for v in value.split(","))
                cfg[key] = (lo, hi)
            elif key == "start_date":
                cfg[key] = date.fromisoformat(value)
            elif key in _TAPER_KEYS:
                taper[key] = float(value)
            else:
                raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return ScenarioConfig(**cfg), TaperPolicy(**taper)
