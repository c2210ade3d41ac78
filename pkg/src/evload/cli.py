"""Command-line front end: ``evload <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .data import (TimeGrid, atomic_write, average_daily_profile, load_fuse_csv, load_meter_csv,
                   load_profile_csv, profile_difference, write_meter_csv, write_profile_csv)
from .extraction import EventRow, SegmentationPolicy, extract_events, read_events_csv, write_events_csv
from .kde import fit_kde, read_kde_model, write_kde_model
from .rates import fit_truncated_exponential, solve_wls
from .rng import fresh_seed
from .scenario import (ScenarioConfig, end_time_validation, export_dataset, load_scenario_config,
                       simulation_events, simulate_fleet, summarize_fleet, write_summary_csv)
from .sessions import (FAMILIES, SessionPolicy, aggregate_method1_profile, derive_time_stats, dump_time_stats,
                       make_session_sampler, read_time_stats_csv, time_models, write_time_stats_csv)
from .synth import SynthConfig, synthesize_meter_data, truth_rows

log = logging.getLogger("evload")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = fresh_seed()
    log.warning("no --seed given; using %d", seed)
    return seed


def _grid(args) -> TimeGrid:
    return TimeGrid.from_minutes(args.slot_minutes)


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_ingest(args) -> int:
    series = load_meter_csv(args.meters, _grid(args))
    ev = [s for s in series if s.is_ev]
    nonev = [s for s in series if not s.is_ev]
    out = _out_dir(args.out_dir)
    if ev:
        write_profile_csv(out / "ev_profile.csv", average_daily_profile(ev))
    if nonev:
        write_profile_csv(out / "nonev_profile.csv", average_daily_profile(nonev))
    days = sum(s.n_days for s in series)
    print("meters,ev_meters,nonev_meters,meter_days")
    print(f"{len(series)},{len(ev)},{len(nonev)},{days}")
    return 0


def cmd_estimate_rates(args) -> int:
    est = solve_wls(load_fuse_csv(args.fuses, default_sigma=args.default_sigma))
    print("X,Y,delta,J")
    print(f"{est.x_nonev_kw:.4f},{est.y_ev_kw:.4f},{est.ev_charging_kw:.4f},{est.objective:.6g}")
    return 0


def cmd_profile_diff(args) -> int:
    series = load_meter_csv(args.meters, _grid(args))
    ev = [s for s in series if s.is_ev]
    nonev = [s for s in series if not s.is_ev]
    if not ev or not nonev:
        raise ValueError("meter file needs both EV and non-EV meters")
    write_profile_csv(args.out, profile_difference(average_daily_profile(ev), average_daily_profile(nonev)))
    return 0


def cmd_fit_times(args) -> int:
    stats = derive_time_stats(load_profile_csv(args.diff))
    if args.out:
        write_time_stats_csv(args.out, stats)
    else:
        dump_time_stats(sys.stdout, stats)
    return 0


def cmd_sample_fleet(args) -> int:
    stats = read_time_stats_csv(args.stats)
    start_model, end_model = time_models(stats, args.family)
    power = fit_truncated_exponential(args.power_lower, args.power_upper, args.power_mean)
    policy = SessionPolicy(capacity_kwh=args.capacity)
    sampler = make_session_sampler(start_model, end_model, power, policy, _seed(args))
    grid = _grid(args)
    profile, sessions = aggregate_method1_profile(args.n_ev, sampler, grid, threads=args.threads)
    out = _out_dir(args.out_dir)
    write_profile_csv(out / "profile.csv", profile)
    origin = datetime.combine(args.date, datetime.min.time())
    rows = [EventRow(f"EV{i + 1:04d}", origin + timedelta(hours=s.start_h), origin + timedelta(hours=s.end_h),
                     s.energy_kwh, s.rated_kw) for i, s in enumerate(sessions)]
    write_events_csv(out / "events.csv", rows)
    return 0


def cmd_extract(args) -> int:
    series = load_meter_csv(args.meters, _grid(args))
    policy = SegmentationPolicy(args.threshold, args.min_duration, args.merge_gap)
    rows = extract_events(series, policy, threads=args.threads)
    write_events_csv(args.out, rows)
    log.info("extracted %d events", len(rows))
    return 0


def cmd_fit_kde(args) -> int:
    rows = read_events_csv(args.events)
    if len(rows) < 2:
        raise ValueError("need at least 2 events to fit densities")
    out = _out_dir(args.out_dir)
    start = np.array([r.start_hour for r in rows])
    end = np.array([r.end_hour for r in rows])
    pe = np.array([[r.avg_power_kw, r.energy_kwh] for r in rows])
    write_kde_model(out / "start_kde.csv", fit_kde(start, (True,), labels=("start_h",)))
    write_kde_model(out / "end_kde.csv", fit_kde(end, (True,), labels=("end_h",)))
    write_kde_model(out / "pe_kde.csv", fit_kde(pe, (False, False), labels=("avg_power_kw", "energy_kwh")))
    return 0


def cmd_simulate(args) -> int:
    config, taper = load_scenario_config(args.config)
    if args.seed is not None or config.master_seed is None:
        seed = _seed(args)
        config = ScenarioConfig(**{**config.__dict__, "master_seed": seed})
    sim = simulate_fleet(config, read_kde_model(args.start_model), read_kde_model(args.pe_model),
                         taper, threads=args.threads)
    out = _out_dir(args.out)
    write_summary_csv(out / "summary.csv", summarize_fleet(sim, config))
    export_dataset(out, simulation_events(sim), sim, taper)
    if args.end_model:
        centers, hist, kde, tv = end_time_validation(sim, read_kde_model(args.end_model))
        with atomic_write(out / "end_time_check.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour", "generated_density", "kde_density"])
            for c, h, k in zip(centers, hist, kde):
                w.writerow([f"{c:.4f}", f"{h:.6f}", f"{k:.6f}"])
        log.info("end-time total variation distance vs fitted KDE: %.4f", tv)
    return 0


def cmd_export(args) -> int:
    rows = read_events_csv(args.events)
    export_dataset(args.out_dir, rows, edges=args.category_edges)
    return 0


def cmd_synth_data(args) -> int:
    cfg = SynthConfig(n_nonev=args.n_nonev, n_ev=args.n_ev, days=args.days, grid=_grid(args),
                      start_date=args.date, noise_std_kw=args.noise,
                      session_probability=args.session_probability)
    data = synthesize_meter_data(cfg, np.random.default_rng(_seed(args)))
    write_meter_csv(args.out, data.series)
    if args.truth:
        write_events_csv(args.truth, truth_rows(data, cfg.start_date))
    return 0


def _edges(text: str):
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evload", description="EV charging load profiles from interval meter data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        # also accepted after the subcommand; SUPPRESS keeps a top-level -v intact
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")
        return p

    def slots(p):
        p.add_argument("--slot-minutes", type=int, default=15, help="interval length (default 15)")

    def seeded(p):
        p.add_argument("--seed", type=int, default=None, help="master random seed (random and logged if absent)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")

    p = add("ingest", cmd_ingest, "validate a meter CSV and write average EV / non-EV daily profiles")
    p.add_argument("--meters", required=True)
    p.add_argument("--out-dir", required=True)
    slots(p)

    p = add("estimate-rates", cmd_estimate_rates, "weighted least-squares average meter power from a fuse CSV")
    p.add_argument("--fuses", required=True)
    p.add_argument("--default-sigma", type=float, default=1.0, help="sigma for rows without one")

    p = add("profile-diff", cmd_profile_diff, "average EV minus non-EV daily profile")
    p.add_argument("--meters", required=True)
    p.add_argument("--out", required=True)
    slots(p)

    p = add("fit-times", cmd_fit_times, "start/end charge-time statistics from a difference profile")
    p.add_argument("--diff", required=True)
    p.add_argument("--out", help="stats CSV (stdout if omitted)")

    p = add("sample-fleet", cmd_sample_fleet, "constant-rate sessions for a fleet and their daily profile")
    p.add_argument("--stats", required=True, help="stats CSV from fit-times")
    p.add_argument("--family", choices=FAMILIES, default="lognormal")
    p.add_argument("--n-ev", type=int, default=144)
    p.add_argument("--power-lower", type=float, default=7.0)
    p.add_argument("--power-upper", type=float, default=19.0)
    p.add_argument("--power-mean", type=float, default=10.5294)
    p.add_argument("--capacity", type=float, default=60.0, help="battery cap in kWh")
    p.add_argument("--date", type=date.fromisoformat, default=date(2023, 1, 1), help="date stamped on events")
    p.add_argument("--out-dir", required=True)
    slots(p)
    seeded(p)

    p = add("extract", cmd_extract, "isolate charging events from EV meters")
    p.add_argument("--meters", required=True)
    p.add_argument("--out", required=True, help="events CSV")
    p.add_argument("--threshold", type=float, default=1.0, help="kW (default 1.0)")
    p.add_argument("--min-duration", type=int, default=2, help="slots (default 2)")
    p.add_argument("--merge-gap", type=int, default=2, help="slots (default 2)")
    p.add_argument("--threads", type=int, default=1)
    slots(p)

    p = add("fit-kde", cmd_fit_kde, "fit start, end and (power, energy) densities to an events CSV")
    p.add_argument("--events", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("simulate", cmd_simulate, "Monte Carlo annual fleet simulation from KDE models")
    p.add_argument("--config", required=True, help="key=value scenario file")
    p.add_argument("--start-model", required=True)
    p.add_argument("--pe-model", required=True)
    p.add_argument("--end-model", help="optional end-time KDE for a validation report")
    p.add_argument("--out", required=True, help="output directory")
    seeded(p)

    p = add("export", cmd_export, "re-export an events CSV, split by charging-rate category")
    p.add_argument("--events", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--category-edges", type=_edges, default=(4.0, 7.0, 11.2, 15.0))

    p = add("synth-data", cmd_synth_data, "synthetic meter CSV with known charging sessions")
    p.add_argument("--out", required=True, help="meter CSV")
    p.add_argument("--truth", help="events CSV of injected sessions")
    p.add_argument("--n-ev", type=int, default=20)
    p.add_argument("--n-nonev", type=int, default=20)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.1, help="household noise std in kW")
    p.add_argument("--session-probability", type=float, default=0.8)
    p.add_argument("--date", type=date.fromisoformat, default=date(2023, 1, 1))
    slots(p)
    seeded(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"evload {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
