"""Command-line entry point.

Subcommands
-----------
synth        generate a synthetic dataset
assimilate   run batch-sequential inference on a dataset
predict      predictive flux distribution and scores from a posterior
diagnose     score an existing predictive CSV against measurements
convert      map a third-party CSV onto the canonical measurement schema

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical or
convergence failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from typing import Optional

import numpy as np

from . import __version__
from .assimilation import (BOTH, INTERNAL_ONLY, MeasurementSeries, block_sigma, iter_sequential,
                           make_snapshot, plan_windows, predict)
from .config import RunConfig, load_config
from .dataio import (MEASUREMENT_COLUMNS, _read_columns, ensemble_from_dict, prior_to_dict, read_json,
                     read_measurements, snapshot_record, write_boundary, write_json, write_measurements,
                     write_rows, write_table)
from .diagnostics import (ScoreReport, average_interval_score, average_method, chi_squared,
                          coefficient_of_variation, coverage, no_thermal_mass_flux)
from .errors import (ConfigError, ConvergenceError, DataError, InvalidArgumentError,
                     NumericalFailureError, OutOfRangeError)
from .heat_model import build_mesh
from .priors import generate_prior_ensemble, t0_prior_mean
from .renka import TemperingTrace
from .rng import Streams
from .synthetic import generate

DAY = 86400.0
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {}
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("mode", "mode"),
                      ("ensemble_size", "ensemble_size"), ("mesh_exponent", "mesh_exponent"),
                      ("span_days", "assimilation_span_days"), ("horizon", "prediction_span_days")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    return cfg.with_updates(**updates) if updates else cfg


def config_record(cfg: RunConfig) -> dict:
    """Config echo for outputs; the worker count is left out on purpose."""
    rec = {}
    for f in fields(cfg):
        if f.name in ("workers", "synth"):
            continue
        value = getattr(cfg, f.name)
        rec[f.name] = prior_to_dict(value) if f.name == "prior" else value
    rec["j_thresh"] = cfg.effective_j_thresh
    return rec


def _data_paths(data: str):
    if os.path.isdir(data):
        truth = os.path.join(data, "truth.json")
        return os.path.join(data, "measurements.csv"), truth if os.path.exists(truth) else None
    truth = os.path.join(os.path.dirname(os.path.abspath(data)), "truth.json")
    return data, truth if os.path.exists(truth) else None


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = _config(args)
    spec = cfg.synth
    data = generate(spec, cfg.seed)
    out = args.out_dir
    noisy = data.noisy
    if args.internal_only:
        noisy = noisy.for_mode(INTERNAL_ONLY)
    write_measurements(os.path.join(out, "measurements.csv"), noisy)
    write_measurements(os.path.join(out, "measurements_noiseless.csv"), data.clean)
    write_boundary(os.path.join(out, "boundary.csv"), data.boundary)
    record = data.truth_record()
    record["seed"] = cfg.seed
    write_json(os.path.join(out, "truth.json"), record)
    print(f"u_true = {record['u_true']:.6g} W/m^2K")
    print(f"c_true = {record['c_true']:.6g} J/m^2K")
    return 0


# ---------------------------------------------------------------- assimilate

SUMMARY_HEADER = ("window", "time_days", "u_mean", "u_lo", "u_hi", "u_rel_err_pct", "u_cov_pct",
                  "c_mean", "c_rel_err_pct", "c_cov_pct", "r_i_mean", "r_i_rel_err_pct", "r_i_cov_pct",
                  "r_e_mean", "r_e_rel_err_pct", "r_e_cov_pct", "u_av", "u_av_rel_err_pct", "iterations")


def _rel_err(value, truth):
    if truth is None or not np.isfinite(value):
        return None
    return 100.0 * abs(value - truth) / abs(truth)


def summary_row(snapshot, u_av_series, times, truth: Optional[dict], alpha_table: float):
    s = snapshot.samples
    k = int(np.searchsorted(times, snapshot.time - 1e-6))
    u_av = float(u_av_series[min(k, len(u_av_series) - 1)])
    t = truth or {}
    u_lo, u_hi = np.quantile(s["u"], [alpha_table / 2, 1 - alpha_table / 2])
    row = [snapshot.window, snapshot.time / DAY, s["u"].mean(), u_lo, u_hi,
           _rel_err(s["u"].mean(), t.get("u_true")), 100 * coefficient_of_variation(s["u"])]
    for name, key in (("c", "c_true"), ("r_i", "r_i_true"), ("r_e", "r_e_true")):
        mean = s[name].mean()
        row += [mean, _rel_err(mean, t.get(key)), 100 * coefficient_of_variation(s[name])]
    row += [u_av, _rel_err(u_av, t.get("u_true")), snapshot.trace.iterations]
    return row


def cmd_assimilate(args) -> int:
    cfg = _config(args)
    data_path, truth_path = _data_paths(args.data)
    truth = read_json(truth_path) if truth_path else None
    measurements = read_measurements(data_path, cfg.rel_error)
    if cfg.mode == BOTH and measurements.q_external is None:
        raise ConfigError("mode both_fluxes needs a q_external_Wm2 column with values", key="mode")
    data = measurements.for_mode(cfg.mode)
    t = data.times
    if t[0] + cfg.assimilation_span > t[-1] + 1e-6:
        raise ConfigError(f"assimilation span of {cfg.assimilation_span_days} days exceeds data coverage "
                          f"of {(t[-1] - t[0]) / DAY:.4g} days", key="assimilation_span_days")
    mesh = build_mesh(cfg.wall_length, cfg.n_elements)
    prior_cfg = cfg.prior
    t0_mean = t0_prior_mean(data.first(), prior_cfg.r_i.mean, prior_cfg.r_e.mean, mesh)
    prior = generate_prior_ensemble(prior_cfg, cfg.ensemble_size, Streams(cfg.seed).child("prior"),
                                    mesh, t0_mean)
    plan = plan_windows(data, cfg.batch_size, cfg.assimilation_span)
    out = args.out_dir
    snap_dir = os.path.join(out, "snapshots")
    u_av = average_method(data.q_internal, data.t_internal, data.t_external)

    prior_snap = make_snapshot(0, float(t[0]), prior, TemperingTrace(), 0.0, cfg.alpha_field)
    write_json(os.path.join(snap_dir, "window_0000.json"), snapshot_record(prior_snap, cfg.alpha_table))
    rows = [summary_row(prior_snap, u_av, t, truth, cfg.alpha_table)]
    timing = []
    last = prior_snap
    status = 0
    try:
        for snap in iter_sequential(cfg, data, prior, plan):
            write_json(os.path.join(snap_dir, f"window_{snap.window:04d}.json"),
                       snapshot_record(snap, cfg.alpha_table))
            rows.append(summary_row(snap, u_av, t, truth, cfg.alpha_table))
            timing.append((snap.window, snap.cost_seconds, snap.trace.iterations))
            last = snap
            if not args.quiet:
                u = snap.samples["u"]
                print(f"window {snap.window:4d}  t = {snap.time / DAY:7.3f} d  U = {u.mean():.4f}"
                      f"  CoV = {100 * coefficient_of_variation(u):.3f}%  iterations = {snap.trace.iterations}")
    except ConvergenceError as exc:
        failed = last.window + 1
        write_json(os.path.join(out, "failure.json"),
                   {"window": failed, "message": str(exc),
                    "tempering": exc.trace.to_dict() if exc.trace is not None else None})
        print(f"error: window {failed}: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC

    meta = {"config": config_record(cfg), "data_start_s": float(t[0]), "data_end_s": float(t[-1]),
            "n_windows": plan.M, "windows_completed": last.window, "mode": cfg.mode}
    write_json(os.path.join(out, "posterior.json"),
               snapshot_record(last, cfg.alpha_table, include_ensemble=True, extra={"run": meta}))
    write_rows(os.path.join(out, "run_summary.csv"), SUMMARY_HEADER, rows)
    write_rows(os.path.join(out, "timing.csv"), ("window", "cost_seconds", "iterations"), timing)
    if status == 0:
        u = last.samples["u"]
        print(f"final U mean = {u.mean():.6g} W/m^2K after {last.window} windows")
    return status


# ---------------------------------------------------------------- predict / diagnose

PREDICT_HEADER = ("time_s", "q_internal_obs", "q_internal_mean", "q_internal_lo", "q_internal_hi",
                  "q_external_obs", "q_external_mean", "q_external_lo", "q_external_hi",
                  "q_internal_no_thermal_mass")


def _score(times, obs_i, mean_i, lo_i, hi_i, obs_e, mean_e, lo_e, hi_e, rel_error, batch_size, alpha):
    sig_i = block_sigma(obs_i, rel_error, batch_size)
    rep = {"chi2_internal": chi_squared(mean_i, obs_i, sig_i),
           "ais_internal": average_interval_score(lo_i, hi_i, obs_i, alpha),
           "coverage_internal": coverage(lo_i, hi_i, obs_i),
           "chi2_external": float("nan"), "ais_external": float("nan"), "coverage_external": float("nan")}
    if obs_e is not None and mean_e is not None and np.all(np.isfinite(obs_e)) and np.all(np.isfinite(mean_e)):
        sig_e = block_sigma(obs_e, rel_error, batch_size)
        rep.update(chi2_external=chi_squared(mean_e, obs_e, sig_e),
                   ais_external=average_interval_score(lo_e, hi_e, obs_e, alpha),
                   coverage_external=coverage(lo_e, hi_e, obs_e))
    report = ScoreReport(rep["chi2_internal"], rep["chi2_external"], rep["ais_internal"],
                         rep["ais_external"], int(len(times))).to_dict()
    report.update(coverage_internal=rep["coverage_internal"], coverage_external=rep["coverage_external"],
                  alpha=alpha, rel_error=rel_error, batch_size=batch_size)
    return report


def cmd_predict(args) -> int:
    cfg = _config(args)
    post = read_json(args.snapshot)
    if "ensemble" not in post:
        raise DataError(f"{args.snapshot}: snapshot does not embed an ensemble; use posterior.json")
    ensemble = ensemble_from_dict(post["ensemble"])
    data_path, _ = _data_paths(args.data)
    measurements = read_measurements(data_path, cfg.rel_error)
    tau = float(post["time_s"])
    horizon_days = cfg.prediction_span_days
    t = measurements.times
    t_end = tau + horizon_days * DAY
    if t_end > t[-1] + 1e-6:
        raise OutOfRangeError(f"horizon ends at {t_end / DAY:.4g} days, data cover up to {t[-1] / DAY:.4g} days")
    sel = np.nonzero((t > tau + 1e-6) & (t <= t_end + 1e-6))[0]
    if sel.size == 0:
        raise OutOfRangeError("no measurements inside the prediction horizon")
    boundary = measurements.boundary()
    pred = predict(ensemble, boundary, t[sel], dt=cfg.dt, alpha=cfg.alpha_predict, workers=cfg.workers,
                   rel_error=cfg.rel_error, batch_size=cfg.batch_size,
                   rng=Streams(cfg.seed).child("predict"))
    upto = t <= tau + 1e-6
    u_av = average_method(measurements.q_internal[upto], measurements.t_internal[upto],
                          measurements.t_external[upto])[-1]
    q_ntm = no_thermal_mass_flux(measurements.t_internal[sel], measurements.t_external[sel], u_av)
    obs_e = measurements.q_external[sel] if measurements.q_external is not None else None
    nan = np.full(sel.size, np.nan)
    cols = [t[sel], measurements.q_internal[sel], pred.internal.mean, pred.internal.lo, pred.internal.hi,
            obs_e if obs_e is not None else nan, pred.external.mean, pred.external.lo, pred.external.hi, q_ntm]
    out = args.out_dir
    write_table(os.path.join(out, "predictive.csv"), PREDICT_HEADER, cols)
    report = _score(t[sel], measurements.q_internal[sel], pred.internal.mean, pred.internal.lo,
                    pred.internal.hi, obs_e, pred.external.mean, pred.external.lo, pred.external.hi,
                    cfg.rel_error, cfg.batch_size, cfg.alpha_predict)
    report["u_av"] = float(u_av)
    write_json(os.path.join(out, "scores.json"), report)
    write_baseline(os.path.join(out, "baseline.csv"), measurements, u_av)
    _print_report(report)
    return 0


def write_baseline(path, measurements: MeasurementSeries, u_av: float) -> None:
    series = average_method(measurements.q_internal, measurements.t_internal, measurements.t_external)
    write_table(path, ("time_s", "u_av_running", "q_internal_no_thermal_mass"),
                [measurements.times, series,
                 no_thermal_mass_flux(measurements.t_internal, measurements.t_external, u_av)])


def _print_report(report: dict) -> None:
    for key in ("chi2_internal", "chi2_external", "ais_internal", "ais_external",
                "coverage_internal", "coverage_external"):
        print(f"{key:18s} {report[key]:.6g}")


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    cols = _read_columns(args.predictive, ("time_s", "q_internal_obs", "q_internal_mean", "q_internal_lo",
                                           "q_internal_hi", "q_external_obs", "q_external_mean",
                                           "q_external_lo", "q_external_hi"))
    obs_e = cols["q_external_obs"]
    mean_e = cols["q_external_mean"]
    report = _score(cols["time_s"], cols["q_internal_obs"], cols["q_internal_mean"], cols["q_internal_lo"],
                    cols["q_internal_hi"], obs_e, mean_e, cols["q_external_lo"], cols["q_external_hi"],
                    cfg.rel_error, cfg.batch_size, cfg.alpha_predict)
    if args.out:
        write_json(args.out, report)
    _print_report(report)
    return 0


# ---------------------------------------------------------------- convert

def cmd_convert(args) -> int:
    """Rename source columns onto the canonical schema.

    Field datasets are expected to provide a time stamp in seconds, the
    two near-air temperatures in kelvin (or Celsius with ``--celsius``) and
    the internal surface flux; the external flux is optional.
    """
    mapping = dict(zip(MEASUREMENT_COLUMNS, (args.time_col, args.ti_col, args.te_col, args.qi_col, args.qe_col)))
    required = [v for v in mapping.values() if v]
    cols = _read_columns(args.input, required)
    shift = 273.15 if args.celsius else 0.0
    out_cols = []
    for canonical, source in mapping.items():
        if not source:
            out_cols.append(np.full(len(cols[required[0]]), np.nan))
            continue
        values = cols[source]
        if canonical in ("t_internal_K", "t_external_K"):
            values = values + shift
        out_cols.append(values)
    out_cols[0] = out_cols[0] - out_cols[0][0] if args.rebase_time else out_cols[0]
    write_table(args.output, MEASUREMENT_COLUMNS, out_cols)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wallbayes", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat dotted-key config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help="concurrent forward solves")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--internal-only", action="store_true", help="write q_external as NA")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("assimilate", help="sequential inference")
    common(a)
    a.add_argument("--data", required=True, help="dataset directory or measurements CSV")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--mode", choices=[BOTH, INTERNAL_ONLY])
    a.add_argument("--ensemble-size", type=int)
    a.add_argument("--mesh-exponent", type=int)
    a.add_argument("--span-days", type=float, help="assimilation span in days")
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=cmd_assimilate)

    r = sub.add_parser("predict", help="predictive fluxes and scores")
    common(r)
    r.add_argument("--snapshot", required=True, help="posterior.json written by assimilate")
    r.add_argument("--data", required=True)
    r.add_argument("--horizon", type=float, help="prediction span in days")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_predict)

    d = sub.add_parser("diagnose", help="score a predictive CSV")
    common(d)
    d.add_argument("--predictive", required=True)
    d.add_argument("--out", help="write the score report JSON here")
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("convert", help="map a CSV onto the measurement schema")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--time-col", required=True)
    c.add_argument("--ti-col", required=True)
    c.add_argument("--te-col", required=True)
    c.add_argument("--qi-col", required=True)
    c.add_argument("--qe-col")
    c.add_argument("--celsius", action="store_true")
    c.add_argument("--rebase-time", action="store_true")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OutOfRangeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailureError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgumentError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
