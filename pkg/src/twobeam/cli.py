"""Command-line entry point.

Subcommands: ``simulate``, ``analyze``, ``fit``, ``allan``, ``plan``, ``bounds``.
Exit status is 0 on success, 1 for invalid input or configuration and 2 for
runtime failures.
"""

import argparse
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import FitError, ParameterDomainError, SchemaError
from .fitting import FIT_KINDS, fit_all_models
from .harness import (Drift, MeasurementPlan, estimate_point, optimal_allocation,
                      simulate_records)
from .io import (SCHEMA_VERSION, SECTION_KEYS, ConfigError, fmt, load_config,
                 read_points_csv, read_records_csv, read_samples, write_json,
                 write_points_csv, write_records_csv, write_table_csv)
from .models import DetectorParams, ModelKind, inverse_response
from .sim import SimConfig
from .stats import allan_deviation, sub_poissonian_sigma_rate, uncertainty_bound

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _settings(args, section):
    if args.config:
        return load_config(args.config, section)
    return {key: default for key, (_, default) in SECTION_KEYS[section].items()}


def _require(settings, key, section):
    if settings.get(key) is None:
        raise ConfigError(f"{section}.{key} is required", field=f"{section}.{key}")
    return settings[key]


def _grid(settings, section):
    if settings.get("rate_grid") is not None and settings.get("rate_grid_log") is not None:
        raise ConfigError(f"set only one of {section}.rate_grid and {section}.rate_grid_log",
                          field=f"{section}.rate_grid")
    if settings.get("rate_grid") is not None:
        return [float(r) for r in settings["rate_grid"]]
    if settings.get("rate_grid_log") is not None:
        start, stop, count = settings["rate_grid_log"]
        if not (start > 0 and stop > 0 and count >= 1):
            raise ConfigError(f"{section}.rate_grid_log needs positive bounds and count",
                              field=f"{section}.rate_grid_log")
        return [float(r) for r in np.logspace(math.log10(start), math.log10(stop), count)]
    raise ConfigError(f"{section}.rate_grid or {section}.rate_grid_log is required",
                      field=f"{section}.rate_grid")


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _document(command, config, seed, outputs):
    return {"tool": "twobeam", "version": __version__, "schema_version": SCHEMA_VERSION,
            "command": command, "config": config, "seed": seed, "outputs": outputs}


def _write_timing(out, command, started):
    # kept apart from result.json so that file stays byte-reproducible
    write_json(os.path.join(out, "timing.json"),
               {"command": command, "wall_time_s": time.perf_counter() - started})


def _points_dict(points):
    return [{"rate_ab_hz": p.detected_rate_ab, "delta_mean": p.delta_mean,
             "delta_sem": p.delta_sem, "n": p.repetitions} for p in points]


def build_simulation(settings):
    """Turn a ``[simulate]`` section into ``(plan, sim_config, split, drift)``."""
    s = settings
    kind = ModelKind(s["model"])
    try:
        params = DetectorParams(dark_rate=s["dark_rate"], dead_time_np=s["dead_time_np"],
                                dead_time_p=s["dead_time_p"],
                                mean_afterpulses=s["mean_afterpulses"])
        config = SimConfig(0.0, params, kind, afterpulse_delay_tau=s["afterpulse_delay_tau"],
                           seed=s["seed"], afterpulse_cascade=s["afterpulse_cascade"])
    except ParameterDomainError as exc:
        raise ConfigError(f"simulate: {exc}") from None

    grid = _grid(s, "simulate")
    if s["rate_basis"] == "detected":
        try:
            grid = [float(r) for r in np.atleast_1d(inverse_response(config.response_model(), grid))]
        except ParameterDomainError as exc:
            raise ConfigError(f"simulate.rate_grid: {exc}", field="simulate.rate_grid") from None

    times = [s["t_a"], s["t_b"], s["t_ab"]]
    if s["phase_time"] is not None:
        if any(t is not None for t in times) or s["total_time"] is not None:
            raise ConfigError("simulate.phase_time excludes t_a/t_b/t_ab/total_time",
                              field="simulate.phase_time")
        plan = MeasurementPlan.equal_times(s["phase_time"], s["repetitions"], grid)
    elif all(t is not None for t in times):
        plan = MeasurementPlan(sum(times), *times, s["repetitions"], grid)
    elif s["total_time"] is not None and all(t is None for t in times):
        plan = MeasurementPlan.optimal(s["total_time"], s["repetitions"], grid,
                                       s["expected_delta"])
    else:
        raise ConfigError("simulate needs phase_time, all of t_a/t_b/t_ab, or total_time",
                          field="simulate.phase_time")
    drift = None
    if s["drift_kind"] != "none":
        drift = Drift(s["drift_kind"], s["drift_amplitude"], s["drift_period"], s["drift_seed"])
    return plan, config, s["split_fraction"], drift


def cmd_simulate(args):
    started = time.perf_counter()
    settings = _settings(args, "simulate")
    if args.seed is not None:
        settings["seed"] = args.seed
    plan, config, split, drift = build_simulation(settings)
    levels = simulate_records(plan, config, split, drift)
    points = [estimate_point(recs) for recs in levels]
    out = _outdir(args.out)
    write_records_csv(os.path.join(out, "records.csv"), levels)
    write_points_csv(os.path.join(out, "points.csv"), points)
    echo = {k: v for k, v in settings.items()}
    echo["incident_rate_grid"] = list(plan.rate_grid)
    echo["t_a"], echo["t_b"], echo["t_ab"] = plan.t_a, plan.t_b, plan.t_ab
    write_json(os.path.join(out, "result.json"),
               _document("simulate", echo, config.seed, {"points": _points_dict(points)}))
    _write_timing(out, "simulate", started)
    print(f"wrote {sum(len(l) for l in levels)} records and {len(points)} points to {out}")


def cmd_analyze(args):
    levels = read_records_csv(args.records)
    points = [estimate_point(recs) for recs in levels]
    out = _outdir(args.out)
    write_points_csv(os.path.join(out, "points.csv"), points)
    print(f"wrote {len(points)} points to {out}")


def cmd_fit(args):
    settings = _settings(args, "fit")
    models = settings["models"] if args.models is None else \
        [m.strip() for m in args.models.split(",") if m.strip()]
    valid = {str(k) for k in FIT_KINDS}
    bad = [m for m in models if m not in valid]
    if bad or not models:
        raise ConfigError(f"--models: unsupported {bad}; choose from {sorted(valid)}",
                          field="models")
    points = read_points_csv(args.points)
    results = fit_all_models(points, models)
    out = _outdir(args.out)
    doc = _document("fit", {"points": os.path.basename(args.points), "models": models}, None,
                    {"fits": [r.to_dict() for r in results]})
    write_json(os.path.join(out, "fits.json"), doc)

    rates = np.array(sorted(p.detected_rate_ab for p in points))
    overlay = np.logspace(math.log10(rates[0]), math.log10(rates[-1]),
                          settings["overlay_points"])
    columns = ["rate_ab_hz"] + [f"delta_{r.model_kind}" for r in results]
    curves = [np.atleast_1d(r.delta_curve(overlay)) for r in results]
    write_table_csv(os.path.join(out, "overlay.csv"), columns,
                    [[overlay[i]] + [c[i] for c in curves] for i in range(overlay.size)])
    for r in results:
        extra = f" -> {r.degenerate_to}" if r.degenerate_to is not None else ""
        print(f"{r.model_kind:5s} chi2/nu={r.chi2_report.chi2_per_dof:.4g} "
              f"log10(p)={r.chi2_report.log10_p:.4g}{extra}")


def cmd_allan(args):
    settings = _settings(args, "allan")
    base = args.base_interval if args.base_interval is not None else settings["base_interval"]
    if base is None:
        raise ConfigError("--base-interval is required", field="base_interval")
    taus = args.taus if args.taus is not None else settings["taus"]
    samples = read_samples(args.samples)
    series = allan_deviation(samples, base, taus)
    out = _outdir(args.out)
    write_table_csv(os.path.join(out, "allan.csv"), ("tau_s", "relative_deviation"),
                    zip(series.integration_times, series.relative_deviation))
    print(f"wrote {len(series.integration_times)} Allan points to {out}")


def cmd_plan(args):
    settings = _settings(args, "plan")
    total = args.total_time if args.total_time is not None else settings["total_time"]
    if total is None:
        raise ConfigError("--total-time is required", field="total_time")
    delta = args.delta if args.delta is not None else settings["expected_delta"]
    t_a, t_b, t_ab = optimal_allocation(total, delta)
    print(f"t_a={fmt(t_a)} t_b={fmt(t_b)} t_ab={fmt(t_ab)}")
    print(f"fractions {t_a / total:.4f} : {t_b / total:.4f} : {t_ab / total:.4f}")
    if args.out:
        out = _outdir(args.out)
        write_json(os.path.join(out, "plan.json"),
                   _document("plan", {"total_time": total, "expected_delta": delta}, None,
                             {"t_a": t_a, "t_b": t_b, "t_ab": t_ab}))


def cmd_bounds(args):
    settings = _settings(args, "bounds")
    for key in ("integration_time", "repetitions", "dead_time", "delta"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.rates is not None:
        settings["rate_grid"], settings["rate_grid_log"] = args.rates, None
    grid = _grid(settings, "bounds")
    t, n, tau = settings["integration_time"], settings["repetitions"], settings["dead_time"]
    rows = []
    for rate in grid:
        b = uncertainty_bound(rate, t, n, settings["delta"])
        poisson = math.sqrt(rate / t)
        sub = sub_poissonian_sigma_rate(rate, tau, t) if tau * rate <= 1 else float("nan")
        rows.append((rate, b.sigma_delta, b.sigma_delta_mean, poisson, float(sub)))
    columns = ("rate_ab_hz", "sigma_delta", "sigma_delta_mean", "sigma_rate_poisson",
               "sigma_rate_sub_poissonian")
    if args.out:
        write_table_csv(os.path.join(_outdir(args.out), "bounds.csv"), columns, rows)
    print(",".join(columns))
    for row in rows:
        print(",".join(fmt(v) for v in row))


def _parser():
    p = argparse.ArgumentParser(prog="twobeam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"twobeam {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def seed(text):
        value = int(text, 0)
        if not 0 <= value < 2**64:
            raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
        return value

    s = sub.add_parser("simulate", help="run a virtual A/B/AB sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=seed)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="reduce a records CSV to nonlinearity points")
    s.add_argument("records")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", help="fit response models to a points CSV")
    s.add_argument("points")
    s.add_argument("--models")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("allan", help="relative overlapping Allan deviation of a sample series")
    s.add_argument("samples")
    s.add_argument("--base-interval", type=float)
    s.add_argument("--taus", type=lambda t: [float(v) for v in t.split(",")])
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_allan)

    s = sub.add_parser("plan", help="optimal A/B/AB time allocation")
    s.add_argument("--total-time", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("bounds", help="shot-noise and sub-Poissonian bound table")
    s.add_argument("--rates", type=lambda t: [float(v) for v in t.split(",")])
    s.add_argument("--integration-time", dest="integration_time", type=float)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--dead-time", dest="dead_time", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bounds)
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        args.func(args)
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SchemaError, ParameterDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FitError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
