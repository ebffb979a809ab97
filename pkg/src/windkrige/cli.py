"""Command-line driver.

    windkrige fit        --config run.cfg   # per-site parameter table
    windkrige variogram  --config run.cfg   # empirical + fitted variograms
    windkrige krige      --config run.cfg   # parameter rasters
    windkrige predict    --config run.cfg   # day-ahead forecasts at stations
    windkrige benchmark  --config run.cfg   # error moments / PI table

Outputs go to ``output_dir``. Exit status is 0 only when every output was
written; 2 signals bad input (config or CSV), 1 a modelling failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import timedelta
from pathlib import Path

import numpy as np

from windkrige import ingest
from windkrige.config import ConfigError, RunConfig, load_config
from windkrige.forecast_bench import (
    BenchmarkError,
    benchmark_report,
    predict_site,
    write_forecast_csv,
    write_report_csv,
)
from windkrige.geo import GeoPoint
from windkrige.ingest import IngestError
from windkrige.kriging import KrigingError, krige_params_batch, krige_surfaces, params_from_kriged, write_surface_csv
from windkrige.temporal import (
    PARAM_NAMES,
    ParamTableRow,
    TemporalFitError,
    fit_temporal_model,
    read_params_csv,
    write_params_csv,
)
from windkrige.variogram import (
    VariogramError,
    empirical_semivariogram,
    fit_model,
    read_models_csv,
    write_empirical_csv,
    write_models_csv,
)

log = logging.getLogger("windkrige")

PARAMS_FILE = "params.csv"
SERIES_FILE = "series.csv"
EMPIRICAL_FILE = "variogram_empirical.csv"
MODELS_FILE = "variogram_models.csv"
SURFACE_DIR = "surfaces"
STATION_PARAMS_FILE = "station_params.csv"
FORECAST_FILE = "forecasts.csv"
REPORT_FILE = "benchmark.csv"


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _out(cfg: RunConfig, name: str) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir / name


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is not configured", code=2)
    if not Path(path).is_file():
        raise CliError(f"{what} not found: {path}", code=2)
    return Path(path)


# ---------------------------------------------------------------------------
# fit


def cmd_fit(cfg: RunConfig) -> Path:
    """Fit the temporal model to every forecast site over [epoch_date, split_date)."""
    src = _require(cfg.forecast_csv, "forecast_csv")
    releases = ingest.read_forecast_csv(src)
    if not releases:
        raise CliError(f"{src}: no forecast rows", code=2)
    rows, series = [], {}
    for site_id, rels in releases.items():
        raw = ingest.build_forecast_series(rels).window(cfg.epoch_date, cfg.split_date).trimmed()
        try:
            raw = ingest.fill_gaps(raw, cfg.max_gap_days)
            logs = ingest.log_transform(raw)
            rep = fit_temporal_model(logs, cfg.epoch_date)
        except (IngestError, TemporalFitError) as exc:
            raise CliError(f"site {site_id}: {exc}") from None
        if not rep.stationary:
            log.warning("site %s: fitted AR(2) is not stationary", site_id)
        site = rels[0].site
        rows.append(ParamTableRow(site_id, site.lat_deg, site.lon_deg, rep.params,
                                  rep.ks_statistic, rep.ks_reject_5pct, rep.aic))
        series[site_id] = logs
    ingest.write_series_csv(_out(cfg, SERIES_FILE), series)
    path = _out(cfg, PARAMS_FILE)
    write_params_csv(path, rows)
    log.info("wrote %d site parameter sets to %s", len(rows), path)
    return path


def _load_params(cfg: RunConfig) -> list[ParamTableRow]:
    path = _require(cfg.output_dir / PARAMS_FILE, "parameter table (run `fit` first)")
    try:
        rows = read_params_csv(path, cfg.epoch_date)
    except ValueError as exc:
        raise CliError(str(exc), code=2) from None
    if not rows:
        raise CliError(f"{path}: empty parameter table", code=2)
    return rows


def _sites_theta(rows: list[ParamTableRow]) -> tuple[list[GeoPoint], np.ndarray]:
    sites = [GeoPoint(r.lat, r.lon) for r in rows]
    theta = np.array([r.params.as_vector() for r in rows])
    return sites, theta


# ---------------------------------------------------------------------------
# variogram


def _fit_one(args):
    ev, families, seed = args
    return fit_model(ev, families, seed=seed)


def cmd_variogram(cfg: RunConfig) -> tuple[Path, Path]:
    rows = _load_params(cfg)
    sites, theta = _sites_theta(rows)
    evs = {}
    for j, name in enumerate(PARAM_NAMES):
        try:
            evs[name] = empirical_semivariogram(sites, theta[:, j], cfg.bin_width_km, cfg.max_lag_km)
        except VariogramError as exc:
            raise CliError(f"{name}: {exc}") from None
    jobs = [(evs[name], cfg.variogram_families, cfg.seed) for name in PARAM_NAMES]
    try:
        if cfg.threads == 1:
            fitted = [_fit_one(j) for j in jobs]
        else:
            # the optimiser is pure Python, so parallelise across processes
            with ProcessPoolExecutor(max_workers=cfg.threads or None) as pool:
                fitted = list(pool.map(_fit_one, jobs))
    except VariogramError as exc:
        raise CliError(str(exc)) from None
    models = dict(zip(PARAM_NAMES, fitted))
    emp = _out(cfg, EMPIRICAL_FILE)
    write_empirical_csv(emp, evs)
    mod = _out(cfg, MODELS_FILE)
    write_models_csv(mod, models)
    for name, m in models.items():
        log.info("%s: %s (objective %.4g)", name, m.family, m.objective)
    return emp, mod


def _load_models(cfg: RunConfig):
    path = _require(cfg.output_dir / MODELS_FILE, "variogram models (run `variogram` first)")
    try:
        models = read_models_csv(path)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path}: bad variogram model table ({exc})", code=2) from None
    missing = [p for p in PARAM_NAMES if p not in models]
    if missing:
        raise CliError(f"{path}: no model for {missing}", code=2)
    return models


# ---------------------------------------------------------------------------
# krige


def cmd_krige(cfg: RunConfig) -> list[Path]:
    rows = _load_params(cfg)
    models = _load_models(cfg)
    sites, theta = _sites_theta(rows)
    try:
        surfaces = krige_surfaces(models, sites, theta, cfg.raster, threads=cfg.threads)
    except KrigingError as exc:
        raise CliError(str(exc)) from None
    out_dir = cfg.output_dir / SURFACE_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in PARAM_NAMES:
        p = out_dir / f"surface_{name}.csv"
        write_surface_csv(p, surfaces[name])
        paths.append(p)
    log.info("wrote %d surfaces of %d cells to %s", len(paths), cfg.raster.n_lat * cfg.raster.n_lon, out_dir)
    return paths


# ---------------------------------------------------------------------------
# predict / benchmark


def _station_inputs(cfg: RunConfig):
    src = _require(cfg.station_csv, "station_csv")
    sites = ingest.station_sites(src)
    reports = ingest.read_station_csv(src)
    histories = {}
    end = cfg.end_date
    for sid in sites:
        reps = reports.get(sid) or []
        if not reps:
            log.warning("station %s has no observations; skipped", sid)
            continue
        raw = ingest.build_station_series(reps, cfg.station_height_m, cfg.model_height_m, cfg.z0)
        stop = raw.end_date + timedelta(days=1) if end is None else end
        raw = raw.window(cfg.epoch_date, max(stop, cfg.epoch_date + timedelta(days=1)))
        calm = raw.values <= 0
        if calm.any():
            log.warning("station %s: %d calm days treated as missing", sid, int(calm.sum()))
            raw = replace(raw, values=np.where(calm, np.nan, raw.values))
        histories[sid] = ingest.log_transform(raw)
    return sites, histories


def _station_params(cfg: RunConfig, station_sites: dict[str, GeoPoint]):
    rows = _load_params(cfg)
    models = _load_models(cfg)
    sites, theta = _sites_theta(rows)
    spec = cfg.raster
    ids = list(station_sites)
    for sid in ids:
        s = station_sites[sid]
        if not (spec.lat_min <= s.lat_deg <= spec.lat_max and spec.lon_min <= s.lon_deg <= spec.lon_max):
            log.warning("station %s (%.4f, %.4f) lies outside the raster bounds; kriging with all sites anyway",
                        sid, s.lat_deg, s.lon_deg)
    lat = np.array([station_sites[s].lat_deg for s in ids])
    lon = np.array([station_sites[s].lon_deg for s in ids])
    try:
        est, _ = krige_params_batch(models, sites, theta, lat, lon)
        params = {sid: params_from_kriged(est[k], cfg.epoch_date) for k, sid in enumerate(ids)}
    except KrigingError as exc:
        raise CliError(str(exc)) from None
    for sid, p in params.items():
        if not p.is_stationary:
            log.warning("station %s: kriged AR(2) coefficients are not stationary", sid)
    write_params_csv(
        _out(cfg, STATION_PARAMS_FILE),
        [ParamTableRow(sid, station_sites[sid].lat_deg, station_sites[sid].lon_deg, params[sid]) for sid in ids],
    )
    return params


def cmd_predict(cfg: RunConfig) -> Path:
    sites, histories = _station_inputs(cfg)
    params = _station_params(cfg, sites)
    records = []
    for sid, hist in histories.items():
        ok = np.isfinite(hist.values)
        dates = [hist.epoch_date + timedelta(days=i) for i in range(2, len(ok) + 1) if ok[i - 1] and ok[i - 2]]
        try:
            records.extend(predict_site(params[sid], hist, dates, site_id=sid))
        except BenchmarkError as exc:
            raise CliError(str(exc)) from None
    path = _out(cfg, FORECAST_FILE)
    write_forecast_csv(path, records)
    log.info("wrote %d forecasts to %s", len(records), path)
    return path


def cmd_benchmark(cfg: RunConfig) -> Path:
    sites, histories = _station_inputs(cfg)
    params = _station_params(cfg, sites)
    ids = [s for s in sites if s in histories]
    try:
        report, records = benchmark_report(ids, params, histories, cfg.split_date)
    except BenchmarkError as exc:
        raise CliError(str(exc)) from None
    for w in report.warnings:
        log.warning("%s", w)
    write_forecast_csv(_out(cfg, FORECAST_FILE), records)
    path = _out(cfg, REPORT_FILE)
    write_report_csv(path, report)
    log.info("wrote %d benchmark rows to %s", len(report.rows), path)
    return path


COMMANDS = {
    "fit": cmd_fit,
    "variogram": cmd_variogram,
    "krige": cmd_krige,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windkrige", description="Spatio-temporal wind-speed model")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value run configuration")
    parser.add_argument("--seed", type=int, help="random seed (default 42)")
    parser.add_argument("--threads", type=int, help="worker count, 0 = all cores")
    parser.add_argument("--output-dir", help="override output_dir")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    try:
        cfg = load_config(args.config, overrides)
        if cfg.threads == 0:
            cfg = replace(cfg, threads=os.cpu_count() or 1)
        COMMANDS[args.command](cfg)
    except (ConfigError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TemporalFitError, VariogramError, KrigingError, BenchmarkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
