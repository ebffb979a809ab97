"""Day-ahead forecasts at arbitrary sites and their benchmark statistics.

Forecast errors are measured on the log scale, ``log(point) - log(observed)``,
where the observations are station speeds already scaled to the model height.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from windkrige.ingest import DailySeries, Transform
from windkrige.temporal import PI_Z, TemporalParams, forecast_log

IN_SAMPLE = "in_sample"
OUT_OF_SAMPLE = "out_of_sample"


class BenchmarkError(ValueError):
    pass


@dataclass
class ForecastRecord:
    site_id: str
    date: date
    point: float
    pi_low: float
    pi_high: float
    observed: float | None = None

    @property
    def log_error(self) -> float:
        if self.observed is None:
            raise BenchmarkError(f"no observation for {self.site_id} on {self.date}")
        return math.log(self.point) - math.log(self.observed)


@dataclass
class BenchmarkRow:
    period: str
    site_id: str
    mean: float
    std: float
    skewness: float
    kurtosis: float
    pct_outside_pi: float
    n: int = 0


@dataclass
class BenchmarkReport:
    in_sample: list[BenchmarkRow] = field(default_factory=list)
    out_of_sample: list[BenchmarkRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def rows(self) -> list[BenchmarkRow]:
        return self.in_sample + self.out_of_sample


def predict_site(
    p: TemporalParams,
    history: DailySeries,
    dates: Sequence[date] | None = None,
    site_id: str = "",
) -> list[ForecastRecord]:
    """Rolling one-day-ahead forecasts driven by the site's own log history.

    Each target date needs history on the two previous days. ``dates``
    defaults to every date from the third day of history to the day after
    its end. The observation is attached when history covers the target.
    """
    if history.transform is not Transform.LOG:
        raise BenchmarkError("forecast history must be log wind speed")
    if p.epoch_date is None:
        raise BenchmarkError("parameters carry no epoch date")
    vals = history.values
    if dates is None:
        dates = [history.epoch_date + timedelta(days=i) for i in range(2, len(vals) + 1)]
    dates = list(dates)
    if not dates:
        return []
    idx = np.array([history.index_of(d) for d in dates])
    lag_ok = (idx >= 2) & (idx - 1 < len(vals))
    lag_ok[lag_ok] &= np.isfinite(vals[idx[lag_ok] - 1]) & np.isfinite(vals[idx[lag_ok] - 2])
    if not np.all(lag_ok):
        missing = [d.isoformat() for d, ok in zip(dates, lag_ok) if not ok]
        raise BenchmarkError(f"missing lag history for {site_id or 'site'} on dates {missing}")
    # day index of the last lag, on the parameters' clock
    t = np.array([(d - p.epoch_date).days - 1 for d in dates], dtype=float)
    mean, sigma = forecast_log(p, vals[idx - 1], vals[idx - 2], t)
    out = []
    for k, d in enumerate(dates):
        obs = None
        i = idx[k]
        if i < len(vals) and np.isfinite(vals[i]):
            obs = math.exp(vals[i])
        out.append(
            ForecastRecord(
                site_id,
                d,
                math.exp(mean[k]),
                math.exp(mean[k] - PI_Z * sigma[k]),
                math.exp(mean[k] + PI_Z * sigma[k]),
                obs,
            )
        )
    return out


def persistence_forecast(history: DailySeries) -> list[tuple[date, float]]:
    """Tomorrow equals today: one forecast per day that has a previous day."""
    if history.transform is not Transform.RAW:
        raise BenchmarkError("persistence works on raw speeds")
    vals = history.values
    if len(vals) < 2:
        raise BenchmarkError("persistence needs at least one prior day")
    return [
        (history.epoch_date + timedelta(days=i), float(vals[i - 1]))
        for i in range(1, len(vals))
        if np.isfinite(vals[i - 1])
    ]


def mape(pred, actual) -> float:
    """Mean absolute percentage error, in percent."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if np.any(actual <= 0):
        raise ValueError("MAPE needs strictly positive actual values")
    return float(100.0 * np.mean(np.abs(pred - actual) / actual))


@dataclass(frozen=True)
class Moments:
    mean: float
    std: float
    skewness: float
    kurtosis: float


def error_moments(errors) -> Moments:
    """Population mean, std, skewness and (non-excess) kurtosis."""
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least 2 errors")
    mu = float(np.mean(e))
    d = e - mu
    m2 = float(np.mean(d**2))
    if m2 <= 0.0:
        raise ValueError("errors have zero variance")
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    return Moments(mu, math.sqrt(m2), m3 / m2**1.5, m4 / m2**2)


def pi_coverage(records: Sequence[ForecastRecord]) -> float:
    """Percentage of observations outside [pi_low, pi_high] (bounds inclusive)."""
    obs = [r for r in records if r.observed is not None]
    if not obs:
        raise BenchmarkError("no records with observations")
    outside = sum(1 for r in obs if not (r.pi_low <= r.observed <= r.pi_high))
    return 100.0 * outside / len(obs)


def benchmark_row(period: str, site_id: str, records: Sequence[ForecastRecord]) -> BenchmarkRow:
    obs = [r for r in records if r.observed is not None]
    m = error_moments([r.log_error for r in obs])
    return BenchmarkRow(period, site_id, m.mean, m.std, m.skewness, m.kurtosis, pi_coverage(obs), len(obs))


def benchmark_report(
    site_ids: Sequence[str],
    params: Mapping[str, TemporalParams],
    histories: Mapping[str, DailySeries],
    split_date: date,
) -> tuple[BenchmarkReport, list[ForecastRecord]]:
    """Table of error moments and PI exceedances, in-sample then out-of-sample.

    Targets before ``split_date`` are in-sample. A period without enough
    observed forecasts for a site is skipped with a warning.
    """
    report = BenchmarkReport()
    all_records: list[ForecastRecord] = []
    for sid in site_ids:
        hist = histories[sid]
        recs = predict_site(params[sid], hist, _forecastable_dates(hist), site_id=sid)
        all_records.extend(recs)
        for period, bucket, sel in (
            (IN_SAMPLE, report.in_sample, [r for r in recs if r.date < split_date]),
            (OUT_OF_SAMPLE, report.out_of_sample, [r for r in recs if r.date >= split_date]),
        ):
            observed = [r for r in sel if r.observed is not None]
            if len(observed) < 4:
                report.warnings.append(f"{sid}: no {period.replace('_', '-')} rows ({len(observed)} observed forecasts)")
                continue
            bucket.append(benchmark_row(period, sid, observed))
    return report, all_records


def _forecastable_dates(history: DailySeries) -> list[date]:
    """Dates whose two preceding days are present, up to the day after the series ends."""
    v = history.values
    ok = np.isfinite(v)
    return [
        history.epoch_date + timedelta(days=i)
        for i in range(2, len(v) + 1)
        if ok[i - 1] and ok[i - 2]
    ]


def model_vs_persistence(records: Sequence[ForecastRecord], history_raw: DailySeries) -> tuple[float, float]:
    """(model MAPE, persistence MAPE) over days where both forecasts and an observation exist."""
    pers = dict(persistence_forecast(history_raw))
    pairs = [(r.point, pers[r.date], r.observed) for r in records if r.observed is not None and r.date in pers]
    if not pairs:
        raise BenchmarkError("no overlapping forecast days")
    model, persist, actual = (np.array(x) for x in zip(*pairs))
    return mape(model, actual), mape(persist, actual)


REPORT_HEADER = ["period", "site_id", "mean", "std", "skewness", "kurtosis", "pct_outside_pi"]
FORECAST_HEADER = ["site_id", "date", "point_mps", "pi_low_mps", "pi_high_mps", "observed_mps"]


def write_report_csv(path: str | Path, report: BenchmarkReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in report.rows:
            w.writerow([r.period, r.site_id, f"{r.mean:.4f}", f"{r.std:.4f}", f"{r.skewness:.4f}",
                        f"{r.kurtosis:.4f}", f"{r.pct_outside_pi:.4f}"])


def write_forecast_csv(path: str | Path, records: Sequence[ForecastRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for r in records:
            w.writerow([r.site_id, r.date.isoformat(), repr(r.point), repr(r.pi_low), repr(r.pi_high),
                        "" if r.observed is None else repr(r.observed)])


def read_forecast_records(path: str | Path) -> list[ForecastRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            obs = row["observed_mps"].strip()
            out.append(ForecastRecord(
                row["site_id"], date.fromisoformat(row["date"]), float(row["point_mps"]),
                float(row["pi_low_mps"]), float(row["pi_high_mps"]), float(obs) if obs else None,
            ))
    return out
