"""Daily log wind-speed series from forecast releases and station reports.

Forecast releases arrive every six hours (00, 06, 12, 18 UTC). Each one
contributes its first six lead hours, so splicing consecutive releases gives
an hourly series of short-horizon forecasts. Station reports are in knots at
10 m and are rescaled to the forecast height with the log wind profile.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from windkrige.geo import GeoPoint

KNOT_TO_MPS = 0.514444
DEFAULT_Z0_M = 0.0024
RELEASE_HOURS = (0, 6, 12, 18)
LEADS_USED = 6
MIN_HOURS_PER_DAY = 18

FORECAST_HEADER = ["site_id", "lat", "lon", "release_time_utc", "lead_hour", "u_mps", "v_mps"]
STATION_HEADER = ["site_id", "lat", "lon", "timestamp_utc", "wind_speed_kt"]
SERIES_HEADER = ["site_id", "date", "value", "transform"]


class IngestError(ValueError):
    """Malformed input data; ``line`` is the 1-based CSV line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class Transform(str, enum.Enum):
    RAW = "raw"
    LOG = "log"


@dataclass
class ForecastRelease:
    site: GeoPoint
    release_time: datetime
    lead_hours: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.release_time = _as_utc(self.release_time)
        if self.release_time.hour not in RELEASE_HOURS or self.release_time.minute or self.release_time.second:
            raise IngestError(f"release time {self.release_time.isoformat()} is not on a 6-hourly cycle")
        self.lead_hours = np.asarray(self.lead_hours, dtype=int)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if not (self.lead_hours.shape == self.u.shape == self.v.shape):
            raise IngestError("lead_hours, u and v must have equal length")
        if np.any(np.diff(self.lead_hours) <= 0):
            raise IngestError(
                f"lead hours not strictly increasing in release {self.release_time.isoformat()}"
            )
        missing = set(range(LEADS_USED)) - set(self.lead_hours.tolist())
        if missing:
            raise IngestError(
                f"release {self.release_time.isoformat()} lacks lead hours {sorted(missing)}"
            )


@dataclass(frozen=True)
class StationReport:
    site: GeoPoint
    timestamp: datetime
    wind_speed_kt: float

    def __post_init__(self):
        if not self.wind_speed_kt >= 0:
            raise IngestError(f"negative wind speed {self.wind_speed_kt} kt at {self.timestamp}")
        object.__setattr__(self, "timestamp", _as_utc(self.timestamp))


@dataclass
class HourlySeries:
    """Hourly speeds (m/s) starting at ``start``; NaN marks a missing hour."""

    site: GeoPoint
    start: datetime
    values: np.ndarray


@dataclass
class DailySeries:
    """Contiguous daily values; ``values[0]`` falls on ``epoch_date``.

    NaN marks a missing day. ``coverage`` holds the number of hours that
    entered each daily mean, when the series came from hourly data.
    """

    site: GeoPoint
    epoch_date: date
    values: np.ndarray
    transform: Transform = Transform.RAW
    coverage: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.transform = Transform(self.transform)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dates(self) -> list[date]:
        return [self.epoch_date + timedelta(days=i) for i in range(len(self.values))]

    @property
    def end_date(self) -> date:
        """Date of the last element."""
        return self.epoch_date + timedelta(days=len(self.values) - 1)

    def index_of(self, day: date) -> int:
        return (day - self.epoch_date).days

    def missing_mask(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def window(self, start: date, end: date) -> "DailySeries":
        """Re-index onto ``[start, end)``, padding with NaN outside the data."""
        n = (end - start).days
        if n <= 0:
            raise ValueError(f"empty window [{start}, {end})")
        out = np.full(n, np.nan)
        cov = None if self.coverage is None else np.zeros(n, dtype=int)
        offset = (self.epoch_date - start).days
        lo = max(0, offset)
        hi = min(n, offset + len(self.values))
        if lo < hi:
            out[lo:hi] = self.values[lo - offset:hi - offset]
            if cov is not None:
                cov[lo:hi] = self.coverage[lo - offset:hi - offset]
        return replace(self, epoch_date=start, values=out, coverage=cov)

    def trimmed(self) -> "DailySeries":
        """Drop leading and trailing missing days."""
        ok = np.flatnonzero(np.isfinite(self.values))
        if ok.size == 0:
            raise IngestError("series has no valid days")
        lo, hi = ok[0], ok[-1] + 1
        cov = None if self.coverage is None else self.coverage[lo:hi]
        return replace(
            self,
            epoch_date=self.epoch_date + timedelta(days=int(lo)),
            values=self.values[lo:hi].copy(),
            coverage=cov,
        )


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _midnight(ts: datetime) -> datetime:
    return ts.replace(hour=0, minute=0, second=0, microsecond=0)


def resultant_speed(u, v):
    """Wind speed magnitude sqrt(u^2 + v^2)."""
    return np.hypot(u, v)


def knots_to_mps(speed_kt):
    speed = np.asarray(speed_kt, dtype=float)
    if np.any(speed < 0):
        raise ValueError("wind speed in knots must be non-negative")
    out = speed * KNOT_TO_MPS
    return float(out) if out.ndim == 0 else out


def scale_log_wind(ws1, z1: float, z2: float, z0: float = DEFAULT_Z0_M):
    """Rescale wind speed from height ``z1`` to ``z2`` (metres) with the log law.

    ``ws2 = ws1 * log(z2 / z0) / log(z1 / z0)``, valid for heights above the
    roughness length ``z0``.
    """
    if not z0 > 0:
        raise ValueError(f"roughness length must be positive, got {z0}")
    if not (z1 > z0 and z2 > z0):
        raise ValueError(f"log wind law undefined for heights z1={z1}, z2={z2} at or below z0={z0}")
    ws = np.asarray(ws1, dtype=float)
    if np.any(ws < 0):
        raise ValueError("wind speed must be non-negative")
    out = ws * (math.log(z2 / z0) / math.log(z1 / z0))
    return float(out) if out.ndim == 0 else out


def splice_releases(releases: Iterable[ForecastRelease]) -> HourlySeries:
    """Stitch the first six lead hours of consecutive releases into one hourly series.

    The series runs from 00 UTC of the first release day to 23 UTC of the
    last release day. Hours whose release is absent stay NaN.
    """
    rel = sorted(releases, key=lambda r: r.release_time)
    if not rel:
        raise IngestError("no forecast releases")
    site = rel[0].site
    seen: set[datetime] = set()
    for r in rel:
        if r.site != site:
            raise IngestError(f"releases from more than one site: {site} and {r.site}")
        if r.release_time in seen:
            raise IngestError(f"duplicate forecast release at {r.release_time.isoformat()}")
        seen.add(r.release_time)

    start = _midnight(rel[0].release_time)
    n_days = (_midnight(rel[-1].release_time) - start).days + 1
    hourly = np.full(24 * n_days, np.nan)
    for r in rel:
        base = int((r.release_time - start).total_seconds() // 3600)
        speed = resultant_speed(r.u, r.v)
        for lead, s in zip(r.lead_hours, speed):
            if lead >= LEADS_USED:
                break
            hourly[base + lead] = s
    return HourlySeries(site=site, start=start, values=hourly)


def station_hourly(reports: Iterable[StationReport]) -> HourlySeries:
    """Hourly means (m/s) of station reports, each assigned to its UTC hour."""
    reps = sorted(reports, key=lambda r: r.timestamp)
    if not reps:
        raise IngestError("no station reports")
    site = reps[0].site
    start = _midnight(reps[0].timestamp)
    n_days = (_midnight(reps[-1].timestamp) - start).days + 1
    sums = np.zeros(24 * n_days)
    counts = np.zeros(24 * n_days, dtype=int)
    for r in reps:
        if r.site != site:
            raise IngestError(f"reports from more than one site: {site} and {r.site}")
        k = int((r.timestamp - start).total_seconds() // 3600)
        sums[k] += r.wind_speed_kt
        counts[k] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_kt = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return HourlySeries(site=site, start=start, values=mean_kt * KNOT_TO_MPS)


def daily_average(hourly: HourlySeries, min_hours: int = MIN_HOURS_PER_DAY) -> DailySeries:
    """Mean of the available hours in each UTC day.

    Days with fewer than ``min_hours`` valid hours are NaN.
    """
    vals = np.asarray(hourly.values, dtype=float)
    if vals.size == 0:
        raise IngestError("empty hourly series")
    if hourly.start != _midnight(hourly.start):
        raise IngestError(f"hourly series must start at 00 UTC, got {hourly.start.isoformat()}")
    n_days = -(-vals.size // 24)
    padded = np.full(24 * n_days, np.nan)
    padded[: vals.size] = vals
    days = padded.reshape(n_days, 24)
    ok = np.isfinite(days)
    count = ok.sum(axis=1)
    total = np.where(ok, days, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count >= min_hours, total / np.maximum(count, 1), np.nan)
    return DailySeries(
        site=hourly.site,
        epoch_date=hourly.start.date(),
        values=mean,
        transform=Transform.RAW,
        coverage=count,
    )


def log_transform(s: DailySeries) -> DailySeries:
    if s.transform is not Transform.RAW:
        raise ValueError("log_transform expects a raw series")
    bad = np.flatnonzero(s.values <= 0)
    if bad.size:
        raise ValueError(f"non-positive wind speed at day index {int(bad[0])} ({s.dates[bad[0]]})")
    return replace(s, values=np.log(s.values), transform=Transform.LOG)


def inverse_transform(s: DailySeries) -> DailySeries:
    if s.transform is not Transform.LOG:
        raise ValueError("inverse_transform expects a log series")
    return replace(s, values=np.exp(s.values), transform=Transform.RAW)


def _nan_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True values."""
    runs = []
    i, n = 0, len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def fill_gaps(s: DailySeries, max_gap_days: int = 3) -> DailySeries:
    """Linearly interpolate interior gaps of at most ``max_gap_days`` days.

    Longer gaps, and gaps touching either end of the series, cannot be
    bridged and raise ``IngestError`` listing every offending date range.
    """
    vals = s.values.copy()
    runs = _nan_runs(~np.isfinite(vals))
    if not runs:
        return replace(s, values=vals)
    dates = s.dates
    bad = []
    for lo, hi in runs:
        if lo == 0 or hi == len(vals) or hi - lo > max_gap_days:
            bad.append(f"{dates[lo]}..{dates[hi - 1]} ({hi - lo} days)")
            continue
        left, right = vals[lo - 1], vals[hi]
        frac = np.arange(1, hi - lo + 1) / (hi - lo + 1)
        vals[lo:hi] = left + frac * (right - left)
    if bad:
        raise IngestError(f"gaps longer than {max_gap_days} days or at series edge: " + ", ".join(bad))
    return replace(s, values=vals)


# ---------------------------------------------------------------------------
# CSV interfaces


def parse_utc(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    return _as_utc(ts)


def _check_header(reader, expected: list[str], path: str) -> list[str]:
    header = next(reader, None)
    if header is None:
        raise IngestError("empty file", line=1, path=path)
    header = [h.strip() for h in header]
    missing = [c for c in expected if c not in header]
    if missing:
        raise IngestError(f"missing columns {missing}", line=1, path=path)
    return header


def _site_point(site_points: dict, site_id: str, lat: float, lon: float, line: int, path: str) -> GeoPoint:
    pt = GeoPoint(lat, lon)
    prev = site_points.setdefault(site_id, pt)
    if prev != pt:
        raise IngestError(f"site {site_id} has inconsistent coordinates", line=line, path=path)
    return pt


def read_forecast_csv(path: str | Path) -> dict[str, list[ForecastRelease]]:
    """Parse a forecast CSV into releases per site id (in file order of first appearance)."""
    path = str(path)
    rows: dict[str, dict[datetime, list[tuple[int, float, float]]]] = defaultdict(lambda: defaultdict(list))
    first_line: dict[tuple[str, datetime], int] = {}
    site_points: dict[str, GeoPoint] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = _check_header(reader, FORECAST_HEADER, path)
        idx = {c: header.index(c) for c in FORECAST_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                site_id = row[idx["site_id"]].strip()
                _site_point(site_points, site_id, float(row[idx["lat"]]), float(row[idx["lon"]]), lineno, path)
                rt = parse_utc(row[idx["release_time_utc"]])
                lead = int(row[idx["lead_hour"]])
                u = float(row[idx["u_mps"]])
                v = float(row[idx["v_mps"]])
            except IngestError:
                raise
            except (ValueError, IndexError) as exc:
                raise IngestError(f"malformed forecast row: {exc}", line=lineno, path=path) from None
            if not (math.isfinite(u) and math.isfinite(v)):
                raise IngestError("non-finite wind component", line=lineno, path=path)
            rows[site_id][rt].append((lead, u, v))
            first_line.setdefault((site_id, rt), lineno)
    out: dict[str, list[ForecastRelease]] = {}
    for site_id, by_time in rows.items():
        rels = []
        for rt, entries in by_time.items():
            entries.sort()
            lead, u, v = (np.array(x) for x in zip(*entries))
            try:
                rels.append(ForecastRelease(site_points[site_id], rt, lead, u, v))
            except IngestError as exc:
                raise IngestError(f"site {site_id}: {exc}", line=first_line[(site_id, rt)], path=path) from None
        out[site_id] = sorted(rels, key=lambda r: r.release_time)
    return out


def read_station_csv(path: str | Path) -> dict[str, list[StationReport]]:
    path = str(path)
    out: dict[str, list[StationReport]] = defaultdict(list)
    site_points: dict[str, GeoPoint] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = _check_header(reader, STATION_HEADER, path)
        idx = {c: header.index(c) for c in STATION_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                site_id = row[idx["site_id"]].strip()
                pt = _site_point(site_points, site_id, float(row[idx["lat"]]), float(row[idx["lon"]]), lineno, path)
                ts = parse_utc(row[idx["timestamp_utc"]])
                speed_text = row[idx["wind_speed_kt"]].strip()
            except IngestError:
                raise
            except (ValueError, IndexError) as exc:
                raise IngestError(f"malformed station row: {exc}", line=lineno, path=path) from None
            if not speed_text:
                # site known but no observation at this time
                out.setdefault(site_id, [])
                continue
            try:
                out[site_id].append(StationReport(pt, ts, float(speed_text)))
            except ValueError as exc:
                raise IngestError(str(exc), line=lineno, path=path) from None
    return dict(out)


def station_sites(path: str | Path) -> dict[str, GeoPoint]:
    """Site coordinates listed in a station CSV, including sites without observations."""
    path = str(path)
    sites: dict[str, GeoPoint] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = _check_header(reader, ["site_id", "lat", "lon"], path)
        idx = {c: header.index(c) for c in ("site_id", "lat", "lon")}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                _site_point(sites, row[idx["site_id"]].strip(), float(row[idx["lat"]]), float(row[idx["lon"]]), lineno, path)
            except (ValueError, IndexError) as exc:
                if isinstance(exc, IngestError):
                    raise
                raise IngestError(f"malformed station row: {exc}", line=lineno, path=path) from None
    return sites


def write_series_csv(path: str | Path, series: dict[str, DailySeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for site_id, s in series.items():
            for d, v in zip(s.dates, s.values):
                w.writerow([site_id, d.isoformat(), "" if not np.isfinite(v) else repr(float(v)), s.transform.value])


def read_series_csv(path: str | Path, sites: dict[str, GeoPoint]) -> dict[str, DailySeries]:
    """Read a series CSV; rows per site must be on consecutive dates."""
    path = str(path)
    acc: dict[str, list[tuple[date, float, str]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = _check_header(reader, SERIES_HEADER, path)
        idx = {c: header.index(c) for c in SERIES_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d = date.fromisoformat(row[idx["date"]].strip())
                text = row[idx["value"]].strip()
                v = float(text) if text else math.nan
                acc[row[idx["site_id"]].strip()].append((d, v, row[idx["transform"]].strip()))
            except (ValueError, IndexError) as exc:
                raise IngestError(f"malformed series row: {exc}", line=lineno, path=path) from None
    out = {}
    for site_id, items in acc.items():
        items.sort()
        start = items[0][0]
        if any((d - start).days != i for i, (d, _, _) in enumerate(items)):
            raise IngestError(f"series for {site_id} is not on consecutive days", path=path)
        out[site_id] = DailySeries(sites[site_id], start, np.array([v for _, v, _ in items]), Transform(items[0][2]))
    return out


def build_forecast_series(releases: Sequence[ForecastRelease]) -> DailySeries:
    """Releases for one site to a raw daily series (m/s)."""
    return daily_average(splice_releases(releases))


def build_station_series(
    reports: Sequence[StationReport],
    z_from: float = 10.0,
    z_to: float = 100.0,
    z0: float = DEFAULT_Z0_M,
) -> DailySeries:
    """Station reports for one site to a raw daily series at ``z_to`` metres."""
    daily = daily_average(station_hourly(reports))
    factor = scale_log_wind(1.0, z_from, z_to, z0)
    return replace(daily, values=daily.values * factor)
