"""Run configuration: a flat ``key = value`` text file.

Blank lines and lines starting with ``#`` are ignored. Command-line flags
override file values. Defaults follow the reference setup: z0 = 0.0024 m,
0.01 degree raster, 10 m stations scaled to 100 m.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from windkrige.geo import RasterSpec
from windkrige.variogram import ALL_KINDS, Kind


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    forecast_csv: Path | None = None
    station_csv: Path | None = None
    epoch_date: date = date(2015, 2, 1)
    split_date: date = date(2019, 7, 1)
    end_date: date | None = None
    z0: float = 0.0024
    station_height_m: float = 10.0
    model_height_m: float = 100.0
    lat_min: float = 32.0
    lat_max: float = 37.0
    lon_min: float = -121.0
    lon_max: float = -114.0
    step_deg: float = 0.01
    bin_width_km: float = 25.0
    max_lag_km: float | None = None
    max_gap_days: int = 3
    variogram_families: tuple[Kind, ...] = field(default_factory=lambda: ALL_KINDS)
    output_dir: Path = Path("out")
    seed: int = 42
    threads: int = 1

    @property
    def raster(self) -> RasterSpec:
        return RasterSpec(self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.step_deg)

    def validate(self) -> "RunConfig":
        if not self.epoch_date < self.split_date:
            raise ConfigError(f"epoch_date {self.epoch_date} must precede split_date {self.split_date}")
        if self.end_date is not None and not self.split_date <= self.end_date:
            raise ConfigError(f"end_date {self.end_date} precedes split_date {self.split_date}")
        if not self.z0 > 0:
            raise ConfigError(f"z0 must be positive, got {self.z0}")
        if self.max_gap_days < 0:
            raise ConfigError("max_gap_days must be non-negative")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        try:
            self.raster
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _convert(name: str, text: str):
    text = text.strip()
    ftype = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    if text == "" and "None" in str(ftype):
        return None
    try:
        if name in ("forecast_csv", "station_csv", "output_dir"):
            return Path(text)
        if name in ("epoch_date", "split_date", "end_date"):
            return date.fromisoformat(text)
        if name in ("max_gap_days", "seed", "threads"):
            return int(text)
        if name == "variogram_families":
            return tuple(Kind(k.strip()) for k in text.split(",") if k.strip())
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from None


def parse_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    cfg = base or RunConfig()
    updates = {}
    for key, value in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _convert(key, value)
    return dataclasses.replace(cfg, **updates)


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs: dict[str, str] = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        base_dir = path.parent
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value
    cfg = parse_pairs(pairs)
    if base_dir is not None:
        # relative paths in a config file are relative to that file
        for name in ("forecast_csv", "station_csv", "output_dir"):
            p = getattr(cfg, name)
            if p is not None and not p.is_absolute() and name in pairs:
                cfg = dataclasses.replace(cfg, **{name: base_dir / p})
    if overrides:
        cfg = parse_pairs(overrides, cfg)
    return cfg.validate()
