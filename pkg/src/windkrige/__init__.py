"""Spatio-temporal day-ahead wind-speed model.

Per-site temporal fits (Fourier seasonal mean, AR(2), seasonal variance) on
log daily wind speeds, ordinary kriging of the fitted parameters across
space, and one-day-ahead forecasts with 95% prediction intervals.
"""

from windkrige.geo import GeoPoint, RasterSpec, haversine_km, raster_points
from windkrige.ingest import DailySeries, ForecastRelease, StationReport
from windkrige.temporal import TemporalParams, FitReport, fit_temporal_model, forecast_one_day
from windkrige.variogram import VariogramModel, Structure, EmpiricalVariogram
from windkrige.kriging import KrigingSolution, OrdinaryKriging, krige_value, krige_params_at

__version__ = "0.1.0"

__all__ = [
    "GeoPoint",
    "RasterSpec",
    "haversine_km",
    "raster_points",
    "DailySeries",
    "ForecastRelease",
    "StationReport",
    "TemporalParams",
    "FitReport",
    "fit_temporal_model",
    "forecast_one_day",
    "VariogramModel",
    "Structure",
    "EmpiricalVariogram",
    "KrigingSolution",
    "OrdinaryKriging",
    "krige_value",
    "krige_params_at",
]
