"""Per-site temporal model for daily log wind speed.

    W(t) = S(t) + X(t),   X(t) = alpha1 X(t-1) + alpha2 X(t-2) + sigma(t) eps(t)

with a six-harmonic Fourier seasonal mean ``S``, an AR(2) anomaly ``X`` and
a one-harmonic seasonal variance ``sigma^2(t) = b0 + b1 cos + b2 sin``.
The three stages are fitted one after another by ordinary least squares.
``t`` is an integer day index counted from a study-wide epoch date, so the
Fourier phases of different sites are comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np
from scipy import signal, stats

from windkrige.ingest import DailySeries, Transform

PERIOD_DAYS = 365.25
N_HARMONICS = 6
N_SEASONAL = 2 * N_HARMONICS + 1
AR_ORDER = 2
N_PARAMS = N_SEASONAL + AR_ORDER + 3
VARIANCE_FLOOR_FRACTION = 0.05
KS_CRIT_5PCT = 1.358
PI_Z = 1.96

PARAM_NAMES = (
    [f"a{i}" for i in range(N_SEASONAL)] + ["alpha1", "alpha2"] + ["b0", "b1", "b2"]
)


class TemporalFitError(ValueError):
    pass


@dataclass
class TemporalParams:
    """The 18 parameters of one site's temporal model.

    ``a`` are the seasonal mean coefficients (a0, then cos/sin pairs per
    harmonic), ``alpha`` the AR(2) coefficients and ``b`` the seasonal
    variance coefficients. ``epoch_date`` is the date of ``t = 0``.
    """

    a: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    epoch_date: date | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(N_SEASONAL)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(AR_ORDER)
        self.b = np.asarray(self.b, dtype=float).reshape(3)

    @classmethod
    def from_vector(cls, vec: Sequence[float], epoch_date: date | None = None) -> "TemporalParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {vec.shape}")
        return cls(vec[:N_SEASONAL], vec[N_SEASONAL:N_SEASONAL + 2], vec[N_SEASONAL + 2:], epoch_date)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.alpha, self.b])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, self.as_vector().tolist()))

    def seasonal(self, t) -> np.ndarray:
        return eval_seasonal(self, t)

    def variance(self, t) -> np.ndarray:
        return seasonal_variance(self.b, t)

    @property
    def min_variance(self) -> float:
        return float(self.b[0] - math.hypot(self.b[1], self.b[2]))

    @property
    def variance_positive(self) -> bool:
        return self.min_variance > 0

    @property
    def is_stationary(self) -> bool:
        return ar_is_stationary(self.alpha)


@dataclass
class FitReport:
    params: TemporalParams
    residuals: np.ndarray  # standardized eps-hat, aligned with t[2:]
    ks_statistic: float
    ks_reject_5pct: bool
    aic: float
    ar_residuals: np.ndarray = field(repr=False, default=None)
    t: np.ndarray = field(repr=False, default=None)

    @property
    def stationary(self) -> bool:
        return self.params.is_stationary


# ---------------------------------------------------------------------------
# Seasonal mean


def seasonal_design(t) -> np.ndarray:
    """Columns ``1, cos(2 pi i t / P), sin(2 pi i t / P)`` for i = 1..6."""
    t = np.asarray(t, dtype=float)
    cols = [np.ones_like(t)]
    for i in range(1, N_HARMONICS + 1):
        w = 2.0 * np.pi * i * t / PERIOD_DAYS
        cols.append(np.cos(w))
        cols.append(np.sin(w))
    return np.stack(cols, axis=-1)


def eval_seasonal(p, t):
    """Seasonal mean at day index ``t``; ``p`` is TemporalParams or the 13 coefficients."""
    a = p.a if isinstance(p, TemporalParams) else np.asarray(p, dtype=float)
    out = seasonal_design(t) @ a
    return float(out) if np.ndim(out) == 0 else out


def _day_index(n: int, t0: int = 0) -> np.ndarray:
    return t0 + np.arange(n, dtype=float)


def _require_finite(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise TemporalFitError(f"{what} has {bad.size} missing values (first at index {int(bad[0])})")


def fit_seasonal(values, t=None) -> np.ndarray:
    """OLS fit of the 13-term Fourier mean. Returns a0..a12."""
    y = np.asarray(values, dtype=float)
    _require_finite(y, "series")
    t = _day_index(len(y)) if t is None else np.asarray(t, dtype=float)
    if len(y) < 2 * N_SEASONAL + 1:
        raise TemporalFitError(
            f"series of {len(y)} points is too short for {N_SEASONAL} seasonal coefficients"
        )
    X = seasonal_design(t)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < N_SEASONAL:
        raise TemporalFitError("seasonal design is rank deficient; series too short")
    return coef


# ---------------------------------------------------------------------------
# Autoregression


def ar_is_stationary(alpha) -> bool:
    """True when all roots of 1 - a1 z - ... - ap z^p lie outside the unit circle."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size == 0:
        return True
    # eigenvalues of the companion matrix are the inverse roots
    comp = np.zeros((alpha.size, alpha.size))
    comp[0] = alpha
    comp[1:, :-1] = np.eye(alpha.size - 1)
    return bool(np.all(np.abs(np.linalg.eigvals(comp)) < 1.0))


def _lag_matrix(x: np.ndarray, order: int, start: int) -> np.ndarray:
    return np.column_stack([x[start - k: len(x) - k] for k in range(1, order + 1)])


def fit_ar(x, order: int, start: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """OLS AR(order) without intercept, regressing ``x[start:]`` on its lags.

    Returns (coefficients, residuals). ``start`` defaults to ``order``.
    """
    x = np.asarray(x, dtype=float)
    _require_finite(x, "series")
    start = order if start is None else start
    y = x[start:]
    if order == 0:
        return np.zeros(0), y.copy()
    if math.sqrt(float(np.mean(x * x))) < 1e-12:
        raise TemporalFitError("singular AR design: series is identically zero")
    X = _lag_matrix(x, order, start)
    gram = X.T @ X
    if np.linalg.cond(gram) > 1e10:
        raise TemporalFitError("singular AR design: lagged regressors are collinear")
    coef = np.linalg.solve(gram, X.T @ y)
    return coef, y - X @ coef


def fit_ar2(x) -> np.ndarray:
    """(alpha1, alpha2) by OLS on the deseasonalized series."""
    x = np.asarray(x, dtype=float)
    if len(x) < 100:
        raise TemporalFitError(f"AR(2) fit needs at least 100 points, got {len(x)}")
    coef, _ = fit_ar(x, AR_ORDER)
    return coef


# ---------------------------------------------------------------------------
# Seasonal variance


def variance_design(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    w = 2.0 * np.pi * t / PERIOD_DAYS
    return np.stack([np.ones_like(t), np.cos(w), np.sin(w)], axis=-1)


def seasonal_variance(b, t):
    out = variance_design(t) @ np.asarray(b, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def shrink_variance(b) -> np.ndarray:
    """Pull (b1, b2) towards zero if the seasonal variance is not positive.

    The minimum over a period is ``b0 - hypot(b1, b2)``. When that is <= 0,
    the amplitude is scaled down so that the minimum equals
    ``VARIANCE_FLOOR_FRACTION * b0``.
    """
    b = np.asarray(b, dtype=float).copy()
    if not b[0] > 0:
        raise TemporalFitError(f"seasonal variance level b0={b[0]:.6g} is not positive")
    amp = math.hypot(b[1], b[2])
    if b[0] - amp <= 0:
        factor = (1.0 - VARIANCE_FLOOR_FRACTION) * b[0] / amp
        b[1:] *= factor
    return b


def fit_seasonal_variance(r, t=None) -> np.ndarray:
    """OLS of squared AR residuals on {1, cos, sin}; returns (b0, b1, b2)."""
    r = np.asarray(r, dtype=float)
    _require_finite(r, "residuals")
    t = _day_index(len(r)) if t is None else np.asarray(t, dtype=float)
    coef, *_ = np.linalg.lstsq(variance_design(t), r * r, rcond=None)
    return shrink_variance(coef)


# ---------------------------------------------------------------------------
# Diagnostics


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations for lags 0..max_lag (divisor N)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n <= max_lag:
        raise ValueError(f"series length {n} must exceed max_lag {max_lag}")
    d = x - x.mean()
    c0 = float(d @ d) / n
    if c0 <= 0:
        raise ValueError("zero-variance series has no autocorrelation")
    return np.array([float(d[: n - k] @ d[k:]) / n / c0 for k in range(max_lag + 1)])


def pacf(x, max_lag: int) -> np.ndarray:
    """Partial autocorrelations for lags 0..max_lag via Durbin-Levinson."""
    rho = acf(x, max_lag)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        phikk = (rho[k] - phi @ rho[1:k][::-1]) / v
        phi = np.concatenate([phi - phikk * phi[::-1], [phikk]])
        v *= 1.0 - phikk**2
        out[k] = phikk
    return out


def ks_test_normal(eps) -> tuple[float, bool]:
    """One-sample Kolmogorov-Smirnov distance to N(0, 1).

    Rejection at 5% uses the asymptotic critical value 1.358 / sqrt(n).
    """
    e = np.sort(np.asarray(eps, dtype=float))
    n = len(e)
    if n < 30:
        raise ValueError(f"KS test needs at least 30 residuals, got {n}")
    cdf = stats.norm.cdf(e)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return d, bool(d > KS_CRIT_5PCT / math.sqrt(n))


def gaussian_loglik(r, var) -> float:
    """Log-likelihood of residuals ``r`` under N(0, var(t))."""
    r = np.asarray(r, dtype=float)
    var = np.asarray(var, dtype=float)
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * var) + r * r / var))


def aic(report: FitReport, k: int = N_PARAMS) -> float:
    """2k - 2 log L, with L the Gaussian likelihood of the AR residuals
    under the fitted seasonal variance."""
    var = report.params.variance(report.t)
    return 2.0 * k - 2.0 * gaussian_loglik(report.ar_residuals, var)


def aic_by_ar_order(series: DailySeries, orders: Sequence[int] = (0, 1, 2, 3, 4, 5),
                    epoch_date: date | None = None) -> dict[int, float]:
    """AIC of the full model for alternative AR orders, on a common sample.

    Diagnostic only; the production model always uses AR(2).
    """
    y, t = _series_arrays(series, epoch_date)
    a = fit_seasonal(y, t)
    x = y - eval_seasonal(a, t)
    start = max(orders)
    out = {}
    for p in orders:
        _, r = fit_ar(x, p, start=start)
        b = fit_seasonal_variance(r, t[start:])
        var = seasonal_variance(b, t[start:])
        out[p] = 2.0 * (N_SEASONAL + p + 3) - 2.0 * gaussian_loglik(r, var)
    return out


# ---------------------------------------------------------------------------
# Full fit


def _series_arrays(series: DailySeries, epoch_date: date | None) -> tuple[np.ndarray, np.ndarray]:
    if series.transform is not Transform.LOG:
        raise TemporalFitError("temporal model is fitted on log wind speeds")
    epoch = series.epoch_date if epoch_date is None else epoch_date
    t0 = (series.epoch_date - epoch).days
    y = np.asarray(series.values, dtype=float)
    _require_finite(y, "series")
    return y, _day_index(len(y), t0)


def fit_arrays(y, t, epoch_date: date | None = None) -> FitReport:
    """Staged fit on raw arrays: log values ``y`` at day indices ``t``."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    a = fit_seasonal(y, t)
    x = y - eval_seasonal(a, t)
    alpha = fit_ar2(x)
    _, r = fit_ar(x, AR_ORDER)
    tr = t[AR_ORDER:]
    b = fit_seasonal_variance(r, tr)
    params = TemporalParams(a, alpha, b, epoch_date)
    eps = r / np.sqrt(params.variance(tr))
    d, reject = ks_test_normal(eps)
    report = FitReport(params, eps, d, reject, math.nan, ar_residuals=r, t=tr)
    report.aic = aic(report)
    return report


def fit_temporal_model(series: DailySeries, epoch_date: date | None = None) -> FitReport:
    """Fit seasonal mean, AR(2) and seasonal variance to one log series.

    ``epoch_date`` fixes ``t = 0``; it defaults to the series' first day.
    All sites of a study must share it.
    """
    epoch = series.epoch_date if epoch_date is None else epoch_date
    y, t = _series_arrays(series, epoch)
    return fit_arrays(y, t, epoch)


# ---------------------------------------------------------------------------
# Forecasting and simulation


def forecast_one_day(p: TemporalParams, w_t: float, w_tm1: float, t: int) -> tuple[float, float, float]:
    """Forecast for day ``t + 1`` from log values at ``t`` and ``t - 1``.

    Returns (point, pi_low, pi_high) in m/s; the interval is the 95%
    Gaussian interval on the log scale, exponentiated.
    """
    w_log, sigma = forecast_log(p, np.array([w_t]), np.array([w_tm1]), np.array([t]))
    w_log, sigma = float(w_log[0]), float(sigma[0])
    return math.exp(w_log), math.exp(w_log - PI_Z * sigma), math.exp(w_log + PI_Z * sigma)


def forecast_log(p: TemporalParams, w_t, w_tm1, t) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised log-scale forecast: (mean of W(t+1), sigma(t+1))."""
    w_t = np.asarray(w_t, dtype=float)
    w_tm1 = np.asarray(w_tm1, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(w_t)) and np.all(np.isfinite(w_tm1)) and np.all(np.isfinite(t))):
        raise ValueError("forecast inputs must be finite")
    s = lambda tt: seasonal_design(tt) @ p.a  # noqa: E731
    mean = s(t + 1) + p.alpha[0] * (w_t - s(t)) + p.alpha[1] * (w_tm1 - s(t - 1))
    var = seasonal_variance(p.b, t + 1)
    if np.any(np.asarray(var) <= 0):
        raise ValueError("seasonal variance is not positive")
    return mean, np.sqrt(var)


def simulate(p: TemporalParams, n: int, rng: np.random.Generator, t0: int = 0, burn_in: int = 1000) -> np.ndarray:
    """Draw ``n`` log values at t = t0 .. t0+n-1 from the model."""
    total = n + burn_in
    t = t0 - burn_in + np.arange(total, dtype=float)
    sd = np.sqrt(seasonal_variance(p.b, t))
    eps = rng.standard_normal(total) * sd
    x = signal.lfilter([1.0], [1.0, -p.alpha[0], -p.alpha[1]], eps)
    return eval_seasonal(p, t[burn_in:]) + x[burn_in:]


# ---------------------------------------------------------------------------
# Parameter table

PARAMS_HEADER = ["site_id", "lat", "lon"] + PARAM_NAMES + ["ks_stat", "ks_reject", "aic"]


@dataclass
class ParamTableRow:
    site_id: str
    lat: float
    lon: float
    params: TemporalParams
    ks_stat: float = math.nan
    ks_reject: bool = False
    aic: float = math.nan


def write_params_csv(path, rows: Sequence[ParamTableRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARAMS_HEADER)
        for r in rows:
            w.writerow(
                [r.site_id, repr(r.lat), repr(r.lon)]
                + [repr(float(v)) for v in r.params.as_vector()]
                + [repr(float(r.ks_stat)), int(bool(r.ks_reject)), repr(float(r.aic))]
            )


def read_params_csv(path, epoch_date: date | None = None) -> list[ParamTableRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PARAMS_HEADER[:3] + PARAM_NAMES if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: parameter table lacks columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                vec = [float(row[c]) for c in PARAM_NAMES]
                rows.append(ParamTableRow(
                    row["site_id"],
                    float(row["lat"]),
                    float(row["lon"]),
                    TemporalParams.from_vector(vec, epoch_date),
                    float(row.get("ks_stat") or "nan"),
                    (row.get("ks_reject") or "0").strip() in ("1", "true", "True"),
                    float(row.get("aic") or "nan"),
                ))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad parameter row ({exc})") from None
    return rows
