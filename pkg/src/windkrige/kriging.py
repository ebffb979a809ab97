"""Ordinary kriging of site parameters onto arbitrary locations.

The bordered system is

    [ G  1 ] [ lambda ]   [ g ]
    [ 1' 0 ] [   m    ] = [ 1 ]

with ``G[i, j] = gamma(|s_i - s_j|)`` off the diagonal, the nugget on the
diagonal, and ``g[i] = gamma(|s_i - s_0|)``. The nugget is read as
``gamma(0)``, also in ``g`` when ``s_0`` sits on a site. Because the weights
sum to one, a constant added to every entry of ``G`` and ``g`` only shifts
the multiplier, so this convention gives the weights and variance of the
nugget-free variogram. ``classical_diagonal=True`` uses the textbook zero
diagonal instead.

``G`` does not depend on the target, so one LU factorisation serves every
target location; only the right-hand side changes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from windkrige.geo import GeoPoint, RasterSpec, distance_matrix, haversine_array, points_to_arrays
from windkrige.temporal import PARAM_NAMES, TemporalFitError, TemporalParams, shrink_variance
from windkrige.variogram import VariogramModel

COND_LIMIT = 1e12
RESIDUAL_TOL = 1e-8
SIGMA2_NEG_TOL = 1e-8
DEFAULT_CHUNK = 16384


class KrigingError(ValueError):
    pass


@dataclass
class KrigingSolution:
    weights: np.ndarray
    lagrange_m: float
    sigma2: float


@dataclass
class ParamSurface:
    spec: RasterSpec
    param_name: str
    values: np.ndarray  # shape spec.shape
    sigma2: np.ndarray


def _check_distinct(d: np.ndarray) -> None:
    n = d.shape[0]
    off = d.copy()
    np.fill_diagonal(off, np.inf)
    if n > 1 and np.min(off) <= 0.0:
        i, j = np.unravel_index(np.argmin(off), off.shape)
        raise KrigingError(f"duplicate sites at indices {i} and {j}")


def _gamma_block(model: VariogramModel, d: np.ndarray, classical_diagonal: bool) -> np.ndarray:
    G = model.gamma(d)
    np.fill_diagonal(G, 0.0 if classical_diagonal else model.nugget)
    return G


def _gamma_rhs(model: VariogramModel, d: np.ndarray, classical_diagonal: bool) -> np.ndarray:
    g = model.gamma(d)
    if not classical_diagonal:
        # a target on top of a site sees the same gamma(0) = nugget as the
        # diagonal; with 0 here the system is inconsistent and sigma2 < 0
        g = np.where(d > 0, g, model.nugget)
    return g


def assemble_system(
    model: VariogramModel,
    sites: Sequence[GeoPoint],
    s0: GeoPoint,
    classical_diagonal: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Bordered matrix ``(n+1, n+1)`` and right-hand side ``(n+1,)``."""
    n = len(sites)
    if n < 1:
        raise KrigingError("need at least one site")
    d = distance_matrix(sites)
    _check_distinct(d)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = _gamma_block(model, d, classical_diagonal)
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    lat, lon = points_to_arrays(sites)
    rhs = np.ones(n + 1)
    rhs[:n] = _gamma_rhs(model, haversine_array(lat, lon, s0.lat_deg, s0.lon_deg), classical_diagonal)
    return A, rhs


def _clamp_sigma2(s2: np.ndarray) -> np.ndarray:
    if np.any(s2 < -SIGMA2_NEG_TOL):
        raise KrigingError(
            f"negative kriging variance {float(np.min(s2)):.3g}; the variogram is not valid"
        )
    return np.where(s2 < 0.0, 0.0, s2)


class _Factorised:
    """LU factorisation of a bordered system, rescaled so gamma entries are O(1)."""

    def __init__(self, A: np.ndarray):
        n = A.shape[0] - 1
        self.n = n
        self.A = A
        scale = float(np.max(np.abs(A[:n, :n]))) if n else 0.0
        self.scale = scale if scale > 0 else 1.0
        As = A.copy()
        As[:n, :n] /= self.scale
        self.As = As
        cond = np.linalg.cond(As)
        if not math.isfinite(cond) or cond > COND_LIMIT:
            raise KrigingError(f"ill-conditioned kriging system (condition number {cond:.3g})")
        self.lu = linalg.lu_factor(As, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for one (n+1,) or many (n+1, k) right-hand sides in original units."""
        rs = np.array(rhs, dtype=float, copy=True)
        rs[: self.n] /= self.scale
        x = linalg.lu_solve(self.lu, rs, check_finite=False)
        x[self.n] *= self.scale
        return x


def _check_residual(A: np.ndarray, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    res = A @ x - rhs
    rel = np.linalg.norm(res, axis=0) / np.linalg.norm(rhs, axis=0)
    return rel


def solve_ok(A: np.ndarray, rhs: np.ndarray, nugget: float | None = None) -> KrigingSolution:
    """Solve an assembled bordered system.

    ``sigma2 = sum(lambda_i g_i) + m - nugget``; ``nugget`` defaults to the
    diagonal entry ``A[0, 0]``.
    """
    A = np.asarray(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = A.shape[0] - 1
    eta = float(A[0, 0]) if nugget is None else float(nugget)
    x = _Factorised(A).solve(rhs)
    rel = float(_check_residual(A, x, rhs))
    if rel >= RESIDUAL_TOL:
        raise KrigingError(f"kriging solve residual {rel:.3g} exceeds {RESIDUAL_TOL}")
    lam, m = x[:n], float(x[n])
    s2 = float(_clamp_sigma2(np.array(lam @ rhs[:n] + m - eta)))
    return KrigingSolution(lam, m, s2)


class OrdinaryKriging:
    """Kriging predictor for one variogram model and a fixed set of sites.

    The system matrix is factorised once; :meth:`solve` and :meth:`predict`
    accept any number of target locations.
    """

    def __init__(self, model: VariogramModel, sites: Sequence[GeoPoint], classical_diagonal: bool = False):
        self.model = model
        self.sites = list(sites)
        self.classical_diagonal = classical_diagonal
        n = len(self.sites)
        if n < 1:
            raise KrigingError("need at least one site")
        self.lat, self.lon = points_to_arrays(self.sites)
        d = distance_matrix(self.sites)
        _check_distinct(d)
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = _gamma_block(model, d, classical_diagonal)
        A[:n, n] = 1.0
        A[n, :n] = 1.0
        self.A = A
        self.eta = 0.0 if classical_diagonal else model.nugget
        # No spatial structure: every weighting summing to one is optimal and
        # the system is singular. Equal weights are the minimum-norm optimum.
        self.degenerate = n > 1 and not model.structures and (not classical_diagonal or model.nugget == 0.0)
        self._fact = None if self.degenerate else _Factorised(A)

    @property
    def n(self) -> int:
        return len(self.sites)

    def rhs(self, lat, lon) -> np.ndarray:
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        d = haversine_array(self.lat[:, None], self.lon[:, None], lat[None, :], lon[None, :])
        out = np.ones((self.n + 1, lat.size))
        out[: self.n] = _gamma_rhs(self.model, d, self.classical_diagonal)
        return out

    def solve(self, lat, lon) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Weights ``(k, n)``, Lagrange multipliers ``(k,)`` and variances ``(k,)``."""
        R = self.rhs(lat, lon)
        n = self.n
        if self.degenerate:
            lam = np.full((n, R.shape[1]), 1.0 / n)
            m = np.mean(R[:n] - self.A[:n, :n] @ lam, axis=0)
            X = np.vstack([lam, m])
        else:
            X = self._fact.solve(R)
            rel = _check_residual(self.A, X, R)
            if np.any(rel >= RESIDUAL_TOL):
                k = int(np.argmax(rel))
                raise KrigingError(
                    f"kriging solve residual {rel[k]:.3g} at "
                    f"({np.atleast_1d(lat)[k]}, {np.atleast_1d(lon)[k]})"
                )
        lam, m = X[:n], X[n]
        s2 = np.einsum("ik,ik->k", lam, R[:n]) + m - self.eta
        try:
            s2 = _clamp_sigma2(s2)
        except KrigingError as exc:
            k = int(np.argmin(s2))
            raise KrigingError(f"{exc} at ({np.atleast_1d(lat)[k]}, {np.atleast_1d(lon)[k]})") from None
        return lam.T, m, s2

    def solution_at(self, s0: GeoPoint) -> KrigingSolution:
        lam, m, s2 = self.solve(s0.lat_deg, s0.lon_deg)
        return KrigingSolution(lam[0], float(m[0]), float(s2[0]))

    def predict(self, y, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n:
            raise KrigingError(f"{y.shape[0]} values for {self.n} sites")
        lam, _, s2 = self.solve(lat, lon)
        return lam @ y, s2


def krige_value(
    model: VariogramModel,
    sites: Sequence[GeoPoint],
    y: Sequence[float],
    s0: GeoPoint,
    classical_diagonal: bool = False,
) -> tuple[float, float]:
    """Kriged estimate and kriging variance at ``s0``."""
    if len(y) != len(sites):
        raise KrigingError(f"{len(y)} values for {len(sites)} sites")
    est, s2 = OrdinaryKriging(model, sites, classical_diagonal).predict(y, s0.lat_deg, s0.lon_deg)
    return float(est[0]), float(s2[0])


def krige_parameter_surface(
    model: VariogramModel,
    sites: Sequence[GeoPoint],
    y: Sequence[float],
    spec: RasterSpec,
    param_name: str = "",
    chunk: int = DEFAULT_CHUNK,
    classical_diagonal: bool = False,
) -> ParamSurface:
    """Kriged estimates and variances on every raster cell (row-major)."""
    ok = OrdinaryKriging(model, sites, classical_diagonal)
    lat, lon = spec.coordinates()
    est = np.empty(lat.size)
    s2 = np.empty(lat.size)
    y = np.asarray(y, dtype=float)
    for lo in range(0, lat.size, chunk):
        hi = min(lo + chunk, lat.size)
        est[lo:hi], s2[lo:hi] = ok.predict(y, lat[lo:hi], lon[lo:hi])
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(s2))):
        k = int(np.flatnonzero(~(np.isfinite(est) & np.isfinite(s2)))[0])
        raise KrigingError(f"non-finite kriged value at ({lat[k]}, {lon[k]})")
    return ParamSurface(spec, param_name, est.reshape(spec.shape), s2.reshape(spec.shape))


def _theta_columns(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != len(PARAM_NAMES):
        raise KrigingError(f"parameter table must have {len(PARAM_NAMES)} columns, got shape {theta.shape}")
    return theta


def _model_list(models: Mapping[str, VariogramModel] | Sequence[VariogramModel]) -> list[VariogramModel]:
    if isinstance(models, Mapping):
        missing = [p for p in PARAM_NAMES if p not in models]
        if missing:
            raise KrigingError(f"no variogram model for {missing}")
        return [models[p] for p in PARAM_NAMES]
    models = list(models)
    if len(models) != len(PARAM_NAMES):
        raise KrigingError(f"expected {len(PARAM_NAMES)} variogram models, got {len(models)}")
    return models


def krige_params_batch(
    models: Mapping[str, VariogramModel] | Sequence[VariogramModel],
    sites: Sequence[GeoPoint],
    theta,
    lat,
    lon,
    classical_diagonal: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Kriged parameter vectors ``(k, 18)`` and variances ``(k, 18)`` at k targets."""
    theta = _theta_columns(theta)
    mlist = _model_list(models)
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    est = np.empty((lat.size, len(PARAM_NAMES)))
    var = np.empty_like(est)
    for j, m in enumerate(mlist):
        est[:, j], var[:, j] = OrdinaryKriging(m, sites, classical_diagonal).predict(theta[:, j], lat, lon)
    return est, var


def params_from_kriged(vec: np.ndarray, epoch_date: date | None = None) -> TemporalParams:
    p = TemporalParams.from_vector(vec, epoch_date)
    try:
        p.b = shrink_variance(p.b)
    except TemporalFitError as exc:
        raise KrigingError(f"kriged seasonal variance is degenerate: {exc}") from None
    return p


def krige_params_at(
    models: Mapping[str, VariogramModel] | Sequence[VariogramModel],
    sites: Sequence[GeoPoint],
    theta,
    s0: GeoPoint,
    epoch_date: date | None = None,
    classical_diagonal: bool = False,
) -> TemporalParams:
    """Krige all 18 temporal parameters to ``s0``, each with its own model.

    The kriged variance coefficients get the same positivity shrinkage as
    a direct fit.
    """
    est, _ = krige_params_batch(models, sites, theta, s0.lat_deg, s0.lon_deg, classical_diagonal)
    return params_from_kriged(est[0], epoch_date)


def krige_surfaces(
    models: Mapping[str, VariogramModel],
    sites: Sequence[GeoPoint],
    theta,
    spec: RasterSpec,
    threads: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> dict[str, ParamSurface]:
    """One surface per parameter; parameters are processed in parallel threads."""
    theta = _theta_columns(theta)
    mlist = _model_list(models)

    def job(j: int) -> ParamSurface:
        return krige_parameter_surface(mlist[j], sites, theta[:, j], spec, PARAM_NAMES[j], chunk)

    if threads == 1:
        surfaces = [job(j) for j in range(len(PARAM_NAMES))]
    else:
        with ThreadPoolExecutor(max_workers=threads if threads > 0 else None) as pool:
            surfaces = list(pool.map(job, range(len(PARAM_NAMES))))
    return {s.param_name: s for s in surfaces}


SURFACE_HEADER = ["param", "lat", "lon", "estimate", "sigma2"]


def write_surface_csv(path: str | Path, surface: ParamSurface) -> None:
    lat, lon = surface.spec.coordinates()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURFACE_HEADER)
        for a, b, e, s in zip(lat, lon, surface.values.ravel(), surface.sigma2.ravel()):
            w.writerow([surface.param_name, f"{a:.6f}", f"{b:.6f}", repr(float(e)), repr(float(s))])
