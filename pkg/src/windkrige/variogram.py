"""Empirical semivariograms and valid theoretical models.

Models are a nugget plus up to two bounded structures (spherical,
exponential, sine hole-effect). Lags are haversine distances in km.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from windkrige.geo import GeoPoint, distance_matrix

DEFAULT_BIN_WIDTH_KM = 25.0
MIN_BINS = 4
MAX_STRUCTURES = 2
CNSD_TOL = 1e-9
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12


class VariogramError(ValueError):
    pass


class Kind(str, enum.Enum):
    SPHERICAL = "spherical"
    EXPONENTIAL = "exponential"
    HOLE_EFFECT = "hole_effect"


ALL_KINDS = (Kind.SPHERICAL, Kind.EXPONENTIAL, Kind.HOLE_EFFECT)


def _structure_gamma(kind: Kind, c: float, r: float, h: np.ndarray) -> np.ndarray:
    x = h / r
    if kind is Kind.SPHERICAL:
        x = np.minimum(x, 1.0)
        return c * (1.5 * x - 0.5 * x * x * x)
    if kind is Kind.EXPONENTIAL:
        return c * -np.expm1(-x)
    if kind is Kind.HOLE_EFFECT:
        # np.sinc(z) = sin(pi z) / (pi z)
        return c * (1.0 - np.sinc(x / np.pi))
    raise VariogramError(f"unknown structure kind {kind!r}")


@dataclass(frozen=True)
class Structure:
    kind: Kind
    sill: float
    range_km: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (self.sill > 0 and math.isfinite(self.sill)):
            raise VariogramError(f"structure sill must be positive, got {self.sill}")
        if not (self.range_km > 0 and math.isfinite(self.range_km)):
            raise VariogramError(f"structure range must be positive, got {self.range_km}")


@dataclass(frozen=True)
class VariogramModel:
    """Nugget plus nested structures.

    ``gamma(0) = 0``; for ``h > 0`` the nugget is added to every structure.
    ``objective`` is the weighted least-squares value when the model came
    from ``fit_model``.
    """

    nugget: float = 0.0
    structures: tuple[Structure, ...] = ()
    objective: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.nugget >= 0 and math.isfinite(self.nugget)):
            raise VariogramError(f"nugget must be non-negative, got {self.nugget}")
        object.__setattr__(self, "structures", tuple(self.structures))

    @property
    def sill_total(self) -> float:
        return self.nugget + sum(s.sill for s in self.structures)

    @property
    def n_params(self) -> int:
        return 1 + 2 * len(self.structures)

    @property
    def family(self) -> str:
        return "+".join(["nugget"] + [s.kind.value for s in self.structures])

    def __call__(self, h):
        return eval_model(self, h)

    def gamma(self, h) -> np.ndarray:
        """Vectorised evaluation without argument checks."""
        h = np.asarray(h, dtype=float)
        out = np.full(h.shape, self.nugget)
        for s in self.structures:
            out = out + _structure_gamma(s.kind, s.sill, s.range_km, h)
        return np.where(h > 0, out, 0.0)

    def covariance(self, h):
        return cov_from_variogram(self, h)


@dataclass
class EmpiricalVariogram:
    bin_centers: np.ndarray  # mean pair distance in each bin, km
    gamma_hat: np.ndarray
    pair_counts: np.ndarray
    bin_width_km: float | None = None

    def __post_init__(self):
        self.bin_centers = np.asarray(self.bin_centers, dtype=float)
        self.gamma_hat = np.asarray(self.gamma_hat, dtype=float)
        self.pair_counts = np.asarray(self.pair_counts, dtype=int)
        if not (self.bin_centers.shape == self.gamma_hat.shape == self.pair_counts.shape):
            raise VariogramError("empirical variogram arrays differ in length")

    def __len__(self) -> int:
        return len(self.bin_centers)


def eval_model(m: VariogramModel, h):
    """Semivariogram value(s) at lag ``h`` km."""
    arr = np.asarray(h, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise VariogramError("lag must be non-negative")
    out = m.gamma(arr)
    return float(out) if out.ndim == 0 else out


def cov_from_variogram(m: VariogramModel, h):
    """Covariance ``C(h) = sill_total - gamma(h)``."""
    g = eval_model(m, h)
    return m.sill_total - g


# ---------------------------------------------------------------------------
# Empirical estimator


def empirical_semivariogram(
    sites: Sequence[GeoPoint],
    y: Sequence[float],
    bin_width_km: float = DEFAULT_BIN_WIDTH_KM,
    max_lag_km: float | None = None,
) -> EmpiricalVariogram:
    """Matheron estimator on distance bins ``[k w, (k+1) w)``.

    gamma_hat = sum over pairs in bin of (y_i - y_j)^2 / (2 N). The reported
    lag of a bin is the mean distance of its pairs; empty bins are dropped.
    ``max_lag_km`` defaults to half the largest pairwise distance.
    """
    y = np.asarray(y, dtype=float)
    n = len(sites)
    if n != len(y):
        raise VariogramError(f"{n} sites but {len(y)} values")
    if n < 2:
        raise VariogramError("need at least two sites")
    if not bin_width_km > 0:
        raise VariogramError("bin width must be positive")
    d = distance_matrix(sites)
    iu, ju = np.triu_indices(n, k=1)
    dist = d[iu, ju]
    if max_lag_km is None:
        max_lag_km = 0.5 * float(dist.max())
    keep = dist <= max_lag_km
    if not np.any(keep):
        raise VariogramError(f"no site pairs within max lag {max_lag_km:.3f} km")
    dist = dist[keep]
    sq = (y[iu[keep]] - y[ju[keep]]) ** 2
    k = np.floor(dist / bin_width_km).astype(int)
    nb = int(k.max()) + 1
    counts = np.bincount(k, minlength=nb)
    sq_sum = np.bincount(k, weights=sq, minlength=nb)
    d_sum = np.bincount(k, weights=dist, minlength=nb)
    ok = counts > 0
    return EmpiricalVariogram(
        bin_centers=d_sum[ok] / counts[ok],
        gamma_hat=sq_sum[ok] / (2.0 * counts[ok]),
        pair_counts=counts[ok],
        bin_width_km=bin_width_km,
    )


# ---------------------------------------------------------------------------
# Model fitting


def wls_objective(m: VariogramModel, ev: EmpiricalVariogram) -> float:
    """Cressie weighted least squares: sum N(h) (gamma_hat - gamma)^2 / gamma^2."""
    g = m.gamma(ev.bin_centers)
    floor = 1e-12 * max(float(np.max(ev.gamma_hat)), 1e-300)
    g = np.maximum(g, floor)
    return float(np.sum(ev.pair_counts * ((ev.gamma_hat - g) / g) ** 2))


def _candidate_families(kinds: Sequence[Kind], max_structures: int) -> list[tuple[Kind, ...]]:
    fams: list[tuple[Kind, ...]] = [()]
    for k in range(1, max_structures + 1):
        fams.extend(itertools.combinations_with_replacement(kinds, k))
    return fams


class _Family:
    """Maps a bounded unit-scale vector to a model of a fixed family.

    Layout: [nugget / s] + [log(c / s), log(r / L)] per structure, where s is
    the largest gamma_hat and L the largest lag.
    """

    def __init__(self, kinds: tuple[Kind, ...], ev: EmpiricalVariogram):
        self.kinds = kinds
        self.h = ev.bin_centers
        self.ghat = ev.gamma_hat
        self.w = ev.pair_counts.astype(float)
        self.s = float(np.max(ev.gamma_hat))
        self.L = float(ev.bin_centers[-1])
        self.floor = 1e-12 * self.s
        self.bounds = [(0.0, 2.0)]
        log_r_lo = math.log(max(1e-3, 0.05 * float(ev.bin_centers[0]) / self.L))
        for _ in kinds:
            self.bounds += [(math.log(1e-6), math.log(10.0)), (log_r_lo, math.log(10.0))]
        self.lo = np.array([b[0] for b in self.bounds])
        self.hi = np.array([b[1] for b in self.bounds])

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def objective(self, x: np.ndarray) -> float:
        x = np.minimum(np.maximum(x, self.lo), self.hi)
        g = self.s * x[0]
        for i, k in enumerate(self.kinds):
            g = g + _structure_gamma(k, self.s * math.exp(x[1 + 2 * i]), self.L * math.exp(x[2 + 2 * i]), self.h)
        g = np.maximum(g, self.floor)
        r = (self.ghat - g) / g
        return float(self.w @ (r * r))

    def model(self, x: np.ndarray) -> VariogramModel:
        x = self.clip(x)
        structs = tuple(
            Structure(k, self.s * math.exp(x[1 + 2 * i]), self.L * math.exp(x[2 + 2 * i]))
            for i, k in enumerate(self.kinds)
        )
        return VariogramModel(self.s * float(x[0]), structs)

    def starts(self, rng: np.random.Generator, n_random: int) -> list[np.ndarray]:
        g0 = float(self.ghat[0]) / self.s
        m = len(self.kinds)
        if m == 0:
            return [np.array([g]) for g in (g0, 0.5, 1.0)]
        out = []
        for nug in (0.0, 0.5 * g0):
            for rs in itertools.product((0.15, 0.5, 1.5), repeat=m):
                if m == 2 and rs[0] >= rs[1]:
                    continue
                c = max(1.0 - nug, 1e-3) / m
                x = [nug]
                for r in rs:
                    x += [math.log(c), math.log(r)]
                out.append(self.clip(np.array(x)))
        for _ in range(n_random):
            x = [rng.uniform(0.0, g0 + 1e-12)]
            for _ in range(m):
                x += [math.log(rng.uniform(0.05, 1.5)), math.log(rng.uniform(0.05, 2.0))]
            out.append(self.clip(np.array(x)))
        return out


def _nelder_mead(fun: Callable, x0: np.ndarray, bounds, xatol: float, fatol: float, maxfev: int):
    return optimize.minimize(
        fun,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": xatol, "fatol": fatol, "maxfev": maxfev, "maxiter": maxfev, "adaptive": len(x0) > 3},
    )


def _fit_family(ev: EmpiricalVariogram, kinds: tuple[Kind, ...], rng, n_random: int) -> VariogramModel:
    fam = _Family(kinds, ev)
    dim = len(fam.bounds)
    coarse = []
    for x0 in fam.starts(rng, n_random):
        res = _nelder_mead(fam.objective, x0, fam.bounds, 1e-3, 1e-8, 150 * dim)
        coarse.append((float(res.fun), res.x))
    coarse.sort(key=lambda r: r[0])
    best_f, best_x = math.inf, None
    for f, x in coarse[: 2 if dim <= 3 else 1]:
        # restart with a fresh simplex until no further progress
        for _ in range(4):
            res = _nelder_mead(fam.objective, x, fam.bounds, 1e-9, 1e-15, 1500 * dim)
            improved = res.fun < f * (1.0 - 1e-9)
            if res.fun < f:
                f, x = float(res.fun), res.x
            if not improved:
                break
        if f < best_f:
            best_f, best_x = f, x
    model = fam.model(best_x)
    return VariogramModel(model.nugget, model.structures, objective=wls_objective(model, ev))


def fit_candidates(
    ev: EmpiricalVariogram,
    candidates: Iterable[str | Kind] = ALL_KINDS,
    max_structures: int = MAX_STRUCTURES,
    seed: int = 42,
    n_random_starts: int = 2,
) -> list[VariogramModel]:
    """Best fit of every candidate family (pure nugget, single and nested)."""
    if len(ev) < MIN_BINS:
        raise VariogramError(f"too few bins: {len(ev)} nonempty lag bins, need at least {MIN_BINS}")
    kinds = tuple(dict.fromkeys(Kind(c) for c in candidates))
    if float(np.max(ev.gamma_hat)) <= 0.0:
        return [VariogramModel(0.0, (), objective=0.0)]
    rng = np.random.default_rng(seed)
    out = []
    for fam in _candidate_families(kinds, max_structures):
        try:
            model = _fit_family(ev, fam, rng, n_random_starts)
        except (VariogramError, FloatingPointError):
            continue
        if math.isfinite(model.objective):
            out.append(model)
    if not out:
        raise VariogramError("no candidate variogram family produced a finite fit")
    return out


def select_model(fits: Sequence[VariogramModel]) -> VariogramModel:
    """Lowest objective; near-ties go to the model with fewer parameters."""
    best = min(f.objective for f in fits)
    tol = TIE_RTOL * abs(best) + TIE_ATOL
    tied = [f for f in fits if f.objective <= best + tol]
    return min(tied, key=lambda f: (f.n_params, f.objective))


def fit_model(
    ev: EmpiricalVariogram,
    candidates: Iterable[str | Kind] = ALL_KINDS,
    max_structures: int = MAX_STRUCTURES,
    seed: int = 42,
    n_random_starts: int = 2,
) -> VariogramModel:
    """Fit every candidate family by multi-start Nelder-Mead and keep the best."""
    return select_model(fit_candidates(ev, candidates, max_structures, seed, n_random_starts))


# ---------------------------------------------------------------------------
# Validity check


@dataclass
class CnsdResult:
    passed: bool
    worst_violation: float  # max of q / (|w|^2 max gamma); <= tol passes


def check_cnsd(
    m: VariogramModel | Callable,
    sites: Sequence[GeoPoint],
    trials: int = 1000,
    seed: int = 42,
    tol: float = CNSD_TOL,
) -> CnsdResult:
    """Randomised check that sum_ij w_i w_j gamma(s_i - s_j) <= 0 when sum w = 0.

    ``m`` may be any callable mapping a lag array to semivariogram values,
    so that invalid tables can be checked too.
    """
    if len(sites) < 2:
        raise VariogramError("need at least two sites")
    d = distance_matrix(sites)
    gfun = m.gamma if isinstance(m, VariogramModel) else m
    G = np.asarray(gfun(d), dtype=float)
    np.fill_diagonal(G, 0.0)
    scale = float(np.max(np.abs(G)))
    if scale == 0.0:
        return CnsdResult(True, 0.0)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((trials, len(sites)))
    W -= W.mean(axis=1, keepdims=True)
    q = np.einsum("ti,ij,tj->t", W, G, W)
    ratio = q / (np.sum(W * W, axis=1) * scale)
    worst = float(np.max(ratio))
    return CnsdResult(worst <= tol, worst)


# ---------------------------------------------------------------------------
# CSV interfaces

EMPIRICAL_HEADER = ["param", "bin_center_km", "gamma_hat", "pair_count"]
MODEL_HEADER = ["param", "nugget", "kind1", "c1", "r1", "kind2", "c2", "r2", "wls_objective"]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_empirical_csv(path: str | Path, evs: dict[str, EmpiricalVariogram]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EMPIRICAL_HEADER)
        for name, ev in evs.items():
            for h, g, c in zip(ev.bin_centers, ev.gamma_hat, ev.pair_counts):
                w.writerow([name, _fmt(h), _fmt(g), int(c)])


def write_models_csv(path: str | Path, models: dict[str, VariogramModel]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MODEL_HEADER)
        for name, m in models.items():
            row = [name, _fmt(m.nugget)]
            for i in range(MAX_STRUCTURES):
                if i < len(m.structures):
                    s = m.structures[i]
                    row += [s.kind.value, _fmt(s.sill), _fmt(s.range_km)]
                else:
                    row += ["", "", ""]
            row.append("" if m.objective is None else _fmt(m.objective))
            w.writerow(row)


def read_models_csv(path: str | Path) -> dict[str, VariogramModel]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            structs = []
            for i in range(1, MAX_STRUCTURES + 1):
                if row.get(f"kind{i}"):
                    structs.append(Structure(row[f"kind{i}"], float(row[f"c{i}"]), float(row[f"r{i}"])))
            obj = row.get("wls_objective")
            out[row["param"]] = VariogramModel(
                float(row["nugget"]), tuple(structs), objective=float(obj) if obj else None
            )
    return out
