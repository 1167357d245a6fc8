"""Log-likelihoods of digitized records and grid-scan parameter estimation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import MeasurementModel, ModelError
from .instrument import DEFAULT_NP, DigitizedRecord, Instrument, fig1_model
from .reconstruction import euler_reconstruct, kraus1_reconstruct
from .trajectories import simulate_ensemble

log = logging.getLogger(__name__)

LIKELIHOOD_METHODS = ("robinet", "kraus1", "euler")


class LikelihoodError(ArithmeticError):
    """A record has non-positive density at some step."""

    def __init__(self, record: int, step: int | None, method: str):
        self.record, self.step, self.method = record, step, method
        super().__init__(f"{method}: non-positive density in record {record} at step {step}")


def stack_records(records) -> tuple[np.ndarray, float]:
    """(R, n_bins, m) values and the shared bin duration of a list of records."""
    if isinstance(records, DigitizedRecord):
        records = [records]
    records = list(records)
    if not records:
        raise ValueError("no records")
    dt = records[0].dt
    kinds = records[0].kinds
    n = records[0].n_bins
    for j, r in enumerate(records):
        if abs(r.dt - dt) > 1e-12 * dt or r.kinds != kinds or r.n_bins != n:
            raise ModelError(f"record {j} differs in dt, channels or length from record 0")
    return np.stack([r.values for r in records]), dt


def record_logliks(values: np.ndarray, dt: float, model: MeasurementModel, rho0: np.ndarray,
                   method: str = "robinet", n_p: int = DEFAULT_NP,
                   instrument: Instrument | None = None) -> np.ndarray:
    """Per-record log-likelihoods for ``values`` of shape (R, n_bins, m)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    if method == "robinet":
        instr = instrument if instrument is not None else Instrument(model, dt, n_p)
        ll = instr.filter_many(values, rho0)
        bad = np.flatnonzero(~np.isfinite(ll))
        if bad.size:
            out = instr.run_filter(DigitizedRecord(dt, values[bad[0]], instr.kinds), rho0)
            raise LikelihoodError(int(bad[0]), out.failed_step, method)
        return ll
    if method == "kraus1":
        ll = kraus1_reconstruct(model, values, rho0, dt).loglik
    elif method == "euler":
        ll = euler_reconstruct(model, values, rho0, dt).loglik
    else:
        raise ValueError(f"unknown method {method!r}")
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise LikelihoodError(int(bad[0]), None, method)
    return ll


def log_likelihood(records, model: MeasurementModel, rho0: np.ndarray, method: str = "robinet",
                   n_p: int = DEFAULT_NP) -> float:
    """Sum over records of the sum over bins of log p(I_k | I_<k)."""
    values, dt = stack_records(records)
    return float(np.sum(record_logliks(values, dt, model, rho0, method, n_p)))


@dataclass(frozen=True)
class ParameterGrid:
    """Values of one scalar parameter and the model each one defines."""

    name: str
    values: np.ndarray
    factory: Callable[[float], MeasurementModel]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("grid values must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid values must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def parse(cls, spec: str, factory: Callable[[float], MeasurementModel]) -> "ParameterGrid":
        """Parse ``name=lo:hi:n`` (inclusive, n points)."""
        try:
            name, rng = spec.split("=")
            lo, hi, n = rng.split(":")
            return cls(name.strip(), np.linspace(float(lo), float(hi), int(n)), factory)
        except ValueError as exc:
            raise ValueError(f"grid must look like name=lo:hi:n, got {spec!r}") from exc


def quadratic_peak(x: np.ndarray, y: np.ndarray, i: int) -> tuple[float, float]:
    """Vertex and curvature ``-y''`` of the parabola through points i-1, i, i+1.

    At the grid edges or on flat data the grid point itself is returned with
    zero curvature.
    """
    if i == 0 or i == len(x) - 1:
        return float(x[i]), 0.0
    x0, x1, x2 = x[i - 1 : i + 2]
    y0, y1, y2 = y[i - 1 : i + 2]
    d1 = (y1 - y0) / (x1 - x0)
    d2 = (y2 - y1) / (x2 - x1)
    a = (d2 - d1) / (x2 - x0)
    if not a < 0:
        return float(x[i]), 0.0
    b = d1 - a * (x0 + x1)
    return float(-b / (2 * a)), float(-2 * a)


@dataclass
class ScanResult:
    """Outcome of a grid scan.

    ``per_record`` is (n_values, n_records). ``shifted`` is the curve minus
    its maximum. ``se`` is the bootstrap standard error of ``peak``.
    """

    name: str
    method: str
    dt: float
    values: np.ndarray
    loglik: np.ndarray
    per_record: np.ndarray
    argmax: float
    peak: float
    curvature: float
    se: float
    boot_peaks: np.ndarray

    @property
    def shifted(self) -> np.ndarray:
        return self.loglik - self.loglik.max()

    def rows(self):
        for v, ll, sh in zip(self.values, self.loglik, self.shifted):
            yield [repr(self.dt), self.method, repr(float(v)), repr(float(ll)), repr(float(sh)), repr(self.se)]


def _peak(values: np.ndarray, ll: np.ndarray) -> tuple[int, float, float]:
    # argmax returns the first maximum, i.e. the smallest grid value on ties
    i = int(np.argmax(ll))
    p, c = quadratic_peak(values, ll, i)
    return i, p, c


def scan(records, grid: ParameterGrid, method: str = "robinet", rho0: np.ndarray | None = None,
         n_boot: int = 200, seed: int = 0, n_p: int = DEFAULT_NP, dt: float | None = None) -> ScanResult:
    """Log-likelihood on every grid point, argmax, quadratic peak and bootstrap error.

    ``records`` is a list of DigitizedRecord or an array (R, n_bins, m) with
    ``dt``.
    """
    if isinstance(records, np.ndarray):
        if dt is None:
            raise TypeError("dt is required for raw arrays")
        values = records if records.ndim == 3 else records[..., None]
    else:
        values, dt = stack_records(records)
    if rho0 is None:
        raise TypeError("rho0 is required")
    per = np.array([record_logliks(values, dt, grid.factory(v), rho0, method, n_p) for v in grid.values])
    total = per.sum(axis=1)
    i, peak, curv = _peak(grid.values, total)
    rng = np.random.default_rng(seed)
    R = values.shape[0]
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, R, R)
        boot[b] = _peak(grid.values, per[:, idx].sum(axis=1))[1]
    se = float(np.std(boot, ddof=1)) if n_boot > 1 else float("nan")
    return ScanResult(grid.name, method, float(dt), grid.values, total, per, float(grid.values[i]), peak, curv, se, boot)


def write_scan_csv(results: Sequence[ScanResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dt", "method", "omega", "loglik", "loglik_shifted", "se"])
        for r in results:
            w.writerows(r.rows())


def rebin(values: np.ndarray, k: int) -> np.ndarray:
    """Merge groups of ``k`` consecutive bins of (R, n_bins, m) records."""
    R, n, m = values.shape
    if n % k:
        raise ValueError(f"{n} bins do not split into groups of {k}")
    return values.reshape(R, n // k, k, m).sum(axis=2)


@dataclass
class BiasStudy:
    """Scans of the detuning for several bin durations, all from one ensemble."""

    omega_true: float
    scans: dict[tuple[float, str], ScanResult]

    def peak(self, dt: float, method: str) -> tuple[float, float]:
        r = self.scans[(dt, method)]
        return r.peak, r.se

    def curvature(self, dt: float, method: str = "robinet") -> float:
        return self.scans[(dt, method)].curvature


def detuning_grid(values) -> ParameterGrid:
    return ParameterGrid("omega", np.asarray(values, dtype=float), lambda w: fig1_model(omega=float(w)))


def bias_study(
    omega_true: float = 1.0,
    dts: Sequence[float] = (0.05, 0.1, 0.5, 1.0),
    n_records: int = 1000,
    T: float = 5.0,
    dt_fine: float = 1e-3,
    grid: ParameterGrid | None = None,
    methods: Sequence[str] = ("robinet", "kraus1"),
    seed: int = 0,
    n_boot: int = 200,
    first_index: int = 0,
) -> BiasStudy:
    """Detuning estimation for the driven qubit at several bin durations.

    One fine ensemble is simulated at the smallest bin duration; coarser
    records merge its bins, so every bin duration sees the same trajectories.
    """
    model = fig1_model(omega=omega_true)
    from .core import excited_state

    rho0 = excited_state()
    base = min(dts)
    n_base = int(round(T / base))
    ens = simulate_ensemble(model, rho0, n_records, base, n_base, dt_fine, seed, store="none",
                            first_index=first_index)
    grid = grid if grid is not None else detuning_grid(np.linspace(0.5, 1.5, 41))
    scans = {}
    for dt in dts:
        k = int(round(dt / base))
        if abs(k * base - dt) > 1e-9:
            raise ValueError(f"bin duration {dt} is not a multiple of {base}")
        vals = rebin(ens.records, k)
        for method in methods:
            scans[(dt, method)] = scan(vals, grid, method, rho0, n_boot=n_boot, seed=seed, dt=dt)
            r = scans[(dt, method)]
            log.info("dt=%g %s: peak %.4f +- %.4f, curvature %.4g", dt, method, r.peak, r.se, r.curvature)
    return BiasStudy(omega_true, scans)


def saturation(curv: dict[float, float], fine: float = 0.05, mid: float = 0.1, coarse: float = 0.5) -> tuple[float, float]:
    """Relative curvature gains (coarse -> mid) and (mid -> fine)."""
    return curv[mid] / curv[coarse] - 1.0, curv[fine] / curv[mid] - 1.0


def is_saturated(curv: dict[float, float], fine: float = 0.05, mid: float = 0.1, coarse: float = 0.5) -> bool:
    """Information gain from refining below ``mid`` is under half the gain from ``coarse`` to ``mid``."""
    g_coarse, g_fine = saturation(curv, fine, mid, coarse)
    return g_coarse > 0 and abs(g_fine) < 0.5 * g_coarse


__all__ = [
    "LIKELIHOOD_METHODS",
    "LikelihoodError",
    "ParameterGrid",
    "ScanResult",
    "BiasStudy",
    "bias_study",
    "detuning_grid",
    "is_saturated",
    "log_likelihood",
    "quadratic_peak",
    "rebin",
    "record_logliks",
    "saturation",
    "scan",
    "stack_records",
    "write_scan_csv",
]

