"""Brute-force checks of the exact map against fine-grained simulation.

``postselect_verify`` keeps the simulated trajectories whose digitized record
falls within ``eps`` of target values in every bin and compares their mean
final state with the exact filter state. ``joint_density_compare`` compares
the histogram of two-bin records with the exact joint density.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import MeasurementModel, ModelError, hermitize, trace_distance
from .instrument import DigitizedRecord, Instrument
from .reconstruction import uhlmann_fidelity
from .trajectories import simulate_ensemble


class NothingKeptError(RuntimeError):
    """No trajectory matched the targets; ``nearest_miss`` helps retune eps."""

    def __init__(self, n_total: int, eps: float, nearest_miss: float):
        self.n_total, self.eps, self.nearest_miss = n_total, eps, nearest_miss
        super().__init__(
            f"none of {n_total} trajectories within eps={eps:g} of the targets; "
            f"nearest miss at max-norm distance {nearest_miss:.4g}"
        )


def _matrix_json(A: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(A)]


@dataclass
class PostSelectionReport:
    n_total: int
    n_kept: int
    eps: float
    targets: np.ndarray
    mc_state: np.ndarray
    robinet_state: np.ndarray
    trace_distance: float
    fidelity: float
    stat_bound: float
    distance_interval: tuple[float, float]
    n_boot: int
    seed: int

    @property
    def keep_rate(self) -> float:
        return self.n_kept / self.n_total

    @property
    def within_bound(self) -> bool:
        return self.trace_distance <= self.stat_bound

    def to_dict(self) -> dict:
        out = asdict(self)
        out["targets"] = np.asarray(self.targets).tolist()
        out["mc_state"] = _matrix_json(self.mc_state)
        out["robinet_state"] = _matrix_json(self.robinet_state)
        out["distance_interval"] = list(self.distance_interval)
        out["keep_rate"] = self.keep_rate
        out["within_bound"] = self.within_bound
        return out


def _targets(model: MeasurementModel, targets) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[:, None] if model.n_channels == 1 else t[None]
    if t.shape[1] != model.n_channels:
        raise ModelError(f"targets have {t.shape[1]} channels, model has {model.n_channels}")
    return t


def postselect_verify(
    model: MeasurementModel,
    rho0: np.ndarray,
    dt: float,
    targets,
    eps: float,
    n_traj: int,
    seed: int,
    dt_fine: float | None = None,
    n_boot: int = 500,
    chunk: int = 8192,
    instrument: Instrument | None = None,
) -> PostSelectionReport:
    """Compare the post-selected Monte-Carlo mean state with the exact filter state.

    A trajectory is kept when ``max_k |I_k - target_k| <= eps`` (max-norm over
    bins and channels). Trajectories leaving the window are not simulated
    further. ``stat_bound`` is the 95th percentile of the trace distance
    between bootstrap means (resampling kept trajectories) and the kept mean,
    i.e. the statistical resolution of the comparison.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if n_traj < 1000:
        raise ValueError("n_traj must be at least 1000")
    t = _targets(model, targets)
    K = len(t)
    dt_fine = dt / 1000 if dt_fine is None else dt_fine

    def prune(b, partial):
        return np.all(np.abs(partial[:, b] - t[b]) <= eps, axis=1)

    ens = simulate_ensemble(model, rho0, n_traj, dt, K, dt_fine, seed, store="final", prune=prune, chunk=chunk)
    dev = np.nanmax(np.abs(ens.records - t[None]), axis=(1, 2))
    kept = ens.alive & np.all(np.abs(ens.records - t[None]) <= eps, axis=(1, 2))
    n_kept = int(kept.sum())
    if n_kept == 0:
        raise NothingKeptError(n_traj, eps, float(np.min(dev)))
    S = ens.states[kept]
    mc = hermitize(S.mean(axis=0))
    instr = instrument if instrument is not None else Instrument(model, dt)
    out = instr.run_filter(DigitizedRecord(dt, t, instr.kinds), rho0)
    if out.failed_step is not None:
        raise ModelError(out.error)
    rb = out.states[-1]
    D = trace_distance(mc, rb)
    rng = np.random.default_rng(seed)
    spread = np.empty(n_boot)
    dist = np.empty(n_boot)
    for b in range(n_boot):
        m = hermitize(S[rng.integers(0, n_kept, n_kept)].mean(axis=0))
        spread[b] = trace_distance(m, mc)
        dist[b] = trace_distance(m, rb)
    return PostSelectionReport(
        n_total=n_traj,
        n_kept=n_kept,
        eps=float(eps),
        targets=t,
        mc_state=mc,
        robinet_state=rb,
        trace_distance=float(D),
        fidelity=uhlmann_fidelity(mc, rb),
        stat_bound=float(np.quantile(spread, 0.95)),
        distance_interval=(float(np.quantile(dist, 0.025)), float(np.quantile(dist, 0.975))),
        n_boot=n_boot,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Joint density of two bins


class CoverageError(ValueError):
    pass


@dataclass
class JointDensityResult:
    edges: tuple[np.ndarray, np.ndarray]
    histogram: np.ndarray  # fraction of trajectories per cell
    exact: np.ndarray  # exact probability per cell
    tv: float
    coverage: float
    expected_tv: float  # mean TV from multinomial noise alone

    def write_csv(self, path) -> None:
        import csv

        ex, ey = self.edges
        cx, cy = 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["I1", "I2", "histogram", "exact"])
            for i, x in enumerate(cx):
                for j, y in enumerate(cy):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.histogram[i, j])),
                                repr(float(self.exact[i, j]))])


def _moments(instr: Instrument, rho: np.ndarray) -> tuple[float, float]:
    """Mean and standard deviation of a single diffusive bin value."""
    sd0 = math.sqrt(instr.dt)
    rate = 2 * math.sqrt(instr.model.monitored[0].eta) * np.trace(instr.model.monitored[0].L @ rho).real
    x = np.linspace(rate * instr.dt - 12 * sd0 * (1 + abs(rate) * sd0), rate * instr.dt + 12 * sd0 * (1 + abs(rate) * sd0), 2001)
    p = instr.density_grid(rho, x)
    Z = np.trapezoid(p, x)
    mu = np.trapezoid(x * p, x) / Z
    var = np.trapezoid((x - mu) ** 2 * p, x) / Z
    return float(mu), float(math.sqrt(var))


def default_grid(instr: Instrument, rho0: np.ndarray, n: int = 50, k_sigma: float = 8.0):
    """Cell edges spanning mean +- k_sigma standard deviations of each exact marginal."""
    m1 = _moments(instr, rho0)
    m2 = _moments(instr, instr.lindblad_step(rho0))
    return tuple(np.linspace(mu - k_sigma * s, mu + k_sigma * s, n + 1) for mu, s in (m1, m2))


def exact_cell_probabilities(instr: Instrument, rho0: np.ndarray, edges, order: int = 3) -> np.ndarray:
    """Integral of Tr[K_I2 K_I1 rho0] over each grid cell (Gauss-Legendre per cell)."""
    x, w = np.polynomial.legendre.leggauss(order)

    def nodes(e):
        h = np.diff(e)
        pts = (0.5 * (e[:-1] + e[1:]))[:, None] + 0.5 * h[:, None] * x[None]
        return pts.ravel(), (0.5 * h[:, None] * w[None]).ravel()

    p1, w1 = nodes(edges[0])
    p2, w2 = nodes(edges[1])
    lin = instr.apply_batch(np.broadcast_to(rho0, (len(p1),) + rho0.shape), p1[:, None])
    dens = np.array([instr.density_grid(s, p2) for s in lin])
    cell = (dens * w1[:, None] * w2[None, :]).reshape(len(edges[0]) - 1, order, len(edges[1]) - 1, order)
    return cell.sum(axis=(1, 3))


def joint_density_compare(
    model: MeasurementModel,
    rho0: np.ndarray,
    dt: float,
    grid_2d=None,
    n_traj: int = 100_000,
    seed: int = 0,
    dt_fine: float | None = None,
    min_coverage: float = 0.999,
    instrument: Instrument | None = None,
) -> JointDensityResult:
    """Histogram of simulated (I_1, I_2) against the exact cell probabilities.

    ``grid_2d`` is a pair of edge arrays; by default 50 x 50 cells spanning
    +-8 standard deviations of the exact marginals.
    """
    if model.n_channels != 1 or model.monitored[0].is_jump:
        raise ModelError("joint density comparison needs a single diffusive channel")
    instr = instrument if instrument is not None else Instrument(model, dt)
    edges = default_grid(instr, rho0) if grid_2d is None else tuple(np.asarray(e, dtype=float) for e in grid_2d)
    exact = exact_cell_probabilities(instr, rho0, edges)
    coverage = float(exact.sum())
    if coverage < min_coverage:
        raise CoverageError(f"grid holds {coverage:.5f} of the exact mass, need {min_coverage}")
    dt_fine = dt / 1000 if dt_fine is None else dt_fine
    ens = simulate_ensemble(model, rho0, n_traj, dt, 2, dt_fine, seed, store="none")
    H, _, _ = np.histogram2d(ens.records[:, 0, 0], ens.records[:, 1, 0], bins=edges)
    H = H / n_traj
    tv = 0.5 * float(np.abs(H - exact).sum())
    expected = 0.5 * float(np.sum(np.sqrt(2 * exact.clip(0) / (math.pi * n_traj))))
    return JointDensityResult(edges, H, exact, tv, coverage, expected)
