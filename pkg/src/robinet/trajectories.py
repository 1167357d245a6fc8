"""Fine-grained quantum trajectories, digitization, and direct coarse sampling.

Fine trajectories are the ground truth the coarse-grained methods are checked
against. Diffusive channels use the normalized second-order Kraus update

    M = I + G dt + sum_c sqrt(eta_c) L_c dY_c
          + 1/2 sum_{c,c'} sqrt(eta_c eta_c') L_c L_c' (dY_c dY_c' - delta_cc' dt)
    rho -> M rho M^dag + dt sum_k K_k rho K_k^dag   (then renormalized)

with ``G = -iH - 1/2 sum L^dag L`` and ``K_k`` the undetected parts of every
dissipator. Jump channels click with probability
``dt (theta + eta Tr[L rho L^dag])`` per fine step.

Every trajectory draws from its own counter-based stream
(Philox keyed by ``(trajectory index, seed)``), so ensembles are reproducible
regardless of chunking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import MeasurementModel, ModelError, build_liouvillian, check_state, hermitize
from .instrument import DigitizedRecord, FilterOutput, Instrument, model_kinds
from .perturbative import PerturbativeExpansion

log = logging.getLogger(__name__)


#: Hilbert dimension up to which the compiled per-trajectory loop is used
COMPILED_MAX_DIM = 4


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of an ensemble seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(key=np.array([index, seed], dtype=np.uint64)))


@dataclass
class FineTrajectory:
    dt_fine: float
    states: np.ndarray  # (n_steps + 1, d, d)
    dY: np.ndarray  # (n_steps, m)
    seed: int
    kinds: tuple[str, ...]
    index: int = 0


class FineStepper:
    """Batched fine-step update for a fixed model and step size."""

    def __init__(self, model: MeasurementModel, dt: float):
        self.model = model
        self.dt = dt
        d = model.dim
        self.diff = [i for i, ch in enumerate(model.monitored) if not ch.is_jump]
        self.jump = [i for i, ch in enumerate(model.monitored) if ch.is_jump]
        ops = model.jump_operators()
        G = -1j * model.H - 0.5 * sum((L.conj().T @ L for L in ops), np.zeros((d, d), complex))
        self.A0 = np.eye(d) + dt * G
        self.cdiff = np.array([math.sqrt(model.monitored[i].eta) * model.monitored[i].L for i in self.diff]).reshape(
            len(self.diff), d, d
        )
        self.cc = np.einsum("aij,bjk->abik", self.cdiff, self.cdiff)
        extra = [math.sqrt(1 - ch.eta) * ch.L for ch in model.monitored if ch.eta < 1]
        extra += list(model.unmonitored)
        self.extra = np.array(extra).reshape(len(extra), d, d)
        self.extra_dag = self.extra.conj().transpose(0, 2, 1)
        self.jL = [model.monitored[i].L for i in self.jump]
        self.jeta = [model.monitored[i].eta for i in self.jump]
        self.jtheta = [model.monitored[i].dark_rate for i in self.jump]
        self.m = model.n_channels

    def step(self, rho: np.ndarray, xi: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance a batch (B, d, d) one fine step.

        ``xi`` are standard normals (B, n_diffusive) and ``u`` uniforms
        (B, n_jump). Returns the new states and the record increments (B, m).
        """
        dt = self.dt
        B = rho.shape[0]
        dY = np.zeros((B, self.m))
        M = np.broadcast_to(self.A0, rho.shape).copy()
        if self.diff:
            # signal mean sqrt(eta) Tr[(L + L^dag) rho] = 2 Re Tr[c rho]
            r = 2 * np.einsum("cij,bji->bc", self.cdiff, rho).real
            dYd = r * dt + math.sqrt(dt) * xi
            dY[:, self.diff] = dYd
            M += np.einsum("bc,cij->bij", dYd, self.cdiff)
            Q = 0.5 * (dYd[:, :, None] * dYd[:, None, :] - dt * np.eye(len(self.diff)))
            M += np.einsum("bce,ceij->bij", Q, self.cc)
        new = M @ rho @ M.conj().transpose(0, 2, 1)
        for K, Kd in zip(self.extra, self.extra_dag):
            new += dt * (K @ rho @ Kd)
        for j, (c, L, eta, theta) in enumerate(zip(self.jump, self.jL, self.jeta, self.jtheta)):
            LrL = L @ rho @ L.conj().T
            rate = theta + eta * np.einsum("bii->b", LrL).real
            click = u[:, j] < rate * dt
            if np.any(click):
                new[click] = theta * rho[click] + eta * LrL[click]
            dY[:, c] = click
        tr = np.einsum("bii->b", new).real
        new = hermitize(new / tr[:, None, None])
        return new, dY

    def advance(self, rho: np.ndarray, xi: np.ndarray, u: np.ndarray, compiled: bool | None = None):
        """Run ``xi.shape[1]`` steps on a batch; returns (states, summed increments).

        ``xi`` is (B, n_steps, n_diffusive), ``u`` is (B, n_steps, n_jump).
        """
        B = rho.shape[0]
        if compiled is None:
            compiled = self.model.dim <= COMPILED_MAX_DIM
        if compiled:
            from ._kernels import advance

            rho = np.ascontiguousarray(rho, dtype=complex).copy()
            acc = np.zeros((B, self.m))
            d = self.model.dim
            advance(
                rho, np.ascontiguousarray(xi, dtype=float), np.ascontiguousarray(u, dtype=float),
                np.ascontiguousarray(self.A0), np.ascontiguousarray(self.cdiff),
                np.ascontiguousarray(self.cc).reshape(len(self.diff), len(self.diff), d, d),
                np.ascontiguousarray(self.extra),
                np.array(self.jL, dtype=complex).reshape(len(self.jump), d, d),
                np.array(self.jeta, dtype=float), np.array(self.jtheta, dtype=float), float(self.dt),
                np.array(self.diff, dtype=np.int64), np.array(self.jump, dtype=np.int64), acc,
            )
            return rho, acc
        acc = np.zeros((B, self.m))
        for s in range(xi.shape[1]):
            rho, inc = self.step(rho, xi[:, s], u[:, s])
            acc += inc
        return rho, acc


def _check_resolution(model: MeasurementModel, dt_fine: float) -> None:
    scale = np.max(np.abs(np.linalg.eigvals(build_liouvillian(model))))
    if dt_fine * scale > 0.1:
        log.warning("dt_fine * |L| = %.3g > 0.1; fine trajectories may be inaccurate", dt_fine * scale)


def simulate_fine(
    model: MeasurementModel,
    rho0: np.ndarray,
    T: float,
    dt_fine: float,
    seed: int,
    index: int = 0,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> FineTrajectory:
    """Simulate one fine trajectory on ``[0, T]``.

    ``noise = (xi, u)`` overrides the random stream: ``xi`` standard normals
    with shape (n_steps, n_diffusive) and ``u`` uniforms (n_steps, n_jump).
    """
    check_state(rho0)
    n_steps = int(round(T / dt_fine))
    if abs(n_steps * dt_fine - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt_fine")
    _check_resolution(model, dt_fine)
    stepper = FineStepper(model, dt_fine)
    if noise is None:
        rng = trajectory_rng(seed, index)
        xi = rng.standard_normal((n_steps, len(stepper.diff)))
        u = rng.random((n_steps, len(stepper.jump)))
    else:
        xi, u = (np.asarray(a, dtype=float).reshape(n_steps, -1) for a in noise)
    states = np.empty((n_steps + 1, model.dim, model.dim), dtype=complex)
    dY = np.empty((n_steps, model.n_channels))
    rho = np.asarray(rho0, dtype=complex)[None]
    states[0] = rho[0]
    for k in range(n_steps):
        rho, inc = stepper.step(rho, xi[k : k + 1], u[k : k + 1])
        if not np.all(np.isfinite(rho)):
            raise ModelError(f"fine trajectory left the state space at step {k}")
        states[k + 1] = rho[0]
        dY[k] = inc[0]
    return FineTrajectory(dt_fine, states, dY, seed, model_kinds(model), index)


def steps_per_bin(dt: float, dt_fine: float) -> int:
    k = int(round(dt / dt_fine))
    if k < 1 or abs(k * dt_fine - dt) > 1e-9 * dt:
        raise ValueError(f"bin duration {dt} is not an integer multiple of dt_fine {dt_fine}")
    return k


def digitize(traj: FineTrajectory, dt: float) -> DigitizedRecord:
    """Sum fine increments over bins of duration ``dt``."""
    k = steps_per_bin(dt, traj.dt_fine)
    n = traj.dY.shape[0]
    if n % k:
        raise ValueError(f"trajectory of {n} fine steps does not split into bins of {k} steps")
    vals = traj.dY.reshape(n // k, k, -1).sum(axis=1)
    return DigitizedRecord(dt, vals, traj.kinds)


@dataclass
class Ensemble:
    """Digitized records and bin-edge states of many fine trajectories.

    ``records`` has shape (n_traj, n_bins, m); entries of pruned trajectories
    after their last simulated bin are NaN. ``states`` is (n_traj, d, d) for
    ``store="final"``, (n_traj, n_bins + 1, d, d) for ``store="edges"``.
    """

    dt: float
    dt_fine: float
    records: np.ndarray
    states: np.ndarray | None
    alive: np.ndarray
    seed: int
    kinds: tuple[str, ...]

    def record(self, i: int) -> DigitizedRecord:
        return DigitizedRecord(self.dt, self.records[i], self.kinds)


def simulate_ensemble(
    model: MeasurementModel,
    rho0: np.ndarray,
    n_traj: int,
    dt: float,
    n_bins: int,
    dt_fine: float,
    seed: int,
    store: str = "final",
    prune: Callable[[int, np.ndarray], np.ndarray] | None = None,
    chunk: int = 4096,
    first_index: int = 0,
) -> Ensemble:
    """Simulate ``n_traj`` fine trajectories and digitize them on the fly.

    ``prune(k, I)`` is called after bin ``k`` with the partial records
    (B, k + 1, m) of the trajectories still running and returns which of them
    to continue. Pruned trajectories are not simulated further.
    """
    check_state(rho0)
    if store not in ("none", "final", "edges"):
        raise ValueError("store must be 'none', 'final' or 'edges'")
    _check_resolution(model, dt_fine)
    k_bin = steps_per_bin(dt, dt_fine)
    stepper = FineStepper(model, dt_fine)
    nd, nj, m, d = len(stepper.diff), len(stepper.jump), model.n_channels, model.dim
    records = np.full((n_traj, n_bins, m), np.nan)
    alive = np.ones(n_traj, dtype=bool)
    if store == "edges":
        states = np.empty((n_traj, n_bins + 1, d, d), dtype=complex)
        states[:, 0] = rho0
    elif store == "final":
        states = np.empty((n_traj, d, d), dtype=complex)
    else:
        states = None
    for start in range(0, n_traj, chunk):
        idx = np.arange(start, min(start + chunk, n_traj))
        rngs = [trajectory_rng(seed, first_index + i) for i in idx]
        rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (len(idx), d, d)).copy()
        live = np.arange(len(idx))
        for b in range(n_bins):
            xi = np.stack([rngs[i].standard_normal((k_bin, nd)) for i in live]) if nd else np.zeros((len(live), k_bin, 0))
            u = np.stack([rngs[i].random((k_bin, nj)) for i in live]) if nj else np.zeros((len(live), k_bin, 0))
            rho, acc = stepper.advance(rho, xi, u)
            gidx = idx[live]
            records[gidx, b] = acc
            if store == "edges":
                states[gidx, b + 1] = rho
            if prune is not None and b < n_bins - 1:
                keep = np.asarray(prune(b, records[gidx, : b + 1]), dtype=bool)
                if store == "final":
                    states[gidx[~keep]] = rho[~keep]
                alive[gidx[~keep]] = False
                live, rho = live[keep], rho[keep]
                if len(live) == 0:
                    break
        if store == "final" and len(live):
            states[idx[live]] = rho
    if not np.all(np.isfinite(states[alive])) if states is not None else False:
        raise ModelError("fine simulation produced non-finite states")
    return Ensemble(dt, dt_fine, records, states, alive, seed, model_kinds(model))


# ---------------------------------------------------------------------------
# Direct coarse sampling


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for drawing bin values from the exact signal density.

    ``method`` is ``"quadrature"`` (tabulated density, inverse CDF) or
    ``"polynomial"`` (perturbative Gaussian-times-polynomial density sampled
    by rejection; single diffusive channel only).
    """

    k_sigma: float = 8.0
    n_grid: int = 256
    method: str = "quadrature"
    order: int = 4
    envelope_width: float = 1.5

    def __post_init__(self):
        if self.k_sigma < 4:
            raise ValueError("k_sigma must be >= 4")
        if self.n_grid < 128:
            raise ValueError("n_grid must be >= 128")
        if self.method not in ("quadrature", "polynomial"):
            raise ValueError(f"unknown sampler method {self.method!r}")


def _axis(instr: Instrument, rho: np.ndarray, c: int, cfg: SamplerConfig) -> np.ndarray:
    ch = instr.model.monitored[c]
    dt = instr.dt
    if ch.is_jump:
        L = ch.L
        mean = dt * (ch.dark_rate + ch.eta * np.trace(L @ rho @ L.conj().T).real)
        hi = int(math.ceil(mean + cfg.k_sigma * math.sqrt(mean + 1.0) + 5))
        return np.arange(hi + 1, dtype=float)
    rate = math.sqrt(ch.eta) * 2 * np.trace(ch.L @ rho).real
    half = cfg.k_sigma * math.sqrt(dt) * (1 + abs(rate) * math.sqrt(dt))
    return np.linspace(rate * dt - half, rate * dt + half, cfg.n_grid)


def _draw_1d(x: np.ndarray, p: np.ndarray, discrete: bool, u: float) -> float:
    p = np.clip(p, 0.0, None)
    if discrete:
        cdf = np.cumsum(p)
        return float(x[min(np.searchsorted(cdf, u * cdf[-1]), len(x) - 1)])
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
    target = u * cdf[-1]
    j = min(max(np.searchsorted(cdf, target) - 1, 0), len(x) - 2)
    # invert the piecewise-linear density exactly within cell j
    x0, h = x[j], x[j + 1] - x[j]
    a, slope = p[j], (p[j + 1] - p[j]) / h
    r = target - cdf[j]
    if abs(slope) < 1e-300:
        return float(x0 + (r / a if a > 0 else 0.5 * h))
    disc = max(a * a + 2 * slope * r, 0.0)
    return float(x0 + (math.sqrt(disc) - a) / slope)


def _sample_quadrature(instr: Instrument, rho: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    m = instr.model.n_channels
    axes = [_axis(instr, rho, c, cfg) for c in range(m)]
    disc = [instr.model.monitored[c].is_jump for c in range(m)]
    if m == 1:
        p = instr.density_grid(rho, axes[0])
        return np.array([_draw_1d(axes[0], p, disc[0], rng.random())])
    if m != 2:
        raise ModelError("quadrature sampling supports at most two channels")
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    P = np.clip(instr.density_grid(rho, np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape), 0, None)
    marg = P.sum(axis=1) if disc[1] else np.trapezoid(P, axes[1], axis=1)
    v0 = _draw_1d(axes[0], marg, disc[0], rng.random())
    j = min(max(np.searchsorted(axes[0], v0) - 1, 0), len(axes[0]) - 2)
    w = 0.0 if disc[0] else (v0 - axes[0][j]) / (axes[0][j + 1] - axes[0][j])
    if disc[0]:
        j = int(np.searchsorted(axes[0], v0))
    row = (1 - w) * P[j] + w * P[min(j + 1, len(axes[0]) - 1)]
    v1 = _draw_1d(axes[1], row, disc[1], rng.random())
    return np.array([v0, v1])


def _sample_polynomial(instr: Instrument, rho: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator,
                       stats: dict) -> np.ndarray:
    dt = instr.dt
    alpha = PerturbativeExpansion(instr.model, dt, cfg.order, rho).density_coefficients()

    def target(x):
        return np.clip(np.exp(-0.5 * x**2) * np.polynomial.polynomial.polyval(x, alpha), 0.0, None)

    mu = alpha[1] / alpha[0] if alpha[0] > 0 else 0.0
    width = cfg.envelope_width
    grid = np.linspace(mu - 12 * width, mu + 12 * width, 4001)
    while True:
        def env(x):
            return np.exp(-0.5 * ((x - mu) / width) ** 2)

        bound = 1.05 * np.max(target(grid) / env(grid))
        violated = False
        for _ in range(10_000):
            x = mu + width * rng.standard_normal()
            ratio = target(x) / env(x)
            if ratio > bound:
                violated = True
                break
            if rng.random() * bound <= ratio:
                return np.array([x * math.sqrt(dt)])
        stats["envelope_violations"] = stats.get("envelope_violations", 0) + 1
        log.info("rejection envelope %s; widening to %.3g", "violated" if violated else "inefficient", width * 1.25)
        width *= 1.25
        grid = np.linspace(mu - 12 * width, mu + 12 * width, 4001)


def sample_coarse(
    model: MeasurementModel,
    rho0: np.ndarray,
    n_bins: int,
    dt: float,
    seed: int,
    cfg: SamplerConfig = SamplerConfig(),
    index: int = 0,
    instrument: Instrument | None = None,
) -> tuple[DigitizedRecord, FilterOutput]:
    """Draw a digitized record bin by bin from the exact signal law.

    Each bin value is drawn from ``Tr K_I(rho_{k-1})`` and the state is then
    advanced with the exact filter update.
    """
    if cfg.method == "polynomial" and (model.n_channels != 1 or model.monitored[0].is_jump):
        raise ModelError("polynomial sampling needs a single diffusive channel")
    instr = instrument if instrument is not None else Instrument(model, dt)
    rng = trajectory_rng(seed, index)
    rho = np.asarray(rho0, dtype=complex)
    states, dens, vals = [rho], [], []
    repairs = 0
    stats: dict = {}
    for _ in range(n_bins):
        if cfg.method == "quadrature":
            I = _sample_quadrature(instr, rho, cfg, rng)
        else:
            I = _sample_polynomial(instr, rho, cfg, rng, stats)
        rho, p, rep = instr.filter_step(rho, I)
        repairs += rep
        states.append(rho)
        dens.append(p)
        vals.append(I)
    vals = np.array(vals).reshape(n_bins, model.n_channels)
    dens = np.array(dens)
    out = FilterOutput(states, dens, float(np.sum(np.log(dens))) if n_bins else 0.0, repairs)
    return DigitizedRecord(dt, vals, model_kinds(model)), out
