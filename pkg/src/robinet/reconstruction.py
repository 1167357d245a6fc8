"""State reconstruction from digitized records: exact filter versus baselines.

Two baselines are provided. ``euler`` is the Euler discretization of the
diffusive stochastic master equation driven by the observed bin values, with
no positivity enforcement. ``kraus1`` is the order-two Kraus instrument

    M_I = I + dt G + sum_c sqrt(eta_c) L_c I_c
            + 1/2 sum_{c,c'} sqrt(eta_c eta_c') L_c L_c' (I_c I_c' - delta_cc' dt)
    rho -> N(I; 0, dt) M_I S^-1/2 rho S^-1/2 M_I^dag + dt sum_k K_k S^-1/2 rho S^-1/2 K_k^dag

with ``K_k`` the undetected parts of every dissipator and ``S`` the Gaussian
average of ``M_I^dag M_I`` plus ``dt sum_k K_k^dag K_k``. The normalization
makes the family trace preserving after integration over I; since
``S = I + O(dt^2)`` it agrees with the second-order truncation of the exact
map. It is completely positive for any efficiency.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    Channel,
    MeasurementModel,
    ModelError,
    TOL,
    build_liouvillian,
    build_measurement_superop,
    coherent_dm,
    destroy,
    hermitize,
    unvec,
    vec,
)
from .instrument import DigitizedRecord, Instrument
from .trajectories import simulate_ensemble, steps_per_bin

log = logging.getLogger(__name__)

METHODS = ("robinet", "kraus1", "euler")


def _diffusive_only(model: MeasurementModel) -> None:
    if any(ch.is_jump for ch in model.monitored):
        raise ModelError("baseline reconstructions need diffusive channels only")


def _values(record, model: MeasurementModel) -> np.ndarray:
    vals = record.values if isinstance(record, DigitizedRecord) else np.asarray(record, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 2:
        vals = vals[None]
    if vals.shape[-1] != model.n_channels:
        raise ModelError(f"record has {vals.shape[-1]} channels, model has {model.n_channels}")
    return vals


@dataclass
class Reconstruction:
    """State history of one method over a batch of records.

    ``states`` is (R, n_bins + 1, d, d); ``loglik`` per record; ``unphysical``
    marks states with an eigenvalue below ``-tol.psd``; ``diverged`` marks
    non-finite states (from that bin on).
    """

    method: str
    states: np.ndarray
    loglik: np.ndarray
    unphysical: np.ndarray
    diverged: np.ndarray


def _min_eig(states: np.ndarray) -> np.ndarray:
    out = np.full(states.shape[:-2], -np.inf)
    ok = np.all(np.isfinite(states), axis=(-2, -1))
    out[ok] = np.linalg.eigvalsh(hermitize(states[ok]))[..., 0]
    return out


def euler_reconstruct(model: MeasurementModel, record, rho0: np.ndarray, dt: float | None = None) -> Reconstruction:
    """Euler update driven by the bin values, positivity not enforced.

    ``record`` is a DigitizedRecord or an array (R, n_bins, m) with ``dt``.
    The log-likelihood uses the Euler signal law ``I ~ N(Tr[C rho] dt, dt)``.
    """
    if isinstance(record, DigitizedRecord):
        dt = record.dt
    if dt is None:
        raise TypeError("dt is required for raw arrays")
    _diffusive_only(model)
    vals = _values(record, model)
    R, n, m = vals.shape
    d = model.dim
    Lg = build_liouvillian(model)
    Cs = [build_measurement_superop(ch) for ch in model.monitored]
    tr_idx = np.arange(d) * (d + 1)
    hist = np.empty((R, n + 1, d * d), dtype=complex)
    v = np.broadcast_to(vec(np.asarray(rho0, dtype=complex)), (R, d * d)).copy()
    hist[:, 0] = v
    loglik = np.zeros(R)
    diverged = np.zeros((R, n + 1), dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(n):
            new = v + dt * (v @ Lg.T)
            for c, C in enumerate(Cs):
                Cv = v @ C.T
                r = Cv[:, tr_idx].sum(axis=1).real
                innov = vals[:, k, c] - r * dt
                new = new + (Cv - r[:, None] * v) * innov[:, None]
                loglik += -0.5 * innov**2 / dt - 0.5 * math.log(2 * math.pi * dt)
            tr = new[:, tr_idx].sum(axis=1).real
            v = new / tr[:, None]
            v = vec(hermitize(unvec(v)))
            bad = ~np.all(np.isfinite(v), axis=1) | diverged[:, k]
            diverged[:, k + 1] = bad
            hist[:, k + 1] = v
    loglik[diverged[:, -1]] = -np.inf
    states = unvec(hist.reshape(R * (n + 1), d * d)).reshape(R, n + 1, d, d)
    unphysical = _min_eig(states) < -TOL.psd
    unphysical |= diverged
    return Reconstruction("euler", states, loglik, unphysical, diverged)


class Kraus1Step:
    """Order-two Kraus update for a fixed model and bin duration."""

    def __init__(self, model: MeasurementModel, dt: float):
        _diffusive_only(model)
        self.model, self.dt = model, float(dt)
        d = model.dim
        ops = model.jump_operators()
        G = -1j * model.H - 0.5 * sum((L.conj().T @ L for L in ops), np.zeros((d, d), complex))
        self.A0 = np.eye(d) + dt * G
        self.c = np.array([math.sqrt(ch.eta) * ch.L for ch in model.monitored]).reshape(-1, d, d)
        self.cc = np.einsum("aij,bjk->abik", self.c, self.c)
        extra = [math.sqrt(1 - ch.eta) * ch.L for ch in model.monitored if ch.eta < 1]
        extra += list(model.unmonitored)
        extra = np.array(extra).reshape(len(extra), d, d)
        # Gaussian average of M^dag M: 3-point Gauss-Hermite per channel is
        # exact for the quartic integrand
        m = self.c.shape[0]
        x, w = np.polynomial.hermite_e.hermegauss(3)
        grids = np.meshgrid(*([x] * m), indexing="ij")
        I = np.stack([g.ravel() for g in grids], axis=1) * math.sqrt(dt)
        W = np.prod(np.stack(np.meshgrid(*([w / math.sqrt(2 * math.pi)] * m), indexing="ij")).reshape(m, -1), axis=0)
        M = self._kraus(I)
        S = np.einsum("n,nji,njk->ik", W, M.conj(), M) + dt * np.einsum("kji,kjl->il", extra.conj(), extra)
        ev, V = np.linalg.eigh(hermitize(S))
        self.S_inv_half = (V / np.sqrt(ev)) @ V.conj().T
        self.A0 = self.A0 @ self.S_inv_half
        self.c = self.c @ self.S_inv_half
        self.cc = self.cc @ self.S_inv_half
        self.extra = extra @ self.S_inv_half

    def _kraus(self, I: np.ndarray) -> np.ndarray:
        m = self.c.shape[0]
        M = np.broadcast_to(self.A0, (len(I),) + self.A0.shape).copy()
        M += np.einsum("rc,cij->rij", I, self.c)
        Q = 0.5 * (I[:, :, None] * I[:, None, :] - self.dt * np.eye(m))
        M += np.einsum("rce,ceij->rij", Q, self.cc)
        return M

    def apply(self, rho: np.ndarray, I: np.ndarray) -> np.ndarray:
        """Unnormalized image for a batch ``rho`` (R, d, d), ``I`` (R, m)."""
        dt = self.dt
        M = self._kraus(I)
        out = M @ rho @ M.conj().transpose(0, 2, 1)
        for K in self.extra:
            out += dt * (K @ rho @ K.conj().T)
        g = np.prod(np.exp(-(I**2) / (2 * dt)) / math.sqrt(2 * math.pi * dt), axis=1)
        return hermitize(out * g[:, None, None])


def kraus1_reconstruct(model: MeasurementModel, record, rho0: np.ndarray, dt: float | None = None) -> Reconstruction:
    """Filter with the order-two Kraus map; ``record`` a DigitizedRecord or (R, n, m) array."""
    if isinstance(record, DigitizedRecord):
        dt = record.dt
    if dt is None:
        raise TypeError("dt is required for raw arrays")
    vals = _values(record, model)
    R, n, _ = vals.shape
    d = model.dim
    step = Kraus1Step(model, dt)
    hist = np.empty((R, n + 1, d, d), dtype=complex)
    rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (R, d, d)).copy()
    hist[:, 0] = rho
    loglik = np.zeros(R)
    for k in range(n):
        lin = step.apply(rho, vals[:, k])
        p = np.einsum("rii->r", lin).real
        loglik += np.log(p)
        rho = lin / p[:, None, None]
        hist[:, k + 1] = rho
    diverged = ~np.isfinite(loglik)
    unphysical = _min_eig(hist) < -TOL.psd
    return Reconstruction("kraus1", hist, loglik, unphysical, np.repeat(diverged[:, None], n + 1, axis=1))


def robinet_reconstruct(model: MeasurementModel, record, rho0: np.ndarray, dt: float | None = None,
                        instrument: Instrument | None = None) -> Reconstruction:
    if isinstance(record, DigitizedRecord):
        dt = record.dt
    instr = instrument if instrument is not None else Instrument(model, dt)
    vals = _values(record, model)
    loglik, hist = instr.filter_many(vals, rho0, return_states=True)
    unphysical = _min_eig(hist) < -TOL.psd
    diverged = np.repeat(~np.isfinite(loglik)[:, None], hist.shape[1], axis=1)
    return Reconstruction("robinet", hist, loglik, unphysical, diverged)


def _psd_sqrt(rho: np.ndarray, tol: float) -> np.ndarray:
    w, V = np.linalg.eigh(hermitize(rho))
    if w[0] < -tol * max(w.sum(), 1.0):
        raise ModelError(f"state has eigenvalue {w[0]:.3g} below -{tol:g}")
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray, tol: float = TOL.psd) -> float:
    """(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2 for two normalized states."""
    s = _psd_sqrt(rho, tol)
    w = np.linalg.eigvalsh(hermitize(s @ sigma @ s))
    _psd_sqrt(sigma, tol)
    return float(min(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2, 1.0))


def physical_part(rho: np.ndarray) -> np.ndarray | None:
    """Nearest state in the sense of eigenvalue clipping; None if not finite."""
    if not np.all(np.isfinite(rho)):
        return None
    w, V = np.linalg.eigh(hermitize(rho))
    w = np.clip(w, 0, None)
    if w.sum() <= 0:
        return None
    return (V * (w / w.sum())) @ V.conj().T


def fidelity_to_truth(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Fidelity of a possibly unphysical estimate, clipped to the state space first.

    Non-finite estimates score 0.
    """
    phys = physical_part(estimate)
    return 0.0 if phys is None else uhlmann_fidelity(phys, truth)


# ---------------------------------------------------------------------------
# Two-photon loss benchmark


def coherent_tail(alpha: float, N: int) -> float:
    """Population of Fock levels above N in the coherent state |alpha>."""
    lam = abs(alpha) ** 2
    if lam == 0:
        return 0.0
    logp = [-lam + n * math.log(lam) - math.lgamma(n + 1) for n in range(N + 1, N + 400)]
    return float(np.sum(np.exp(logp)))


def fock_cutoff(alpha: float, tail: float = 1e-8, guard: int = 4) -> int:
    """Hilbert dimension: smallest N with tail(N) < ``tail``, levels 0..N, plus guard levels."""
    N = 0
    while coherent_tail(alpha, N) >= tail:
        N += 1
    return N + 1 + guard


@dataclass
class DeflateConfig:
    """Two-photon loss with weak homodyne monitoring.

    Physical inputs are converted to units of the loss rate: times are
    multiplied by ``kappa2 = 2 pi * kappa2_mhz`` (in 1/us).
    """

    alpha: float = 2.0
    n_traj: int = 50
    kappa2_mhz: float = 2.0
    dt_ns: float = 4.0
    t_final_ns: float = 100.0
    eta: float = 0.2
    fine_factor: int = 1000
    seed: int = 0
    dim: int | None = None
    leak_tol: float = 1e-4
    guard: int = 4

    @property
    def kappa2(self) -> float:
        return 2 * math.pi * self.kappa2_mhz * 1e6

    @property
    def dt(self) -> float:
        return self.kappa2 * self.dt_ns * 1e-9

    @property
    def n_bins(self) -> int:
        n = int(round(self.t_final_ns / self.dt_ns))
        if abs(n * self.dt_ns - self.t_final_ns) > 1e-9:
            raise ValueError("t_final_ns must be a multiple of dt_ns")
        return n


def deflate_model(dim: int, eta: float) -> MeasurementModel:
    a = destroy(dim)
    return MeasurementModel(np.zeros((dim, dim), dtype=complex), (Channel(a @ a, eta=eta),))


class CutoffLeakageError(RuntimeError):
    pass


@dataclass
class ReconstructionReport:
    """Per-method states, fidelities and photon numbers on the bin edges.

    ``fidelity[method]`` and ``photon[method]`` are (n_traj, n_bins + 1);
    ``photon["truth"]`` holds the fine-simulation values. ``"lindblad"`` is the
    unconditioned average state.
    """

    times: np.ndarray
    fidelity: dict[str, np.ndarray]
    photon: dict[str, np.ndarray]
    unphysical: dict[str, np.ndarray]
    dim: int
    config: DeflateConfig
    max_leakage: float
    states: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def mean_fidelity(self, method: str) -> np.ndarray:
        return self.fidelity[method].mean(axis=0)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self.config), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_fingerprint: {self.fingerprint()}\n")
            w = csv.writer(fh)
            w.writerow(["time", "method", "trajectory_id", "fidelity", "photon_number"])
            for method, ph in self.photon.items():
                fid = self.fidelity.get(method)
                for r in range(ph.shape[0]):
                    for k, t in enumerate(self.times):
                        w.writerow([repr(float(t)), method, r, "" if fid is None else repr(float(fid[r, k])),
                                    repr(float(ph[r, k]))])


def run_deflate_benchmark(cfg: DeflateConfig = DeflateConfig(), keep_states: bool = False) -> ReconstructionReport:
    """Simulate, digitize and reconstruct two-photon-loss trajectories.

    Times in the report are in ns.
    """
    dim = cfg.dim if cfg.dim is not None else fock_cutoff(cfg.alpha, guard=cfg.guard)
    model = deflate_model(dim, cfg.eta)
    rho0 = coherent_dm(dim, cfg.alpha)
    lead = np.trace(rho0[dim - cfg.guard:, dim - cfg.guard:]).real if cfg.guard else 0.0
    dt = cfg.dt
    dt_fine = dt / cfg.fine_factor
    steps_per_bin(dt, dt_fine)
    n = cfg.n_bins
    ens = simulate_ensemble(model, rho0, cfg.n_traj, dt, n, dt_fine, cfg.seed, store="edges")
    truth = ens.states
    guard_pop = np.einsum("rkii->rk", truth[:, :, dim - cfg.guard:, dim - cfg.guard:]).real if cfg.guard else np.zeros(1)
    leak = float(max(lead, guard_pop.max()))
    if leak > cfg.leak_tol:
        raise CutoffLeakageError(f"population {leak:.3g} in the top {cfg.guard} Fock levels; raise dim")

    recs = {
        "robinet": robinet_reconstruct(model, ens.records, rho0, dt),
        "kraus1": kraus1_reconstruct(model, ens.records, rho0, dt),
        "euler": euler_reconstruct(model, ens.records, rho0, dt),
    }
    P = scipy.linalg.expm(dt * build_liouvillian(model))
    lind = [vec(rho0)]
    for _ in range(n):
        lind.append(P @ lind[-1])
    lind = unvec(np.array(lind))
    states = {k: v.states for k, v in recs.items()}
    states["lindblad"] = np.broadcast_to(lind, truth.shape)

    a = destroy(dim)
    num = a.conj().T @ a
    fidelity, photon, unphys = {}, {}, {}
    for name, S in states.items():
        fidelity[name] = np.array([[fidelity_to_truth(S[r, k], truth[r, k]) for k in range(n + 1)]
                                   for r in range(cfg.n_traj)])
        photon[name] = np.einsum("ij,rkji->rk", num, S).real
        unphys[name] = recs[name].unphysical if name in recs else np.zeros(S.shape[:2], bool)
    photon["truth"] = np.einsum("ij,rkji->rk", num, truth).real
    times = np.arange(n + 1) * cfg.dt_ns
    return ReconstructionReport(times, fidelity, photon, unphys, dim, cfg, leak, states if keep_states else {})
