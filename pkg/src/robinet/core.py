"""Dense operator and superoperator algebra for monitored open quantum systems.

States are ``d x d`` complex arrays. Superoperators are ``d^2 x d^2`` arrays
acting on column-stacked states, i.e. ``vec(A @ X @ B) = kron(B.T, A) @ vec(X)``.
Time is dimensionless throughout.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class Tolerances:
    herm: float = 1e-10
    trace: float = 1e-9
    psd: float = 1e-8
    expm: float = 1e-10


TOL = Tolerances()

#: superoperator dimension d^2 at or below which exponentials are formed densely
DENSE_EXPM_MAX = 1024


class ModelError(ValueError):
    """Invalid model, channel, or state."""


class ExpmConvergenceError(RuntimeError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"Krylov exponential did not converge: residual {residual:.3e} > {tol:.1e}")
        self.residual = residual


# ---------------------------------------------------------------------------
# Standard operators


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_y() -> np.ndarray:
    return np.array([[0, -1j], [1j, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    # basis ordering: index 0 = excited |e>, index 1 = ground |g>
    return np.array([[1, 0], [0, -1]], dtype=complex)


def sigma_minus() -> np.ndarray:
    """Lowering operator |g><e| in the (|e>, |g>) basis."""
    return np.array([[0, 0], [1, 0]], dtype=complex)


def excited_state() -> np.ndarray:
    return np.array([[1, 0], [0, 0]], dtype=complex)


def ground_state() -> np.ndarray:
    return np.array([[0, 0], [0, 1]], dtype=complex)


def destroy(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def fock_dm(n: int, k: int) -> np.ndarray:
    rho = np.zeros((n, n), dtype=complex)
    rho[k, k] = 1.0
    return rho


def coherent_dm(n: int, alpha: complex) -> np.ndarray:
    """Truncated coherent state, renormalized inside the cutoff."""
    k = np.arange(n)
    logfact = np.array([math.lgamma(j + 1) for j in k])
    if alpha == 0:
        amp = (k == 0).astype(complex)
    else:
        amp = np.exp(k * np.log(complex(alpha)) - 0.5 * logfact)
    amp = amp / np.linalg.norm(amp)
    return np.outer(amp, amp.conj())


# ---------------------------------------------------------------------------
# Model types


class ChannelKind(str, Enum):
    DIFFUSIVE = "diffusive"
    JUMP = "jump"


@dataclass(frozen=True, eq=False)
class Channel:
    """A monitored jump operator.

    ``eta`` is the detection efficiency; ``dark_rate`` (jump detection only)
    is the rate of system-independent clicks.
    """

    L: np.ndarray
    eta: float = 1.0
    kind: ChannelKind = ChannelKind.DIFFUSIVE
    dark_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L", _as_operator(self.L, "L"))
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        if not 0.0 <= self.eta <= 1.0:
            raise ModelError(f"efficiency eta must lie in [0, 1], got {self.eta}")
        if self.dark_rate < 0:
            raise ModelError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if self.kind is ChannelKind.DIFFUSIVE and self.dark_rate != 0:
            raise ModelError("dark_rate is only defined for jump channels")

    @property
    def is_jump(self) -> bool:
        return self.kind is ChannelKind.JUMP


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    H: np.ndarray
    monitored: tuple[Channel, ...] = ()
    unmonitored: tuple[np.ndarray, ...] = ()
    tol: Tolerances = field(default=TOL)

    def __post_init__(self):
        H = _as_operator(self.H, "H")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "monitored", tuple(self.monitored))
        object.__setattr__(
            self, "unmonitored", tuple(_as_operator(L, "unmonitored operator") for L in self.unmonitored)
        )
        d = H.shape[0]
        if np.max(np.abs(H - H.conj().T), initial=0.0) > self.tol.herm:
            raise ModelError("Hamiltonian is not Hermitian within tolerance")
        for i, ch in enumerate(self.monitored):
            if ch.L.shape != (d, d):
                raise ModelError(f"monitored[{i}].L has shape {ch.L.shape}, expected {(d, d)}")
        for i, L in enumerate(self.unmonitored):
            if L.shape != (d, d):
                raise ModelError(f"unmonitored[{i}] has shape {L.shape}, expected {(d, d)}")

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.monitored)

    def jump_operators(self) -> list[np.ndarray]:
        return [ch.L for ch in self.monitored] + list(self.unmonitored)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.H).tobytes())
        for ch in self.monitored:
            h.update(np.ascontiguousarray(ch.L).tobytes())
            h.update(np.array([ch.eta, ch.dark_rate]).tobytes())
            h.update(ch.kind.value.encode())
        for L in self.unmonitored:
            h.update(b"u")
            h.update(np.ascontiguousarray(L).tobytes())
        return h.hexdigest()[:16]


def _as_operator(A, name: str) -> np.ndarray:
    A = np.array(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ModelError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ModelError(f"{name} has non-finite entries")
    return A


# ---------------------------------------------------------------------------
# Vectorization


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-stack a state, or a batch of states with shape (..., d, d)."""
    rho = np.asarray(rho)
    return np.swapaxes(rho, -1, -2).reshape(*rho.shape[:-2], -1)


def unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    d = math.isqrt(v.shape[-1])
    return np.swapaxes(v.reshape(*v.shape[:-1], d, d), -1, -2)


def trace_vector(d: int) -> np.ndarray:
    """Row vector ``t`` with ``t @ vec(rho) == trace(rho)``."""
    return vec(np.eye(d))


def sandwich(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X B."""
    return np.kron(B.T, A)


def left(A: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(A.shape[0]), A)


def right(B: np.ndarray) -> np.ndarray:
    return np.kron(B.T, np.eye(B.shape[0]))


def apply_superop(S: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return unvec(S @ vec(rho))


# ---------------------------------------------------------------------------
# Generators


def dissipator(L: np.ndarray) -> np.ndarray:
    LdL = L.conj().T @ L
    return sandwich(L, L.conj().T) - 0.5 * left(LdL) - 0.5 * right(LdL)


def build_liouvillian(model: MeasurementModel) -> np.ndarray:
    H = model.H
    out = -1j * (left(H) - right(H))
    for L in model.jump_operators():
        out = out + dissipator(L)
    return out


def build_measurement_superop(channel: Channel) -> np.ndarray:
    L = channel.L
    d = L.shape[0]
    if channel.is_jump:
        return channel.dark_rate * np.eye(d * d) + channel.eta * sandwich(L, L.conj().T)
    return math.sqrt(channel.eta) * (left(L) + right(L.conj().T))


def tilted_generator(model: MeasurementModel, p: Sequence[float]) -> np.ndarray:
    """Liouvillian tilted by one Fourier variable per monitored channel.

    Diffusive channels contribute ``-(i p C + p^2/2 I)``; jump channels
    contribute ``(exp(-i p) - 1) C``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (model.n_channels,):
        raise ModelError(f"expected {model.n_channels} tilt values, got {p.shape[0]}")
    D = model.dim**2
    gen = build_liouvillian(model)
    for pk, ch in zip(p, model.monitored):
        C = build_measurement_superop(ch)
        if ch.is_jump:
            gen = gen + (np.exp(-1j * pk) - 1.0) * C
        else:
            gen = gen - 1j * pk * C - 0.5 * pk**2 * np.eye(D)
    return gen


# ---------------------------------------------------------------------------
# Exponential action


def expm_apply(
    gen,
    state: np.ndarray,
    t: float,
    method: str = "auto",
    tol: float | None = None,
) -> np.ndarray:
    """Return exp(t * gen) applied to ``state`` (a d x d matrix).

    ``method`` is ``"dense"`` (full exponential), ``"krylov"`` (action only,
    ``gen`` may be any object supporting ``gen @ v``) or ``"auto"``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    tol = TOL.expm if tol is None else tol
    v = vec(state)
    if t == 0:
        return np.array(state, dtype=complex)
    if method == "auto":
        method = "dense" if v.shape[0] <= DENSE_EXPM_MAX else "krylov"
    if method == "dense":
        out = scipy.linalg.expm(t * np.asarray(gen)) @ v
    elif method == "krylov":
        out = krylov_expv(gen, v, t, tol=tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return unvec(out)


def krylov_expv(A, v: np.ndarray, t: float, m: int = 30, tol: float = 1e-10, max_substeps: int = 10_000) -> np.ndarray:
    """Action exp(t A) v by Arnoldi with adaptive substeps.

    Local error per substep is estimated from the first neglected Krylov
    coefficient; substeps shrink until the estimate is below ``tol`` times the
    current norm.
    """
    v = np.asarray(v, dtype=complex)
    n = v.shape[0]
    m = min(m, n)
    w = v.copy()
    beta0 = np.linalg.norm(w)
    if beta0 == 0:
        return w
    anorm = max(_onenorm_estimate(A, n), 1e-300)
    t_done = 0.0
    tau = min(t, 10.0 / anorm)
    nsteps = 0
    worst = 0.0
    while t_done < t:
        nsteps += 1
        if nsteps > max_substeps:
            raise ExpmConvergenceError(worst, tol)
        beta = np.linalg.norm(w)
        V = np.zeros((n, m + 1), dtype=complex)
        Hm = np.zeros((m + 2, m + 2), dtype=complex)
        V[:, 0] = w / beta
        k_used = m
        breakdown = False
        for j in range(m):
            p = A @ V[:, j]
            for i in range(j + 1):
                Hm[i, j] = np.vdot(V[:, i], p)
                p = p - Hm[i, j] * V[:, i]
            # second Gram-Schmidt pass
            for i in range(j + 1):
                c = np.vdot(V[:, i], p)
                Hm[i, j] += c
                p = p - c * V[:, i]
            h = np.linalg.norm(p)
            if h < 1e-12 * anorm:
                k_used = j + 1
                breakdown = True
                break
            Hm[j + 1, j] = h
            V[:, j + 1] = p / h
        tau = min(tau, t - t_done)
        while True:
            if breakdown:
                E = scipy.linalg.expm(tau * Hm[:k_used, :k_used])
                err = 0.0
                y = E[:, 0]
            else:
                Hm[m + 1, m] = 1.0
                E = scipy.linalg.expm(tau * Hm[: m + 2, : m + 2])
                err = beta * abs(E[m, 0])
                y = E[:m, 0]
            if err <= tol * beta or breakdown:
                break
            worst = err / beta
            tau *= 0.5
            if tau < 1e-14 * t:
                raise ExpmConvergenceError(worst, tol)
        if breakdown:
            w = beta * (V[:, :k_used] @ y)
        else:
            w = beta * (V[:, :m] @ y)
        t_done += tau
        tau = min(2 * tau, t - t_done) if err < 0.1 * tol * beta else tau
    return w


def _onenorm_estimate(A, n: int) -> float:
    if isinstance(A, np.ndarray):
        return float(np.max(np.sum(np.abs(A), axis=0)))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return float(np.linalg.norm(A @ x) / np.linalg.norm(x)) * math.sqrt(n)


# ---------------------------------------------------------------------------
# State checks and repairs


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())


def check_state(rho: np.ndarray, normalized: bool = True, tol: Tolerances = TOL) -> None:
    """Raise ModelError if ``rho`` violates the density-matrix invariants."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ModelError(f"state must be square, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise ModelError("state has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > tol.herm * max(1.0, np.abs(np.trace(rho))):
        raise ModelError("state is not Hermitian")
    tr = np.trace(rho).real
    if normalized:
        if abs(tr - 1.0) > tol.trace:
            raise ModelError(f"state trace {tr} differs from 1")
    elif not tr > 0:
        raise ModelError(f"unnormalized state has non-positive trace {tr}")
    lo = np.linalg.eigvalsh(hermitize(rho))[0]
    if lo < -tol.psd * tr:
        raise ModelError(f"state has negative eigenvalue {lo:.3e}")


def project_psd(rho: np.ndarray, tol: float = TOL.psd) -> tuple[np.ndarray, bool]:
    """Clip eigenvalues below ``-tol * trace`` to zero and renormalize.

    Returns the (possibly) repaired state and whether a repair happened.
    """
    rho = hermitize(rho)
    w, U = np.linalg.eigh(rho)
    tr = w.sum()
    if w[0] >= -tol * tr:
        return rho, False
    w = np.clip(w, 0.0, None)
    out = (U * w) @ U.conj().T
    return out / w.sum(), True


def trace_norm(A: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(rho - sigma)))))


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    G = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_model(
    d: int,
    rng: np.random.Generator,
    n_unmonitored: int = 1,
    eta: float | None = None,
    kind: ChannelKind = ChannelKind.DIFFUSIVE,
    scale: float = 1.0,
) -> MeasurementModel:
    """Random model with one monitored channel, used by tests and benchmarks."""

    def rand_op():
        return scale * (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2 * d)

    H = rand_op()
    H = 0.5 * (H + H.conj().T)
    eta = float(rng.uniform(0.2, 1.0)) if eta is None else eta
    dark = float(rng.uniform(0, 0.5)) if kind is ChannelKind.JUMP else 0.0
    ch = Channel(rand_op(), eta=eta, kind=kind, dark_rate=dark)
    return MeasurementModel(H, (ch,), tuple(rand_op() for _ in range(n_unmonitored)))
