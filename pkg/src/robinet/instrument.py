"""Exact quantum instrument for time-averaged measurement records.

For a bin of duration ``dt`` and a measured value ``I`` (one entry per
monitored channel) the linear map is

    K_I(rho) = (2 pi)^-m  int dp  exp(i p.I) exp(dt * L^p)(rho)

with ``L^p`` the tilted Liouvillian. The integral over a diffusive channel
runs over the real line and is evaluated with Gauss-Hermite nodes after the
substitution ``u = p * sqrt(dt / 2)``, which turns the Gaussian factor
``exp(-dt p^2 / 2)`` into the Hermite weight. Jump channels integrate a
periodic integrand over ``[-pi, pi]`` (midpoint rule by default,
Gauss-Legendre on request). The per-node propagators do not
depend on ``I`` and are computed once per (model, dt, rule).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import (
    DENSE_EXPM_MAX,
    TOL,
    MeasurementModel,
    ModelError,
    Tolerances,
    build_liouvillian,
    build_measurement_superop,
    check_state,
    hermitize,
    krylov_expv,
    project_psd,
    trace_vector,
    unvec,
    vec,
)

log = logging.getLogger(__name__)

DEFAULT_NP = 31
#: upper bound on Gauss-Hermite nodes per diffusive channel after adaptation
MAX_NP = 256
MASS_CUTOFF = 1e-12


class QuadratureUnderflowError(ArithmeticError):
    """The quadrature returned a non-positive probability density."""

    def __init__(self, I, value: float, step: int | None = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"non-positive density {value:.3e} for I={np.asarray(I).tolist()}{where}")
        self.I = I
        self.value = value
        self.step = step


@dataclass(frozen=True)
class QuadratureRule:
    kind: str  # "hermite", "legendre" or "trapezoid"
    n_p: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, n_p: int = DEFAULT_NP) -> "QuadratureRule":
        x, w = np.polynomial.hermite.hermgauss(n_p)
        return cls("hermite", n_p, x, w)

    @classmethod
    def gauss_legendre(cls, n_p: int = DEFAULT_NP) -> "QuadratureRule":
        """Legendre rule rescaled to [-pi, pi]."""
        x, w = np.polynomial.legendre.leggauss(n_p)
        return cls("legendre", n_p, math.pi * x, math.pi * w)

    @classmethod
    def periodic_trapezoid(cls, n_p: int = DEFAULT_NP) -> "QuadratureRule":
        """Equispaced midpoint rule on [-pi, pi].

        Exact for trigonometric polynomials of degree below ``n_p``; for the
        count integrand the error is the aliased mass ``P(n +- n_p) + ...``.
        """
        x = -math.pi + 2 * math.pi * (np.arange(n_p) + 0.5) / n_p
        return cls("trapezoid", n_p, x, np.full(n_p, 2 * math.pi / n_p))


JUMP_RULES = {"trapezoid": QuadratureRule.periodic_trapezoid, "legendre": QuadratureRule.gauss_legendre}


@dataclass(frozen=True)
class DigitizedRecord:
    """Time-averaged signal: ``values[k, c]`` is the value of bin k on channel c.

    Diffusive entries are integrated signals (units of sqrt(time)); jump
    entries are click counts.
    """

    dt: float
    values: np.ndarray
    kinds: tuple[str, ...] = ("diffusive",)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("record values must have shape (n_bins, n_channels)")
        if v.shape[1] != len(self.kinds) and v.shape[0] > 0:
            raise ValueError(f"record has {v.shape[1]} channels but {len(self.kinds)} kinds")
        if v.shape[0] == 0:
            v = v.reshape(0, len(self.kinds))
        if not np.all(np.isfinite(v)):
            raise ValueError("record contains non-finite values")
        for c, kind in enumerate(self.kinds):
            if kind == "jump":
                col = v[:, c]
                if np.any(col < 0) or np.any(col != np.round(col)):
                    raise ValueError(f"jump channel {c} must hold non-negative integer counts")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kinds", tuple(self.kinds))

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.kinds)


@dataclass
class FilterOutput:
    states: list[np.ndarray]
    densities: np.ndarray
    log_likelihood: float
    n_repairs: int = 0
    failed_step: int | None = None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class InstrumentCache:
    """Per-node propagators for one (model, dt, rule, contour center).

    ``tilts`` are the complex Fourier nodes ``s + i*gamma``; ``coeffs`` carry
    the quadrature weights, the ``(2 pi)^-m`` factor and the unit-modulus part
    of the Gaussian factor not absorbed into the Hermite weight. Real growth
    factors (``exp(dt gamma^2/2)`` and the top growth rate of the shifted
    propagators, which is subtracted from the generators) are collected in
    ``log_scale`` and added to the phase exponent, so that far-tail densities
    neither overflow nor underflow in intermediate products. ``propagators`` is
    None on the action-only path, in which case ``generators`` holds the
    per-node tilted generators.
    """

    dt: float
    center: tuple[int, ...]
    tilts: np.ndarray  # (n_nodes, m) complex
    coeffs: np.ndarray  # (n_nodes,) complex
    propagators: np.ndarray | None
    generators: list[np.ndarray] | None
    key: tuple = field(default=())
    log_scale: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.tilts.shape[0]


def model_kinds(model: MeasurementModel) -> tuple[str, ...]:
    return tuple(ch.kind.value for ch in model.monitored)


#: nominal spacing of contour centers, in units of the reduced signal I / sqrt(dt)
CENTER_SPACING = 2.0
#: center indices live on a lattice this much finer than the nominal spacing
CENTER_REFINE = 8


def contour_shift(model: MeasurementModel, dt: float, center: Sequence[int]) -> np.ndarray:
    """Imaginary parts ``gamma`` of the integration contour for a center index.

    Diffusive channel ``c`` with index ``k`` is integrated along
    ``p = s + i*gamma`` with
    ``gamma = CENTER_SPACING * k / (CENTER_REFINE * sqrt(dt))``. The
    integrand is entire, so every shift gives the same integral; the index is
    chosen per signal value to keep the integrand free of cancellation (see
    ``saddle_signal``). Jump channels are integrated on the real segment.
    """
    out = np.zeros(model.n_channels)
    for c, (k, ch) in enumerate(zip(center, model.monitored)):
        if not ch.is_jump:
            out[c] = center_gamma(dt, k)
    return out


def center_gamma(dt: float, k: int) -> float:
    return CENTER_SPACING * k / (CENTER_REFINE * math.sqrt(dt))


def tilted_slope(model: MeasurementModel, c: int, gamma: float) -> float:
    """d lambda / d gamma for the top eigenvalue lambda of L + gamma C_c.

    This is the mean signal rate under the exponentially tilted dynamics.
    """
    Lg = build_liouvillian(model)
    C = build_measurement_superop(model.monitored[c])
    w, vl, vr = scipy.linalg.eig(Lg + gamma * C, left=True, right=True)
    i = int(np.argmax(w.real))
    l, r = vl[:, i], vr[:, i]
    return float((l.conj() @ C @ r / (l.conj() @ r)).real)


def saddle_signal(model: MeasurementModel, dt: float, c: int, gamma: float) -> float:
    """Signal value whose Fourier integrand has its saddle at ``p = i*gamma``.

    Along ``p = s + i*gamma`` the integrand behaves like
    ``exp(i s (I - dt*gamma - dt*lambda'(gamma)))`` near ``s = 0``, so the
    oscillation cancels at ``I = dt * (gamma + lambda'(gamma))``. Without the
    drift term the contour for long bins and strong measurement points away
    from the saddle and the Gauss-Hermite sum loses all digits to
    cancellation. Above the dense threshold the drift is ignored.
    """
    if model.dim**2 > DENSE_EXPM_MAX:
        return dt * gamma
    return dt * (gamma + tilted_slope(model, c, gamma))


def diffusive_nodes(channel, dt: float, n_p: int) -> int:
    """Gauss-Hermite node count for a diffusive channel.

    Modes of the propagator drift at rates given by the eigenvalues of the
    measurement superoperator; on a contour centered on one of them another
    one oscillates with frequency ``sqrt(2 dt) * spread`` in the Hermite
    variable. An n-point rule resolves frequencies up to about ``n / 5``, so
    ``n_p`` is raised where long bins and strong measurement require it.
    """
    c = np.linalg.eigvals(build_measurement_superop(channel)).real
    omega = math.sqrt(2.0 * dt) * float(c.max() - c.min())
    need = int(math.ceil(5.0 * omega)) + 1
    if need > n_p:
        if need > MAX_NP:
            log.warning("signal modes need %d quadrature nodes; capped at %d", need, MAX_NP)
        return min(need, MAX_NP)
    return n_p


def _node_tables(model: MeasurementModel, dt: float, n_p: int, gamma: np.ndarray, jump_rule: str = "trapezoid"):
    """Complex nodes, unit-scale coefficients and the real log-scale of the shift.

    ``exp(-dt p^2/2) = exp(-dt s^2/2) exp(dt gamma^2/2) exp(-i dt s gamma)``:
    the first factor is the Hermite weight, the second is returned as a log
    so it can be combined with ``exp(-gamma I)`` before exponentiating.
    """
    axes_p, axes_c = [], []
    log_scale = 0.0
    for ch, g in zip(model.monitored, gamma):
        if ch.is_jump:
            rule = JUMP_RULES[jump_rule](n_p)
            axes_p.append(rule.nodes.astype(complex))
            axes_c.append(rule.weights / (2 * math.pi) + 0j)
        else:
            rule = QuadratureRule.gauss_hermite(diffusive_nodes(ch, dt, n_p))
            scale = math.sqrt(2.0 / dt)
            s = rule.nodes * scale
            p = s + 1j * g
            axes_p.append(p)
            axes_c.append(rule.weights * scale / (2 * math.pi) * np.exp(-1j * dt * s * g))
            log_scale += 0.5 * dt * g * g
    if not axes_p:
        return np.zeros((1, 0), dtype=complex), np.ones(1, dtype=complex), 0.0
    tilts = np.array(list(itertools.product(*axes_p)), dtype=complex)
    coeffs = np.array([math.prod(c) for c in itertools.product(*axes_c)], dtype=complex)
    return tilts, coeffs, log_scale


def node_generator(model: MeasurementModel, p: np.ndarray, base=None, Cs=None) -> np.ndarray:
    """Tilted generator at (possibly complex) Fourier node ``p``.

    The diffusive ``-p^2/2`` identity shift is left out; it is a scalar factor
    carried by the quadrature coefficients.
    """
    gen = (build_liouvillian(model) if base is None else base).astype(complex)
    Cs = [build_measurement_superop(ch) for ch in model.monitored] if Cs is None else Cs
    for pk, ch, C in zip(p, model.monitored, Cs):
        if ch.is_jump:
            gen = gen + (np.exp(-1j * pk) - 1.0) * C
        else:
            gen = gen - 1j * pk * C
    return gen


def build_cache(model: MeasurementModel, dt: float, n_p: int = DEFAULT_NP, backend: str = "auto",
                center: Sequence[int] | None = None, jump_rule: str = "trapezoid") -> InstrumentCache:
    if not dt > 0:
        raise ValueError("dt must be positive")
    center = tuple(int(c) for c in (center if center is not None else [0] * model.n_channels))
    if model.n_channels > 2:
        log.warning("tensor-product quadrature over %d channels: %d nodes", model.n_channels, n_p**model.n_channels)
    gamma = contour_shift(model, dt, center)
    tilts, coeffs, log_scale = _node_tables(model, dt, n_p, gamma, jump_rule)
    base = build_liouvillian(model)
    Cs = [build_measurement_superop(ch) for ch in model.monitored]
    if backend == "auto":
        backend = "dense" if model.dim**2 <= DENSE_EXPM_MAX else "krylov"
    # growth rate of the shifted propagators, moved into the log-scale
    shift = 0.0
    if np.any(gamma != 0) and backend == "dense":
        shift = float(np.max(np.linalg.eigvals(node_generator(model, 1j * gamma, base, Cs)).real))
    eye = np.eye(base.shape[0])
    gens = [node_generator(model, p, base, Cs) - shift * eye for p in tilts]
    log_scale += dt * shift
    key = (model.fingerprint(), float(dt), n_p, backend, center, jump_rule)
    if backend == "dense":
        props = np.stack([scipy.linalg.expm(dt * g) for g in gens])
        return InstrumentCache(dt, center, tilts, coeffs, props, None, key, log_scale)
    return InstrumentCache(dt, center, tilts, coeffs, None, gens, key, log_scale)


class Instrument:
    """Exact filter for one model and bin duration.

    Parameters
    ----------
    model : MeasurementModel
    dt : float
        Bin duration.
    n_p : int
        Quadrature points per monitored channel.
    backend : {"auto", "dense", "krylov"}
        ``dense`` precomputes the full per-node propagators; ``krylov``
        applies each node's exponential to the state on demand.
    jump_rule : {"trapezoid", "legendre"}
        Rule on [-pi, pi] for jump channels.

    Propagator tables are built lazily, one per contour center, and reused
    for every later call with the same instrument.
    """

    def __init__(self, model: MeasurementModel, dt: float, n_p: int = DEFAULT_NP, backend: str = "auto",
                 tol: Tolerances = TOL, jump_rule: str = "trapezoid"):
        self.model = model
        self.jump_rule = jump_rule
        self.dt = float(dt)
        self.n_p = n_p
        self.backend = backend
        self.tol = tol
        self.kinds = model_kinds(model)
        self._tr = trace_vector(model.dim)
        self._caches: dict[tuple[int, ...], InstrumentCache] = {}
        self._anchors: dict[tuple[int, int], float] = {}
        self.cache = self._cache((0,) * model.n_channels)

    def _cache(self, center: tuple[int, ...]) -> InstrumentCache:
        c = self._caches.get(center)
        if c is None:
            c = build_cache(self.model, self.dt, self.n_p, self.backend, center, self.jump_rule)
            self._caches[center] = c
        return c

    # -- node propagation -------------------------------------------------

    def _propagate(self, cache: InstrumentCache, V: np.ndarray) -> np.ndarray:
        """Apply all node propagators to a batch of vectorized states.

        ``V`` has shape (R, D); returns (R, n_nodes, D).
        """
        R, D = V.shape
        if cache.propagators is not None:
            n = cache.n_nodes
            out = (cache.propagators.reshape(n * D, D) @ V.T).reshape(n, D, R)
            return out.transpose(2, 0, 1)
        out = np.empty((R, cache.n_nodes, D), dtype=complex)
        for j, g in enumerate(cache.generators):
            for r in range(R):
                out[r, j] = krylov_expv(g, V[r], self.dt, tol=self.tol.expm)
        return out

    def _phases(self, cache: InstrumentCache, I: np.ndarray) -> np.ndarray:
        """(G, m) signal values -> (G, n_nodes) quadrature factors."""
        I = np.asarray(I, dtype=float).reshape(-1, self.model.n_channels)
        return np.exp(1j * I @ cache.tilts.T + cache.log_scale) * cache.coeffs

    def _anchor(self, c: int, k: int) -> float:
        key = (c, k)
        a = self._anchors.get(key)
        if a is None:
            a = saddle_signal(self.model, self.dt, c, center_gamma(self.dt, k))
            self._anchors[key] = a
        return a

    def _nearest_index(self, c: int, x: np.ndarray) -> np.ndarray:
        """Center indices whose saddle signal is closest to each value in ``x``.

        Anchors are walked on the nominal lattice until they bracket ``x``;
        intervals wider than the nominal spacing are bisected on the fine
        lattice, which matters where the tilted rate changes quickly.
        """
        sq = math.sqrt(self.dt)
        R = CENTER_REFINE
        gap = CENTER_SPACING * sq
        k0 = R * int(round((float(np.median(x)) - self._anchor(c, 0)) / gap))
        lo = hi = k0
        # anchors increase with k (the rate function is convex)
        while self._anchor(c, lo) > x.min() and lo > -10_000 * R:
            lo -= R
        while self._anchor(c, hi) < x.max() and hi < 10_000 * R:
            hi += R
        ks = list(range(lo, hi + 1, R))
        refined = [ks[0]]
        for a, b in zip(ks[:-1], ks[1:]):
            stack, seg = [(a, b)], []
            while stack:
                u, v = stack.pop()
                if v - u > 1 and self._anchor(c, v) - self._anchor(c, u) > 1.5 * gap:
                    w = (u + v) // 2
                    stack += [(w, v), (u, w)]
                else:
                    seg.append(v)
            refined += sorted(seg)
        ks = np.array(refined)
        if len(ks) == 1:
            return np.full(x.shape, ks[0])
        anchors = np.array([self._anchor(c, int(k)) for k in ks])
        j = np.clip(np.searchsorted(anchors, x), 1, len(ks) - 1)
        left_closer = np.abs(x - anchors[j - 1]) <= np.abs(anchors[j] - x)
        return np.where(left_closer, ks[j - 1], ks[j])

    def center_indices(self, I: np.ndarray) -> np.ndarray:
        """(G, m) signal values -> (G, m) contour center indices."""
        I = np.asarray(I, dtype=float).reshape(-1, self.model.n_channels)
        out = np.zeros(I.shape, dtype=int)
        for c, ch in enumerate(self.model.monitored):
            if not ch.is_jump and len(I):
                out[:, c] = self._nearest_index(c, I[:, c])
        return out

    def _groups(self, I: np.ndarray):
        keys = self.center_indices(I)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        for j, key in enumerate(uniq):
            yield self._cache(tuple(int(k) for k in key)), np.flatnonzero(inv.ravel() == j)

    def _check_I(self, I) -> np.ndarray:
        I = np.atleast_1d(np.asarray(I, dtype=float))
        if I.shape[-1] != self.model.n_channels:
            raise ModelError(f"signal has {I.shape[-1]} channels, model has {self.model.n_channels}")
        return I

    # -- public API -------------------------------------------------------

    def apply(self, rho: np.ndarray, I) -> np.ndarray:
        """Linear (unnormalized) image K_I(rho); its trace is the density of I."""
        I = self._check_I(I)
        return self.apply_batch(np.asarray(rho)[None], I[None])[0]

    def apply_batch(self, rhos: np.ndarray, I: np.ndarray) -> np.ndarray:
        """K_{I_r}(rho_r) for a batch; ``rhos`` (R, d, d), ``I`` (R, m)."""
        rhos = np.asarray(rhos, dtype=complex)
        I = np.asarray(I, dtype=float).reshape(len(rhos), self.model.n_channels)
        out = np.empty((len(rhos), rhos.shape[1] ** 2), dtype=complex)
        V = vec(rhos)
        for cache, idx in self._groups(I):
            Y = self._propagate(cache, V[idx])
            out[idx] = np.einsum("rn,rnd->rd", self._phases(cache, I[idx]), Y)
        return hermitize(unvec(out))

    def filter_step(self, rho: np.ndarray, I, repair: bool = True) -> tuple[np.ndarray, float, bool]:
        """One Bayesian update. Returns (normalized state, density, repaired)."""
        I = self._check_I(I)
        lin = self.apply(rho, I)
        density = float(np.trace(lin).real)
        if not density > 0:
            raise QuadratureUnderflowError(I, density)
        out = lin / density
        repaired = False
        if repair:
            out, repaired = project_psd(out, self.tol.psd)
        return out, density, repaired

    def run_filter(self, record: DigitizedRecord, rho0: np.ndarray) -> FilterOutput:
        if record.kinds != self.kinds:
            raise ModelError(f"record channels {record.kinds} do not match model {self.kinds}")
        if abs(record.dt - self.dt) > 1e-12 * self.dt:
            raise ModelError(f"record dt {record.dt} differs from instrument dt {self.dt}")
        check_state(rho0, tol=self.tol)
        states = [np.array(rho0, dtype=complex)]
        dens = []
        repairs = 0
        rho = states[0]
        for k, I in enumerate(record.values):
            try:
                rho, p, rep = self.filter_step(rho, I)
            except QuadratureUnderflowError as exc:
                exc.step = k
                return FilterOutput(states, np.array(dens), float(np.sum(np.log(dens))), repairs, k, str(exc))
            repairs += rep
            states.append(rho)
            dens.append(p)
        dens = np.array(dens)
        return FilterOutput(states, dens, float(np.sum(np.log(dens))) if dens.size else 0.0, repairs)

    def filter_many(self, values: np.ndarray, rho0: np.ndarray, return_states: bool = False):
        """Filter R records in lockstep.

        ``values`` has shape (R, n_bins, m). Returns per-record log-likelihoods
        and, optionally, the state history with shape (R, n_bins + 1, d, d).
        Records that hit a non-positive density get ``-inf``.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[..., None]
        R, n, m = values.shape
        d = self.model.dim
        rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (R, d, d)).copy()
        loglik = np.zeros(R)
        hist = np.empty((R, n + 1, d, d), dtype=complex) if return_states else None
        if return_states:
            hist[:, 0] = rho
        alive = np.ones(R, dtype=bool)
        for k in range(n):
            lin = self.apply_batch(rho, values[:, k, :])
            p = np.einsum("rii->r", lin).real
            bad = ~(p > 0)
            if np.any(bad & alive):
                log.warning("non-positive density in %d records at step %d", int(np.sum(bad & alive)), k)
            alive &= ~bad
            p_safe = np.where(bad, 1.0, p)
            rho = np.where(bad[:, None, None], rho, lin / p_safe[:, None, None])
            loglik += np.where(alive, np.log(p_safe), 0.0)
            if return_states:
                hist[:, k + 1] = rho
        loglik[~alive] = -np.inf
        return (loglik, hist) if return_states else loglik

    def density_grid(self, rho: np.ndarray, grid) -> np.ndarray:
        """Tr K_I(rho) at each grid point; ``grid`` is (G,) or (G, m)."""
        grid = np.asarray(grid, dtype=float).reshape(-1, self.model.n_channels)
        out = np.empty(len(grid))
        v = vec(rho)[None, :]
        for cache, idx in self._groups(grid):
            t = self._propagate(cache, v)[0] @ self._tr
            out[idx] = (self._phases(cache, grid[idx]) @ t).real
        return out

    def jump_masses(self, rho: np.ndarray, max_count: int = 200) -> np.ndarray:
        """Probability masses of counts 0, 1, ... for a single jump channel.

        Stops once the cumulative mass exceeds ``1 - 1e-12``.
        """
        if self.kinds != ("jump",):
            raise ModelError("jump_masses requires a single jump channel")
        cache = self.cache
        t = self._propagate(cache, vec(rho)[None, :])[0] @ self._tr
        masses = []
        for n in range(max_count + 1):
            masses.append(float((self._phases(cache, [[n]]) @ t).real[0]))
            if sum(masses) > 1 - MASS_CUTOFF:
                break
        return np.array(masses)

    def lindblad_step(self, rho: np.ndarray) -> np.ndarray:
        return unvec(scipy.linalg.expm(self.dt * build_liouvillian(self.model)) @ vec(rho))


def apply_exact_map(model: MeasurementModel, dt: float, rho: np.ndarray, I, n_p: int = DEFAULT_NP) -> np.ndarray:
    return Instrument(model, dt, n_p).apply(rho, I)


def run_filter(model: MeasurementModel, record: DigitizedRecord, rho0: np.ndarray, n_p: int = DEFAULT_NP) -> FilterOutput:
    return Instrument(model, record.dt, n_p).run_filter(record, rho0)


def signal_density_grid(model: MeasurementModel, dt: float, rho: np.ndarray, grid, n_p: int = DEFAULT_NP) -> np.ndarray:
    return Instrument(model, dt, n_p).density_grid(rho, grid)


def gaussian_density(I, dt: float) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    return np.exp(-(I**2) / (2 * dt)) / math.sqrt(2 * math.pi * dt)


def fig1_model(eta: float = 0.8, omega: float = 0.0) -> MeasurementModel:
    """Driven, decaying qubit with homodyne detection of its emission."""
    from .core import Channel, sigma_minus, sigma_x, sigma_y, sigma_z

    H = sigma_x() + 0.5 * sigma_y() + omega * sigma_z()
    return MeasurementModel(H, (Channel(2 * sigma_minus(), eta=eta),))
