"""Expansion of the time-averaged measurement map in powers of sqrt(dt).

With the reduced signal ``x = I / sqrt(dt)`` and a single diffusive channel,

    K_I = g(x) / sqrt(dt) * sum_q sqrt(dt)^q sum_n He_{2n-q}(x) / n! {{L^(q-n) C^(2n-q)}}

where ``g`` is the standard normal density, ``He_k`` the probabilists'
Hermite polynomials and ``{{A^a B^b}}`` the sum over all distinct words with
``a`` copies of ``A`` and ``b`` copies of ``B``. The permutation sums obey
``S[a, b] = A S[a-1, b] + B S[a, b-1]``, which gives an evaluator whose cost
is quadratic in the order.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    MeasurementModel,
    ModelError,
    build_liouvillian,
    build_measurement_superop,
    hermitize,
    unvec,
    vec,
)

Q_MAX = 12


def hermite(k: int, x):
    """Probabilists' Hermite polynomial He_k evaluated by three-term recurrence."""
    if k < 0 or k > 64:
        raise ValueError("hermite degree must lie in [0, 64]")
    x = np.asarray(x, dtype=float)
    h0 = np.ones_like(x)
    if k == 0:
        return h0
    h1 = x.copy()
    for j in range(1, k):
        h0, h1 = h1, x * h1 - j * h0
    return h1


def hermite_coefficients(k: int) -> np.ndarray:
    """Monomial coefficients c with He_k(x) = sum_j c[j] x**j."""
    prev, cur = np.zeros(k + 1), np.zeros(k + 1)
    prev[0] = 1.0
    if k == 0:
        return prev
    cur[1] = 1.0
    for j in range(1, k):
        nxt = np.zeros(k + 1)
        nxt[1:] = cur[:-1]
        nxt -= j * prev
        prev, cur = cur, nxt
    return cur


def permutation_sums(A: np.ndarray, B: np.ndarray, a_max: int, b_max: int, v: np.ndarray,
                     max_weight: tuple[int, int, int] | None = None) -> dict[tuple[int, int], np.ndarray]:
    """Table of {{A^a B^b}} v for 0 <= a <= a_max, 0 <= b <= b_max.

    ``v`` may be a vector (superoperator action) or a matrix (operator
    products). ``max_weight = (wa, wb, w)`` keeps only entries with
    ``wa*a + wb*b <= w``.
    """
    S: dict[tuple[int, int], np.ndarray] = {(0, 0): v}
    for n in range(1, a_max + b_max + 1):
        for a in range(max(0, n - b_max), min(a_max, n) + 1):
            b = n - a
            if max_weight is not None and max_weight[0] * a + max_weight[1] * b > max_weight[2]:
                continue
            acc = None
            if a > 0 and (a - 1, b) in S:
                acc = A @ S[(a - 1, b)]
            if b > 0 and (a, b - 1) in S:
                t = B @ S[(a, b - 1)]
                acc = t if acc is None else acc + t
            if acc is not None:
                S[(a, b)] = acc
    return S


def permutation_sum_apply(A: np.ndarray, B: np.ndarray, a: int, b: int, state: np.ndarray) -> np.ndarray:
    """{{A^a B^b}} applied to a d x d state, with A and B superoperators."""
    if a + b > 16:
        raise ValueError("a + b must not exceed 16")
    S = permutation_sums(A, B, a, b, vec(state))
    return unvec(S[(a, b)])


def _single_diffusive(model: MeasurementModel):
    if model.n_channels != 1 or model.monitored[0].is_jump:
        raise ModelError("the perturbative expansion needs exactly one diffusive channel")
    return model.monitored[0]


class PerturbativeExpansion:
    """Order-``q`` expansion of K_I for one model, step and input state.

    The permutation-sum table is built once; evaluating at many signal values
    (or extracting the polynomial coefficients of the density) is then cheap.
    """

    def __init__(self, model: MeasurementModel, dt: float, q: int, state: np.ndarray):
        if not 0 <= q <= Q_MAX:
            raise ValueError(f"expansion order must lie in [0, {Q_MAX}]")
        ch = _single_diffusive(model)
        self.dt = float(dt)
        self.q = q
        self.d = model.dim
        Lg = build_liouvillian(model)
        C = build_measurement_superop(ch)
        # order weight: L counts 2, C counts 1
        self.S = permutation_sums(Lg, C, q // 2, q, vec(state), max_weight=(2, 1, q))

    def terms(self):
        """Yield (order, hermite degree, n, vectorized {{L^a C^b}} rho / n!)."""
        for qq in range(self.q + 1):
            for n in range((qq + 1) // 2, qq + 1):
                a, b = qq - n, 2 * n - qq
                yield qq, b, n, self.S[(a, b)] / math.factorial(n)

    def bracket(self, xbar: float) -> np.ndarray:
        """The truncated series without the Gaussian prefactor, as a state."""
        sq = math.sqrt(self.dt)
        acc = np.zeros(self.d * self.d, dtype=complex)
        for qq, k, _, T in self.terms():
            acc = acc + sq**qq * float(hermite(k, xbar)) * T
        return unvec(acc)

    def apply(self, xbar: float) -> np.ndarray:
        pref = math.exp(-0.5 * xbar**2) / math.sqrt(2 * math.pi * self.dt)
        return hermitize(pref * self.bracket(xbar))

    def density_coefficients(self) -> np.ndarray:
        """alpha_j with Tr K_I = g(x)/sqrt(dt) * sum_j alpha_j x**j."""
        sq = math.sqrt(self.dt)
        alpha = np.zeros(self.q + 1)
        tr_idx = np.arange(self.d) * (self.d + 1)
        for qq, k, _, T in self.terms():
            tr = T[tr_idx].sum().real
            alpha[: k + 1] += sq**qq * tr * hermite_coefficients(k)
        return alpha


def taylor_tracking_bracket(model: MeasurementModel, xbar: float, dt: float, q: int, state: np.ndarray) -> np.ndarray:
    """Order-``q`` series without the Gaussian prefactor, by Taylor tracking.

    With ``y = -i p sqrt(dt)`` the tilted propagator is
    ``exp(dt L + y sqrt(dt) C)``. Its Taylor terms are accumulated as a table
    ``T[a, k]`` of coefficients of ``dt^a (y sqrt(dt))^k`` (``a`` factors of L,
    ``k`` of C), each step dividing by the term index. The Gaussian integral
    turns ``y^k`` into ``He_k(xbar)``.
    """
    if not 0 <= q <= Q_MAX:
        raise ValueError(f"expansion order must lie in [0, {Q_MAX}]")
    ch = _single_diffusive(model)
    Lg = build_liouvillian(model)
    C = build_measurement_superop(ch)
    layer = {(0, 0): vec(np.asarray(state, dtype=complex))}
    table = dict(layer)
    for n in range(1, q + 1):
        nxt: dict[tuple[int, int], np.ndarray] = {}
        for (a, k), v in layer.items():
            if 2 * (a + 1) + k <= q:
                nxt[(a + 1, k)] = nxt.get((a + 1, k), 0) + (Lg @ v) / n
            if 2 * a + k + 1 <= q:
                nxt[(a, k + 1)] = nxt.get((a, k + 1), 0) + (C @ v) / n
        if not nxt:
            break
        table.update(nxt)
        layer = nxt
    sq = math.sqrt(dt)
    acc = np.zeros(model.dim**2, dtype=complex)
    for (a, k), v in table.items():
        acc = acc + sq ** (2 * a + k) * float(hermite(k, xbar)) * v
    return unvec(acc)


def apply_perturbative_map(model: MeasurementModel, xbar: float, dt: float, q: int, state: np.ndarray) -> np.ndarray:
    """Order-``q`` approximation of K_I(state) at reduced signal ``xbar = I / sqrt(dt)``.

    Evaluated by Taylor tracking; ``PerturbativeExpansion`` assembles the same
    series from permutation sums.
    """
    pref = math.exp(-0.5 * xbar**2) / math.sqrt(2 * math.pi * dt)
    return hermitize(pref * taylor_tracking_bracket(model, xbar, dt, q, state))


def expansion_superoperators(model: MeasurementModel, q: int) -> list[tuple[int, int, np.ndarray]]:
    """(order, hermite degree, superoperator / n!) for every term up to order ``q``.

    Multiply by ``sqrt(dt)**order * He_degree(x)`` and the Gaussian prefactor
    to recover the map.
    """
    ch = _single_diffusive(model)
    Lg = build_liouvillian(model)
    C = build_measurement_superop(ch)
    S = permutation_sums(Lg, C, q // 2, q, np.eye(Lg.shape[0], dtype=complex), max_weight=(2, 1, q))
    out = []
    for qq in range(q + 1):
        for n in range((qq + 1) // 2, qq + 1):
            out.append((qq, 2 * n - qq, S[(qq - n, 2 * n - qq)] / math.factorial(n)))
    return out


def kraus_operator_eta1(model: MeasurementModel, xbar: float, dt: float, order: int = 5) -> np.ndarray:
    """Single Kraus operator M_I for perfect detection, without the Gaussian factor.

    ``M_I rho M_I^dag`` reproduces the expansion of K_I through order five in
    sqrt(dt). Same series as the map, with ``L -> G = -iH - L^dag L / 2`` and
    ``C -> L`` acting by left multiplication.
    """
    ch = _single_diffusive(model)
    if ch.eta != 1.0:
        raise ModelError(f"single-Kraus form requires eta = 1, got {ch.eta}")
    if model.unmonitored:
        raise ModelError("single-Kraus form requires no unmonitored dissipators")
    L = ch.L
    G = -1j * model.H - 0.5 * L.conj().T @ L
    S = permutation_sums(G, L, order // 2, order, np.eye(model.dim, dtype=complex), max_weight=(2, 1, order))
    sq = math.sqrt(dt)
    M = np.zeros((model.dim, model.dim), dtype=complex)
    for qq in range(order + 1):
        for n in range((qq + 1) // 2, qq + 1):
            k = 2 * n - qq
            M += sq**qq * float(hermite(k, xbar)) / math.factorial(n) * S[(qq - n, k)]
    return M
