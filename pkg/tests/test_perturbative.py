import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loglog_slope
from robinet.core import (
    ModelError,
    build_liouvillian,
    build_measurement_superop,
    random_density_matrix,
    random_model,
    trace_norm,
    unvec,
    vec,
)
from robinet.instrument import Instrument
from robinet.perturbative import (
    PerturbativeExpansion,
    apply_perturbative_map,
    expansion_superoperators,
    hermite,
    hermite_coefficients,
    kraus_operator_eta1,
    permutation_sum_apply,
    permutation_sums,
    taylor_tracking_bracket,
)

EXPLICIT_HERMITE = [
    lambda x: np.ones_like(x),
    lambda x: x,
    lambda x: x**2 - 1,
    lambda x: x**3 - 3 * x,
    lambda x: x**4 - 6 * x**2 + 3,
    lambda x: x**5 - 10 * x**3 + 15 * x,
]


@pytest.fixture(scope="module")
def model():
    return random_model(2, np.random.default_rng(11))


@pytest.fixture(scope="module")
def state():
    return random_density_matrix(2, np.random.default_rng(5))


def test_hermite_recurrence_matches_explicit(rng):
    x = rng.uniform(-6, 6, 100)
    for k, f in enumerate(EXPLICIT_HERMITE):
        ref = f(x)
        np.testing.assert_allclose(hermite(k, x), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
        np.testing.assert_allclose(np.polynomial.polynomial.polyval(x, hermite_coefficients(k)), ref, rtol=1e-12,
                                   atol=1e-12 * np.abs(ref).max())


def _enumerate_words(A, B, a, b, v):
    out = np.zeros_like(v)
    for word in set(itertools.permutations("A" * a + "B" * b)):
        w = v
        for letter in reversed(word):
            w = (A if letter == "A" else B) @ w
        out = out + w
    return out


def test_permutation_sums_match_enumeration(rng):
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    S = permutation_sums(A, B, 6, 6, v)
    for a in range(7):
        for b in range(7 - a):
            np.testing.assert_allclose(S[(a, b)], _enumerate_words(A, B, a, b, v), rtol=1e-12, atol=1e-12)


def test_permutation_sum_of_squares(rng):
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 4))
    rho = rng.standard_normal((2, 2))
    # {{A^2 B^2}} has six words
    words = [A @ A @ B @ B, A @ B @ A @ B, A @ B @ B @ A, B @ A @ A @ B, B @ A @ B @ A, B @ B @ A @ A]
    expect = unvec(sum(words) @ vec(rho))
    np.testing.assert_allclose(permutation_sum_apply(A, B, 2, 2, rho), expect, atol=1e-12)


def test_fourth_order_terms_by_hand(model, state):
    Lg = build_liouvillian(model)
    C = build_measurement_superop(model.monitored[0])
    v = vec(state)
    dt, x = 0.03, 0.8
    sq = math.sqrt(dt)
    LC = Lg @ C + C @ Lg
    LCC = Lg @ C @ C + C @ Lg @ C + C @ C @ Lg
    C2, C3, C4 = C @ C, C @ C @ C, C @ C @ C @ C
    terms = [
        v,
        sq * x * (C @ v),
        dt * (Lg @ v + (x**2 - 1) / 2 * (C2 @ v)),
        sq**3 * (x / 2 * (LC @ v) + (x**3 - 3 * x) / 6 * (C3 @ v)),
        dt**2 * (0.5 * (Lg @ Lg @ v) + (x**2 - 1) / 6 * (LCC @ v) + (x**4 - 6 * x**2 + 3) / 24 * (C4 @ v)),
    ]
    for q in range(5):
        expect = unvec(sum(terms[: q + 1]))
        np.testing.assert_allclose(PerturbativeExpansion(model, dt, q, state).bracket(x), expect, atol=1e-13)
        np.testing.assert_allclose(taylor_tracking_bracket(model, x, dt, q, state), expect, atol=1e-13)


def test_second_order_matches_hand_milstein_map(model, state):
    ch = model.monitored[0]
    L, eta = ch.L, ch.eta
    H = model.H
    dt, I = 0.02, 0.09
    x = I / math.sqrt(dt)

    def lind(r):
        out = -1j * (H @ r - r @ H)
        for K in model.jump_operators():
            KdK = K.conj().T @ K
            out = out + K @ r @ K.conj().T - 0.5 * (KdK @ r + r @ KdK)
        return out

    def meas(r):
        return math.sqrt(eta) * (L @ r + r @ L.conj().T)

    bracket = state + I * meas(state) + dt * lind(state) + 0.5 * (I**2 - dt) * meas(meas(state))
    hand = math.exp(-0.5 * x**2) / math.sqrt(2 * math.pi * dt) * bracket
    hand = 0.5 * (hand + hand.conj().T)
    assert np.abs(apply_perturbative_map(model, x, dt, 2, state) - hand).max() < 1e-12


@pytest.mark.parametrize("q", [1, 2, 3, 4, 5])
def test_order_convergence(model, state, q):
    x = 0.7
    dts = np.logspace(-4, -1, 7)
    err = []
    for dt in dts:
        exact = Instrument(model, dt).apply(state, x * math.sqrt(dt))
        approx = apply_perturbative_map(model, x, dt, q, state)
        err.append(trace_norm(approx - exact) / trace_norm(exact))
    assert loglog_slope(dts, err) == pytest.approx((q + 1) / 2, abs=0.3)


@pytest.mark.parametrize("seed", range(4))
def test_recursive_evaluator_matches_symbolic_assembly(seed):
    rng = np.random.default_rng(seed)
    m = random_model(3, rng, n_unmonitored=2)
    rho = random_density_matrix(3, rng)
    for q in range(6):
        for x in (-2.0, 0.3, 3.1):
            a = taylor_tracking_bracket(m, x, 0.05, q, rho)
            b = PerturbativeExpansion(m, 0.05, q, rho).bracket(x)
            assert np.abs(a - b).max() < 1e-12


def test_expansion_superoperators_reassemble(model, state):
    dt, x = 0.01, -1.3
    out = np.zeros(4, dtype=complex)
    for order, k, S in expansion_superoperators(model, 4):
        out += math.sqrt(dt) ** order * float(hermite(k, x)) * (S @ vec(state))
    np.testing.assert_allclose(unvec(out), PerturbativeExpansion(model, dt, 4, state).bracket(x), atol=1e-14)


def test_density_coefficients_give_trace(model, state):
    dt = 0.04
    pe = PerturbativeExpansion(model, dt, 4, state)
    for x in (-1.0, 0.5, 2.0):
        poly = np.polynomial.polynomial.polyval(x, pe.density_coefficients())
        assert poly == pytest.approx(np.trace(pe.bracket(x)).real, rel=1e-12)


@pytest.fixture(scope="module")
def perfect_model():
    return random_model(2, np.random.default_rng(3), n_unmonitored=0, eta=1.0)


@pytest.fixture(scope="module")
def pure_state():
    rng = np.random.default_rng(8)
    psi = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def test_kraus_form_agrees_to_third_order(perfect_model, pure_state):
    x = 0.7
    dts = np.logspace(-3, -1, 7)
    err = []
    for dt in dts:
        M = kraus_operator_eta1(perfect_model, x, dt)
        err.append(trace_norm(M @ pure_state @ M.conj().T - taylor_tracking_bracket(perfect_model, x, dt, 5, pure_state)))
    assert loglog_slope(dts, err) == pytest.approx(3.0, abs=0.3)


@pytest.mark.parametrize("q", [1, 2, 3, 4, 5])
def test_purity_defect_order(perfect_model, pure_state, q):
    x = 0.7
    dts = np.logspace(-3, -1, 7)
    defect = []
    for dt in dts:
        out = taylor_tracking_bracket(perfect_model, x, dt, q, pure_state)
        out = out / np.trace(out)
        defect.append(abs(1 - np.trace(out @ out).real))
    slope = loglog_slope(dts, defect)
    # the truncated series is pure through its own order; at q = 5 that is dt^3
    assert slope > (q + 1) / 2 - 0.3
    if q == 5:
        assert slope == pytest.approx(3.0, abs=0.3)


def test_kraus_requires_perfect_detection(model):
    with pytest.raises(ModelError):
        kraus_operator_eta1(model, 0.0, 0.01)


def test_expansion_rejects_jump_channels():
    from robinet.core import ChannelKind

    m = random_model(2, np.random.default_rng(0), kind=ChannelKind.JUMP)
    with pytest.raises(ModelError):
        PerturbativeExpansion(m, 0.1, 2, np.eye(2) / 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.floats(-5, 5))
def test_hermite_coefficients_match_recurrence(k, x):
    val = np.polynomial.polynomial.polyval(x, hermite_coefficients(k))
    assert val == pytest.approx(float(hermite(k, x)), rel=1e-9, abs=1e-9)
