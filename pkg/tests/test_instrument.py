import numpy as np
import pytest
import scipy.linalg

from oracles import fourier_oracle, integrate_over_signal
from robinet.core import (
    Channel,
    ChannelKind,
    MeasurementModel,
    ModelError,
    build_liouvillian,
    check_state,
    excited_state,
    random_density_matrix,
    random_model,
    sigma_minus,
    sigma_x,
    trace_distance,
    trace_norm,
    unvec,
    vec,
)
from robinet.instrument import (
    DigitizedRecord,
    Instrument,
    QuadratureRule,
    QuadratureUnderflowError,
    apply_exact_map,
    fig1_model,
    gaussian_density,
)

# two-bin filter of the driven qubit, from the independent Fourier-integral oracle
TR_K1 = 0.193165103429969
TR_K2K1 = 3.321143245830e-4
RHO_BAR_2 = np.array(
    [[0.085697736906, -0.209826810613 - 0.178840518855j], [-0.209826810613 + 0.178840518855j, 0.914302263094]]
)


def test_oracle_values_frozen(fig1, rho_e):
    k1 = fourier_oracle(fig1, 1.0, rho_e, 1.5)
    assert np.trace(k1).real == pytest.approx(TR_K1, rel=1e-10)


def test_two_bin_filter_matches_oracle(fig1_instr_dt1, rho_e):
    out = fig1_instr_dt1.run_filter(DigitizedRecord(1.0, [1.5, -4.0]), rho_e)
    assert out.densities[0] == pytest.approx(TR_K1, rel=1e-10)
    assert np.prod(out.densities) == pytest.approx(TR_K2K1, rel=1e-9)
    np.testing.assert_allclose(out.states[-1], RHO_BAR_2, atol=1e-10)
    assert out.log_likelihood == pytest.approx(np.log(TR_K2K1), rel=1e-9)


@pytest.mark.parametrize("I", [-6.0, 0.0, 2.5])
@pytest.mark.parametrize("dt", [0.1, 1.0])
def test_map_matches_fourier_oracle(qubit_model, dt, I, rng):
    rho = random_density_matrix(2, rng)
    np.testing.assert_allclose(apply_exact_map(qubit_model, dt, rho, I), fourier_oracle(qubit_model, dt, rho, I),
                               atol=1e-11)


def test_far_tail_density_is_not_aliased(fig1):
    # 9 standard deviations out; a real-contour rule returns garbage here
    instr = Instrument(fig1, 0.01)
    rho = excited_state()
    I = 0.9
    ref = fourier_oracle(fig1, 0.01, rho, I, cutoff=150.0, shift=I / 0.01)
    np.testing.assert_allclose(instr.apply(rho, I), ref, rtol=1e-7, atol=1e-30)


def test_eta_zero_signal_is_pure_noise(rng):
    m = MeasurementModel(sigma_x(), (Channel(sigma_minus(), eta=0.0),))
    instr = Instrument(m, 0.5)
    rho = random_density_matrix(2, rng)
    lind = instr.lindblad_step(rho)
    for I in (-1.0, 0.3, 2.0):
        np.testing.assert_allclose(instr.apply(rho, I), gaussian_density(I, 0.5) * lind, atol=1e-13)


@pytest.mark.parametrize("dt", [0.01, 1.0, 10.0])
def test_marginalization_diffusive(dt, rng):
    m = random_model(2, rng)
    instr = Instrument(m, dt)
    rho = random_density_matrix(2, rng)
    assert trace_norm(integrate_over_signal(instr, rho) - instr.lindblad_step(rho)) < 1e-8


def test_marginalization_jump(rng):
    m = random_model(2, rng, kind=ChannelKind.JUMP)
    instr = Instrument(m, 1.0)
    rho = random_density_matrix(2, rng)
    total = np.zeros((2, 2), dtype=complex)
    n = 0
    while True:
        term = instr.apply(rho, [n])
        total += term
        n += 1
        if np.abs(term).max() < 1e-14 and n > 3:
            break
    assert trace_norm(total - instr.lindblad_step(rho)) < 1e-10
    masses = instr.jump_masses(rho)
    assert masses.sum() > 1 - 1e-12
    assert np.all(masses > -1e-14)


def test_jump_mass_at_zero_dt_limit():
    m = MeasurementModel(np.zeros((2, 2)), (Channel(sigma_minus(), 1.0, "jump"),))
    instr = Instrument(m, 1e-6)
    masses = instr.jump_masses(excited_state())
    assert masses[0] == pytest.approx(np.exp(-1e-6), abs=1e-12)


def test_pure_decay_click_statistics():
    # a single emitter clicks at most once; P(0) = exp(-dt) for eta = 1
    m = MeasurementModel(np.zeros((2, 2)), (Channel(sigma_minus(), 1.0, "jump"),))
    instr = Instrument(m, 2.0)
    masses = instr.jump_masses(excited_state())
    assert masses[0] == pytest.approx(np.exp(-2.0), abs=1e-12)
    assert masses[1] == pytest.approx(1 - np.exp(-2.0), abs=1e-12)
    assert masses[2:].sum() == pytest.approx(0.0, abs=1e-12)


def test_complete_positivity_on_random_inputs(rng):
    for _ in range(10):
        m = random_model(2, rng)
        instr = Instrument(m, float(rng.choice([0.05, 1.0, 5.0])))
        for _ in range(5):
            psi = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            rho = np.outer(psi, psi.conj()) / np.vdot(psi, psi).real
            I = rng.normal(0, 2 * np.sqrt(instr.dt))
            out = instr.apply(rho, I)
            tr = np.trace(out).real
            assert tr > 0
            assert np.linalg.eigvalsh(out)[0] >= -1e-8 * tr


def test_quadrature_doubling(fig1, rho_e):
    rec = DigitizedRecord(1.0, [1.5, -4.0])
    a = Instrument(fig1, 1.0, n_p=20).run_filter(rec, rho_e).states[-1]
    b = Instrument(fig1, 1.0, n_p=40).run_filter(rec, rho_e).states[-1]
    assert trace_norm(a - b) < 1e-10


def test_long_record_states_stay_valid(fig1, rho_e):
    from robinet.trajectories import sample_coarse

    rec, _ = sample_coarse(fig1, rho_e, 1000, 0.05, seed=3)
    out = Instrument(fig1, 0.05).run_filter(rec, rho_e)
    assert out.failed_step is None
    assert len(out.states) == 1001
    for s in out.states:
        check_state(s)


def test_filter_many_matches_run_filter(fig1, rho_e, rng):
    instr = Instrument(fig1, 0.3)
    vals = rng.normal(0, 0.6, (4, 6, 1))
    ll, hist = instr.filter_many(vals, rho_e, return_states=True)
    for r in range(4):
        out = instr.run_filter(DigitizedRecord(0.3, vals[r]), rho_e)
        assert ll[r] == pytest.approx(out.log_likelihood, rel=1e-12)
        np.testing.assert_allclose(hist[r, -1], out.states[-1], atol=1e-12)


def test_two_bin_normalization(fig1, rho_e):
    instr = Instrument(fig1, 1.0)
    g = np.linspace(-12, 12, 601)
    lin = instr.apply_batch(np.broadcast_to(rho_e, (len(g), 2, 2)), g[:, None])
    inner = np.array([np.trapezoid(instr.density_grid(s, g), g) for s in lin])
    assert np.trapezoid(inner, g) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("dt", [1e-3, 1e-2, 1.0, 10.0])
def test_invariants_across_bin_durations(fig1, rho_e, dt):
    instr = Instrument(fig1, dt)
    assert trace_norm(integrate_over_signal(instr, rho_e, n=6001) - instr.lindblad_step(rho_e)) < 1e-8
    rng = np.random.default_rng(int(dt * 1000))
    for I in rng.normal(0, np.sqrt(dt), 5):
        out = instr.apply(rho_e, I)
        tr = np.trace(out).real
        assert tr > 0 and np.linalg.eigvalsh(out)[0] >= -1e-8 * tr


def test_two_channel_model_marginalizes(rng):
    d = 2
    m = MeasurementModel(
        sigma_x(),
        (Channel(sigma_minus(), 0.6), Channel(0.7 * sigma_minus().T, 0.5)),
    )
    instr = Instrument(m, 0.5, n_p=24)
    rho = random_density_matrix(d, rng)
    g = np.linspace(-7, 7, 181)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    out = instr.apply_batch(np.broadcast_to(rho, (len(pts), d, d)), pts).reshape(len(g), len(g), d, d)
    tot = np.trapezoid(np.trapezoid(out, g, axis=1), g, axis=0)
    assert trace_norm(tot - instr.lindblad_step(rho)) < 1e-8


def test_mixed_channels(rng):
    m = MeasurementModel(sigma_x(), (Channel(sigma_minus(), 0.6), Channel(sigma_minus(), 0.3, "jump", 0.1)))
    instr = Instrument(m, 0.5)
    rho = random_density_matrix(2, rng)
    g = np.linspace(-8, 8, 801)
    tot = np.zeros((2, 2), dtype=complex)
    for n in range(12):
        pts = np.stack([g, np.full_like(g, n)], axis=1)
        tot += np.trapezoid(instr.apply_batch(np.broadcast_to(rho, (len(g), 2, 2)), pts), g, axis=0)
    assert trace_norm(tot - instr.lindblad_step(rho)) < 1e-8


def test_krylov_backend_matches_dense(fig1, rho_e):
    a = Instrument(fig1, 0.7, backend="dense").apply(rho_e, 0.4)
    b = Instrument(fig1, 0.7, backend="krylov").apply(rho_e, 0.4)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_record_and_channel_validation(fig1, rho_e):
    instr = Instrument(fig1, 1.0)
    with pytest.raises(ModelError, match="dt"):
        instr.run_filter(DigitizedRecord(0.5, [0.1]), rho_e)
    with pytest.raises(ValueError, match="integer"):
        DigitizedRecord(1.0, [[0.5]], ("jump",))
    with pytest.raises(ValueError, match="non-finite"):
        DigitizedRecord(1.0, [np.nan])


def test_underflow_is_reported(fig1, rho_e):
    instr = Instrument(fig1, 0.01)
    with pytest.raises(QuadratureUnderflowError):
        instr.filter_step(rho_e, 50.0)
    out = instr.run_filter(DigitizedRecord(0.01, [0.0, 50.0]), rho_e)
    assert out.failed_step == 1


def test_quadrature_rules_integrate_polynomials():
    gh = QuadratureRule.gauss_hermite(10)
    assert np.sum(gh.weights * gh.nodes**4) == pytest.approx(0.75 * np.sqrt(np.pi))
    tr = QuadratureRule.periodic_trapezoid(16)
    assert np.sum(tr.weights * np.cos(3 * tr.nodes)) == pytest.approx(0.0, abs=1e-14)
    assert np.sum(tr.weights) == pytest.approx(2 * np.pi)


def test_lindblad_step_is_propagator(fig1, rho_e):
    instr = Instrument(fig1, 0.3)
    ref = unvec(scipy.linalg.expm(0.3 * build_liouvillian(fig1)) @ vec(rho_e))
    assert trace_distance(instr.lindblad_step(rho_e), ref) < 1e-14


def test_fig1_model_parameters():
    m = fig1_model(eta=0.5, omega=0.2)
    assert m.monitored[0].eta == 0.5
    np.testing.assert_allclose(m.H, [[0.2, 1 - 0.5j], [1 + 0.5j, -0.2]])
