import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from effmaster.dicke import DickeParams, full_model, parity_sectors, displaced_vacuum_coarsening
from effmaster.errors import DegenerateSteadyState, IntegrationError, InvalidArgument, ResourceLimit
from effmaster.liouvillian import (
    LindbladModel,
    build_liouvillian,
    evolve,
    sort_order,
    spectrum,
    steady_state,
    steady_state_krylov,
    unvec,
    vec,
    write_spectrum_csv,
)
from effmaster.operators import boson_operators, ket_to_dm, spin_operators


def random_model(d, n_jumps, rng):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (X + X.conj().T) / 2
    jumps = tuple((float(rng.uniform(0.1, 1.0)),
                   rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) for _ in range(n_jumps))
    return LindbladModel(H, jumps)


models = st.builds(
    lambda d, k, seed: random_model(d, k, np.random.default_rng(seed)),
    st.integers(2, 5), st.integers(0, 3), st.integers(0, 2 ** 32 - 1))


def test_vec_identity():
    rng = np.random.default_rng(0)
    A, X, B = (rng.normal(size=(3, 3)) for _ in range(3))
    np.testing.assert_allclose(np.kron(B.T, A) @ vec(X), vec(A @ X @ B))
    np.testing.assert_array_equal(unvec(vec(X)), X)


@given(models, st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_superoperator_matches_direct_action(model, seed):
    # oracle: the dissipator written out term by term
    rng = np.random.default_rng(seed)
    d = model.dim
    rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = model.hamiltonian
    direct = -1j * (H @ rho - rho @ H)
    for rate, O in model.jumps:
        Od = O.conj().T
        direct += rate * (2 * O @ rho @ Od - Od @ O @ rho - rho @ Od @ O)
    L = build_liouvillian(model)
    np.testing.assert_allclose(unvec(L @ vec(rho)), direct, atol=1e-10)
    np.testing.assert_allclose(build_liouvillian(model, sparse=True).toarray(), L, atol=1e-14)


@given(models)
@settings(max_examples=30, deadline=None)
def test_trace_and_hermiticity_preservation(model):
    d = model.dim
    L = build_liouvillian(model)
    # vec(I)^+ is a left null vector
    assert np.abs(vec(np.eye(d)).conj() @ L).max() < 1e-9
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d), dtype=complex)
            E[i, j] = E[j, i] = 1.0
            out = unvec(L @ vec(E))
            np.testing.assert_allclose(out, out.conj().T, atol=1e-10)


@given(models)
@settings(max_examples=20, deadline=None)
def test_spectrum_contractive_sorted_and_paired(model):
    ev = spectrum(build_liouvillian(model)).eigenvalues
    assert ev.real.max() <= 1e-8
    np.testing.assert_array_equal(sort_order(ev), np.arange(len(ev)))
    nonreal = ev[np.abs(ev.imag) > 1e-6]
    for lam in nonreal:
        assert np.min(np.abs(nonreal - lam.conjugate())) < 1e-8


def test_two_level_precession():
    sz = np.diag([0.5, -0.5])
    ev = spectrum(build_liouvillian(LindbladModel(sz))).eigenvalues
    np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex([0, 0, 1j, -1j]), atol=1e-14)


def test_decay_eigenvalues_factor_two():
    kappa = 0.7
    a, _ = boson_operators(1)
    ev = spectrum(build_liouvillian(LindbladModel(np.zeros((2, 2)), ((kappa, a),)))).eigenvalues
    np.testing.assert_allclose(np.sort(ev.real), [-2 * kappa, -kappa, -kappa, 0], atol=1e-14)


def test_damped_mode_spectrum_closed_form():
    # truncated damped oscillator is triangular in total excitation: exact eigenvalues
    wc, kappa, n = 1.3, 0.4, 4
    a, adag = boson_operators(n)
    ev = spectrum(build_liouvillian(LindbladModel(wc * adag @ a, ((kappa, a),)))).eigenvalues
    exact = np.array([-1j * wc * (j - k) - kappa * (j + k)
                      for j in range(n + 1) for k in range(n + 1)])
    np.testing.assert_allclose(ev, exact[sort_order(exact)], atol=1e-10)


def test_commutator_spectrum_of_diagonal_hamiltonian():
    w0 = 0.3
    ev = spectrum(build_liouvillian(LindbladModel(w0 * spin_operators(2).Sz))).eigenvalues
    expected = np.array([1j * w0 * (m - q) for m in (-1, 0, 1) for q in (-1, 0, 1)])
    np.testing.assert_allclose(ev, expected[sort_order(expected)], atol=1e-12)


def test_spectrum_guard():
    model = LindbladModel(np.eye(12))
    with pytest.raises(ResourceLimit):
        spectrum(build_liouvillian(model), max_dim=100)


def test_small_dicke_unique_stationary_mode():
    p = DickeParams(2, g=0.4)
    ev = spectrum(build_liouvillian(full_model(p, 4))).eigenvalues
    assert ev.real.max() <= 1e-10
    assert np.sum(np.abs(ev) < 1e-10) == 1


def test_evolve_pure_decay():
    kappa = 1.0
    a, adag = boson_operators(3)
    model = LindbladModel(np.zeros((4, 4)), ((kappa, a),))
    rho0 = np.zeros((4, 4))
    rho0[1, 1] = 1
    ev = evolve(model, rho0, 3.0, dt=1e-3, sample_interval=0.1)
    n = ev.expect(adag @ a).real
    np.testing.assert_allclose(n, np.exp(-2 * kappa * ev.times), atol=1e-8)


def test_evolve_zero_generator():
    rho0 = ket_to_dm(np.array([1, 1j]) / np.sqrt(2))
    ev = evolve(LindbladModel(np.zeros((2, 2))), rho0, 1.0, sample_interval=0.25)
    for r in ev.states:
        np.testing.assert_array_equal(r, rho0)


def test_evolve_flags_trace_drift(monkeypatch):
    import effmaster.liouvillian as lv
    monkeypatch.setattr(lv, "stable_step", lambda bound, dt, limit=0.1: dt)
    a, _ = boson_operators(3)
    model = LindbladModel(np.zeros((4, 4)), ((50.0, a),))
    rho0 = np.zeros((4, 4))
    rho0[3, 3] = 1
    with pytest.raises(IntegrationError):
        evolve(model, rho0, 1.0, dt=0.2, sample_interval=0.2)


def test_steady_state_of_decay_is_vacuum():
    a, _ = boson_operators(3)
    rho = steady_state(build_liouvillian(LindbladModel(np.zeros((4, 4)), ((1.0, a),))))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    np.testing.assert_allclose(rho, expected, atol=1e-12)


@given(models)
@settings(max_examples=20, deadline=None)
def test_steady_state_against_null_space(model):
    if not model.jumps:
        return
    L = build_liouvillian(model)
    ns = la.null_space(L, rcond=1e-10)
    if ns.shape[1] != 1:
        return
    ref = unvec(ns[:, 0])
    ref = ref / np.trace(ref)
    rho = steady_state(L)
    np.testing.assert_allclose(rho, ref, atol=1e-8)
    assert np.linalg.eigvalsh(rho).min() >= -1e-8
    sparse = steady_state(build_liouvillian(model, sparse=True))
    np.testing.assert_allclose(sparse, ref, atol=1e-8)


def test_degenerate_steady_state_detected():
    with pytest.raises(DegenerateSteadyState):
        steady_state(build_liouvillian(LindbladModel(np.diag([0.0, 1.0, 2.0]))))


@pytest.mark.parametrize("g_over_gc, n_max", [(0.5, 6), (2.0, 8)])
def test_krylov_matches_direct_solve(g_over_gc, n_max):
    p = DickeParams(6).at(g_over_gc)
    model = full_model(p, n_max)
    direct = steady_state(build_liouvillian(model, sparse=True))
    plain = steady_state_krylov(model)
    fast = steady_state_krylov(model, sectors=parity_sectors(p, n_max),
                               coarse=displaced_vacuum_coarsening(p, n_max))
    np.testing.assert_allclose(plain, direct, atol=1e-9)
    np.testing.assert_allclose(fast, direct, atol=1e-9)


def test_krylov_rejects_bad_sectors():
    p = DickeParams(2, g=0.3)
    model = full_model(p, 3)
    with pytest.raises(InvalidArgument):
        steady_state_krylov(model, sectors=[np.arange(5)])


def test_model_validation():
    with pytest.raises(InvalidArgument):
        LindbladModel(np.array([[0, 1], [0, 0]]))
    with pytest.raises(InvalidArgument):
        LindbladModel(np.eye(2), ((-1.0, np.eye(2)),))
    with pytest.raises(InvalidArgument):
        LindbladModel(np.eye(2), ((1.0, np.eye(3)),))


def test_spectrum_csv(tmp_path):
    spect = spectrum(build_liouvillian(LindbladModel(np.diag([0.5, -0.5]))))
    path = tmp_path / "s.csv"
    write_spectrum_csv(spect, path, comment="unit test")
    lines = path.read_text().splitlines()
    assert lines[0] == "# unit test"
    assert lines[1] == "re_lambda,im_lambda"
    assert len(lines) == 2 + 4
