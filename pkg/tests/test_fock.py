from math import comb

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from bosepolaron import fock as fk
from bosepolaron.bogoliubov import build_dispersion, generator_finite
from bosepolaron.hartree import FlatProfile, build_initial_condensate
from bosepolaron.potentials import PotentialSpec, build_potential
from bosepolaron.spectral import GridSpec

# single mode, H = a*a + 0.2 (a*^2 + a^2): <N>_t = (k/W)^2 sin^2(W t), W = sqrt(1 - k^2), k = 0.4, t = 0.7
N_SINGLE_MODE = 0.06821679390467317
SINH2_01 = 0.010033377809537924


@given(st.integers(1, 5), st.integers(0, 5))
def test_fock_dimension_and_grading(n, N):
    fs = fk.FockSpace(n, N)
    assert fs.dim == comb(n + N, N)
    tot = fs.total()
    assert np.all(np.diff(tot) >= 0)
    assert fs.index(fs.states[-1]) == fs.dim - 1
    assert fk.FockSpace(n, N, exact=True).dim == comb(n + N - 1, N)


@given(st.integers(1, 3), st.integers(1, 4))
def test_canonical_commutation_below_cutoff(n, N):
    fs = fk.FockSpace(n, N)
    below = fs.total() < N
    for j in range(n):
        for k in range(n):
            a, b = fs.annihilator(j), fs.annihilator(k)
            C = (a @ b.T - b.T @ a).toarray()
            want = np.eye(fs.dim) if j == k else np.zeros((fs.dim, fs.dim))
            assert np.allclose(C[np.ix_(below, below)], want[np.ix_(below, below)])


@given(st.integers(0, 2**31 - 1))
def test_second_quantization_is_linear_and_hermitian(seed):
    rng = np.random.default_rng(seed)
    fs = fk.FockSpace(3, 2)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 3))
    lhs = fk.second_quantize(A + 2 * B, fs).dense()
    rhs = fk.second_quantize(A, fs).dense() + 2 * fk.second_quantize(B, fs).dense()
    assert np.allclose(lhs, rhs)
    Hm = A + A.conj().T
    D = fk.second_quantize(Hm, fs).dense()
    assert np.allclose(D, D.conj().T)
    assert np.allclose(np.diag(fk.second_quantize(np.eye(3), fs).dense()), fs.number_diag())


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.5))
def test_lanczos_matches_expm_and_is_unitary(seed, dt):
    rng = np.random.default_rng(seed)
    fs = fk.FockSpace(3, 3)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    K = rng.standard_normal((3, 3))
    H = fk.quadratic_hamiltonian(A + A.conj().T, K + K.T, fs)
    v = rng.standard_normal(fs.dim) + 1j * rng.standard_normal(fs.dim)
    w = fk.lanczos_expm(H, v, dt, krylov_dim=fs.dim)
    assert np.allclose(w, sla.expm(-1j * dt * H.dense()) @ v, atol=1e-9)
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-10)


def test_single_mode_pairing_closed_form():
    fs = fk.FockSpace(1, 30)
    H = fk.quadratic_hamiltonian(np.array([[1.0]]), np.array([[0.4]]), fs)
    tr = fk.time_evolve(H, fs.vacuum(), 0.7, 0.05)
    assert fk.number_expectation(tr.final, fs) == pytest.approx(N_SINGLE_MODE, rel=1e-8)


def test_squeeze_and_generator_roundtrip():
    fs = fk.FockSpace(1, 20)
    res = fk.implement_bogoliubov_unitary(fk.squeeze_matrix(0.1), fs.vacuum(), fs)
    assert abs(fk.number_expectation(res.state, fs) - SINH2_01) < 1e-10
    Z = fk.squeeze_matrix(0.3, 2, 1)
    H, K = fk.unitary_generator(Z)
    calA = np.block([[H, -K], [K.conj(), -H.conj()]])
    assert np.allclose(sla.expm(-1j * calA), Z, atol=1e-12)


def test_conjugation_residual_shrinks_with_cutoff():
    Z = fk.squeeze_matrix(0.3, 2, 0) @ fk.squeeze_matrix(0.2, 2, 1)
    f = np.array([0.8, 0.6], dtype=complex)
    vals = [fk.conjugation_residual(Z, f, fk.FockSpace(2, N).vacuum(), fk.FockSpace(2, N)) for N in (4, 6, 8)]
    assert vals[0] > vals[1] > vals[2]


def test_mode_set_and_box_modes():
    g = GridSpec(1, 32, 16.0)
    modes = fk.box_modes(g, 1.0)
    offs = [o[0] for o in modes.offsets]
    assert sorted(offs) == [k for k in range(-2, 3) if k]
    U = modes.functions()
    assert np.allclose(g.cell * U.conj().T @ U, np.eye(modes.n_modes))
    with pytest.raises(ValueError):
        fk.ModeSet(g, ((0,),))
    with pytest.raises(ValueError):
        fk.ModeSet(g, ((1,), (1,)))


def test_displaced_oscillator_fiber_energy():
    # zero-momentum mode: H = w N + g (a + a*) has ground energy -g^2 / w
    E = fk.polaron_fiber_energy(0.0, np.array([1.0]), np.array([0.0]), np.array([0.3]), 20)
    assert E == pytest.approx(-0.09, abs=1e-12)


def test_fiber_eigensolver_paths_agree():
    rng = np.random.default_rng(0)
    n, N = 8, 4
    om = rng.uniform(0.5, 2.0, n)
    pk = rng.uniform(-1, 1, n)
    gk = 0.1 * rng.standard_normal(n)
    fs = fk.FockSpace(n, N)
    assert fs.dim > 400
    H = fk.fiber_hamiltonian(0.3, om, pk, gk, fs).toarray()
    assert fk.polaron_fiber_energy(0.3, om, pk, gk, N) == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-9)
    assert fk.polaron_fiber_energy(0.0, om, pk, 0 * gk, N) == pytest.approx(0.0, abs=1e-10)
    assert fk.polaron_fiber_energy(0.4, om, pk, 0 * gk, N, m=2.0) == pytest.approx(0.04, abs=1e-10)


def test_weak_coupling_matches_second_order():
    om = np.array([0.7, 1.1, 1.5])
    pk = np.array([0.5, -0.5, 1.0])
    gk = 1e-3 * np.array([1.0, 0.5, 0.8])
    E = fk.polaron_fiber_energy(0.0, om, pk, gk, 3)
    pert = -np.sum(gk**2 / (om + pk**2 / 2))
    assert fk.perturbative_energy(om, pk, gk) == pytest.approx(pert, rel=1e-14)
    assert E == pytest.approx(pert, rel=1e-4)


def test_bf_hamiltonians_are_hermitian():
    g = GridSpec(1, 16, 8.0)
    V = build_potential(PotentialSpec("gaussian", 0.5, 1.0), g)
    W = build_potential(PotentialSpec("gaussian", 0.3, 1.0, role="W"), g)
    st_ = build_initial_condensate(FlatProfile(constant=True), 2.0, g, V)
    modes = fk.box_modes(g, 1.0)
    fs = fk.FockSpace(modes.n_modes, 2)
    tracer = fk.TracerGrid(4, 4.0)
    A = generator_finite(st_.phi, V, 2.0, st_.mu, dense=True)
    H1 = fk.build_HBF("finite", modes, tracer, fs, A=A, phi=st_.phi, W=W, Lam=2.0)
    H2 = fk.build_HBF("infty", modes, tracer, fs, W=W, disp=build_dispersion(V))
    assert H1.hermiticity_residual() < 1e-12 and H2.hermiticity_residual() < 1e-12
    with pytest.raises(ValueError):
        fk.build_HBF("finite", modes, tracer, fs)
    with pytest.raises(ValueError):
        fk.TracerGrid(5, 4.0).shifts(g)


def test_tracer_moments_of_gaussian():
    tracer = fk.TracerGrid(64, 16.0)
    fs = fk.FockSpace(1, 2)
    psi = fk.gaussian_tracer(tracer, fs, 1.0)
    mom = fk.tracer_moments(psi, tracer, fs)
    # |chi|^2 ~ exp(-x^2), so <x^2> = 1/2 and <-Delta> = 1/2
    assert mom["x2M"] == pytest.approx(0.5, rel=1e-10)
    assert mom["lapM"] == pytest.approx(0.5, rel=1e-8)
    assert fk.number_expectation(psi, fs, tracer.n_x) == 0.0


def test_polaron_state_roundtrip(tmp_path):
    fs = fk.FockSpace(2, 2)
    tracer = fk.TracerGrid(4, 4.0, 1.5)
    amps = np.arange(4 * fs.dim).reshape(4, fs.dim) * (1 + 1j)
    fk.PolaronState(amps, fs, tracer, ((1,), (-1,))).save(tmp_path / "s.npz")
    back = fk.PolaronState.load(tmp_path / "s.npz")
    assert np.array_equal(back.amplitudes, amps)
    assert back.fs.dim == fs.dim and back.tracer == tracer and back.offsets == ((1,), (-1,))
