import numpy as np
import pytest
from hypothesis import given, strategies as st

from bosepolaron.fock import FockSpace, TracerGrid, box_modes
from bosepolaron.oracle import (ExcitationMap, GalerkinModel, ScalingParams, completed_basis, pair_groups,
                                plane_wave_offsets, quasi_free_number)
from bosepolaron.spectral import Field, GridSpec

N_SINGLE_MODE = 0.06821679390467317  # same closed form as in the Fock tests


def _model(n=4, n_x=4):
    g = GridSpec(1, 8, 8.0)
    V = Field(g, (0.8 * np.exp(-g.r2() / 2)).astype(complex))
    W = Field(g, (0.6 * np.exp(-g.r2() / 2)).astype(complex))
    return GalerkinModel(g, n, V, W, TracerGrid(n_x, 8.0))


def test_scaling_params():
    p = ScalingParams(rho=4.0, Lam=2.0)
    assert p.N == 8 and p.rho_eff == 4.0
    assert p.alpha == pytest.approx(np.log(2) / np.log(4))
    with pytest.raises(ValueError):
        ScalingParams(rho=0.5)


def test_plane_wave_offsets():
    assert plane_wave_offsets(5) == [(0,), (1,), (-1,), (2,), (-2,)]


@given(st.integers(0, 2**31 - 1))
def test_completed_basis_is_unitary(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    u /= np.linalg.norm(u)
    B = completed_basis(u)
    assert np.allclose(B.conj().T @ B, np.eye(5), atol=1e-12)
    assert np.allclose(B[:, 0], u)


def test_excitation_map_is_isometric_and_sends_condensate_to_vacuum():
    model = _model()
    Lam, N = 1.0, 3
    sec = FockSpace(model.n, N, exact=True)
    out = FockSpace(model.n, N)
    c = model.condensate(Lam)
    U = ExcitationMap(sec, out).matrix(c, Lam)
    assert np.allclose(U.conj().T @ U, np.eye(sec.dim), atol=1e-10)
    # (a*(u0))^N |0> / sqrt(N!) maps to the excitation vacuum
    cond = ExcitationMap(sec, FockSpace(model.n, 0)).matrix(c, Lam).conj().T[:, 0]
    assert np.abs(np.vdot(out.vacuum(), U @ cond)) == pytest.approx(1.0, abs=1e-10)


def test_galerkin_hartree_conserves_mass():
    model = _model()
    c0 = model.condensate(2.0)
    sol = model.evolve_hartree(c0, 2.0, 1.0)
    assert np.linalg.norm(sol(1.0)) ** 2 == pytest.approx(2.0, rel=1e-10)


def test_quasi_free_number_closed_form():
    mats = lambda t: (np.array([[1.0]]), np.array([[0.4]]))
    assert quasi_free_number(mats, 0.7, 0.01) == pytest.approx(N_SINGLE_MODE, rel=1e-12)


def test_pair_groups_detects_coupling():
    g = GridSpec(1, 16, 8.0)
    modes = box_modes(g, 1.6)
    n = modes.n_modes
    groups = pair_groups(np.eye(n), np.zeros((n, n)), modes)
    assert sorted(len(x) for x in groups) == [2] * (n // 2)
    H = np.eye(n)
    H[0, 1] = H[1, 0] = 0.3  # couples +k and +k' from different pairs
    if modes.offsets[0] != tuple(-c for c in modes.offsets[1]):
        with pytest.raises(ValueError):
            pair_groups(H, np.zeros((n, n)), modes)
    else:
        H[0, 2] = H[2, 0] = 0.3
        with pytest.raises(ValueError):
            pair_groups(H, np.zeros((n, n)), modes)
