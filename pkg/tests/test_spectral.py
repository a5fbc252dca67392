import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bosepolaron.spectral import (BlockOp, DoubledVector, Field, GridSpec, convolve, fourier, identity_op,
                                  load_blockop, load_field, load_matrix, lp_norm, mixed_norm, position_field,
                                  reflection, save_blockop, save_field, save_matrix, symplectic_defect,
                                  translation)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def cvec(n):
    return st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite)).map(
        lambda ab: ab[0] + 1j * ab[1])


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(4, 8, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 12, 1.0)
    with pytest.raises(ValueError):
        GridSpec(1, 8, 0.0)


def test_lattice_contains_origin_and_reflection_is_involution():
    g = GridSpec(2, 8, 4.0)
    assert g.axis()[g.M // 2] == 0.0
    r = g.reflect_index()
    assert np.array_equal(r[r], np.arange(g.size))
    x = g.coords()[0].ravel()
    # -L/2 is its own mirror image on the torus
    assert np.allclose(np.mod(x[r] + x + g.L / 2, g.L), g.L / 2)


def test_gaussian_transform_matches_continuum():
    g = GridSpec(1, 128, 32.0)
    f = position_field(g, np.exp(-g.r2() / 2))
    p = g.momentum_axis()
    assert np.max(np.abs(fourier(f).values - np.exp(-p**2 / 2))) < 1e-12


@given(cvec(16))
def test_fourier_roundtrip_and_parseval(v):
    g = GridSpec(1, 16, 5.0)
    f = Field(g, v)
    fh = fourier(f)
    assert np.allclose(fourier(fh, "inverse").values, f.values, atol=1e-10)
    assert np.isclose(fh.norm(), f.norm(), rtol=1e-10, atol=1e-12)


@given(cvec(8), cvec(8))
def test_convolution_matches_direct_sum(a, b):
    g = GridSpec(1, 8, 3.0)
    V, f = Field(g, a), Field(g, b)
    # lattice index 0 is x = -L/2, so shift the kernel to index the difference x_i - x_j
    V0 = np.roll(a, -g.M // 2)
    direct = np.array([sum(V0[(i - j) % 8] * b[j] for j in range(8)) for i in range(8)]) * g.h
    assert np.allclose(convolve(V, f).values, direct, atol=1e-9)


def test_transform_direction_checks():
    g = GridSpec(1, 8, 2.0)
    f = position_field(g, 1.0)
    with pytest.raises(ValueError):
        fourier(f, "inverse")
    with pytest.raises(ValueError):
        fourier(f, "sideways")


def test_norms():
    g = GridSpec(1, 8, 8.0)
    f = position_field(g, 2.0)
    assert np.isclose(lp_norm(f, 2), 2 * np.sqrt(8))
    assert lp_norm(f, np.inf) == 2.0
    assert mixed_norm(f, "1,2") == pytest.approx(lp_norm(f, 1) + lp_norm(f, 2))
    assert mixed_norm(f, "1∧2") == pytest.approx(min(lp_norm(f, 1), lp_norm(f, 2)))


def test_translation_and_reflection():
    g = GridSpec(1, 8, 8.0)
    v = np.arange(8.0) + 0j
    assert np.array_equal(translation(g, (1,))(v), np.roll(v, 1))
    assert np.array_equal(reflection(reflection(v, g), g), v)


def _random_symplectic_multiplier(g, rng):
    r = rng.uniform(-1, 1, g.shape)
    th = rng.uniform(0, 2 * np.pi, g.shape)
    # even symbols keep the 2x2 mode blocks in SU(1,1)
    r = 0.5 * (r + r.ravel()[g.reflect_index()].reshape(g.shape))
    th = 0.5 * (th + th.ravel()[g.reflect_index()].reshape(g.shape))
    return BlockOp(g, np.cosh(r) * np.exp(1j * th), np.sinh(r) + 0j)


@given(st.integers(0, 2**31 - 1))
def test_symplectic_group_closure(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(1, 8, 4.0)
    A, B = _random_symplectic_multiplier(g, rng), _random_symplectic_multiplier(g, rng)
    assert symplectic_defect(A) < 1e-12
    assert symplectic_defect(A @ B) < 1e-12
    I = (A @ A.bogoliubov_inverse()).dense()
    assert np.allclose(I, np.eye(2 * g.size), atol=1e-10)


@given(st.integers(0, 2**31 - 1))
def test_dense_and_multiplier_paths_agree(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(1, 8, 4.0)
    A, B = _random_symplectic_multiplier(g, rng), _random_symplectic_multiplier(g, rng)
    Ad = BlockOp(g, A.block_matrix("c"), A.block_matrix("b"))
    Bd = BlockOp(g, B.block_matrix("c"), B.block_matrix("b"))
    assert np.allclose((A @ B).dense(), (Ad @ Bd).dense(), atol=1e-10)
    v = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
    F = DoubledVector.from_function(Field(g, v))
    assert np.allclose(A.apply(F).stacked(), A.dense() @ F.stacked(), atol=1e-10)


def test_identity_and_S():
    g = GridSpec(1, 4, 1.0)
    assert np.array_equal(identity_op(g).dense(), np.eye(8))
    assert np.array_equal(identity_op(g, -1).dense(), np.diag([1.0] * 4 + [-1.0] * 4))


def test_field_roundtrip(tmp_path):
    g = GridSpec(2, 4, 3.0)
    f = Field(g, np.arange(16) * (1 + 2j))
    save_field(f, tmp_path / "f.plf")
    h = load_field(tmp_path / "f.plf")
    assert h.grid == g and h.space == f.space and np.array_equal(h.values, f.values)
    fh = fourier(f)
    save_field(fh, tmp_path / "fh.plf")
    assert load_field(tmp_path / "fh.plf").space == "momentum"


def test_matrix_roundtrip_and_tag_check(tmp_path):
    g = GridSpec(1, 4, 2.0)
    A = np.arange(16).reshape(4, 4) * (1 - 1j)
    save_matrix(g, A, tmp_path / "m.plf")
    g2, B = load_matrix(tmp_path / "m.plf")
    assert g2 == g and np.array_equal(A, B)
    with pytest.raises(ValueError):
        load_field(tmp_path / "m.plf")


def test_blockop_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    g = GridSpec(1, 4, 2.0)
    op = BlockOp(g, rng.standard_normal((4, 4)) + 0j, rng.standard_normal((4, 4)) * 1j, sign=-1)
    save_blockop(op, tmp_path / "op", provenance="unit", timestamp="0")
    back = load_blockop(tmp_path / "op")
    assert back.sign == -1 and back.meta["provenance"] == "unit"
    assert np.array_equal(back.dense(), op.dense())
