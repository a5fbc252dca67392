import numpy as np
import pytest
from hypothesis import given, strategies as st

from bosepolaron.potentials import (PotentialSpec, assumption_report, build_potential, integral,
                                    spectral_derivative)
from bosepolaron.spectral import GridSpec, fourier


@given(st.floats(0.1, 3.0), st.floats(1.0, 4.0))
def test_gaussian_V_is_positive_type_and_even(amp, width):
    g = GridSpec(1, 64, 32.0)
    V = build_potential(PotentialSpec("gaussian", amp, width), g)
    assert fourier(V).values.real.min() >= -1e-12 * amp
    assert np.allclose(V.values.ravel()[g.reflect_index()], V.values.ravel())


def test_gaussian_integral_matches_closed_form():
    g = GridSpec(1, 64, 32.0)
    V = build_potential(PotentialSpec("gaussian", 0.7, 1.2), g)
    assert integral(V).real == pytest.approx(0.7 * np.sqrt(2 * np.pi) * 1.2, rel=1e-12)


def test_resolution_guards():
    g = GridSpec(1, 16, 16.0)
    with pytest.raises(ValueError, match="unresolved"):
        build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
    with pytest.raises(ValueError, match="too large"):
        build_potential(PotentialSpec("gaussian", 1.0, 3.0), GridSpec(1, 64, 16.0))
    with pytest.raises(ValueError):
        PotentialSpec("square")


def test_bump_is_compact():
    g = GridSpec(1, 64, 32.0)
    W = build_potential(PotentialSpec("cosine-bump", 1.0, 2.0, role="W"), g)
    x = g.axis()
    assert np.all(W.values[np.abs(x) >= 2.0] == 0)
    assert W.values[g.M // 2] == 1.0


def test_spectral_derivative_of_gaussian():
    g = GridSpec(1, 128, 32.0)
    V = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
    x = g.axis()
    assert np.allclose(spectral_derivative(V, (1,)).values.real, -x * np.exp(-x**2 / 2), atol=1e-10)


def test_assumption_report_keys_and_signs():
    g = GridSpec(1, 64, 32.0)
    V = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
    W = build_potential(PotentialSpec("gaussian", 0.5, 1.0, role="W"), g)
    rep = assumption_report(V, W, k_max=2, M_reg=1)
    assert rep["Vhat_L1"] > 0 and rep["W_H2"] > 0
    assert all(np.isfinite(v) and v >= 0 for v in rep.values())
    assert rep["yk_V_L1[k=0]"] == pytest.approx(np.sqrt(2 * np.pi), rel=1e-10)
