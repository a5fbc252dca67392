import numpy as np
import pytest
from hypothesis import given, strategies as st

from bosepolaron.hartree import (FlatProfile, build_initial_condensate, chemical_potential, check_conditions,
                                 evolve_hartree, hartree_energy, load_run, normalizer, save_run)
from bosepolaron.potentials import PotentialSpec, build_potential
from bosepolaron.spectral import GridSpec


@pytest.fixture(scope="module")
def setup():
    g = GridSpec(1, 64, 32.0)
    V = build_potential(PotentialSpec("gaussian", 0.5, 1.0), g)
    return g, V


@given(st.integers(1, 4), st.sampled_from([1, 2, 3]))
def test_profile_normalization(n_flat, d):
    # continuum normalization: eta(0) = 1 and ||eta||_2 = 1
    eta = FlatProfile(n_flat=n_flat)
    x = np.linspace(-6, 6, 241 if d < 3 else 81)
    h = x[1] - x[0]
    grids = np.meshgrid(*([x] * d), indexing="ij")
    val = eta(list(grids))
    assert eta([np.zeros(1)] * d)[0] == 1.0
    assert np.sum(val**2) * h**d == pytest.approx(1.0, rel=2e-3)


def test_initial_condensate_mass_and_box_guard(setup):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(), 4.0, g, V)
    assert st_.phi.norm() == pytest.approx(2.0, rel=1e-14)
    assert abs(normalizer(st_) - 1) < 0.05
    with pytest.raises(ValueError, match="box too small"):
        build_initial_condensate(FlatProfile(), 8.0, GridSpec(1, 64, 32.0), V)


def test_mu_of_constant_condensate_closed_form(setup):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(constant=True), 8.0, g, V)
    # |phi|^2 = Lam / L, so mu = (1/2) (Lam / L) * int V
    intV = 0.5 * np.sqrt(2 * np.pi)
    assert chemical_potential(st_.phi, V, 8.0) == pytest.approx(0.5 * 8.0 / 32.0 * intV, rel=1e-12)


def test_constant_condensate_phase(setup):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(constant=True), 8.0, g, V)
    run = evolve_hartree(st_, V, 0.5, 1e-2)
    exact = np.exp(-0.5j * st_.mu) * st_.phi.values
    assert np.max(np.abs(run.final.phi.values - exact)) < 1e-10


def test_mass_and_energy_conservation(setup):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(), 4.0, g, V)
    run = evolve_hartree(st_, V, 0.5, 5e-3, check_halving=True, halving_tol=1e-3)
    assert abs(run.final.phi.norm() / st_.phi.norm() - 1) < 1e-12
    E0 = hartree_energy(st_.phi, V)
    assert abs(hartree_energy(run.final.phi, V) - E0) < 1e-6 * abs(E0)
    # second order: halving dt again cuts the disagreement by about 4
    finer = evolve_hartree(st_, V, 0.5, 2.5e-3, check_halving=True, halving_tol=1e-3)
    assert 3.5 < run.halving_error / finer.halving_error < 4.5


def test_dt_must_divide_t_final(setup):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(), 4.0, g, V)
    with pytest.raises(ValueError):
        evolve_hartree(st_, V, 0.5, 0.3)


def test_run_roundtrip(setup, tmp_path):
    g, V = setup
    st_ = build_initial_condensate(FlatProfile(), 4.0, g, V)
    run = evolve_hartree(st_, V, 0.1, 1e-2, save_every=5)
    save_run(run, tmp_path / "run")
    back = load_run(tmp_path / "run")
    assert back.Lam == run.Lam and back.dt == run.dt
    assert np.array_equal(back.times, run.times) and np.array_equal(back.mus, run.mus)
    assert sorted(back.snapshots) == sorted(run.snapshots)
    for t in run.snapshots:
        assert np.array_equal(back.snapshots[t].values, run.snapshots[t].values)
    assert back.mu_integral(0.1) == run.mu_integral(0.1)


def test_flatness_report_flags_tilt(setup):
    g, V = setup
    flat = build_initial_condensate(FlatProfile(n_flat=2), 4.0, g, V)
    tilted = build_initial_condensate(FlatProfile(n_flat=2, tilt=0.5), 4.0, g, V)
    r_flat = check_conditions(flat, 2, 0.2)
    r_tilt = check_conditions(tilted, 2, 0.2)
    first = lambda rep: next(r for r in rep["rows"] if r["beta"] == (1,))["flat_ratio"]
    assert first(r_tilt) > 100 * max(first(r_flat), 1e-12)
