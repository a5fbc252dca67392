import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, strategies as st

from bosepolaron.cli import main
from bosepolaron.experiments import KINDS, ExperimentConfig, GridConfig, default_config, run


def _tiny_polaron(threads=1):
    cfg = default_config("polaron-dispersion")
    cfg.grid.M, cfg.grid.L = 32, 16.0
    cfg.sweep.momenta = [0.0, 0.5]
    cfg.sweep.n_max = [1, 2]
    cfg.sweep.p_cut = [1.0]
    cfg.threads = threads
    return cfg


@pytest.mark.parametrize("kind", KINDS)
def test_ini_roundtrip_of_defaults(kind):
    cfg = default_config(kind)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


@given(st.integers(0, 10**6), st.floats(0.01, 5.0), st.lists(st.floats(1.0, 100.0), min_size=1, max_size=4),
       st.booleans())
def test_ini_roundtrip_of_edits(seed, amp, lams, constant):
    cfg = default_config("z0-study")
    cfg.seed, cfg.potential.V_amplitude, cfg.sweep.lams, cfg.profile.constant = seed, amp, lams, constant
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_ini_rejects_unknown_keys_and_kinds():
    with pytest.raises(ValueError, match="unknown key"):
        ExperimentConfig.from_ini("[experiment]\nkind = z0-study\n[grid]\nbogus = 1\n")
    with pytest.raises(ValueError):
        ExperimentConfig.from_ini("[experiment]\nkind = nope\n")
    with pytest.raises(ValueError):
        ExperimentConfig(threads=0)


def test_partial_ini_takes_kind_defaults():
    cfg = ExperimentConfig.from_ini("[experiment]\nkind = tracer-localization\n[sweep]\nlams = 2.0, 4.0\n")
    ref = default_config("tracer-localization")
    assert cfg.sweep.lams == [2.0, 4.0] and cfg.potential == ref.potential


def test_box_rule():
    g = GridConfig(d=1, box_factor=8.0, h=0.5).for_lam(8.0)
    assert g.L == 64.0 and g.M == 128
    g3 = GridConfig(d=3, M=32, box_factor=8.0).for_lam(8.0)
    assert g3.L == pytest.approx(16.0) and g3.M == 32


def test_csv_is_deterministic_across_runs_and_threads(tmp_path):
    a = run(_tiny_polaron(), tmp_path / "a")
    b = run(_tiny_polaron(), tmp_path / "b")
    c = run(_tiny_polaron(threads=2), tmp_path / "c")
    text = (tmp_path / "a" / "polaron_dispersion.csv").read_text()
    assert text == (tmp_path / "b" / "polaron_dispersion.csv").read_text()
    assert text == (tmp_path / "c" / "polaron_dispersion.csv").read_text()
    assert text.startswith("# schema: bosepolaron/polaron-dispersion/v1 columns=P;p_cut;N_max;")
    assert len(a.rows) == 4 and a.rows == b.rows == c.rows
    manifest = (tmp_path / "a" / "polaron_dispersion.manifest.txt").read_text()
    assert "numpy = " in manifest and "[experiment]" in manifest
    assert any((tmp_path / "a" / "polaron_dispersion_plots").iterdir())


def test_single_point_sweep_has_no_fit():
    cfg = default_config("bf-convergence")
    cfg.sweep.rhos = [4.0]
    cfg.integrator.n_modes, cfg.integrator.n_x = 2, 4
    res = run(cfg, write=False)
    assert len(res.rows) == 1 and res.slopes == {}
    assert np.isfinite(res.rows[0]["err_int"])


def test_cli_dump_config_and_run(tmp_path):
    runner = CliRunner()
    r = runner.invoke(main, ["z0-study", "--dump-config", "--seed", "7"])
    assert r.exit_code == 0 and "seed = 7" in r.output
    ini = tmp_path / "cfg.ini"
    ini.write_text(_tiny_polaron().to_ini())
    r = runner.invoke(main, ["polaron-dispersion", "--config", str(ini), "--out", str(tmp_path / "o")])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "o" / "polaron_dispersion.csv").exists()


def test_cli_errors(tmp_path):
    runner = CliRunner()
    ini = tmp_path / "cfg.ini"
    ini.write_text(_tiny_polaron().to_ini())
    r = runner.invoke(main, ["z0-study", "--config", str(ini)])
    assert r.exit_code != 0 and "does not match" in r.output
    r = runner.invoke(main, ["z0-study", "--threads", "0", "--dump-config"])
    assert r.exit_code != 0
    r = runner.invoke(main, ["--help"])
    assert all(k in r.output for k in KINDS)
