"""Experiment configs, sweep orchestration and tabular output.

Every experiment kind is a pair of functions: one lists the sweep points of a
config, the other evaluates a single point into table rows. Points are
independent, so they can go to a process pool; rows are sorted before
writing, which keeps the CSV byte-identical across thread counts.
"""

from __future__ import annotations

import configparser
import csv
import io
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .fitting import fit_slope
from .spectral import GridSpec

SCHEMA_VERSION = 1

KINDS = (
    "check-identities",
    "hartree-study",
    "bogoliubov-study",
    "z0-study",
    "bf-convergence",
    "infinite-volume-study",
    "tracer-localization",
    "polaron-dispersion",
    "excitation-growth",
)


# --- config -------------------------------------------------------------------------------------

@dataclass
class GridConfig:
    """Box rule. L = box_factor * Lam^(1/d) unless L > 0; M = 2^ceil(log2(L/h)) unless M > 0."""

    d: int = 1
    M: int = 0
    L: float = 0.0
    box_factor: float = 8.0
    h: float = 0.5

    def for_lam(self, Lam: float) -> GridSpec:
        L = self.L if self.L > 0 else self.box_factor * Lam ** (1.0 / self.d)
        if self.M > 0:
            M = self.M
        else:
            M = 1 << int(np.ceil(np.log2(L / self.h - 1e-9)))
        return GridSpec(self.d, M, L)


@dataclass
class PotentialConfig:
    V_kind: str = "gaussian"
    V_amplitude: float = 1.0
    V_width: float = 1.0
    W_kind: str = "gaussian"
    W_amplitude: float = 0.5
    W_width: float = 1.0


@dataclass
class ProfileConfig:
    n_flat: int = 2
    tilt: float = 0.0
    constant: bool = False


@dataclass
class SweepConfig:
    lams: list = field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0])
    rhos: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    times: list = field(default_factory=lambda: [0.5, 1.0])
    eps: float = 0.1
    s: float = 0.2
    n_max: list = field(default_factory=lambda: [1, 2, 3, 4])
    p_cut: list = field(default_factory=lambda: [1.0, 2.0])
    momenta: list = field(default_factory=lambda: [0.0])
    grids: list = field(default_factory=list)


@dataclass
class IntegratorConfig:
    t_final: float = 1.0
    dt_hartree: float = 5e-3
    dt_map: float = 1e-2
    dt_fock: float = 0.05
    krylov_dim: int = 30
    n_modes: int = 3
    n_x: int = 16
    L_x: float = 8.0
    mass: float = 1.0
    K_trunc: int = 6
    n_states: int = 20
    fd_delta: float = 1e-4


@dataclass
class ExperimentConfig:
    kind: str = "check-identities"
    seed: int = 0
    threads: int = 1
    out: str = "results"
    grid: GridConfig = field(default_factory=GridConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind={self.kind!r} is not one of {', '.join(KINDS)}")
        if self.threads < 1:
            raise ValueError(f"threads={self.threads} must be >= 1")

    # serialization ---------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keys such as M and L are case sensitive
        cp["experiment"] = {k: _fmt(getattr(self, k)) for k in ("kind", "seed", "threads", "out")}
        for name in ("grid", "potential", "profile", "sweep", "integrator"):
            cp[name] = {k: _fmt(v) for k, v in asdict(getattr(self, name)).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keys such as M and L are case sensitive
        cp.read_string(text)
        top = cp["experiment"] if cp.has_section("experiment") else {}
        kind = top.get("kind", "check-identities")
        base = default_config(kind)
        kw = {}
        for name in ("seed", "threads"):
            kw[name] = int(top[name]) if name in top else getattr(base, name)
        kw["out"] = top.get("out", base.out)
        for name in ("grid", "potential", "profile", "sweep", "integrator"):
            sub = getattr(base, name)
            if cp.has_section(name):
                known = {f.name: f for f in fields(sub)}
                for key, raw in cp[name].items():
                    if key not in known:
                        raise ValueError(f"unknown key {key!r} in section [{name}]")
                    setattr(sub, key, _parse(raw, getattr(sub, key)))
            kw[name] = sub
        return cls(kind=kind, **kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse(raw: str, like):
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, list):
        if not raw:
            return []
        items = [x.strip() for x in raw.split(",")]
        if like and isinstance(like[0], int) and not isinstance(like[0], bool):
            return [int(x) for x in items]
        if like and isinstance(like[0], str):
            return items
        try:
            return [float(x) for x in items]
        except ValueError:
            return items
    return raw


def default_config(kind: str) -> ExperimentConfig:
    """Per-kind defaults; these are the settings used by the acceptance suite."""
    c = ExperimentConfig(kind=kind)
    g, p, pr, sw, it = c.grid, c.potential, c.profile, c.sweep, c.integrator
    if kind == "hartree-study":
        g.d, g.M, g.box_factor = 3, 32, 8.0
        p.V_amplitude, p.V_width = 0.01, 2.0
        p.W_width = 2.0
        pr.n_flat = 1
        sw.times = [0.5, 1.0]
    elif kind == "bogoliubov-study":
        sw.grids = ["1:32:16.0", "1:64:32.0", "1:128:64.0"]
        sw.times = [0.5, 1.0, 1.5, 2.0]
        it.t_final, it.dt_map, it.dt_hartree = 2.0, 1e-3, 5e-4
        p.V_amplitude = 0.5
        sw.lams = [1.0]
    elif kind == "z0-study":
        g.box_factor = 8.0
    elif kind == "bf-convergence":
        g.d, g.M, g.L = 1, 8, 8.0
        p.V_amplitude, p.W_amplitude = 0.8, 0.6
        sw.lams = [1.0]
        it.t_final, it.dt_fock, it.n_x, it.L_x = 0.5, 1e-2, 8, 8.0
    elif kind == "infinite-volume-study":
        p.V_amplitude = 0.5
        sw.times = [0.5, 1.0]
    elif kind == "tracer-localization":
        g.box_factor = 4.0
        pr.constant = True
        p.V_amplitude, p.W_amplitude = 0.4, 0.25
        sw.lams = [4.0, 8.0]
        sw.times = [0.25, 0.5, 0.75, 1.0]
        sw.n_max = [3]
        sw.p_cut = [1.5]
        it.dt_hartree, it.dt_map = 2.5e-3, 5e-3
    elif kind == "polaron-dispersion":
        g.M, g.L = 64, 32.0
        p.V_amplitude, p.W_amplitude = 0.5, 0.05
        sw.momenta = [0.0, 0.25, 0.5]
        sw.n_max = [1, 2, 3, 4]
        sw.p_cut = [1.0, 2.0]
    elif kind == "excitation-growth":
        g.box_factor = 4.0
        pr.constant = True
        p.V_amplitude = 1.0
        sw.n_max = [8]
        sw.p_cut = [3.0]
    return c


# --- results --------------------------------------------------------------------------------------

@dataclass
class SweepResult:
    kind: str
    rows: list
    slopes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        buf.write(f"# schema: bosepolaron/{self.kind}/v{SCHEMA_VERSION} columns={';'.join(cols)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_cell(r.get(k, "")) for k in cols])
        return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _sort_key(row: dict):
    key = []
    for k in ("check", "grid", "frame", "Lam", "rho", "P", "p_cut", "N_max", "t", "test"):
        if k in row:
            v = row[k]
            key.append((0, float(v)) if isinstance(v, (int, float, np.integer, np.floating)) else (1, str(v)))
    return tuple(key)


# --- shared builders --------------------------------------------------------------------------------

def _potentials(cfg: ExperimentConfig, g: GridSpec):
    from .potentials import PotentialSpec, build_potential

    p = cfg.potential
    V = build_potential(PotentialSpec(p.V_kind, p.V_amplitude, p.V_width), g)
    W = build_potential(PotentialSpec(p.W_kind, p.W_amplitude, p.W_width), g)
    return V, W


def _profile(cfg: ExperimentConfig):
    from .hartree import FlatProfile

    pr = cfg.profile
    return FlatProfile(n_flat=pr.n_flat, tilt=pr.tilt, constant=pr.constant)


def _condensate(cfg: ExperimentConfig, Lam: float, g: GridSpec, V):
    from .hartree import build_initial_condensate

    return build_initial_condensate(_profile(cfg), Lam, g, V)


def _test_fields(g: GridSpec):
    from .bogoliubov import gaussian_vector

    return [gaussian_vector(g, c, w) for c, w in ((0.0, 1.0), (2.0, 1.5), (-3.0, 2.0))]


# --- check-identities ----------------------------------------------------------------------------------

IDENTITY_CHECKS = (
    "dispersion_d1", "dispersion_d3", "v_infty_unimodular", "v_infty_fd_order",
    "hartree_phase", "hartree_mass", "hartree_energy", "z0_defect",
    "dgamma_bruteforce", "squeeze_number", "conjugation_monotone", "decomposition",
)


def _check_points(cfg):
    return list(IDENTITY_CHECKS)


def _check_eval(cfg: ExperimentConfig, name: str) -> list[dict]:
    from . import bogoliubov as bg
    from . import fock as fk
    from .hartree import FlatProfile, build_initial_condensate, evolve_hartree, hartree_energy
    from .potentials import PotentialSpec, build_potential
    from .spectral import DoubledVector, symplectic_defect

    def row(value, tol, passed, note=""):
        return [{"check": name, "value": float(value), "tol": float(tol), "passed": bool(passed), "note": note}]

    if name.startswith("dispersion"):
        d = 1 if name.endswith("d1") else 3
        g = GridSpec(d, 16, 8.0)
        V = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
        disp = bg.build_dispersion(V)
        m = disp.mask
        w2 = np.abs(disp.omega[m] ** 2 - (disp.c[m] ** 2 - disp.b[m] ** 2)) / disp.omega[m] ** 2
        T = bg.diagonalizer_T(disp)
        D = (T @ bg.generator_infty(disp) @ T.bogoliubov_inverse()).mode_blocks()[m.ravel()]
        off = np.sqrt(np.sum(np.abs(D[:, 0, 1]) ** 2 + np.abs(D[:, 1, 0]) ** 2))
        diag = max(np.max(np.abs(D[:, 0, 0] - disp.omega[m])), np.max(np.abs(D[:, 1, 1] + disp.omega[m])))
        val = max(w2.max(), off, diag)
        return row(val, 1e-10, w2.max() <= 1e-12 and off <= 1e-10 and diag <= 1e-10,
                   f"omega2={w2.max():.2e} offdiag={off:.2e} diag={diag:.2e}")
    if name.startswith("v_infty"):
        g = GridSpec(1, 32, 16.0)
        V = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
        disp = bg.build_dispersion(V)
        A = bg.generator_infty(disp)
        m = disp.mask.ravel()
        if name == "v_infty_unimodular":
            worst = 0.0
            for t in (0.1, 0.7, 1.3, 2.0):
                blk = bg.v_infty_explicit(disp, t).mode_blocks()[m]
                worst = max(worst, np.max(np.abs(np.abs(blk[:, 0, 0]) ** 2 - np.abs(blk[:, 1, 0]) ** 2 - 1)))
            return row(worst, 1e-12, worst <= 1e-12)
        t = 0.7

        def resid(dl):
            Vp, Vm, V0 = (bg.v_infty_explicit(disp, s).mode_blocks()[m] for s in (t + dl, t - dl, t))
            Am = A.mode_blocks()[m]
            return np.linalg.norm(1j * (Vp - Vm) / (2 * dl) - Am @ V0)

        r1, r2 = resid(1e-2), resid(5e-3)
        ratio = r1 / r2
        return row(ratio, 0.2, abs(ratio - 4) < 0.2, f"residuals {r1:.2e} {r2:.2e}")
    if name.startswith("hartree"):
        g = GridSpec(1, 128, 64.0)
        V = build_potential(PotentialSpec("gaussian", 0.5, 1.0), g)
        if name == "hartree_phase":
            st = build_initial_condensate(FlatProfile(constant=True), 8.0, g, V)
            run = evolve_hartree(st, V, 1.0, 1e-3)
            exact = np.exp(-1j * st.mu * 1.0) * st.phi.values
            err = np.max(np.abs(run.final.phi.values - exact)) / np.max(np.abs(exact))
            return row(err, 1e-8, err <= 1e-8)
        st = build_initial_condensate(FlatProfile(), 8.0, g, V)
        runs = [evolve_hartree(st, V, 1.0, dt) for dt in (1e-3, 5e-4)]
        if name == "hartree_mass":
            drift = max(abs(r.final.phi.norm() / st.phi.norm() - 1) for r in runs)
            return row(drift, 1e-10, drift <= 1e-10)
        E0 = hartree_energy(st.phi, V)
        errs = [abs(hartree_energy(r.final.phi, V) - E0) / abs(E0) for r in runs]
        return row(max(errs), 1e-8, max(errs) <= 1e-8 and errs[1] < errs[0],
                   f"dt={errs[0]:.2e} dt/2={errs[1]:.2e}")
    if name == "z0_defect":
        g = GridSpec(1, 64, 32.0)
        V = build_potential(PotentialSpec("gaussian", 1.0, 1.0), g)
        st = build_initial_condensate(FlatProfile(), 4.0, g, V)
        Z = bg.build_Z0(st.phi, V, 4.0, 0.1)
        return row(Z.defect, 1e-8, Z.defect <= 1e-8 and Z.T_eigs.min() >= -1e-10)
    if name == "dgamma_bruteforce":
        rng = np.random.default_rng(cfg.seed)
        fs = fk.FockSpace(3, 3)
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        ops = [fs.annihilator(k).toarray() for k in range(3)]
        brute = sum(A[j, k] * ops[j].conj().T @ ops[k] for j in range(3) for k in range(3))
        err = np.max(np.abs(fk.second_quantize(A, fs).dense() - brute))
        return row(err, 1e-12, err <= 1e-12)
    if name == "squeeze_number":
        fs = fk.FockSpace(1, 20)
        res = fk.implement_bogoliubov_unitary(fk.squeeze_matrix(0.1), fs.vacuum(), fs)
        err = abs(fk.number_expectation(res.state, fs) - np.sinh(0.1) ** 2)
        return row(err, 1e-6, err <= 1e-6, f"leakage={res.leakage:.1e}")
    if name == "conjugation_monotone":
        r = 0.3
        Z = fk.squeeze_matrix(r, 2, 0)
        Z = Z @ fk.squeeze_matrix(0.2, 2, 1)
        f = np.array([0.8, 0.6], dtype=complex)
        vals = []
        for N in (4, 6, 8, 10):
            fs = fk.FockSpace(2, N)
            psi = fs.vacuum()
            vals.append(fk.conjugation_residual(Z, f, psi, fs))
        mono = all(b < a for a, b in zip(vals, vals[1:]))
        return row(vals[-1], 0.0, mono, " ".join(f"{v:.2e}" for v in vals))
    if name == "decomposition":
        from .oracle import ScalingParams, verify_decomposition

        model = _galerkin_model(cfg, n_modes=6, V_amp=0.8, W_amp=0.6, n_x=8)
        par = ScalingParams(rho=3.0, Lam=1.0)
        csol = model.evolve_hartree(model.condensate(1.0), 1.0, 0.5)
        chk = verify_decomposition(0.3, par, model, csol, n_states=20, delta=1e-4, seed=cfg.seed)
        return row(chk.max_residual, 1e-5, chk.max_residual <= 1e-5, f"N={par.N}")
    raise ValueError(f"unknown check {name!r}")


def _galerkin_model(cfg: ExperimentConfig, n_modes: int, V_amp: float, W_amp: float, n_x: int, L: float = 8.0):
    """Plane-wave model on an 8-point box; the Galerkin algebra is exact, so no resolution guard applies."""
    from .fock import TracerGrid
    from .oracle import GalerkinModel
    from .spectral import Field

    g = GridSpec(1, 8, L)
    V = Field(g, (V_amp * np.exp(-g.r2() / 2)).astype(complex))
    W = Field(g, (W_amp * np.exp(-g.r2() / 2)).astype(complex))
    return GalerkinModel(g, n_modes, V, W, TracerGrid(n_x, L))


# --- hartree-study -----------------------------------------------------------------------------------

def _lam_points(cfg):
    return [float(x) for x in cfg.sweep.lams]


def _hartree_eval(cfg: ExperimentConfig, Lam: float) -> list[dict]:
    from .hartree import Localizer, evolve_hartree, local_stability_diagnostics, propagation_diagnostics

    g = cfg.grid.for_lam(Lam)
    V, W = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    it = cfg.integrator
    every = _save_every(cfg.sweep.times, it.dt_hartree)
    run = evolve_hartree(st, V, it.t_final, it.dt_hartree, save_every=every)
    rows = propagation_diagnostics({Lam: run}, cfg.sweep.times)["rows"]
    loc = local_stability_diagnostics(run, Localizer(cfg.sweep.s, 2, Lam), W, 1.0, cfg.sweep.times)
    mass = abs(run.final.phi.norm() / st.phi.norm() - 1)
    for r, lr in zip(rows, loc):
        r.update({k: lr[k] for k in ("loc_dens_1w2", "loc_force_inf", "force_inf")})
        r["mass_drift"] = mass
        r["M"] = g.M
        r["L"] = g.L
    return rows


def _save_every(times, dt) -> int:
    steps = [int(round(t / dt)) for t in times]
    every = int(np.gcd.reduce(steps)) if steps else 1
    return max(1, every)


def _hartree_final(cfg, rows):
    return _slopes(rows, ("diff_L2", "ddiff_L2", "dens_1w2", "loc_dens_1w2", "loc_force_inf"), "Lam", ("t",))


def _slopes(rows, keys, xkey, group) -> dict:
    out = {}
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group), []).append(r)
    for gk, rs in groups.items():
        xs = sorted({r[xkey] for r in rs})
        if len(xs) < 3:
            continue
        for key in keys:
            pts = [(r[xkey], r[key]) for r in rs if key in r]
            if len(pts) >= 3 and all(y > 0 for _, y in pts):
                s, e = fit_slope(pts)
                label = key + "".join(f"@{k}={v}" for k, v in zip(group, gk))
                out[label] = (s, e)
    return out


# --- bogoliubov-study -------------------------------------------------------------------------------------

def _grid_points(cfg):
    return list(cfg.sweep.grids) or [f"{cfg.grid.d}:{cfg.grid.M or 32}:{cfg.grid.L or 16.0}"]


def _bogoliubov_eval(cfg: ExperimentConfig, spec: str) -> list[dict]:
    from .bogoliubov import evolve_bogoliubov_map, hartree_provider
    from .hartree import evolve_hartree

    d, M, L = spec.split(":")
    g = GridSpec(int(d), int(M), float(L))
    Lam = float(cfg.sweep.lams[0])
    V, _ = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    it = cfg.integrator
    run = evolve_hartree(st, V, it.t_final, it.dt_map / 2)
    prov = hartree_provider(run, V, dense=True)
    path = evolve_bogoliubov_map(prov, it.t_final, it.dt_map, sample_times=cfg.sweep.times)
    return [{"grid": spec, "Lam": Lam, "t": t, "defect": dfc} for t, dfc in zip(path.times, path.defects) if t > 0]


# --- z0-study --------------------------------------------------------------------------------------------

def _z0_eval(cfg: ExperimentConfig, Lam: float) -> list[dict]:
    from .bogoliubov import build_Z0, build_dispersion, z0_convergence_diagnostics
    from .spectral import DoubledVector

    g = cfg.grid.for_lam(Lam)
    V, _ = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    Z = build_Z0(st.phi, V, Lam, cfg.sweep.eps)
    disp = build_dispersion(V)
    tests = [DoubledVector(f.values, f.values.conj(), g) for f in _test_fields(g)]
    diag = z0_convergence_diagnostics(Z.op, disp, tests, shifts=(0, 1, 2, 4))
    rows = []
    for r in diag:
        rows.append({"Lam": Lam, "test": r["test"], "eps": cfg.sweep.eps, "defect": Z.defect,
                     "T_min": float(Z.T_eigs.min()), "T_max": float(Z.T_eigs.max()), "op_norm": Z.op_norm,
                     "hs_norm": Z.hs_norm, "convergence": r["convergence"], "commutator": r["commutator"]})
    return rows


def _z0_final(cfg, rows):
    first = [r for r in rows if r["test"] == 0]
    out = _slopes(first, ("hs_norm",), "Lam", ("eps",))
    out.update(_slopes(rows, ("convergence", "commutator"), "Lam", ("test",)))
    return out


# --- bf-convergence ------------------------------------------------------------------------------------------

def _rho_points(cfg):
    return [float(x) for x in cfg.sweep.rhos]


def _bf_eval(cfg: ExperimentConfig, rho: float) -> list[dict]:
    from .oracle import bf_convergence_experiment

    p, it = cfg.potential, cfg.integrator
    model = _galerkin_model(cfg, it.n_modes, p.V_amplitude, p.W_amplitude, it.n_x, cfg.grid.L or 8.0)
    out = bf_convergence_experiment([rho], float(cfg.sweep.lams[0]), model, it.t_final, dt=it.dt_fock,
                                    K_trunc=it.K_trunc)
    return out["rows"]


def _bf_final(cfg, rows):
    return _slopes(rows, ("err_int", "err_bf"), "rho", ("Lam",))


# --- infinite-volume-study -------------------------------------------------------------------------------------

def _infty_eval(cfg: ExperimentConfig, Lam: float) -> list[dict]:
    from .bogoliubov import convergence_diagnostics_infty
    from .hartree import evolve_hartree

    g = cfg.grid.for_lam(Lam)
    V, _ = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    it = cfg.integrator
    run = evolve_hartree(st, V, max(cfg.sweep.times), it.dt_map / 2)
    return convergence_diagnostics_infty(run, V, _profile(cfg), cfg.sweep.times, _test_fields(g), it.dt_map,
                                         gamma_params={"delta": 0.1, "s": cfg.sweep.s})


INFTY_KEYS = ("mu_dev", "Q_dev", "phi_dev", "K1_dev", "K2_dev", "V_dev")


def _infty_final(cfg, rows):
    return _slopes(rows, INFTY_KEYS, "Lam", ("t", "test"))


# --- tracer-localization ----------------------------------------------------------------------------------------

def _tracer_eval(cfg: ExperimentConfig, Lam: float) -> list[dict]:
    from .bogoliubov import build_Z0, evolve_bogoliubov_map, hartree_provider, transformed_vectors
    from .fock import (FockSpace, TracerGrid, box_modes, build_HBF, gaussian_tracer, number_expectation,
                       time_evolve, tracer_moments, transformed_BF_generator)
    from .hartree import evolve_hartree

    it, sw = cfg.integrator, cfg.sweep
    g = cfg.grid.for_lam(Lam)
    V, W = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    T = it.t_final
    run = evolve_hartree(st, V, T, it.dt_hartree)
    prov = hartree_provider(run, V, dense=True)
    nsteps = int(round(T / it.dt_fock))
    mids = [(j + 0.5) * it.dt_fock for j in range(nsteps)]
    path = evolve_bogoliubov_map(prov, T, it.dt_map, sample_times=mids)
    maps = {round(t, 10): op for t, op in zip(path.times, path.ops)}
    Z0 = build_Z0(st.phi, V, Lam, sw.eps).op
    modes = box_modes(g, float(sw.p_cut[0]))
    fs = FockSpace(modes.n_modes, int(sw.n_max[0]))
    tracer = TracerGrid(it.n_x, it.L_x, it.mass)
    psi0 = gaussian_tracer(tracer, fs, 1.0)
    want = [round(t, 10) for t in sw.times]

    def observe(t, psi):
        if round(t, 10) not in want:
            return {}
        mom = tracer_moments(psi, tracer, fs)
        return {"N": number_expectation(psi, fs, tracer.n_x), "x2": mom["x2M"]}

    def H_plain(t):
        return build_HBF("finite", modes, tracer, fs, A=prov(t), phi=run.at(t), W=W, Lam=Lam)

    def H_tilde(t):
        F = transformed_vectors(Z0, maps[round(t, 10)], run.at(t), W, Lam, tracer.shifts(g))
        n = g.size
        return transformed_BF_generator(tracer, fs, modes, modes.coefficients(F[:n].T),
                                        modes.coefficients(F[n:].T.conj()))

    rows = []
    for frame, prov_H in (("plain", H_plain), ("transformed", H_tilde)):
        tr = time_evolve(prov_H, psi0, T, it.dt_fock, it.krylov_dim, observe=observe)
        for t, ob in zip(tr.times, tr.observables):
            if ob:
                rows.append({"frame": frame, "Lam": Lam, "t": float(t), "n_modes": modes.n_modes,
                             "N_max": fs.N_max, "N": ob["N"], "x2": ob["x2"]})
    return rows


# --- polaron-dispersion ------------------------------------------------------------------------------------------

def _polaron_points(cfg):
    return [(float(P), float(pc), int(n)) for P in cfg.sweep.momenta for pc in cfg.sweep.p_cut
            for n in cfg.sweep.n_max]


def _polaron_eval(cfg: ExperimentConfig, point) -> list[dict]:
    from .bogoliubov import build_dispersion
    from .fock import box_modes, coupling_weights, mode_values, perturbative_energy, polaron_fiber_energy

    P, pc, N_max = point
    g = cfg.grid.for_lam(1.0)
    V, W = _potentials(cfg, g)
    disp = build_dispersion(V)
    modes = box_modes(g, pc)
    om = mode_values(disp.omega, modes)
    pk = modes.momenta()[:, 0]
    gk = coupling_weights(disp, W, modes)
    m = cfg.integrator.mass
    E = polaron_fiber_energy(P, om, pk, gk, N_max, m)
    E_free = polaron_fiber_energy(P, om, pk, 0 * gk, N_max, m)
    row = {"P": P, "p_cut": pc, "N_max": N_max, "n_modes": modes.n_modes, "E": E, "E_free": E_free,
           "E_free_exact": P**2 / (2 * m)}
    if P == 0.0:
        row["E_pert"] = perturbative_energy(om, pk, gk, m)
    return [row]


# --- excitation-growth ----------------------------------------------------------------------------------------------

def _growth_eval(cfg: ExperimentConfig, Lam: float) -> list[dict]:
    from .bogoliubov import generator_finite, hartree_provider
    from .fock import box_modes
    from .hartree import evolve_hartree
    from .oracle import excitation_growth_experiment

    g = cfg.grid.for_lam(Lam)
    V, _ = _potentials(cfg, g)
    st = _condensate(cfg, Lam, g, V)
    it = cfg.integrator
    if cfg.profile.constant:
        # the rotated-frame generator of a constant condensate is time independent
        A = generator_finite(st.phi, V, Lam, st.mu, dense=True)
        provider = lambda t, A=A: A
    else:
        run = evolve_hartree(st, V, it.t_final, it.dt_fock / 2)
        provider = hartree_provider(run, V, dense=True)
    case = {"Lam": Lam, "provider": provider, "modes": box_modes(g, float(cfg.sweep.p_cut[0])),
            "N_max": int(cfg.sweep.n_max[0]), "split_pairs": cfg.profile.constant}
    return excitation_growth_experiment([case], it.t_final, it.dt_fock)["rows"]


def _growth_final(cfg, rows):
    return _slopes(rows, ("N", "N_map"), "Lam", ("t",))


# --- registry and driver ----------------------------------------------------------------------------------------------

_REGISTRY = {
    "check-identities": (_check_points, _check_eval, None),
    "hartree-study": (_lam_points, _hartree_eval, _hartree_final),
    "bogoliubov-study": (_grid_points, _bogoliubov_eval, None),
    "z0-study": (_lam_points, _z0_eval, _z0_final),
    "bf-convergence": (_rho_points, _bf_eval, _bf_final),
    "infinite-volume-study": (_lam_points, _infty_eval, _infty_final),
    "tracer-localization": (_lam_points, _tracer_eval, None),
    "polaron-dispersion": (_polaron_points, _polaron_eval, None),
    "excitation-growth": (_lam_points, _growth_eval, _growth_final),
}


def _evaluate(args):
    cfg, point = args
    _, ev, _ = _REGISTRY[cfg.kind]
    np.random.seed(cfg.seed)
    return ev(cfg, point)


def run(cfg: ExperimentConfig, out: str | Path | None = None, write: bool = True) -> SweepResult:
    """Evaluate every sweep point of ``cfg`` and (optionally) write CSV, manifest and plot data."""
    points_fn, _, final_fn = _REGISTRY[cfg.kind]
    points = points_fn(cfg)
    t0 = time.time()
    jobs = [(cfg, p) for p in points]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            chunks = list(ex.map(_evaluate, jobs))
    else:
        chunks = [_evaluate(j) for j in jobs]
    rows = sorted((r for ch in chunks for r in ch), key=_sort_key)
    slopes = final_fn(cfg, rows) if final_fn else {}
    res = SweepResult(cfg.kind, rows, slopes, {"points": len(points), "elapsed_s": time.time() - t0})
    if write:
        write_outputs(res, cfg, Path(out or cfg.out))
    return res


def write_outputs(res: SweepResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.kind.replace("-", "_")
    (out / f"{stem}.csv").write_text(res.to_csv())
    lines = [
        f"# run manifest for {cfg.kind}",
        f"package_version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"schema = bosepolaron/{cfg.kind}/v{SCHEMA_VERSION}",
        f"rows = {len(res.rows)}",
    ]
    for k, (s, e) in sorted(res.slopes.items()):
        lines.append(f"slope[{k}] = {s!r} +- {e!r}")
    manifest = "\n".join(lines) + "\n\n" + cfg.to_ini()
    (out / f"{stem}.manifest.txt").write_text(manifest)
    _write_plot_data(res, out / f"{stem}_plots")


_PLOT_X = {
    "hartree-study": ("Lam", ("diff_L2", "ddiff_L2", "dens_1w2"), ("t",)),
    "bogoliubov-study": ("t", ("defect",), ("grid",)),
    "z0-study": ("Lam", ("hs_norm", "convergence"), ("test",)),
    "bf-convergence": ("rho", ("err_int", "err_bf"), ("Lam",)),
    "infinite-volume-study": ("Lam", INFTY_KEYS, ("t", "test")),
    "tracer-localization": ("Lam", ("N", "x2"), ("frame", "t")),
    "polaron-dispersion": ("N_max", ("E",), ("P", "p_cut")),
    "excitation-growth": ("Lam", ("N", "N_map"), ("t",)),
}


def _write_plot_data(res: SweepResult, directory: Path) -> None:
    spec = _PLOT_X.get(res.kind)
    if spec is None:
        return
    xkey, ykeys, group = spec
    directory.mkdir(parents=True, exist_ok=True)
    groups: dict = {}
    for r in res.rows:
        groups.setdefault(tuple(r.get(k) for k in group), []).append(r)
    for gk, rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        tag = "_".join(f"{k}{v}" for k, v in zip(group, gk)).replace(":", "-").replace("/", "-")
        for y in ykeys:
            pts = sorted((r[xkey], r[y]) for r in rs if y in r)
            if not pts:
                continue
            body = "".join(f"{_cell(x)} {_cell(v)}\n" for x, v in pts)
            (directory / f"{y}_{tag}.dat").write_text(f"# x={xkey} y={y}\n" + body)
