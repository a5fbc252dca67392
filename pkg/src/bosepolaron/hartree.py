"""Condensate profiles, Hartree evolution, the phase-only approximation and localized diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .fitting import fit_slope
from .potentials import multi_indices, spectral_derivative
from .spectral import (Field, GridSpec, convolve, fourier, load_field, lp_norm, mixed_norm, multiplier_apply,
                       save_field)


@dataclass(frozen=True)
class FlatProfile:
    """eta(y) = exp(-a |y|^{2n}) (1 + tilt * y_1), or eta = 1 on the torus.

    With tilt = 0 all derivatives of order 1..2n-1 vanish at the origin and
    ``a`` is fixed so that eta(0) = 1 and ||eta||_2 = 1 in the continuum.
    """

    n_flat: int = 2
    tilt: float = 0.0
    constant: bool = False

    def __post_init__(self):
        if self.n_flat < 1:
            raise ValueError("n_flat must be >= 1")

    def rate(self, d: int) -> float:
        n = self.n_flat
        sphere = 2 * pi ** (d / 2) / gamma(d / 2)
        two_a = (sphere * gamma(d / (2 * n)) / (2 * n)) ** (2 * n / d)
        return two_a / 2

    def __call__(self, y: list[np.ndarray]) -> np.ndarray:
        if self.constant:
            return np.ones_like(y[0])
        r2 = sum(c**2 for c in y)
        return np.exp(-self.rate(len(y)) * r2**self.n_flat) * (1 + self.tilt * y[0])


@dataclass(frozen=True)
class CondensateState:
    phi: Field
    t: float
    Lam: float
    mu: float

    @property
    def d(self) -> int:
        return self.phi.grid.d


def chemical_potential(phi: Field, V: Field, Lam: float) -> float:
    """mu = (1/2) < phi/sqrt(Lam), (V*|phi|^2) phi/sqrt(Lam) >."""
    dens = convolve(V, phi.with_values(np.abs(phi.values) ** 2))
    return float(0.5 * np.real(phi.inner(dens * phi)) / Lam)


def mean_field(phi: Field, V: Field) -> np.ndarray:
    return convolve(V, phi.with_values(np.abs(phi.values) ** 2)).values.real


def build_initial_condensate(eta: FlatProfile, Lam: float, grid: GridSpec, V: Field) -> CondensateState:
    """phi_0(y) = eta(Lam^{-1/d} y), rescaled so that ||phi_0||_2 = sqrt(Lam) exactly."""
    d = grid.d
    if not eta.constant and Lam ** (1 / d) > grid.L / 8:
        raise ValueError(f"box too small: Lam^(1/d)={Lam ** (1 / d):.3g} > L_box/8={grid.L / 8:.3g}")
    scale = Lam ** (-1.0 / d)
    raw = eta([c * scale for c in grid.coords()]).astype(complex)
    f = Field(grid, raw)
    f = f * (np.sqrt(Lam) / f.norm())
    return CondensateState(f, 0.0, Lam, chemical_potential(f, V, Lam))


def normalizer(state: CondensateState) -> complex:
    """phi_0 at the origin; close to 1 for a well-resolved profile."""
    return complex(state.phi.values[state.phi.grid.zero_mode()])


def hartree_energy(phi: Field, V: Field) -> float:
    g = phi.grid
    kin = 0.5 * np.sum(g.p2() * np.abs(fourier(phi).values) ** 2) * g.dp**g.d
    pot = 0.5 * np.sum(mean_field(phi, V) * np.abs(phi.values) ** 2) * g.cell
    return float(kin + pot)


# --- condition checks ------------------------------------------------------------

def check_conditions(state: CondensateState, k: int, s: float, C: float = 1.0) -> dict:
    """Norms entering the scaling and flatness conditions, with ratios and flags.

    Scaling exponents use 1/d in place of 1/3 so the checks apply in any d.
    Each flag is True when the measured ratio exceeds ``C``.
    """
    phi, Lam = state.phi, state.Lam
    g = phi.grid
    inv_d = 1.0 / g.d
    rep: dict = {"phihat_L1": lp_norm(fourier(phi), 1), "rows": []}
    origin = g.zero_mode()
    one = phi.with_values(phi.values - 1.0)
    for order in range(k + 1):
        for beta in multi_indices(g.d, order):
            dphi = spectral_derivative(phi, beta) if order else phi
            sup = lp_norm(dphi, np.inf)
            l2 = lp_norm(dphi, 2)
            row = {
                "beta": beta,
                "sup": sup,
                "L2": l2,
                "sup_ratio": sup / Lam ** (-order * inv_d),
                "L2_ratio": l2 / Lam ** (-order * inv_d + 0.5),
            }
            done = spectral_derivative(one, beta) if order else one
            at0 = abs(done.values[origin])
            scale = lp_norm(done, np.inf) * Lam ** (-(k - order) * (inv_d - s))
            row["flat_ratio"] = at0 / scale if scale > 0 else 0.0
            row["flat_flag"] = bool(row["flat_ratio"] > C)
            rep["rows"].append(row)
    rep["flat_violation"] = any(r["flat_flag"] for r in rep["rows"] if sum(r["beta"]) >= 1)
    return rep


# --- evolution -----------------------------------------------------------------------

@dataclass
class HartreeRun:
    V: Field
    Lam: float
    dt: float
    times: np.ndarray
    mus: np.ndarray
    snapshots: dict = field(default_factory=dict)
    final: CondensateState | None = None
    halving_error: float = float("nan")

    @property
    def phi0(self) -> Field:
        return self.snapshots[0.0]

    def mu_integral(self, t: float) -> float:
        """Trapezoid integral of the recorded mu history on [0, t]."""
        m = self.times <= t + 1e-12
        ts, ms = self.times[m], self.mus[m]
        if len(ts) < 2:
            return 0.0
        return float(trapezoid(ms, ts))

    def at(self, t: float) -> Field:
        key = min(self.snapshots, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-9:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[key]


def _strang_step(psi: np.ndarray, g: GridSpec, V: Field, Lam: float, dt: float, kin: np.ndarray) -> tuple[np.ndarray, float]:
    phi = Field(g, psi)
    mu = chemical_potential(phi, V, Lam)
    psi = np.exp(-0.5j * dt * (mean_field(phi, V) - mu)) * psi
    psi = multiplier_apply(g, kin, psi)
    # the kicks keep |psi|, so the closing mu equals the end-of-step value
    mid = Field(g, psi)
    psi = np.exp(-0.5j * dt * (mean_field(mid, V) - chemical_potential(mid, V, Lam))) * psi
    return psi, mu


def evolve_hartree(
    state: CondensateState,
    V: Field,
    t_final: float,
    dt: float,
    save_every: int = 1,
    check_halving: bool = False,
    halving_tol: float = 1e-6,
) -> HartreeRun:
    """Strang split-step solution of i d/dt phi = (-Delta/2 + V*|phi|^2 - mu_t) phi.

    Each half kick uses mu at its own end of the step. With ``check_halving`` the run is
    repeated at dt/2 and a relative L2 disagreement above ``halving_tol`` raises.
    """
    g = state.phi.grid
    nsteps = int(round(t_final / dt))
    if nsteps < 0 or abs(nsteps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a multiple of dt")
    kin = np.exp(-0.5j * dt * g.p2())
    psi = state.phi.values.copy()
    times = [state.t]
    mus = [state.mu]
    snaps = {0.0: state.phi} if state.t == 0 else {state.t: state.phi}
    for j in range(nsteps):
        psi, _ = _strang_step(psi, g, V, state.Lam, dt, kin)
        t = state.t + (j + 1) * dt
        mu = chemical_potential(Field(g, psi), V, state.Lam)
        times.append(t)
        mus.append(mu)
        if (j + 1) % save_every == 0 or j + 1 == nsteps:
            snaps[round(t, 12)] = Field(g, psi.copy())
    final = CondensateState(Field(g, psi), state.t + nsteps * dt, state.Lam, mus[-1])
    run = HartreeRun(V, state.Lam, dt, np.array(times), np.array(mus), snaps, final)
    if check_halving and nsteps:
        fine = evolve_hartree(state, V, t_final, dt / 2, save_every=2 * nsteps)
        err = (fine.final.phi - final.phi).norm() / final.phi.norm()
        run.halving_error = err
        if err > halving_tol:
            raise RuntimeError(f"step-halving disagreement {err:.3e} > {halving_tol:.1e}")
    return run


def save_run(run: HartreeRun, directory) -> None:
    """Snapshots as field containers plus plain-text manifest files, one value per line."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    keys = sorted(run.snapshots)
    for j, t in enumerate(keys):
        save_field(run.snapshots[t], d / f"snap_{j:05d}.plf")
    save_field(run.V, d / "V.plf")
    (d / "snapshot_times.txt").write_text("".join(f"{float(t)!r}\n" for t in keys))
    (d / "times.txt").write_text("".join(f"{float(t)!r}\n" for t in run.times))
    (d / "mu.txt").write_text("".join(f"{float(m)!r}\n" for m in run.mus))
    (d / "manifest.txt").write_text(f"Lam = {float(run.Lam)!r}\ndt = {float(run.dt)!r}\nhalving_error = {float(run.halving_error)!r}\n")


def load_run(directory) -> HartreeRun:
    d = Path(directory)
    head = dict(line.split(" = ", 1) for line in (d / "manifest.txt").read_text().splitlines() if " = " in line)
    keys = [float(x) for x in (d / "snapshot_times.txt").read_text().split()]
    snaps = {t: load_field(d / f"snap_{j:05d}.plf") for j, t in enumerate(keys)}
    times = np.array([float(x) for x in (d / "times.txt").read_text().split()])
    mus = np.array([float(x) for x in (d / "mu.txt").read_text().split()])
    V = load_field(d / "V.plf")
    Lam = float(head["Lam"])
    last = snaps[keys[-1]]
    final = CondensateState(last, keys[-1], Lam, float(mus[-1]))
    return HartreeRun(V, Lam, float(head["dt"]), times, mus, snaps, final, float(head["halving_error"]))


def auxiliary_phi(phi0: Field, V: Field, mu_integral: float, t: float) -> Field:
    """Phase-only approximation exp(-i(t V*|phi0|^2 - int_0^t mu)) phi0."""
    phase = t * mean_field(phi0, V) - mu_integral
    return phi0.with_values(np.exp(-1j * phase) * phi0.values)


# --- localizer -----------------------------------------------------------------------

@dataclass(frozen=True)
class Localizer:
    s: float
    n: int
    Lam: float

    def __post_init__(self):
        if not 0 < self.s < 1 / 3:
            raise ValueError("s must lie in (0, 1/3)")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def values(self, grid: GridSpec) -> np.ndarray:
        u2 = grid.r2() * self.Lam ** (-2 * self.s)
        return 1.0 / (1.0 + u2**self.n)

    def radial(self, r: np.ndarray) -> np.ndarray:
        u = np.abs(r) * self.Lam ** (-self.s)
        return 1.0 / (1.0 + u ** (2 * self.n))

    def radial_derivative(self, r: np.ndarray) -> np.ndarray:
        a = self.Lam ** (-self.s)
        u = np.abs(r) * a
        return -np.sign(r) * 2 * self.n * a * u ** (2 * self.n - 1) / (1 + u ** (2 * self.n)) ** 2

    def derivative_check(self, r: np.ndarray, step: float = 1e-5) -> dict:
        """Finite-difference derivative vs closed form and vs the bound 2n Lam^{-s} Theta."""
        fd = (self.radial(r + step) - self.radial(r - step)) / (2 * step)
        exact = self.radial_derivative(r)
        bound = 2 * self.n * self.Lam ** (-self.s) * self.radial(r)
        return {
            "max_fd_error": float(np.max(np.abs(fd - exact))),
            "max_ratio": float(np.max(np.abs(fd) / bound)),
        }


# --- diagnostics -----------------------------------------------------------------------

def propagation_diagnostics(runs: dict, times) -> dict:
    """||phi_t - phi~_t||_2, ||d_1(phi_t - phi~_t)||_2, ||phi_t||_inf, || |phi_t|^2-|phi_0|^2 ||_{1^2}.

    ``runs`` maps Lam to a HartreeRun. Slopes against Lam are attached when at
    least three volumes are present.
    """
    rows = []
    for Lam, run in sorted(runs.items()):
        phi0 = run.phi0
        d = phi0.grid.d
        for t in times:
            phi = run.at(t)
            aux = auxiliary_phi(phi0, run.V, run.mu_integral(t), t)
            diff = phi - aux
            e1 = tuple(1 if i == 0 else 0 for i in range(d))
            dens = phi.with_values(np.abs(phi.values) ** 2 - np.abs(phi0.values) ** 2)
            rows.append({
                "Lam": Lam,
                "t": t,
                "diff_L2": diff.norm(),
                "ddiff_L2": spectral_derivative(diff, e1).norm(),
                "phi_Linf": lp_norm(phi, np.inf),
                "dens_1w2": mixed_norm(dens, "1^2"),
            })
    slopes = {}
    lams = sorted(runs)
    if len(lams) >= 3:
        for t in times:
            for key in ("diff_L2", "ddiff_L2", "dens_1w2"):
                pts = [(r["Lam"], r[key]) for r in rows if r["t"] == t]
                if all(p[1] > 0 for p in pts):
                    slopes[(key, t)] = fit_slope(pts)
    return {"rows": rows, "slopes": slopes}


def local_stability_diagnostics(run: HartreeRun, loc: Localizer, W: Field, rho: float, times) -> list[dict]:
    """Localized density deviation and localized mean tracer-condensate force."""
    g = run.phi0.grid
    theta = loc.values(g)
    phi0 = run.phi0
    out = []
    for t in times:
        phi = run.at(t)
        dens = np.abs(phi.values) ** 2
        dev = Field(g, theta * (dens - np.abs(phi0.values) ** 2))
        force = np.sqrt(rho) * convolve(W, Field(g, dens - 1.0)).values
        out.append({
            "t": t,
            "Lam": run.Lam,
            "rho": rho,
            "loc_dens_1w2": mixed_norm(dev, "1^2"),
            "loc_force_inf": float(np.max(np.abs(theta * force))),
            "force_inf": float(np.max(np.abs(force))),
        })
    return out
