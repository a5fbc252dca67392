"""Bogoliubov layer: pair kernels, generators, evolved maps, the infinite-volume
diagonalization and the regularized initial map Z0.

All dense matrices act on position grid values (orthogonal basis with uniform
weight h^d). Doubled-space operators follow the layout of ``spectral.BlockOp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fitting import fit_slope
from .hartree import FlatProfile, HartreeRun, mean_field
from .spectral import (
    DENSE_CAP,
    BlockOp,
    DoubledVector,
    Field,
    GridSpec,
    convolve,
    fourier,
    identity_op,
    multiplier_apply,
    symplectic_defect,
)

DEFECT_FAIL = 1e-4


# --- dispersion ------------------------------------------------------------------------

@dataclass(frozen=True)
class Dispersion:
    grid: GridSpec
    vhat: np.ndarray  # (2 pi)^{d/2} V^(p), real
    c: np.ndarray
    b: np.ndarray
    omega: np.ndarray
    tau: np.ndarray  # nan on the zero mode

    @property
    def mask(self) -> np.ndarray:
        return self.grid.nonzero_modes()


def build_dispersion(V: Field) -> Dispersion:
    g = V.grid
    vh = ((2 * np.pi) ** (g.d / 2) * fourier(V).values).real
    if vh.min() < -1e-12 * max(1.0, np.abs(vh).max()):
        raise ValueError("V^ < 0 on some mode")
    vh = np.maximum(vh, 0.0)
    p2 = g.p2()
    c = p2 / 2 + vh
    b = vh.copy()
    omega = np.sqrt(p2**2 / 4 + p2 * vh)
    tau = np.full(g.shape, np.nan)
    m = g.nonzero_modes()
    tau[m] = np.sqrt(p2[m] / (2 * omega[m]))
    return Dispersion(g, vh, c, b, omega, tau)


def _check_modes(disp: Dispersion, modes) -> np.ndarray:
    mask = disp.mask if modes is None else np.asarray(modes, dtype=bool).reshape(disp.grid.shape)
    if mask[disp.grid.zero_mode()]:
        raise ValueError("the zero mode is excluded from the infinite-volume objects")
    return mask


def generator_infty(disp: Dispersion) -> BlockOp:
    """A^inf in the frame rotating with nu: blocks [[c, -b], [b, -c]] per mode."""
    return BlockOp(disp.grid, disp.c.astype(complex), disp.b.astype(complex), sign=-1)


def v_infty_explicit(disp: Dispersion, t: float, modes=None) -> BlockOp:
    """exp(-i t A^inf) with L = cos wt - i (c/w) sin wt and M = -i (b/w) sin wt.

    Modes outside ``modes`` (default: every nonzero mode) carry the identity.
    """
    mask = _check_modes(disp, modes)
    L = np.ones(disp.grid.shape, dtype=complex)
    Mm = np.zeros(disp.grid.shape, dtype=complex)
    w = disp.omega[mask]
    s = np.sin(w * t) / w
    L[mask] = np.cos(w * t) - 1j * disp.c[mask] * s
    Mm[mask] = -1j * disp.b[mask] * s
    return BlockOp(disp.grid, L, Mm, sign=1, meta={"provenance": "infinite-volume explicit", "t": t})


def diagonalizer_T(disp: Dispersion, modes=None) -> BlockOp:
    """T with blocks (tau + 1/tau)/2 and (tau - 1/tau)/2; identity outside ``modes``."""
    mask = _check_modes(disp, modes)
    if np.any(disp.vhat[mask] < 0):
        raise ValueError("V^ < 0 on a requested mode")
    a = np.ones(disp.grid.shape, dtype=complex)
    b = np.zeros(disp.grid.shape, dtype=complex)
    tau = disp.tau[mask]
    a[mask] = 0.5 * (tau + 1 / tau)
    b[mask] = 0.5 * (tau - 1 / tau)
    return BlockOp(disp.grid, a, b, sign=1, meta={"provenance": "diagonalizer"})


def tau_hs_norm(disp: Dispersion) -> float:
    """||tau - 1/tau||_HS on the nonzero grid modes (grows as infrared modes refine)."""
    t = disp.tau[disp.mask]
    return float(np.linalg.norm(t - 1 / t))


# --- kernels ------------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelPair:
    """K1 = Q K1~ Q and K2 J = Q K2~ J Q J* built from a condensate snapshot."""

    phi: Field
    V: Field
    Lam: float
    t: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid

    def Q(self, v: np.ndarray) -> np.ndarray:
        ph = self.phi.values.ravel()
        return v - ph * (np.vdot(ph, v) * self.grid.cell / self.Lam)

    def K1_tilde(self, v: np.ndarray) -> np.ndarray:
        ph = self.phi.values.ravel()
        g = self.grid
        return ph * convolve(self.V, Field(g, ph.conj() * v)).values.ravel()

    def K1(self, v: np.ndarray) -> np.ndarray:
        return self.Q(self.K1_tilde(self.Q(v)))

    def K2J_tilde(self, v: np.ndarray) -> np.ndarray:
        """phi (V * (phi conj(v))), antilinear in v."""
        ph = self.phi.values.ravel()
        return ph * convolve(self.V, Field(self.grid, ph * v.conj())).values.ravel()

    def K2J(self, v: np.ndarray) -> np.ndarray:
        return self.Q(self.K2J_tilde(self.Q(v)))

    # dense forms, position basis
    def dense_Q(self) -> np.ndarray:
        ph = self.phi.values.ravel()
        return np.eye(ph.size) - np.outer(ph, ph.conj()) * self.grid.cell / self.Lam

    def dense_K1_tilde(self) -> np.ndarray:
        g = self.grid
        ph = self.phi.values.ravel()
        Vm = conv_matrix(self.V)
        return ph[:, None] * Vm * ph.conj()[None, :]

    def dense_K1(self) -> np.ndarray:
        Q = self.dense_Q()
        return Q @ self.dense_K1_tilde() @ Q

    def dense_pairing(self) -> np.ndarray:
        """Symmetric matrix K with K2 J psi = K conj(psi) (position basis)."""
        ph = self.phi.values.ravel()
        Q = self.dense_Q()
        Kt = ph[:, None] * conv_matrix(self.V) * ph[None, :]
        return Q @ Kt @ Q.T


def conv_matrix(V: Field) -> np.ndarray:
    """Matrix of psi -> V * psi on grid values: h^d V(x_i - x_j)."""
    g = V.grid
    n = g.size
    if 2 * n > 4 * DENSE_CAP:
        raise ValueError("grid too large for a dense convolution matrix")
    vals = V.values
    # column j is h^d V(x - x_j), a lattice shift of the centered samples
    center = np.array(g.zero_mode())
    out = np.empty((n, n), dtype=complex)
    idx = np.indices(g.shape).reshape(g.d, -1).T
    for j, pos in enumerate(idx):
        out[:, j] = np.roll(vals, tuple(pos - center), axis=tuple(range(g.d))).ravel()
    return out * g.cell


def build_kernels(phi: Field, V: Field, Lam: float, t: float = 0.0) -> KernelPair:
    if phi.grid != V.grid:
        raise ValueError("grid mismatch between condensate and potential")
    return KernelPair(phi, V, Lam, t)


def laplacian_matrix(g: GridSpec) -> np.ndarray:
    """Dense -Delta/2 on grid values."""
    n = g.size
    eye = np.eye(n, dtype=complex)
    sym = (g.p2() / 2).astype(complex)
    return np.stack([multiplier_apply(g, sym, eye[:, j]) for j in range(n)], axis=1)


def hartree_h_dense(phi: Field, V: Field, mu: float) -> np.ndarray:
    return laplacian_matrix(phi.grid) + np.diag(mean_field(phi, V).ravel() - mu).astype(complex)


def generator_finite(phi: Field, V: Field, Lam: float, mu: float, dense: bool | None = None) -> BlockOp:
    """A(t) = [[h + K1, -K2], [K2*, -J(h + K1)J*]] as a sign=-1 BlockOp.

    Dense blocks are used when the doubled dimension fits under the assembly cap.
    """
    g = phi.grid
    kp = build_kernels(phi, V, Lam)
    if dense is None:
        dense = 2 * g.size <= DENSE_CAP
    if dense:
        H = hartree_h_dense(phi, V, mu) + kp.dense_K1()
        H = 0.5 * (H + H.conj().T)
        K = kp.dense_pairing()
        return BlockOp(g, H, K.conj(), sign=-1, meta={"provenance": "finite-volume"})
    mf = mean_field(phi, V).ravel() - mu
    sym = (g.p2() / 2).astype(complex)

    def c_act(v):
        return multiplier_apply(g, sym, v) + mf * v + kp.K1(v)

    def b_act(v):
        # lower-left block K2* = conj(K), i.e. v -> conj(K2J(v))
        return kp.K2J(v).conj()

    return BlockOp(g, c_act, b_act, sign=-1, meta={"provenance": "finite-volume"})


def generator_from_state(run: HartreeRun, t: float, V: Field, dense: bool | None = None) -> BlockOp:
    phi = run.at(t)
    from .hartree import chemical_potential

    return generator_finite(phi, V, run.Lam, chemical_potential(phi, V, run.Lam), dense)


# --- evolution of maps ------------------------------------------------------------------

@dataclass
class BogoliubovPath:
    times: list
    ops: list
    provenance: str
    defects: list = field(default_factory=list)


def _apply_gen_batch(A: BlockOp, X: np.ndarray) -> np.ndarray:
    """Apply a generator to columns of X (stacked doubled vectors, 2n x k)."""
    n = A.grid.size
    if X.ndim == 1:
        X = X[:, None]
    if not callable(A.c):
        C = A.block_matrix("c")
        B = A.block_matrix("b")
        up = C @ X[:n] + A.sign * B.conj() @ X[n:]
        lo = B @ X[:n] + A.sign * C.conj() @ X[n:]
        return np.vstack([up, lo])
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        r = A.apply(DoubledVector(X[:n, j], X[n:, j], A.grid))
        out[:n, j], out[n:, j] = r.upper, r.lower
    return out


def _rk4(provider: Callable[[float], BlockOp], Y: np.ndarray, t0: float, t1: float, nsteps: int) -> np.ndarray:
    dt = (t1 - t0) / nsteps
    for j in range(nsteps):
        t = t0 + j * dt
        A0, Ah, A1 = provider(t), provider(t + dt / 2), provider(t + dt)
        k1 = -1j * _apply_gen_batch(A0, Y)
        k2 = -1j * _apply_gen_batch(Ah, Y + 0.5 * dt * k1)
        k3 = -1j * _apply_gen_batch(Ah, Y + 0.5 * dt * k2)
        k4 = -1j * _apply_gen_batch(A1, Y + dt * k3)
        Y = Y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def _split(op_matrix: np.ndarray, grid: GridSpec, sign: int = 1) -> BlockOp:
    n = grid.size
    return BlockOp(grid, op_matrix[:n, :n].copy(), op_matrix[n:, :n].copy(), sign)


def evolve_bogoliubov_map(
    provider: Callable[[float], BlockOp],
    t_final: float,
    dt: float,
    sample_times: Sequence[float] | None = None,
    provenance: str = "finite-volume",
) -> BogoliubovPath:
    """Classical RK4 for i dV/dt = A(t) V with V(0) = 1, dense in the doubled space.

    The symplectic defect of every sample is recorded, never corrected.
    """
    A0 = provider(0.0)
    g = A0.grid
    n = g.size
    if 2 * n > DENSE_CAP:
        raise ValueError("dense map evolution exceeds the assembly cap; evolve vectors instead")
    sample_times = sorted(set([0.0] + list(sample_times or [t_final])))
    Y = np.eye(2 * n, dtype=complex)
    path = BogoliubovPath([], [], provenance)
    t = 0.0
    for ts in sample_times:
        steps = int(round((ts - t) / dt))
        if steps:
            Y = _rk4(provider, Y, t, ts, steps)
        t = ts
        op = _split(Y, g)
        defect = symplectic_defect(op)
        if defect > DEFECT_FAIL:
            raise RuntimeError(f"symplectic defect {defect:.2e} at t={ts}: integration failure")
        path.times.append(ts)
        path.ops.append(op)
        path.defects.append(defect)
    return path


def evolve_vectors(provider, F: np.ndarray, t0: float, t1: float, dt: float) -> np.ndarray:
    """Propagate stacked doubled vectors from t0 to t1 (t1 may precede t0)."""
    steps = max(1, int(round(abs(t1 - t0) / dt)))
    return _rk4(provider, np.asarray(F, dtype=complex), t0, t1, steps)


def hartree_provider(run: HartreeRun, V: Field, dense: bool | None = None, cache: bool = True):
    """Generator provider reading condensate snapshots from a Hartree run.

    The run must have snapshots at every RK4 stage time (multiples of dt/2).
    Dense providers assemble the kinetic and convolution matrices once.
    """
    from .hartree import chemical_potential

    g = run.phi0.grid
    if dense is None:
        dense = 2 * g.size <= DENSE_CAP
    memo: dict = {}
    parts = (laplacian_matrix(g), conv_matrix(V)) if dense else None

    def provider(t: float) -> BlockOp:
        key = round(t, 10)
        if cache and key in memo:
            return memo[key]
        phi = run.at(t)
        mu = chemical_potential(phi, V, run.Lam)
        if dense:
            A = _dense_generator(phi, run.Lam, mu, *parts)
        else:
            A = generator_finite(phi, V, run.Lam, mu, dense=False)
        if cache:
            memo[key] = A
            if len(memo) > 8:  # RK4 only revisits the last few stage times
                memo.pop(next(iter(memo)))
        return A

    return provider


def _dense_generator(phi: Field, Lam: float, mu: float, lap: np.ndarray, Vm: np.ndarray) -> BlockOp:
    g = phi.grid
    ph = phi.values.ravel()
    Q = np.eye(g.size) - np.outer(ph, ph.conj()) * g.cell / Lam
    mf = Vm @ np.abs(ph) ** 2
    H = lap + np.diag(mf - mu) + Q @ (ph[:, None] * Vm * ph.conj()[None, :]) @ Q
    H = 0.5 * (H + H.conj().T)
    K = Q @ (ph[:, None] * Vm * ph[None, :]) @ Q.T
    return BlockOp(g, H, K.conj(), sign=-1, meta={"provenance": "finite-volume"})


# --- regularized initial map ---------------------------------------------------------------

@dataclass
class Z0Result:
    op: BlockOp
    T_eigs: np.ndarray
    tau_eigs: np.ndarray
    defect: float
    op_norm: float
    hs_norm: float
    literal_defect: float
    meta: dict = field(default_factory=dict)


def build_Z0(
    phi0: Field,
    V: Field,
    Lam: float,
    eps: float,
    symbol_factor: float = 4.0,
    normalization: str = "bogoliubov",
    neg_tol: float = 1e-10,
) -> Z0Result:
    """Infrared-regularized diagonalizer built from the initial condensate.

    T_L = f Q (p^2 + Lam^-eps)^{-1/2} K1~ (p^2 + Lam^-eps)^{-1/2} Q with f =
    ``symbol_factor``; tau_L = (1 + T_L)^{-1/4}. The map has blocks
    (tau_L + 1/tau_L)/2 and (tau_L - 1/tau_L)/2. ``normalization="literal"``
    drops the factor 1/2, which is not a Bogoliubov map (Z0 = 2 at V = 0).
    The default f = 4 makes tau_L converge to sqrt(p^2 / 2 omega) for the
    -Delta/2 kinetic energy.
    """
    g = phi0.grid
    if np.max(np.abs(phi0.values.imag)) > 1e-12 * max(1.0, np.max(np.abs(phi0.values))):
        raise ValueError("Z0 construction needs a real-valued initial condensate")
    if 2 * g.size > DENSE_CAP:
        raise ValueError("Z0 construction is dense; grid exceeds the assembly cap")
    kp = build_kernels(phi0, V, Lam)
    Q = kp.dense_Q().real
    K1t = kp.dense_K1_tilde().real
    n = g.size
    eye = np.eye(n, dtype=complex)
    reg = ((g.p2() + Lam ** (-eps)) ** -0.5).astype(complex)
    P = np.stack([multiplier_apply(g, reg, eye[:, j]) for j in range(n)], axis=1).real
    T = symbol_factor * Q @ P @ K1t @ P @ Q
    T = 0.5 * (T + T.T)
    w, U = np.linalg.eigh(T)
    if w.min() < -neg_tol:
        raise ValueError(f"T_Lambda has a negative eigenvalue {w.min():.3e}")
    w = np.maximum(w, 0.0)
    tau = (1 + w) ** -0.25
    half = 0.5 if normalization == "bogoliubov" else 1.0
    if normalization not in ("bogoliubov", "literal"):
        raise ValueError("normalization must be 'bogoliubov' or 'literal'")
    A = half * (U * (tau + 1 / tau)) @ U.T
    B = half * (U * (tau - 1 / tau)) @ U.T
    op = BlockOp(g, A.astype(complex), B.astype(complex), sign=1, meta={"provenance": "Z0", "eps": eps, "Lam": Lam})
    # commuting real symmetric blocks: singular values are tau^{+-1}
    a_j, b_j = half * (tau + 1 / tau), half * (tau - 1 / tau)
    op_norm = float(np.max(np.abs(np.r_[a_j + b_j, a_j - b_j])))
    hs = float(np.sqrt(np.sum(2 * (a_j**2 + b_j**2 - 1) ** 2 + 2 * (2 * a_j * b_j) ** 2)))
    lit = BlockOp(g, (2 * A / (2 * half)).astype(complex), (2 * B / (2 * half)).astype(complex))
    return Z0Result(op, w, tau, symplectic_defect(op), op_norm, hs, symplectic_defect(lit), {"eps": eps, "Lam": Lam})


def gaussian_vector(g: GridSpec, center: float = 0.0, width: float = 1.0, drop_zero: bool = True) -> Field:
    """Unit-normalized Gaussian test function; the zero Fourier mode is removed by default."""
    x = g.coords()
    r2 = (x[0] - center) ** 2 + sum(c**2 for c in x[1:])
    f = Field(g, np.exp(-r2 / (2 * width**2)).astype(complex))
    if drop_zero:
        fh = fourier(f).values
        fh[g.zero_mode()] = 0
        f = fourier(Field(g, fh, "momentum"), "inverse")
    return f * (1.0 / f.norm())


def _masked_tau(disp: Dispersion) -> np.ndarray:
    t = np.nan_to_num(disp.tau, nan=0.0).astype(complex)
    return t


def z0_convergence_diagnostics(
    Z0: BlockOp, disp: Dispersion, tests: Sequence[DoubledVector], shifts: Sequence[int] = (0, 1, 2, 4, 8)
) -> list[dict]:
    """||Z0 T^-1 (tau + JtauJ*) F - (tau + JtauJ*) F|| and the weighted translation commutator."""
    g = disp.grid
    T = diagonalizer_T(disp)
    Tinv = T.bogoliubov_inverse()
    tau = BlockOp(g, _masked_tau(disp), 0.0, sign=1)
    rows = []
    for k, F in enumerate(tests):
        tF = tau.apply(F)
        conv = (Z0.apply(Tinv.apply(tF)) - tF).norm()
        worst = 0.0
        for s in shifts:
            sh = (s,) + (0,) * (g.d - 1)
            Tx = lambda v: np.roll(v.reshape(g.shape), sh, axis=tuple(range(g.d))).ravel()
            TxF = DoubledVector(Tx(F.upper), Tx(F.lower), g)
            ZF = Z0.apply(F)
            comm = Z0.apply(TxF) - DoubledVector(Tx(ZF.upper), Tx(ZF.lower), g)
            x = s * g.h
            worst = max(worst, comm.norm() / np.sqrt(1 + x**2))
        rows.append({"test": k, "convergence": conv, "commutator": worst, "F_norm": F.norm()})
    return rows


# --- infinite-volume convergence ------------------------------------------------------------

def mu_infty(profile: FlatProfile, V: Field, d: int) -> float:
    """(1/2) int |eta|^4 int V for the normalized flat profile (closed form)."""
    from math import gamma, pi

    n = profile.n_flat
    a = profile.rate(d)
    sphere = 2 * pi ** (d / 2) / gamma(d / 2)
    eta4 = sphere * gamma(d / (2 * n)) / (2 * n * (4 * a) ** (d / (2 * n)))
    intV = float(np.real(V.values.sum()) * V.grid.cell)
    return 0.5 * eta4 * intV


def rotate_frame(F: np.ndarray, nu: float, t: float, n: int) -> np.ndarray:
    """exp(i t nu S) on stacked doubled vectors."""
    out = F.copy()
    out[:n] *= np.exp(1j * nu * t)
    out[n:] *= np.exp(-1j * nu * t)
    return out


def drop_zero_mode(g: GridSpec, v: np.ndarray) -> np.ndarray:
    vh = fourier(Field(g, v)).values
    vh[g.zero_mode()] = 0
    return fourier(Field(g, vh, "momentum"), "inverse").values.ravel()


def convergence_diagnostics_infty(
    run: HartreeRun,
    V: Field,
    profile: FlatProfile,
    times: Sequence[float],
    tests: Sequence[Field],
    dt: float,
    gamma_params: dict | None = None,
) -> list[dict]:
    """Deviations of the finite-volume objects from their infinite-volume limits.

    The run must store snapshots at every multiple of dt/2 up to max(times).
    """
    g = run.phi0.grid
    n = g.size
    d = g.d
    muinf = mu_infty(profile, V, d)
    intV = float(np.real(V.values.sum()) * g.cell)
    nu = intV - muinf
    disp = build_dispersion(V)
    provider = hartree_provider(run, V, dense=False)
    rows = []
    Fs = [np.concatenate([drop_zero_mode(g, f.values.ravel())] * 2) for f in tests]
    Fs = [np.concatenate([F[:n], F[n:].conj()]) for F in Fs]
    cur = np.stack(Fs, axis=1)
    tprev = 0.0
    for t in sorted(times):
        phi = run.at(t)
        kp = build_kernels(phi, V, run.Lam, t)
        if t > tprev:
            cur = evolve_vectors(provider, cur, tprev, t, dt)
            tprev = t
        Vinf = v_infty_explicit(disp, t)
        mu_t = float(np.interp(t, run.times, run.mus))
        for k, f in enumerate(tests):
            fv = f.values.ravel()
            ph = phi.values.ravel()
            qf = np.linalg.norm(kp.Q(fv) - fv) * np.sqrt(g.cell)
            phase = np.linalg.norm((ph - np.exp(-1j * t * nu)) * fv) * np.sqrt(g.cell)
            k1inf = convolve(V, f).values.ravel()
            k1 = np.linalg.norm(kp.K1(fv) - k1inf) * np.sqrt(g.cell)
            k2inf = np.exp(-2j * t * nu) * convolve(V, f.conj()).values.ravel()
            k2 = np.linalg.norm(kp.K2J(fv) - k2inf) * np.sqrt(g.cell)
            F0 = Fs[k]
            lhs = rotate_frame(cur[:, k], nu, t, n)
            lhs = np.concatenate([drop_zero_mode(g, lhs[:n]), drop_zero_mode(g, lhs[n:])])
            rhs = Vinf.apply(DoubledVector(F0[:n], F0[n:], g)).stacked()
            verr = np.linalg.norm(lhs - rhs) * np.sqrt(g.cell)
            weight = np.linalg.norm((1 + g.r2().ravel()) * fv) * np.sqrt(g.cell)
            rows.append({
                "Lam": run.Lam, "t": t, "test": k,
                "mu_dev": abs(mu_t - muinf),
                "Q_dev": qf, "phi_dev": phase, "K1_dev": k1, "K2_dev": k2, "V_dev": verr,
                "weight": weight,
            })
    if gamma_params:
        gam = rate_gamma(**gamma_params)
        for r in rows:
            r["gamma"] = gam
    return rows


def rate_gamma(delta: float, s: float) -> float:
    """gamma = min{delta, s, 3/2 (1/3 - s), 1/6}."""
    return min(delta, s, 1.5 * (1 / 3 - s), 1 / 6)


def interaction_vector(
    t: float, x_shift: int, W: Field, which: str, *, run: HartreeRun | None = None, provider=None,
    disp: Dispersion | None = None, dt: float = 1e-3,
) -> DoubledVector:
    """F_x(t) = V_t^{-1}(Q_t W_x phi_t + J Q_t W_x phi_t) (finite) or V_inf_t^{-1}(W_x + J W_x)."""
    g = W.grid
    n = g.size
    sh = (x_shift,) + (0,) * (g.d - 1)
    Wx = np.roll(W.values, sh, axis=tuple(range(g.d))).ravel()
    if which == "infty":
        if disp is None:
            raise ValueError("dispersion needed for the infinite-volume vector")
        F = DoubledVector(Wx, Wx.conj(), g)
        return v_infty_explicit(disp, t).bogoliubov_inverse().apply(F)
    if which != "finite" or run is None:
        raise ValueError("finite vector needs a Hartree run")
    phi = run.at(t)
    kp = build_kernels(phi, run.V, run.Lam, t)
    v = kp.Q(Wx * phi.values.ravel())
    G = np.concatenate([v, v.conj()])
    if t == 0:
        return DoubledVector(G[:n], G[n:], g)
    provider = provider or hartree_provider(run, run.V, dense=False)
    back = evolve_vectors(provider, G[:, None], t, 0.0, dt)[:, 0]
    return DoubledVector(back[:n], back[n:], g)


def slopes_by(rows: list[dict], key: str, xkey: str = "Lam", group=("t", "test")) -> dict:
    out = {}
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group), []).append((r[xkey], r[key]))
    for gk, pts in groups.items():
        if len(pts) >= 3 and all(p[1] > 0 for p in pts):
            out[gk] = fit_slope(pts)
    return out


def transformed_vectors(Z0: BlockOp, Vt: BlockOp, phi: Field, W: Field, Lam: float, shifts) -> np.ndarray:
    """Columns Z0 V_t^{-1}(Q_t W_x phi_t (+) J Q_t W_x phi_t) for every lattice shift x.

    Returns stacked doubled vectors of shape (2 n, len(shifts)); the lower half stores J g.
    """
    g = phi.grid
    kp = build_kernels(phi, W, Lam)
    ph = phi.values.ravel()
    cols = []
    for s in shifts:
        sh = (int(s),) + (0,) * (g.d - 1)
        Wx = np.roll(W.values, sh, axis=tuple(range(g.d))).ravel()
        v = kp.Q(Wx * ph)
        cols.append(np.concatenate([v, v.conj()]))
    G = np.asarray(cols).T
    M = Z0.dense() @ Vt.bogoliubov_inverse().dense()
    return M @ G
