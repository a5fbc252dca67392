"""Exact small-N microscopic dynamics on a Galerkin plane-wave basis, the
excitation map, the remainder operators and the decomposition check.

Every one-body object (kinetic energy, mean field, kernels, tracer coupling) is
derived from the same mode tensors, so the excitation-Hamiltonian identity is
an exact algebraic statement on the truncated model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .fitting import fit_slope
from .fock import (FockSpace, TracerGrid, bogoliubov_mode_matrices, lanczos_expm, quadratic_hamiltonian,
                   second_quantize, shifted, time_evolve)
from .spectral import Field, GridSpec, convolve


@dataclass
class ScalingParams:
    rho: float = 4.0
    Lam: float = 1.0
    alpha: float | None = None
    eps: float = 0.1
    s: float = 0.2
    n_flat: int = 2
    m: float = 1.0
    k: int = 2
    kappa: float = 0.0
    delta: float = 0.1

    def __post_init__(self):
        if self.rho < 1 or self.Lam < 1:
            raise ValueError("need rho >= 1 and Lam >= 1")
        if self.alpha is None and self.rho > 1:
            self.alpha = math.log(self.Lam) / math.log(self.rho)

    @property
    def N(self) -> int:
        return max(1, int(round(self.rho * self.Lam)))

    @property
    def rho_eff(self) -> float:
        """N / Lam, the density actually realized by the integer particle number."""
        return self.N / self.Lam

    @property
    def gamma(self) -> float:
        return min(self.delta, self.s, 1.5 * (1 / 3 - self.s), 1 / 6)


# --- Galerkin model ---------------------------------------------------------------------------

def plane_wave_offsets(n_modes: int, d: int = 1) -> list[tuple[int, ...]]:
    """0, +1, -1, +2, -2, ... along the first axis."""
    out = [0]
    k = 1
    while len(out) < n_modes:
        out.append(k)
        if len(out) < n_modes:
            out.append(-k)
        k += 1
    return [(o,) + (0,) * (d - 1) for o in out]


class GalerkinModel:
    """Bosons on ``n_modes`` plane waves (zero mode included) plus a tracer grid."""

    def __init__(self, grid: GridSpec, n_modes: int, V: Field, W: Field, tracer: TracerGrid):
        self.grid, self.V, self.W, self.tracer = grid, V, W, tracer
        self.offsets = plane_wave_offsets(n_modes, grid.d)
        self.n = n_modes
        p = 2 * np.pi / grid.L * np.asarray(self.offsets, dtype=float)
        x = np.stack([c.ravel() for c in grid.coords()], axis=1)
        self.U = np.exp(1j * x @ p.T) / np.sqrt(grid.L**grid.d)
        self.T = np.diag(np.sum(p**2, axis=1) / 2).astype(complex)
        self.Vt = self._pair_tensor()
        self.Wx = self._tracer_matrices()

    def _pair_tensor(self) -> np.ndarray:
        """V_mnpq = <u_m (x) u_n, V(y - y') u_p (x) u_q> by FFT convolution."""
        g, U, n = self.grid, self.U, self.n
        conv = np.empty((n, n, g.size), dtype=complex)
        for a in range(n):
            for b in range(n):
                conv[a, b] = convolve(self.V, Field(g, U[:, a].conj() * U[:, b])).values.ravel()
        # V_mnpq = h sum_y conj(u_m) u_p (V * conj(u_n) u_q)(y)
        prod = U.conj()[:, :, None] * U[:, None, :]  # (y, m, p)
        return g.cell * np.einsum("ymp,nqy->mnpq", prod, conv)

    def _tracer_matrices(self) -> np.ndarray:
        g = self.grid
        out = []
        for s in self.tracer.shifts(g):
            w = shifted(g, self.W.values, s)
            out.append(g.cell * self.U.conj().T @ (w[:, None] * self.U))
        return np.asarray(out)

    # one-body pieces from condensate coefficients c (||c||^2 = Lam)
    def mean_field(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("mpnq,p,q->mn", self.Vt, c.conj(), c)

    def mu(self, c: np.ndarray, Lam: float) -> float:
        return float(np.real(c.conj() @ self.mean_field(c) @ c) / (2 * Lam))

    def K1_tilde(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("mqpn,p,q->mn", self.Vt, c, c.conj())

    def K2_tilde(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("mnpq,p,q->mn", self.Vt, c, c)

    def Q(self, c: np.ndarray, Lam: float) -> np.ndarray:
        return np.eye(self.n) - np.outer(c, c.conj()) / Lam

    def hartree_rhs(self, c: np.ndarray, Lam: float) -> np.ndarray:
        return -1j * ((self.T + self.mean_field(c)) @ c - self.mu(c, Lam) * c)

    def evolve_hartree(self, c0: np.ndarray, Lam: float, t_max: float, rtol: float = 1e-13):
        """Galerkin Hartree flow; returns a dense-output callable t -> c_t."""
        fun = lambda t, y: self.hartree_rhs(y, Lam)
        sol = solve_ivp(fun, (0.0, t_max), c0.astype(complex), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                        dense_output=True)
        if not sol.success:
            raise RuntimeError(sol.message)
        return sol.sol

    def condensate(self, Lam: float, profile=None) -> np.ndarray:
        """Coefficients of sqrt(Lam) times a normalized Galerkin-projected profile."""
        if profile is None:
            f = np.exp(-self.grid.r2().ravel() / (2 * (0.25 * self.grid.L) ** 2)).astype(complex)
        else:
            f = np.asarray(profile(self.grid.coords()), dtype=complex).ravel()
        c = self.grid.cell * self.U.conj().T @ f
        return np.sqrt(Lam) * c / np.linalg.norm(c)


# --- operators on the boson Fock space -------------------------------------------------------------

def _annihilators(fs: FockSpace) -> list:
    return [fs.annihilator(m).astype(complex).tocsr() for m in range(fs.n_modes)]


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else np.asarray(x)


def quartic(Vt: np.ndarray, a: list, sparse: bool = False):
    """sum V_mnpq a*_m a*_n a_q a_p (dense unless ``sparse``)."""
    n = len(a)
    pairs = {(p, q): (a[q] @ a[p]).tocsr() for p in range(n) for q in range(n)}
    out = sp.csr_matrix(a[0].shape, dtype=complex)
    for m in range(n):
        for k in range(n):
            coef = Vt[m, k]
            if not np.any(np.abs(coef) > 0):
                continue
            inner = sum(coef[p, q] * pairs[(p, q)] for p in range(n) for q in range(n) if coef[p, q] != 0)
            out = out + pairs[(m, k)].conj().T @ inner
    return out.tocsr() if sparse else out.toarray()


def dgamma(A: np.ndarray, a: list, sparse: bool = False):
    out = sp.csr_matrix(a[0].shape, dtype=complex)
    for j in range(len(a)):
        for k in range(len(a)):
            if A[j, k] != 0:
                out = out + A[j, k] * (a[j].conj().T @ a[k])
    return out.tocsr() if sparse else out.toarray()


def tracer_kinetic(tracer: TracerGrid) -> np.ndarray:
    eye = np.eye(tracer.n_x, dtype=complex)
    return tracer.kinetic(eye)


@dataclass
class NBodySector:
    """Exactly N bosons on the Galerkin modes (lab basis) times the tracer grid."""

    model: GalerkinModel
    N: int
    fs: FockSpace = field(init=False)

    def __post_init__(self):
        self.fs = FockSpace(self.model.n, self.N, exact=True)

    @property
    def dim(self) -> int:
        return self.model.tracer.n_x * self.fs.dim


def build_H_rho(params: ScalingParams, model: GalerkinModel, max_dim: int = 60000):
    """-Delta_x/2m + dGamma(-Delta/2) + (2 rho)^-1 sum V a*a*aa + rho^-1/2 sum_x |x><x| dGamma(W_x).

    Returned as a sparse matrix on tracer (x) N-sector, with the sector.
    """
    N = params.N
    sec = NBodySector(model, N)
    if sec.dim > max_dim:
        raise ValueError(f"sector dimension {sec.dim} above guard {max_dim}")
    full = FockSpace(model.n, N)
    a = _annihilators(full)
    idx = full.lookup(sec.fs.states)
    rho = params.rho_eff
    Hb = dgamma(model.T, a, True) + quartic(model.Vt, a, True) / (2 * rho)
    Hb = Hb[idx][:, idx]
    D = sec.fs.dim
    blocks = [Hb + dgamma(Wj, a, True)[idx][:, idx] / np.sqrt(rho) for Wj in model.Wx]
    H = sp.kron(sp.csr_matrix(tracer_kinetic(model.tracer)), sp.identity(D)) + sp.block_diag(blocks)
    H = H.tocsr()
    return (0.5 * (H + H.conj().T)).tocsr(), sec


# --- excitation map -----------------------------------------------------------------------------------

def completed_basis(u0: np.ndarray) -> np.ndarray:
    """Unitary with first column exactly u0 (unit vector)."""
    n = len(u0)
    Q, _ = np.linalg.qr(np.column_stack([u0, np.eye(n)]))
    ph = np.vdot(Q[:, 0], u0)
    Q[:, 0] = Q[:, 0] * ph
    if abs(abs(ph) - 1) > 1e-10:
        raise RuntimeError("basis completion failed")
    return Q


def second_quantized_unitary(B: np.ndarray, fs: FockSpace) -> np.ndarray:
    """Gamma(B) on a Fock space: Gamma(B) a*(f) Gamma(B)* = a*(B f)."""
    T, W = sla.schur(B, output="complex")
    theta = np.angle(np.diag(T))
    Theta = (W * theta) @ W.conj().T
    G = second_quantize(Theta, fs).dense()
    return sla.expm(1j * G)


class ExcitationMap:
    """U(phi): N-sector (lab basis) -> excitation Fock space <= N_out over the lab modes.

    Realized as Gamma(B) D Gamma(B)* where B has u0 = phi / sqrt(Lam) as first
    column and D sends |N - k; n_1..> to |0; n_1..> in the rotated basis.
    Gamma(B) is block diagonal in particle number, so it is built separately on
    the sector and on the output space.
    """

    def __init__(self, sector_fs: FockSpace, out_fs: FockSpace):
        if not sector_fs.exact:
            raise ValueError("excitation map acts on a fixed-N sector")
        self.sec, self.out = sector_fs, out_fs
        occ = sector_fs.states.copy()
        occ[:, 0] = 0
        tgt = out_fs.lookup(occ)
        keep = tgt >= 0
        self._D = sp.csr_matrix((np.ones(keep.sum()), (tgt[keep], np.flatnonzero(keep))),
                                shape=(out_fs.dim, sector_fs.dim))

    def matrix(self, c: np.ndarray, Lam: float) -> np.ndarray:
        nrm = np.linalg.norm(c) ** 2
        if abs(nrm - Lam) > 1e-8 * Lam:
            raise ValueError(f"||phi||^2 = {nrm} differs from Lam = {Lam}")
        B = completed_basis(c / np.sqrt(Lam))
        Gsec = second_quantized_unitary(B, self.sec)
        Gout = second_quantized_unitary(B, self.out)
        return Gout @ (self._D @ Gsec.conj().T)

    def apply(self, c: np.ndarray, Lam: float, psi: np.ndarray) -> np.ndarray:
        return self.matrix(c, Lam) @ psi


def excitation_map(c: np.ndarray, Lam: float, psi: np.ndarray, sector_fs: FockSpace, out_fs: FockSpace | None = None) -> np.ndarray:
    out_fs = out_fs or FockSpace(sector_fs.n_modes, sector_fs.N_max)
    return ExcitationMap(sector_fs, out_fs).apply(c, Lam, psi)


# --- remainders ---------------------------------------------------------------------------------------

def _fun_of_Nplus(G: np.ndarray, fs: FockSpace, f) -> np.ndarray:
    """f(N_+) with N_+ = N - a*(u0) a(u0), via the rotated occupation basis."""
    occ = fs.states
    vals = f(occ.sum(axis=1) - occ[:, 0])
    return (G * vals) @ G.conj().T


@dataclass
class Remainders:
    R1: np.ndarray
    R2: np.ndarray
    R3: list
    R4: list
    R4_literal: list
    parts: dict


def build_remainders(params: ScalingParams, model: GalerkinModel, c: np.ndarray, fs: FockSpace) -> Remainders:
    """R1..R4 of the excitation-Hamiltonian decomposition on ``fs`` (lab modes).

    R3 and R4 depend on the tracer position and are returned per tracer point.
    R4 carries the Lam^-1 factor of the condensate occupation; the literal
    variant without it is returned alongside.
    """
    N, Lam, rho = params.N, params.Lam, params.rho_eff
    n = model.n
    u0 = c / np.sqrt(Lam)
    B = completed_basis(u0)
    G = second_quantized_unitary(B, fs)
    a = _annihilators(fs)
    at = [sum(np.conj(B[j, m]) * a[j] for j in range(n)).tocsr() for m in range(n)]  # a(u_m)
    Q = model.Q(c, Lam)
    MF = model.mean_field(c)
    mu = model.mu(c, Lam)
    K1 = Q @ model.K1_tilde(c) @ Q
    Vr = np.einsum("im,jn,mnpq,pk,ql->ijkl", B.conj().T, B.conj().T, model.Vt, B, B, optimize=True)
    Nplus = lambda fn: _fun_of_Nplus(G, fs, fn)
    sqrtNm = Nplus(lambda k: np.sqrt(np.maximum(N - k, 0)))
    NpN = Nplus(lambda k: k / N)
    I = np.eye(fs.dim)

    X = -0.5 * dgamma(Q @ (MF + K1 - mu * np.eye(n)) @ Q, a) @ NpN
    f2 = Q @ MF @ u0
    af2 = _dense(sum(np.conj(f2[j]) * a[j] for j in range(n)))
    X = X - Nplus(lambda k: (k + 1) * np.sqrt(np.maximum(N - k, 0)) / N) @ af2
    pair = _dense(sum(Vr[m, q, 0, 0] * at[m].conj().T @ at[q].conj().T for m in range(1, n) for q in range(1, n)))
    X = X + 0.5 / rho * pair @ Nplus(lambda k: np.sqrt(np.maximum((N - k - 1) * (N - k), 0)) - N)
    cub = _dense(sum(Vr[0, m, q, p] * at[m].conj().T @ at[q] @ at[p]
                     for m in range(1, n) for q in range(1, n) for p in range(1, n)))
    X = X + Lam * sqrtNm @ cub / N
    X = X + 0.5 * mu * NpN
    R1 = X + X.conj().T

    R2 = quartic(Vr[1:, 1:, 1:, 1:], at[1:]) * Lam / (2 * N)

    Nop = Nplus(lambda k: k)
    dQ = (sqrtNm - np.sqrt(N) * I) / np.sqrt(N)
    R3, R4, R4lit = [], [], []
    for Wx in model.Wx:
        f = Q @ Wx @ c
        adf = _dense(sum(f[j] * a[j].conj().T for j in range(n)))
        Y = adf @ dQ
        R3.append(Y + Y.conj().T)
        wphi = float(np.real(c.conj() @ Wx @ c))
        dg = dgamma(Q @ Wx @ Q, a)
        R4.append((-wphi / Lam * Nop + dg) / np.sqrt(rho))
        R4lit.append((-wphi * Nop + dg) / np.sqrt(rho))
    return Remainders(R1, R2, R3, R4, R4lit, {"G": G, "mu": mu, "Q": Q, "MF": MF, "K1": K1, "a": a})


def bf_boson_part(model: GalerkinModel, c: np.ndarray, Lam: float, fs: FockSpace, a=None) -> np.ndarray:
    """H^Bog on ``fs`` built from the Galerkin tensors."""
    a = a or _annihilators(fs)
    n = model.n
    Q = model.Q(c, Lam)
    mu = model.mu(c, Lam)
    h = model.T + model.mean_field(c) - mu * np.eye(n)
    K1 = Q @ model.K1_tilde(c) @ Q
    K = Q @ model.K2_tilde(c) @ Q.T
    Hb = dgamma(h + K1, a)
    P = 0.5 * _dense(sum(K[m, q] * a[m].conj().T @ a[q].conj().T for m in range(n) for q in range(n)))
    return Hb + P + P.conj().T


def intermediate_bf(params: ScalingParams, model: GalerkinModel, c: np.ndarray, fs: FockSpace,
                    mean_field_term: bool = True, a=None) -> np.ndarray:
    """H^BF(t) (+ rho^1/2 W*|phi|^2(x) when ``mean_field_term``) as a dense tracer (x) Fock matrix."""
    a = a or _annihilators(fs)
    Lam, rho = params.Lam, params.rho_eff
    n = model.n
    Q = model.Q(c, Lam)
    Hb = bf_boson_part(model, c, Lam, fs, a)
    nx, D = model.tracer.n_x, fs.dim
    H = np.kron(tracer_kinetic(model.tracer), np.eye(D)) + np.kron(np.eye(nx), Hb)
    for j, Wx in enumerate(model.Wx):
        f = Q @ Wx @ c
        af = _dense(sum(np.conj(f[i]) * a[i] for i in range(n)))
        blk = af + af.conj().T
        if mean_field_term:
            blk = blk + np.sqrt(rho) * float(np.real(c.conj() @ Wx @ c)) * np.eye(D)
        H[j * D:(j + 1) * D, j * D:(j + 1) * D] += blk
    return H


@dataclass
class DecompositionCheck:
    residuals: list
    max_residual: float
    literal_R4_residual: float
    delta: float


def verify_decomposition(t: float, params: ScalingParams, model: GalerkinModel, csol, n_states: int = 20,
                         delta: float = 1e-4, seed: int = 0, pad: int = 2) -> DecompositionCheck:
    """Relative residual of H_ex(t) - [H^BF + rho^1/2 W*|phi|^2 - mu + R] on states U_t chi.

    i (d/dt U) U* is a central difference of the excitation map at spacing delta.
    """
    Lam, N = params.Lam, params.N
    H, sec = build_H_rho(params, model)
    big = FockSpace(model.n, N + pad)
    emap = ExcitationMap(sec.fs, big)
    Ut = emap.matrix(csol(t), Lam)
    dU = (emap.matrix(csol(t + delta), Lam) - emap.matrix(csol(t - delta), Lam)) / (2 * delta)
    nx = model.tracer.n_x
    eye = np.eye(nx)
    c = csol(t)
    rem = build_remainders(params, model, c, big)
    a = rem.parts["a"]
    rhs_core = intermediate_bf(params, model, c, big, True, a) - rem.parts["mu"] * np.eye(nx * big.dim)
    rhs_core += np.kron(eye, rem.R1 + rem.R2)
    D = big.dim
    rhs = rhs_core.copy()
    rhs_lit = rhs_core.copy()
    for j in range(nx):
        sl = slice(j * D, (j + 1) * D)
        rhs[sl, sl] += rem.R3[j] + rem.R4[j]
        rhs_lit[sl, sl] += rem.R3[j] + rem.R4_literal[j]
    rng = np.random.default_rng(seed)
    res, lit = [], []
    Ubig = np.kron(eye, Ut)
    dUbig = np.kron(eye, dU)
    for _ in range(n_states):
        chi = rng.standard_normal(sec.dim) + 1j * rng.standard_normal(sec.dim)
        chi /= np.linalg.norm(chi)
        psi = Ubig @ chi
        lhs = Ubig @ (H @ chi) + 1j * dUbig @ chi
        res.append(float(np.linalg.norm(lhs - rhs @ psi) / np.linalg.norm(psi)))
        lit.append(float(np.linalg.norm(lhs - rhs_lit @ psi) / np.linalg.norm(psi)))
    return DecompositionCheck(res, max(res), max(lit), delta)


# --- experiments -----------------------------------------------------------------------------------------

def _evolve_dense(H: np.ndarray, psi: np.ndarray, t: float) -> np.ndarray:
    w, U = np.linalg.eigh(H)
    return U @ (np.exp(-1j * t * w) * (U.conj().T @ psi))


def _evolve_sparse(H, psi: np.ndarray, t: float, dt: float = 0.01, krylov_dim: int = 40) -> np.ndarray:
    steps = max(1, int(round(t / dt)))
    op = lambda v: H @ v
    for _ in range(steps):
        psi = lanczos_expm(op, psi, t / steps, krylov_dim)
    return psi


def bf_convergence_experiment(rhos, Lam: float, model: GalerkinModel, t_final: float, dt: float = 1e-2,
                              K_trunc: int = 6, tracer_width: float = 1.0, profile=None) -> dict:
    """Errors of the Bogoliubov approximation across densities at fixed Lam.

    ``err_int`` compares exp(-i int mu) U_t psi_t with the intermediate dynamics
    (mean-field tracer term kept); ``err_bf`` compares exp(i nu_t) U_t psi_t
    with the H^BF dynamics, nu_t = int (rho^1/2 int W - mu).
    """
    rows = []
    c0 = model.condensate(Lam, profile)
    csol = model.evolve_hartree(c0, Lam, t_final + 4 * dt)
    nsteps = int(round(t_final / dt))
    ts = np.linspace(0, t_final, 4 * nsteps + 1)
    mus = np.array([model.mu(csol(s), Lam) for s in ts])
    from scipy.integrate import trapezoid
    int_mu = float(trapezoid(mus, ts))
    x = model.tracer.points()
    chi = np.exp(-(x**2) / (2 * tracer_width**2)).astype(complex)
    chi /= np.linalg.norm(chi)
    intW = float(np.real(model.W.values.sum()) * model.grid.cell)
    for rho in rhos:
        par = ScalingParams(rho=rho, Lam=Lam)
        H, sec = build_H_rho(par, model)
        # microscopic initial state: chi (x) (u0)^{(x)N}
        emap0 = ExcitationMap(sec.fs, FockSpace(model.n, 0))
        M0 = emap0.matrix(c0, Lam)
        cond = M0.conj().T[:, 0]
        psi = np.kron(chi, cond)
        psi_t = _evolve_sparse(H, psi, t_final)
        fsK = FockSpace(model.n, min(K_trunc, par.N))
        Ut = ExcitationMap(sec.fs, fsK).matrix(csol(t_final), Lam)
        mapped = np.kron(np.eye(model.tracer.n_x), Ut) @ psi_t
        tail = max(0.0, 1 - np.linalg.norm(mapped) ** 2)
        a = _annihilators(fsK)
        xi0 = np.kron(chi, fsK.vacuum())
        xi, bf = xi0.copy(), xi0.copy()
        for j in range(nsteps):
            cm = csol((j + 0.5) * dt)
            Hi = intermediate_bf(par, model, cm, fsK, True, a)
            Hf = intermediate_bf(par, model, cm, fsK, False, a)
            xi = lanczos_expm(lambda v: Hi @ v, xi, dt, 40)
            bf = lanczos_expm(lambda v: Hf @ v, bf, dt, 40)
        nu = np.sqrt(par.rho_eff) * intW * t_final - int_mu
        e_int = np.sqrt(np.linalg.norm(np.exp(-1j * int_mu) * mapped - xi) ** 2 + tail)
        e_bf = np.sqrt(np.linalg.norm(np.exp(1j * nu) * mapped - bf) ** 2 + tail)
        rows.append({"rho": rho, "N": par.N, "Lam": Lam, "t": t_final, "err_int": float(e_int),
                     "err_bf": float(e_bf), "tail": float(np.sqrt(tail))})
    out = {"rows": rows}
    if len(rows) >= 3:
        out["slope_int"] = fit_slope([(r["rho"], r["err_int"]) for r in rows])
        out["slope_bf"] = fit_slope([(r["rho"], r["err_bf"]) for r in rows])
    return out


def pair_groups(H: np.ndarray, K: np.ndarray, modes, tol: float = 1e-10) -> list[list[int]]:
    """Split the mode set into {k, -k} groups when H and K do not couple different groups."""
    offs = [tuple(o) for o in modes.offsets]
    pos = {o: i for i, o in enumerate(offs)}
    groups, seen = [], set()
    for i, o in enumerate(offs):
        if i in seen:
            continue
        j = pos.get(tuple(-c for c in o))
        grp = [i] if j is None else [i, j]
        seen.update(grp)
        groups.append(grp)
    label = np.empty(len(offs), dtype=int)
    for gi, grp in enumerate(groups):
        label[grp] = gi
    cross = label[:, None] != label[None, :]
    scale = max(1.0, np.abs(H).max(), np.abs(K).max())
    if max(np.abs(H[cross]).max(initial=0.0), np.abs(K[cross]).max(initial=0.0)) > tol * scale:
        raise ValueError("generator couples different momentum pairs; the pair split is not exact")
    return groups


def quasi_free_number(mats, t_final: float, dt: float) -> float:
    """<N>_t from the vacuum via the mode-space Heisenberg flow.

    ``mats`` maps t to (H, K); with i da/dt = H a + K a*, the flow
    Y' = -i [[H, K], [-conj K, -conj H]] Y gives a_t = U a + B a* and <N> = ||B||_F^2.
    Midpoint-frozen exponentials, like the Fock propagation.
    """
    nsteps = max(1, int(round(t_final / dt)))
    dt = t_final / nsteps
    Y = None
    for j in range(nsteps):
        H, K = mats((j + 0.5) * dt)
        G = np.block([[H, K], [-K.conj(), -H.conj()]])
        E = sla.expm(-1j * dt * G)
        Y = E if Y is None else E @ Y
    n = Y.shape[0] // 2
    return float(np.sum(np.abs(Y[:n, n:]) ** 2))


def excitation_growth_experiment(cases: list[dict], t_final: float = 1.0, dt: float = 0.02, powers=(1, 2),
                                 short_time: float = 1e-2) -> dict:
    """<(N+1)^n>_t under H^Bog from the vacuum for each prepared case.

    Each case carries 'Lam', a generator provider 'provider' (t -> BlockOp), a
    'modes' ModeSet and 'N_max'. With 'split_pairs' the Fock evolution runs on
    each {k, -k} pair separately (exact when the generator is translation
    invariant, which is checked); <N> is then additive and <(N+1)^2> is not
    reported. Every row also carries the mode-space value ``N_map`` and the
    short-time ratio <N>_s / (||K||_F^2 s^2).
    """
    rows = []
    for case in cases:
        modes, N_max, prov = case["modes"], case["N_max"], case["provider"]
        memo: dict = {}

        def mats(t, prov=prov, modes=modes, memo=memo):
            key = round(t, 12)
            if key not in memo:
                memo[key] = bogoliubov_mode_matrices(prov(t), modes)
            return memo[key]

        H0, K0 = mats(0.0)
        if case.get("split_pairs"):
            groups = pair_groups(H0, K0, modes)
            pows = (1,)
        else:
            groups = [list(range(modes.n_modes))]
            pows = tuple(powers)
        N_t, N_s, moments = 0.0, 0.0, {p: 0.0 for p in pows}
        for grp in groups:
            fs = FockSpace(len(grp), N_max)
            sub = lambda t, grp=grp: tuple(M[np.ix_(grp, grp)] for M in mats(t))
            Hp = lambda t, sub=sub, fs=fs: quadratic_hamiltonian(*sub(t), fs)
            Nd = fs.number_diag()
            psi = time_evolve(Hp, fs.vacuum(), t_final, dt).final
            w = np.abs(psi) ** 2
            N_t += float(np.sum(w * Nd))
            for p in pows:
                moments[p] += float(np.sum(w * (Nd + 1) ** p))
            psi_s = time_evolve(Hp, fs.vacuum(), short_time, short_time / 4).final
            N_s += float(np.sum(np.abs(psi_s) ** 2 * Nd))
        row = {"Lam": case["Lam"], "n_modes": modes.n_modes, "t": t_final, "N": N_t,
               "N_map": quasi_free_number(mats, t_final, dt),
               "short_ratio": N_s / (np.linalg.norm(K0) ** 2 * short_time**2)}
        if not case.get("split_pairs"):
            for p in pows:
                row[f"N1^{p}"] = moments[p]
        rows.append(row)
    out = {"rows": rows}
    if len(rows) >= 3:
        out["slope_N"] = fit_slope([(r["Lam"], r["N"]) for r in rows])
    return out
