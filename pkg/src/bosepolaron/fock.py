"""Truncated bosonic Fock spaces, quadratic and Froehlich-type Hamiltonians,
Krylov time evolution and tracer observables.

Basis enumeration: occupation vectors with total <= N_max, ordered first by
total particle number (graded) and, within a grade, in reverse lexicographic
order of the occupation tuple, so (2,0) precedes (1,1) precedes (0,2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .spectral import BlockOp, Field, GridSpec, fourier


# --- Fock space ----------------------------------------------------------------------------

def _enumerate(n_modes: int, N_max: int, exact: bool = False) -> np.ndarray:
    rows = []
    grades = [N_max] if exact else range(N_max + 1)
    for N in grades:
        block = []
        for combo in combinations_with_replacement(range(n_modes), N):
            occ = np.bincount(np.asarray(combo, dtype=int), minlength=n_modes) if N else np.zeros(n_modes, int)
            block.append(tuple(occ))
        block.sort(reverse=True)
        rows.extend(block)
    return np.asarray(rows, dtype=np.int64).reshape(-1, n_modes)


class FockSpace:
    """Occupation basis over ``n_modes`` modes with total <= N_max (or == N if ``exact``)."""

    def __init__(self, n_modes: int, N_max: int, exact: bool = False):
        if n_modes < 1 or N_max < 0:
            raise ValueError("need n_modes >= 1 and N_max >= 0")
        self.n_modes = n_modes
        self.N_max = N_max
        self.exact = exact
        self.states = _enumerate(n_modes, N_max, exact)
        self.dim = len(self.states)
        self._base = N_max + 1
        self._codes = self._encode(self.states)
        self._order = np.argsort(self._codes)
        self._sorted = self._codes[self._order]
        self._ann: dict = {}

    def _encode(self, occ: np.ndarray) -> np.ndarray:
        w = self._base ** np.arange(self.n_modes, dtype=np.int64)
        return occ @ w

    def lookup(self, occ: np.ndarray) -> np.ndarray:
        """Indices of occupation rows; -1 where the row is outside the space."""
        occ = np.atleast_2d(occ)
        ok = np.all(occ >= 0, axis=1) & np.all(occ < self._base, axis=1)
        tot = occ.sum(axis=1)
        ok &= (tot == self.N_max) if self.exact else (tot <= self.N_max)
        out = np.full(len(occ), -1, dtype=np.int64)
        if ok.any():
            codes = self._encode(occ[ok])
            pos = np.searchsorted(self._sorted, codes)
            pos = np.minimum(pos, len(self._sorted) - 1)
            hit = self._sorted[pos] == codes
            idx = np.where(hit, self._order[pos], -1)
            out[np.flatnonzero(ok)] = idx
        return out

    def index(self, occ: Sequence[int]) -> int:
        i = int(self.lookup(np.asarray(occ)[None, :])[0])
        if i < 0:
            raise KeyError(f"occupation {tuple(occ)} not in the space")
        return i

    def basis_vector(self, occ: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occ)] = 1.0
        return v

    def vacuum(self) -> np.ndarray:
        return self.basis_vector([0] * self.n_modes)

    def total(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def number_diag(self) -> np.ndarray:
        return self.total().astype(float)

    def annihilator(self, m: int) -> sp.csr_matrix:
        """a_m as a sparse matrix (within the truncation)."""
        if m not in self._ann:
            n = self.states[:, m]
            src = np.flatnonzero(n > 0)
            tgt_occ = self.states[src].copy()
            tgt_occ[:, m] -= 1
            tgt = self.lookup(tgt_occ)
            keep = tgt >= 0
            vals = np.sqrt(n[src[keep]].astype(float))
            self._ann[m] = sp.csr_matrix((vals, (tgt[keep], src[keep])), shape=(self.dim, self.dim))
        return self._ann[m]

    def hop_entries(self, j: int, k: int):
        """(rows, cols, vals) of a*_j a_k."""
        n = self.states
        src = np.flatnonzero(n[:, k] > 0)
        occ = n[src].copy()
        v = np.sqrt(occ[:, k].astype(float))
        occ[:, k] -= 1
        v = v * np.sqrt(occ[:, j] + 1.0)
        occ[:, j] += 1
        tgt = self.lookup(occ)
        keep = tgt >= 0
        return tgt[keep], src[keep], v[keep]

    def pair_entries(self, j: int, k: int):
        """(rows, cols, vals) of a*_j a*_k."""
        occ = self.states.copy()
        v = np.sqrt(occ[:, k] + 1.0)
        occ[:, k] += 1
        v = v * np.sqrt(occ[:, j] + 1.0)
        occ[:, j] += 1
        tgt = self.lookup(occ)
        keep = tgt >= 0
        src = np.arange(self.dim)
        return tgt[keep], src[keep], v[keep]


# --- operator handles --------------------------------------------------------------------------

@dataclass
class OperatorHandle:
    """Sparse matrix or matrix-free applier on a flat amplitude vector."""

    dim: int
    matrix: sp.spmatrix | np.ndarray | None = None
    applier: Callable[[np.ndarray], np.ndarray] | None = None
    hermitian: bool = True
    meta: dict = field(default_factory=dict)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ v
        return self.applier(v)

    def __add__(self, other: "OperatorHandle") -> "OperatorHandle":
        if self.matrix is not None and other.matrix is not None:
            return OperatorHandle(self.dim, self.matrix + other.matrix, hermitian=self.hermitian and other.hermitian)
        a, b = self, other
        return OperatorHandle(self.dim, applier=lambda v: a(v) + b(v), hermitian=a.hermitian and b.hermitian)

    def scaled(self, s: complex) -> "OperatorHandle":
        if self.matrix is not None:
            return OperatorHandle(self.dim, s * self.matrix, hermitian=self.hermitian and np.isreal(s))
        return OperatorHandle(self.dim, applier=lambda v: s * self(v), hermitian=self.hermitian and np.isreal(s))

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)
        eye = np.eye(self.dim, dtype=complex)
        return np.stack([self(eye[:, j]) for j in range(self.dim)], axis=1)

    def expectation(self, v: np.ndarray) -> complex:
        return complex(np.vdot(v, self(v)))

    def hermiticity_residual(self, rng: np.random.Generator | None = None, trials: int = 5) -> float:
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
            y = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
            lhs = np.vdot(x, self(y))
            rhs = np.conj(np.vdot(y, self(x)))
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        return float(worst)


def _coo(fs: FockSpace, coeffs: np.ndarray, entries) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = fs.n_modes
    for j in range(n):
        for k in range(n):
            c = coeffs[j, k]
            if c == 0:
                continue
            r, cc, v = entries(j, k)
            rows.append(r)
            cols.append(cc)
            vals.append(c * v)
    if not rows:
        return sp.csr_matrix((fs.dim, fs.dim), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fs.dim, fs.dim),
    )


def second_quantize(A: np.ndarray, fs: FockSpace) -> OperatorHandle:
    """dGamma(A) = sum_jk A_jk a*_j a_k."""
    A = np.asarray(A, dtype=complex)
    if A.shape != (fs.n_modes, fs.n_modes):
        raise ValueError("one-body matrix does not match the mode count")
    M = _coo(fs, A, fs.hop_entries)
    return OperatorHandle(fs.dim, M, hermitian=np.allclose(A, A.conj().T, atol=1e-13))


def pairing_operator(K: np.ndarray, fs: FockSpace) -> OperatorHandle:
    """(1/2) sum (K_mn a*_m a*_n + h.c.)."""
    K = np.asarray(K, dtype=complex)
    Ks = 0.5 * (K + K.T)
    P = 0.5 * _coo(fs, Ks, fs.pair_entries)
    return OperatorHandle(fs.dim, (P + P.conj().T).tocsr())


def quadratic_hamiltonian(H: np.ndarray, K: np.ndarray, fs: FockSpace) -> OperatorHandle:
    return second_quantize(H, fs) + pairing_operator(K, fs)


def field_operator(fs: FockSpace, f_coeffs: np.ndarray, g_coeffs: np.ndarray | None = None) -> sp.csr_matrix:
    """a(f) + a*(g) from mode coefficients f_m = <u_m, f>, g_m = <u_m, g>."""
    g_coeffs = f_coeffs if g_coeffs is None else g_coeffs
    out = sp.csr_matrix((fs.dim, fs.dim), dtype=complex)
    for m in range(fs.n_modes):
        a = fs.annihilator(m)
        if f_coeffs[m] != 0:
            out = out + np.conj(f_coeffs[m]) * a
        if g_coeffs[m] != 0:
            out = out + g_coeffs[m] * a.T
    return out.tocsr()


# --- mode sets ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeSet:
    """Plane waves u_k(y) = exp(i p_k y) / sqrt(L^d) on a grid, indexed by momentum offsets.

    ``offsets`` are integer wave-vector tuples (k = p L / 2 pi); the zero mode is rejected.
    """

    grid: GridSpec
    offsets: tuple

    def __post_init__(self):
        offs = tuple(tuple(int(c) for c in o) for o in self.offsets)
        if len(set(offs)) != len(offs):
            raise ValueError("duplicate modes")
        if any(all(c == 0 for c in o) for o in offs):
            raise ValueError("the zero (condensate) mode is not allowed in a mode set")
        half = self.grid.M // 2
        for o in offs:
            if len(o) != self.grid.d or any(c < -half or c >= half for c in o):
                raise ValueError(f"mode {o} outside the grid")
        object.__setattr__(self, "offsets", offs)

    @property
    def n_modes(self) -> int:
        return len(self.offsets)

    def momenta(self) -> np.ndarray:
        return 2 * np.pi / self.grid.L * np.asarray(self.offsets, dtype=float)

    def functions(self) -> np.ndarray:
        """Matrix (grid points x modes) of mode functions, orthonormal with weight h^d."""
        g = self.grid
        x = np.stack([c.ravel() for c in g.coords()], axis=1)
        return np.exp(1j * x @ self.momenta().T) / np.sqrt(g.L**g.d)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """<u_m, f> for grid values f (last axis = grid points)."""
        return self.grid.cell * (np.asarray(f) @ self.functions().conj())

    def project(self, A: np.ndarray) -> np.ndarray:
        """Galerkin compression <u_m, A u_n> of a dense grid operator."""
        U = self.functions()
        return self.grid.cell * U.conj().T @ A @ U

    def project_pairing(self, K: np.ndarray) -> np.ndarray:
        """<u_m, K conj(u_n)> for an antilinear kernel psi -> K conj(psi)."""
        U = self.functions()
        return self.grid.cell * U.conj().T @ K @ U.conj()

    def restrict(self, Z: BlockOp) -> np.ndarray:
        """2n x 2n matrix of a BlockOp on mode coefficients (upper <u,f>, lower conj<u,g>)."""
        U = self.functions()
        h = self.grid.cell
        C = h * U.conj().T @ Z.block_matrix("c") @ U
        B = h * U.T @ Z.block_matrix("b") @ U
        s = Z.sign
        return np.block([[C, s * B.conj()], [B, s * C.conj()]])


def box_modes(grid: GridSpec, p_cut: float) -> ModeSet:
    """All nonzero plane waves with |p| <= p_cut, ordered by |p| then lexicographically."""
    ks = np.indices(grid.shape).reshape(grid.d, -1).T - grid.M // 2
    p = 2 * np.pi / grid.L * ks
    keep = [(float(np.sum(pp**2)), tuple(int(c) for c in k)) for k, pp in zip(ks, p)
            if 0 < np.sum(pp**2) <= p_cut**2 + 1e-12]
    keep.sort()
    return ModeSet(grid, tuple(k for _, k in keep))


# --- Hamiltonians ----------------------------------------------------------------------------------

def bogoliubov_mode_matrices(A: BlockOp, modes: ModeSet) -> tuple[np.ndarray, np.ndarray]:
    """(H, K) on the mode set from a generator BlockOp(c=H, b=conj(K), sign=-1)."""
    H = modes.project(A.block_matrix("c"))
    K = modes.project_pairing(A.block_matrix("b").conj())
    return 0.5 * (H + H.conj().T), 0.5 * (K + K.T)


def build_HBog(A: BlockOp, modes: ModeSet, N_max: int, fs: FockSpace | None = None) -> OperatorHandle:
    """dGamma(h + K1) + (1/2) sum ((K2 J)_mn a*_m a*_n + h.c.) on the mode set."""
    fs = fs or FockSpace(modes.n_modes, N_max)
    H, K = bogoliubov_mode_matrices(A, modes)
    op = quadratic_hamiltonian(H, K, fs)
    op.meta.update({"H": H, "K": K})
    return op


@dataclass
class TracerGrid:
    """1D periodic impurity grid whose points lie on the boson lattice."""

    n_x: int
    L_x: float
    m: float = 1.0

    @property
    def h(self) -> float:
        return self.L_x / self.n_x

    def points(self) -> np.ndarray:
        return (np.arange(self.n_x) - self.n_x // 2) * self.h

    def momenta(self) -> np.ndarray:
        return 2 * np.pi / self.L_x * (np.arange(self.n_x) - self.n_x // 2)

    def kinetic_symbol(self) -> np.ndarray:
        return self.momenta() ** 2 / (2 * self.m)

    def kinetic(self, psi: np.ndarray) -> np.ndarray:
        """-Delta_x / 2m along axis 0."""
        s = np.fft.ifftshift(self.kinetic_symbol())
        f = np.fft.fft(np.fft.ifftshift(psi, axes=0), axis=0)
        f = f * s.reshape((-1,) + (1,) * (psi.ndim - 1))
        return np.fft.fftshift(np.fft.ifft(f, axis=0), axes=0)

    def shifts(self, g: GridSpec) -> np.ndarray:
        s = self.points() / g.h
        if np.max(np.abs(s - np.round(s))) > 1e-9:
            raise ValueError("tracer points must lie on the boson lattice")
        return np.round(s).astype(int)


def shifted(g: GridSpec, f: np.ndarray, shift: int) -> np.ndarray:
    """f(. - x) along the first axis for a lattice shift."""
    return np.roll(np.asarray(f).reshape(g.shape), shift, axis=0).ravel()


class PolaronOperator:
    """-Delta_x/2m (x) 1 + 1 (x) H_F + sum_x |x><x| (x) (a(f_x) + a*(g_x)).

    Amplitudes are arrays of shape (n_x, dim); ``couplings`` holds f_x, g_x mode
    coefficients of shape (n_x, n_modes).
    """

    def __init__(self, tracer: TracerGrid, fs: FockSpace, H_F: sp.spmatrix | None,
                 f_coeffs: np.ndarray, g_coeffs: np.ndarray | None = None, kinetic: bool = True):
        self.tracer, self.fs, self.H_F = tracer, fs, H_F
        self.f = np.asarray(f_coeffs, dtype=complex)
        self.g = self.f if g_coeffs is None else np.asarray(g_coeffs, dtype=complex)
        self.kin = kinetic
        self.ann = [fs.annihilator(m) for m in range(fs.n_modes)]
        self.dim = tracer.n_x * fs.dim

    def apply_array(self, psi: np.ndarray) -> np.ndarray:
        out = self.tracer.kinetic(psi) if self.kin else np.zeros_like(psi)
        if self.H_F is not None:
            out = out + (self.H_F @ psi.T).T
        for m, a in enumerate(self.ann):
            ap = (a @ psi.T).T
            adp = (a.T @ psi.T).T
            out = out + np.conj(self.f[:, m])[:, None] * ap + self.g[:, m][:, None] * adp
        return out

    def handle(self) -> OperatorHandle:
        shape = (self.tracer.n_x, self.fs.dim)
        return OperatorHandle(self.dim, applier=lambda v: self.apply_array(v.reshape(shape)).ravel())


def coupling_finite(phi: Field, W: Field, Lam: float, modes: ModeSet, tracer: TracerGrid) -> np.ndarray:
    """<u_m, Q W_x phi> for every tracer point (shape n_x x n_modes)."""
    g = phi.grid
    ph = phi.values.ravel()
    rows = []
    for s in tracer.shifts(g):
        f = shifted(g, W.values, s) * ph
        f = f - ph * (np.vdot(ph, f) * g.cell / Lam)
        rows.append(modes.coefficients(f))
    return np.asarray(rows)


def build_HBF(which: str, modes: ModeSet, tracer: TracerGrid, fs: FockSpace, *, A: BlockOp | None = None,
              phi: Field | None = None, W: Field | None = None, Lam: float = 1.0, disp=None) -> OperatorHandle:
    """Froehlich-type Hamiltonians with a tracer.

    ``finite``: -Delta_x/2m + a(Q W_x phi) + a*(Q W_x phi) + H^Bog (generator ``A``).
    ``infty``: -Delta_x/2m + dGamma(omega) + a(g_x) + a*(g_x), with
    g_k(x) = sqrt(p^2/2w) (2 pi)^{d/2} W^(p) exp(-i p x) (2 pi / L)^{d/2}.
    """
    g = modes.grid
    if which == "finite":
        if A is None or phi is None or W is None:
            raise ValueError("finite BF needs generator, condensate and W")
        HB = build_HBog(A, modes, fs.N_max, fs).matrix
        c = coupling_finite(phi, W, Lam, modes, tracer)
        op = PolaronOperator(tracer, fs, HB, c)
    elif which == "infty":
        if disp is None or W is None:
            raise ValueError("infinite-volume BF needs a dispersion and W")
        w = mode_values(disp.omega, modes)
        HF = second_quantize(np.diag(w), fs).matrix
        op = PolaronOperator(tracer, fs, HF, coupling_infty(disp, W, modes, tracer.points()))
    else:
        raise ValueError("which must be 'finite' or 'infty'")
    h = op.handle()
    h.meta["op"] = op
    return h


def mode_values(arr: np.ndarray, modes: ModeSet) -> np.ndarray:
    g = modes.grid
    idx = tuple(np.asarray(modes.offsets).T + g.M // 2)
    return np.asarray(arr)[idx]


def coupling_weights(disp, W: Field, modes: ModeSet) -> np.ndarray:
    """sqrt(p^2 / 2 w) (2 pi)^{d/2} W^(p) (2 pi / L)^{d/2} per mode (x = 0)."""
    g = modes.grid
    what = (2 * np.pi) ** (g.d / 2) * fourier(W).values
    tau = mode_values(disp.tau, modes)
    return tau * mode_values(what, modes) * (2 * np.pi / g.L) ** (g.d / 2) / (2 * np.pi) ** (g.d / 2)


def coupling_infty(disp, W: Field, modes: ModeSet, xs: np.ndarray) -> np.ndarray:
    gk = coupling_weights(disp, W, modes)
    p1 = modes.momenta()[:, 0]
    return gk[None, :] * np.exp(-1j * np.outer(xs, p1))


# --- time evolution ----------------------------------------------------------------------------------

class KrylovError(RuntimeError):
    pass


def _tri_exp(alpha: list, beta: list, dt: float) -> np.ndarray:
    if len(alpha) == 1:
        return np.array([np.exp(-1j * dt * alpha[0])])
    theta, Z = sla.eigh_tridiagonal(np.array(alpha), np.array(beta))
    return Z @ (np.exp(-1j * dt * theta) * Z[0])


def lanczos_expm(H: Callable[[np.ndarray], np.ndarray], v: np.ndarray, dt: float, krylov_dim: int = 30,
                 tol: float = 1e-12) -> np.ndarray:
    """exp(-i dt H) v for hermitian H by Lanczos with full reorthogonalization.

    Convergence is judged by the standard a-posteriori estimate beta_k |y_k|.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy()
    Vs = [v / beta0]
    alpha: list = []
    beta: list = []
    for j in range(krylov_dim):
        w = H(Vs[j])
        a = float(np.vdot(Vs[j], w).real)
        alpha.append(a)
        w = w - a * Vs[j]
        if j:
            w = w - beta[-1] * Vs[j - 1]
        Vm = np.array(Vs)
        w = w - Vm.T @ (Vm.conj() @ w)
        b = float(np.linalg.norm(w))
        y = _tri_exp(alpha, beta, dt)
        if b < 1e-13 * max(1.0, abs(a)) or b * abs(y[-1]) < tol:
            return beta0 * (Vm.T @ y)
        beta.append(b)
        Vs.append(w / b)
    raise KrylovError(f"Lanczos did not converge in {krylov_dim} steps (estimate {b * abs(y[-1]):.2e})")


@dataclass
class Trajectory:
    times: list
    observables: list
    final: np.ndarray
    states: list = field(default_factory=list)


def time_evolve(
    H_provider: Callable[[float], OperatorHandle] | OperatorHandle,
    psi0: np.ndarray,
    t_final: float,
    dt: float,
    krylov_dim: int = 30,
    observe: Callable[[float, np.ndarray], dict] | None = None,
    keep_states: bool = False,
    check_halving: bool = False,
    halving_tol: float = 1e-7,
) -> Trajectory:
    """Step-wise Lanczos propagation, with H frozen at each step midpoint."""
    provider = H_provider if callable(H_provider) and not isinstance(H_provider, OperatorHandle) else (lambda t: H_provider)
    nsteps = max(1, int(round(t_final / dt)))
    dt = t_final / nsteps
    psi = np.asarray(psi0, dtype=complex).copy()
    traj = Trajectory([0.0], [observe(0.0, psi)] if observe else [], psi)
    if keep_states:
        traj.states.append(psi.copy())
    for j in range(nsteps):
        H = provider((j + 0.5) * dt)
        psi = lanczos_expm(H, psi, dt, krylov_dim)
        t = (j + 1) * dt
        traj.times.append(t)
        if observe:
            traj.observables.append(observe(t, psi))
        if keep_states:
            traj.states.append(psi.copy())
    traj.final = psi
    if check_halving:
        fine = time_evolve(provider, psi0, t_final, dt / 2, krylov_dim)
        err = np.linalg.norm(fine.final - psi) / np.linalg.norm(psi)
        traj.observables.append({"halving_error": err})
        if err > halving_tol:
            raise RuntimeError(f"step-halving disagreement {err:.2e}")
    return traj


# --- Bogoliubov unitaries ---------------------------------------------------------------------------

def unitary_generator(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H, K) with Z = exp(-i calA), calA = [[H, -K], [conj K, -conj H]], from the principal log."""
    n = Z.shape[0] // 2
    ev = np.linalg.eigvals(Z)
    if np.any((np.abs(ev.imag) < 1e-12) & (ev.real <= 0)):
        raise ValueError("symplectic matrix has an eigenvalue on the negative real axis: log branch undefined")
    calA = 1j * sla.logm(Z)
    H = calA[:n, :n]
    K = -calA[:n, n:]
    return 0.5 * (H + H.conj().T), 0.5 * (K + K.T)


@dataclass
class ImplementResult:
    state: np.ndarray
    leakage: float
    fs: FockSpace


def embed(state: np.ndarray, small: FockSpace, big: FockSpace) -> np.ndarray:
    out = np.zeros(big.dim, dtype=complex)
    out[big.lookup(small.states)] = state
    return out


def restrict_state(state: np.ndarray, big: FockSpace, small: FockSpace) -> np.ndarray:
    return state[big.lookup(small.states)]


def implement_bogoliubov_unitary(Z: np.ndarray, state: np.ndarray, fs: FockSpace, pad: int = 2,
                                 leak_tol: float | None = None, krylov_dim: int = 40, substeps: int = 4) -> ImplementResult:
    """U_Z state with U_Z A(F) U_Z* = A(Z F), evaluated on the N_max + pad truncation.

    The returned state lives on ``fs``; the weight lost above N_max is the leakage.
    """
    H, K = unitary_generator(Z)
    big = FockSpace(fs.n_modes, fs.N_max + pad)
    G = quadratic_hamiltonian(H, K, big)
    psi = embed(state, fs, big)
    for _ in range(substeps):
        psi = lanczos_expm(G, psi, 1.0 / substeps, krylov_dim)
    kept = restrict_state(psi, big, fs)
    leak = float(np.sqrt(max(0.0, np.linalg.norm(psi) ** 2 - np.linalg.norm(kept) ** 2)))
    if leak_tol is not None and leak > leak_tol:
        raise RuntimeError(f"truncation leakage {leak:.2e} above {leak_tol:.1e}")
    return ImplementResult(kept, leak, fs)


def conjugation_residual(Z: np.ndarray, f: np.ndarray, psi: np.ndarray, fs: FockSpace) -> float:
    """||(U_Z a(f) U_Z* - a(C f) - a*(conj(B f))) psi|| with U_Z from a dense exponential on ``fs``."""
    n = fs.n_modes
    H, K = unitary_generator(Z)
    G = quadratic_hamiltonian(H, K, fs).dense()
    U = sla.expm(-1j * G)
    af = field_operator(fs, f, np.zeros(n)).toarray()
    Zf = Z @ np.concatenate([f, np.zeros(n)])
    rhs = field_operator(fs, Zf[:n], Zf[n:].conj()).toarray()
    return float(np.linalg.norm((U @ af @ U.conj().T - rhs) @ psi))


def squeeze_matrix(r: float, n_modes: int = 1, mode: int = 0) -> np.ndarray:
    Z = np.eye(2 * n_modes, dtype=complex)
    Z[mode, mode] = Z[n_modes + mode, n_modes + mode] = np.cosh(r)
    Z[mode, n_modes + mode] = Z[n_modes + mode, mode] = np.sinh(r)
    return Z


def doubled_coefficients(F, modes: ModeSet) -> tuple[np.ndarray, np.ndarray]:
    """Mode coefficients of a DoubledVector f (+) Jg: (<u_m, f>, <u_m, g>)."""
    f = modes.coefficients(F.upper)
    gco = modes.coefficients(F.lower.conj())
    return f, gco


def transformed_BF_generator(tracer: TracerGrid, fs: FockSpace, modes: ModeSet,
                             vectors: np.ndarray, lower: np.ndarray | None = None) -> OperatorHandle:
    """-Delta_x/2m + A(F_x) for precomputed doubled vectors F_x = f_x (+) J g_x.

    ``vectors`` and ``lower`` hold the (n_x, n_modes) coefficients <u_m, f_x>, <u_m, g_x>.
    """
    op = PolaronOperator(tracer, fs, None, vectors, lower)
    h = op.handle()
    h.meta["op"] = op
    return h


# --- observables ---------------------------------------------------------------------------------------

def tracer_moments(psi: np.ndarray, tracer: TracerGrid, fs: FockSpace, M_pow: int = 1) -> dict:
    """<x^{2M}>, <(-Delta_x)^M>, <h_oc^M> with h_oc = -Delta_x + x^2 + (N+1)^2."""
    if M_pow not in (1, 2):
        raise ValueError("M_pow must be 1 or 2")
    P = np.asarray(psi).reshape(tracer.n_x, fs.dim)
    nrm = np.vdot(P, P).real
    x = tracer.points()
    x2m = float(np.sum(x ** (2 * M_pow) * np.sum(np.abs(P) ** 2, axis=1)).real / nrm)
    k2 = np.fft.ifftshift(tracer.momenta() ** 2)
    Ph = np.fft.fft(np.fft.ifftshift(P, axes=0), axis=0)
    lap = float(np.sum((k2**M_pow)[:, None] * np.abs(Ph) ** 2).real / (tracer.n_x * nrm))
    Nn = fs.number_diag()

    def hoc(v):
        kin = np.fft.fftshift(np.fft.ifft(k2[:, None] * np.fft.fft(np.fft.ifftshift(v, axes=0), axis=0), axis=0), axes=0)
        return kin + (x**2)[:, None] * v + ((Nn + 1) ** 2)[None, :] * v

    hv = hoc(P)
    if M_pow == 1:
        oc = float(np.vdot(P, hv).real / nrm)
    else:
        oc = float(np.vdot(hv, hv).real / nrm)
    return {"x2M": x2m, "lapM": lap, "hocM": oc}


def number_expectation(psi: np.ndarray, fs: FockSpace, n_x: int = 1, power: int = 1) -> float:
    P = np.asarray(psi).reshape(n_x, fs.dim)
    w = np.sum(np.abs(P) ** 2, axis=0)
    return float(np.sum(w * fs.number_diag() ** power) / np.sum(w))


def gaussian_tracer(tracer: TracerGrid, fs: FockSpace, width: float = 1.0, fock_state: np.ndarray | None = None) -> np.ndarray:
    x = tracer.points()
    chi = np.exp(-(x**2) / (2 * width**2)).astype(complex)
    chi /= np.linalg.norm(chi)
    fsv = fs.vacuum() if fock_state is None else fock_state
    return np.outer(chi, fsv).ravel()


# --- polaron fiber ------------------------------------------------------------------------------------

def fiber_hamiltonian(P: float, omega: np.ndarray, pk: np.ndarray, gk: np.ndarray, fs: FockSpace, m: float = 1.0) -> sp.csr_matrix:
    """(P - dGamma(p))^2/2m + dGamma(w) + a(g) + a*(g) on the truncated Fock space."""
    occ = fs.states
    ptot = occ @ pk
    diag = (P - ptot) ** 2 / (2 * m) + occ @ omega
    H = sp.diags(diag.astype(complex)).tocsr()
    return (H + field_operator(fs, gk)).tocsr()


def polaron_fiber_energy(P: float, omega: np.ndarray, pk: np.ndarray, gk: np.ndarray, N_max: int,
                         m: float = 1.0, tol: float = 1e-12) -> float:
    """Lowest eigenvalue of the fiber Hamiltonian H(P); dense below 400 states, else Lanczos."""
    fs = FockSpace(len(omega), N_max)
    H = fiber_hamiltonian(P, np.asarray(omega), np.asarray(pk), np.asarray(gk), fs, m)
    if fs.dim <= 400:
        return float(np.linalg.eigvalsh(H.toarray())[0])
    # ARPACK can skip an exactly-zero lowest eigenvalue (the free vacuum at P = 0);
    # shifting the spectrum to be bounded away from zero avoids that
    shift = 1.0 - float(H.diagonal().real.min())
    Hs = (H + shift * sp.identity(fs.dim, format="csr")).tocsr()
    v0 = np.random.default_rng(0).standard_normal(fs.dim) + fs.vacuum()
    try:
        w = eigsh(Hs, k=1, which="SA", tol=tol, v0=v0, maxiter=20000)[0]
    except Exception as exc:  # ARPACK non-convergence
        raise RuntimeError(f"fiber eigensolver failed: {exc}") from exc
    return float(w[0]) - shift


def perturbative_energy(omega: np.ndarray, pk: np.ndarray, gk: np.ndarray, m: float = 1.0) -> float:
    return float(-np.sum(np.abs(gk) ** 2 / (omega + pk**2 / (2 * m))))


# --- serialization --------------------------------------------------------------------------------------

@dataclass
class PolaronState:
    amplitudes: np.ndarray  # (n_x, dim)
    fs: FockSpace
    tracer: TracerGrid
    offsets: tuple = ()

    def save(self, path: str | Path) -> None:
        np.savez(path, amplitudes=self.amplitudes, n_modes=self.fs.n_modes, N_max=self.fs.N_max,
                 n_x=self.tracer.n_x, L_x=self.tracer.L_x, m=self.tracer.m,
                 offsets=np.asarray(self.offsets, dtype=int))

    @classmethod
    def load(cls, path: str | Path) -> "PolaronState":
        z = np.load(path)
        fs = FockSpace(int(z["n_modes"]), int(z["N_max"]))
        tr = TracerGrid(int(z["n_x"]), float(z["L_x"]), float(z["m"]))
        offs = tuple(tuple(int(c) for c in row) for row in z["offsets"])
        return cls(z["amplitudes"], fs, tr, offs)
