"""Periodic grids, complex fields, Fourier kernels and the doubled-space block algebra.

Conventions
-----------
Positions sit on the symmetric lattice ``x_j = (j - M/2) h`` so that the origin is
a lattice point and reflection ``x -> -x`` maps the lattice onto itself.
Momenta are ``p_k = 2 pi k / L`` with ``k = -M/2, ..., M/2 - 1`` (fftshift order).

The transform approximates the continuum one,

    f^(p) = (2 pi)^{-d/2} sum_x f(x) exp(-i p x) h^d,

so that position norms use the weight ``h^d`` and momentum norms ``(2 pi / L)^d``.

A doubled vector ``f (+) Jg`` keeps the concrete function ``Jg = conj(g)`` in its
lower slot, which makes every Bogoliubov map complex linear on the stored pair::

    [[c, sign * conj(b)],
     [b, sign * conj(c)]]

Here ``conj(A)`` is the operator ``psi -> conj(A conj(psi))``. With ``sign = +1``
this is the usual form of a Bogoliubov map. With ``sign = -1`` it is that form
multiplied by ``S = diag(1, -1)`` from the right, which is the shape taken by the
generators ``A(t)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

MAGIC = b"PLF1"
POSITION = "position"
MOMENTUM = "momentum"
DENSE_CAP = 2048  # max rows of an assembled doubled-space matrix


def _is_pow2(m: int) -> bool:
    return m > 0 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    d: int
    M: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension d={self.d} not in {{1,2,3}}")
        if not _is_pow2(self.M) or self.M < 2:
            raise ValueError(f"M={self.M} must be a power of two")
        if not self.L > 0:
            raise ValueError(f"L_box={self.L} must be positive")

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def size(self) -> int:
        return self.M**self.d

    @property
    def dp(self) -> float:
        return 2 * np.pi / self.L

    @property
    def cell(self) -> float:
        """Position quadrature weight h^d."""
        return self.h**self.d

    def axis(self) -> np.ndarray:
        return (np.arange(self.M) - self.M // 2) * self.h

    def momentum_axis(self) -> np.ndarray:
        return (np.arange(self.M) - self.M // 2) * self.dp

    def coords(self) -> list[np.ndarray]:
        return list(np.meshgrid(*([self.axis()] * self.d), indexing="ij"))

    def momenta(self) -> list[np.ndarray]:
        return list(np.meshgrid(*([self.momentum_axis()] * self.d), indexing="ij"))

    def r2(self) -> np.ndarray:
        return sum(x**2 for x in self.coords())

    def p2(self) -> np.ndarray:
        return sum(p**2 for p in self.momenta())

    def zero_mode(self) -> tuple[int, ...]:
        return (self.M // 2,) * self.d

    def nonzero_modes(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.zero_mode()] = False
        return mask

    def reflect_index(self) -> np.ndarray:
        """Flat index permutation implementing k -> -k (also x -> -x)."""
        idx = np.arange(self.size).reshape(self.shape)
        for ax in range(self.d):
            idx = np.roll(np.flip(idx, axis=ax), 1, axis=ax)
        return idx.ravel()


@dataclass(frozen=True)
class Field:
    grid: GridSpec
    values: np.ndarray
    space: str = POSITION

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.size != self.grid.size:
            raise ValueError(f"field has {v.size} values, grid needs {self.grid.size}")
        object.__setattr__(self, "values", v.reshape(self.grid.shape))
        if self.space not in (POSITION, MOMENTUM):
            raise ValueError(f"unknown space tag {self.space!r}")

    def weight(self) -> float:
        return self.grid.cell if self.space == POSITION else self.grid.dp**self.grid.d

    def norm(self, p: float = 2) -> float:
        return lp_norm(self, p)

    def inner(self, other: "Field") -> complex:
        _same_grid(self, other)
        return complex(np.vdot(self.values, other.values) * self.weight())

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values, self.space)

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, s) -> "Field":
        if isinstance(s, Field):
            _same_grid(self, s)
            return self.with_values(self.values * s.values)
        return self.with_values(self.values * s)

    __rmul__ = __mul__

    def conj(self) -> "Field":
        return self.with_values(self.values.conj())


def _same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    if a.space != b.space:
        raise ValueError(f"space mismatch: {a.space} vs {b.space}")


def position_field(grid: GridSpec, values) -> Field:
    return Field(grid, np.broadcast_to(np.asarray(values, dtype=complex), grid.shape).copy())


# --- transforms ----------------------------------------------------------------

def _fwd(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    axes = tuple(range(grid.d))
    c = (2 * np.pi) ** (-grid.d / 2) * grid.cell
    return c * np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(v, axes=axes), axes=axes), axes=axes)


def _bwd(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    axes = tuple(range(grid.d))
    c = (2 * np.pi) ** (grid.d / 2) / grid.cell
    return c * np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(v, axes=axes), axes=axes), axes=axes)


def fourier(f: Field, direction: str = "forward") -> Field:
    """Continuum-normalized discrete Fourier transform ("forward" or "inverse")."""
    if direction == "forward":
        if f.space != POSITION:
            raise ValueError("forward transform expects a position-space field")
        return Field(f.grid, _fwd(f.grid, f.values), MOMENTUM)
    if direction == "inverse":
        if f.space != MOMENTUM:
            raise ValueError("inverse transform expects a momentum-space field")
        return Field(f.grid, _bwd(f.grid, f.values), POSITION)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def convolve(V: Field, f: Field) -> Field:
    """Periodic convolution (V*f)(x) = sum_y V(x-y) f(y) h^d."""
    _same_grid(V, f)
    if V.space != POSITION:
        raise ValueError("convolve expects position-space fields")
    g = V.grid
    vh = _fwd(g, V.values) * (2 * np.pi) ** (g.d / 2)
    return Field(g, _bwd(g, vh * _fwd(g, f.values)))


def multiplier_apply(grid: GridSpec, symbol: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the Fourier multiplier with the given symbol to position values."""
    return _bwd(grid, symbol * _fwd(grid, v.reshape(grid.shape))).reshape(v.shape)


# --- norms ---------------------------------------------------------------------

def lp_norm(f: Field, p: float) -> float:
    a = np.abs(f.values)
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a**p) * f.weight()) ** (1.0 / p))


def _parse_norm(spec) -> tuple[str, list[float]]:
    if isinstance(spec, (int, float)):
        return "single", [float(spec)]
    s = str(spec).replace(" ", "")
    for sep, kind in (("∧", "wedge"), ("^", "wedge"), (",", "sum")):
        if sep in s:
            return kind, [float(t) for t in s.split(sep)]
    return "single", [float(s)]


def mixed_norm(f: Field, spec) -> float:
    """p-norms ("2", "inf"), the wedge surrogate ("1∧2" or "1^2") and sums ("1,2").

    The wedge norm is an infimum over splittings f = f1 + f2. Only the trivial
    splittings are tried, which gives the smallest single norm, an upper bound.
    """
    kind, ps = _parse_norm(spec)
    vals = [lp_norm(f, p) for p in ps]
    if kind == "sum":
        return float(sum(vals))
    return float(min(vals))


# --- serialization ---------------------------------------------------------------

MATRIX_TAG = 2


def _write_container(path: Union[str, Path], grid: "GridSpec", tag: int, values: np.ndarray) -> None:
    head = MAGIC + struct.pack("<iidi", grid.d, grid.M, grid.L, tag)
    data = np.ascontiguousarray(np.asarray(values, dtype=complex).ravel()).astype("<c16").tobytes()
    Path(path).write_bytes(head + data)


def _read_container(path: Union[str, Path]) -> tuple["GridSpec", int, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a PLF1 field container")
    d, M, L, tag = struct.unpack("<iidi", raw[4:24])
    return GridSpec(d, M, L), tag, np.frombuffer(raw[24:], dtype="<c16").copy()


def save_field(f: Field, path: Union[str, Path]) -> None:
    _write_container(path, f.grid, 0 if f.space == POSITION else 1, f.values)


def load_field(path: Union[str, Path]) -> Field:
    grid, tag, vals = _read_container(path)
    if tag not in (0, 1):
        raise ValueError("container holds a matrix, not a field")
    return Field(grid, vals, POSITION if tag == 0 else MOMENTUM)


def save_matrix(grid: "GridSpec", A: np.ndarray, path: Union[str, Path]) -> None:
    """Grid-indexed (n x n) matrix in the field container, space tag 2."""
    A = np.asarray(A)
    if A.shape != (grid.size, grid.size):
        raise ValueError("matrix does not match the grid")
    _write_container(path, grid, MATRIX_TAG, A)


def load_matrix(path: Union[str, Path]) -> tuple["GridSpec", np.ndarray]:
    grid, tag, vals = _read_container(path)
    if tag != MATRIX_TAG:
        raise ValueError("container holds a field, not a matrix")
    return grid, vals.reshape(grid.size, grid.size)


# --- doubled space ------------------------------------------------------------------

@dataclass(frozen=True)
class DoubledVector:
    """Element f (+) Jg of the doubled space; ``lower`` stores Jg = conj(g)."""

    upper: np.ndarray
    lower: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        u = np.asarray(self.upper, dtype=complex).ravel()
        l = np.asarray(self.lower, dtype=complex).ravel()
        if u.size != self.grid.size or l.size != self.grid.size:
            raise ValueError("doubled vector components must match the grid")
        object.__setattr__(self, "upper", u)
        object.__setattr__(self, "lower", l)

    @classmethod
    def from_function(cls, f: Field) -> "DoubledVector":
        """f (+) Jf."""
        return cls(f.values, f.values.conj(), f.grid)

    @classmethod
    def from_pair(cls, f: Field, g: Field) -> "DoubledVector":
        """f (+) Jg."""
        _same_grid(f, g)
        return cls(f.values, g.values.conj(), f.grid)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.upper, self.lower])

    def norm(self) -> float:
        return float(np.sqrt(self.grid.cell) * np.linalg.norm(self.stacked()))

    def __sub__(self, other: "DoubledVector") -> "DoubledVector":
        return DoubledVector(self.upper - other.upper, self.lower - other.lower, self.grid)

    def __add__(self, other: "DoubledVector") -> "DoubledVector":
        return DoubledVector(self.upper + other.upper, self.lower + other.lower, self.grid)

    def scaled(self, s: complex) -> "DoubledVector":
        return DoubledVector(self.upper * s, self.lower * s, self.grid)


Block = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], float, int, complex]


def _kind(blk) -> str:
    if callable(blk):
        return "applier"
    if np.isscalar(blk):
        return "scalar"
    a = np.asarray(blk)
    return "dense" if a.ndim == 2 else "multiplier"


@dataclass(frozen=True)
class BlockOp:
    """Doubled-space operator with blocks c, b (see module docstring for layout).

    Each block is a dense matrix on position grid values, a momentum-space
    multiplier (array with the grid shape), a scalar, or a matrix-free applier.
    """

    grid: GridSpec
    c: Block
    b: Block = 0.0
    sign: int = 1
    is_symplectic_candidate: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        for blk in (self.c, self.b):
            k = _kind(blk)
            if k == "dense" and np.asarray(blk).shape != (self.grid.size,) * 2:
                raise ValueError("dense block does not match the grid")
            if k == "multiplier" and np.asarray(blk).size != self.grid.size:
                raise ValueError("multiplier block does not match the grid")

    # block actions ------------------------------------------------------------
    def _act(self, blk, v: np.ndarray) -> np.ndarray:
        k = _kind(blk)
        if k == "scalar":
            return blk * v
        if k == "dense":
            return np.asarray(blk) @ v
        if k == "multiplier":
            return multiplier_apply(self.grid, np.asarray(blk).reshape(self.grid.shape), v)
        return np.asarray(blk(v))

    def _act_conj(self, blk, v: np.ndarray) -> np.ndarray:
        return self._act(blk, v.conj()).conj()

    def apply(self, F: DoubledVector) -> DoubledVector:
        if F.grid != self.grid:
            raise ValueError("grid mismatch between operator and vector")
        f, g = F.upper, F.lower
        up = self._act(self.c, f) + self.sign * self._act_conj(self.b, g)
        lo = self._act(self.b, f) + self.sign * self._act_conj(self.c, g)
        return DoubledVector(up, lo, self.grid)

    # assembly -------------------------------------------------------------------
    def block_matrix(self, which: str) -> np.ndarray:
        blk = self.c if which == "c" else self.b
        n = self.grid.size
        k = _kind(blk)
        if k == "applier":
            raise ValueError("matrix-free block cannot be assembled")
        if k == "dense":
            return np.asarray(blk, dtype=complex)
        if k == "scalar":
            return complex(blk) * np.eye(n)
        if 2 * n > DENSE_CAP:
            raise ValueError(f"dense assembly of {2 * n} rows exceeds cap {DENSE_CAP}")
        eye = np.eye(n, dtype=complex)
        return np.stack([self._act(blk, eye[:, j]) for j in range(n)], axis=1)

    def dense(self) -> np.ndarray:
        if 2 * self.grid.size > DENSE_CAP:
            raise ValueError(f"dense assembly of {2 * self.grid.size} rows exceeds cap {DENSE_CAP}")
        C, B = self.block_matrix("c"), self.block_matrix("b")
        return np.block([[C, self.sign * B.conj()], [B, self.sign * C.conj()]])

    def is_multiplier(self) -> bool:
        return all(_kind(x) in ("multiplier", "scalar") for x in (self.c, self.b))

    def symbols(self) -> tuple[np.ndarray, np.ndarray]:
        """Momentum symbols of a multiplier op (scalars broadcast)."""
        if not self.is_multiplier():
            raise ValueError("operator is not a Fourier multiplier")
        sh = self.grid.shape
        c = np.broadcast_to(np.asarray(self.c, dtype=complex), sh).reshape(sh)
        b = np.broadcast_to(np.asarray(self.b, dtype=complex), sh).reshape(sh)
        return c, b

    def mode_blocks(self) -> np.ndarray:
        """Per-momentum 2x2 matrices on (f^(p), G^(p)) for multiplier ops.

        The conjugated block conj(A) of a multiplier with symbol a(p) is the
        multiplier conj(a(-p)).
        """
        c, b = (s.ravel() for s in self.symbols())
        r = self.grid.reflect_index()
        out = np.empty((c.size, 2, 2), dtype=complex)
        out[:, 0, 0] = c
        out[:, 0, 1] = self.sign * b[r].conj()
        out[:, 1, 0] = b
        out[:, 1, 1] = self.sign * c[r].conj()
        return out

    # algebra -----------------------------------------------------------------------
    def __matmul__(self, other: "BlockOp") -> "BlockOp":
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        s = self.sign
        if self.is_multiplier() and other.is_multiplier():
            r = self.grid.reflect_index().reshape(self.grid.shape)
            c1, b1 = self.symbols()
            c2, b2 = other.symbols()
            cb1 = b1.ravel()[r].conj()
            cc1 = c1.ravel()[r].conj()
            return BlockOp(self.grid, c1 * c2 + s * cb1 * b2, b1 * c2 + s * cc1 * b2, s * other.sign)
        C1, B1 = self.block_matrix("c"), self.block_matrix("b")
        C2, B2 = other.block_matrix("c"), other.block_matrix("b")
        return BlockOp(self.grid, C1 @ C2 + s * B1.conj() @ B2, B1 @ C2 + s * C1.conj() @ B2, s * other.sign)

    def adjoint(self) -> "BlockOp":
        if self.is_multiplier():
            c, b = self.symbols()
            r = self.grid.reflect_index().reshape(self.grid.shape)
            # transpose of a multiplier with symbol b(p) has symbol b(-p)
            return BlockOp(self.grid, c.conj(), self.sign * b.ravel()[r], self.sign)
        C, B = self.block_matrix("c"), self.block_matrix("b")
        return BlockOp(self.grid, C.conj().T, self.sign * B.T, self.sign)

    def bogoliubov_inverse(self) -> "BlockOp":
        """S Z* S, the inverse of a Bogoliubov map."""
        S = identity_op(self.grid, sign=-1)
        return S @ self.adjoint() @ S

    def scaled(self, s: float) -> "BlockOp":
        def mul(blk):
            if callable(blk):
                return lambda v, blk=blk: s * np.asarray(blk(v))
            return s * np.asarray(blk) if not np.isscalar(blk) else s * blk

        return BlockOp(self.grid, mul(self.c), mul(self.b), self.sign, self.is_symplectic_candidate, dict(self.meta))


def identity_op(grid: GridSpec, sign: int = 1) -> BlockOp:
    """Identity (sign=+1) or S = diag(1,-1) (sign=-1)."""
    return BlockOp(grid, 1.0, 0.0, sign)


def symplectic_defect(op: BlockOp) -> float:
    """max(||Z S Z* - S||_F, ||Z* S Z - S||_F)."""
    if any(_kind(x) == "applier" for x in (op.c, op.b)):
        raise ValueError("matrix-free operators cannot be assembled for a defect check")
    if op.is_multiplier():
        Z = op.mode_blocks()
        S = np.diag([1.0, -1.0])
        Zh = np.conj(np.swapaxes(Z, 1, 2))
        e1 = Z @ S @ Zh - S
        e2 = Zh @ S @ Z - S
        return float(max(np.sqrt(np.sum(np.abs(e1) ** 2)), np.sqrt(np.sum(np.abs(e2) ** 2))))
    Z = op.dense()
    n = op.grid.size
    S = np.diag(np.r_[np.ones(n), -np.ones(n)])
    Zh = Z.conj().T
    return float(max(np.linalg.norm(Z @ S @ Zh - S), np.linalg.norm(Zh @ S @ Z - S)))


def hs_offdiag_norm(op: BlockOp) -> float:
    """Frobenius (Hilbert-Schmidt on the grid) norm of the b block."""
    if _kind(op.b) == "applier":
        raise ValueError("matrix-free block cannot be assembled")
    if _kind(op.b) == "multiplier":
        return float(np.linalg.norm(np.asarray(op.b)))
    return float(np.linalg.norm(op.block_matrix("b")))


def apply_block(op: BlockOp, F: DoubledVector) -> DoubledVector:
    return op.apply(F)


def translation(grid: GridSpec, shift: tuple[int, ...]) -> Callable[[np.ndarray], np.ndarray]:
    """T_x psi = psi(. - x) for a lattice shift x = shift * h."""

    def act(v: np.ndarray) -> np.ndarray:
        return np.roll(v.reshape(grid.shape), shift, axis=tuple(range(grid.d))).ravel()

    return act


def reflection(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """R psi(x) = psi(-x) on the symmetric lattice."""
    return v.ravel()[grid.reflect_index()]


def save_blockop(op: BlockOp, directory: Union[str, Path], provenance: str = "", timestamp: str = "") -> None:
    """Write c.plf, b.plf and a key = value header.txt into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_matrix(op.grid, op.block_matrix("c"), d / "c.plf")
    save_matrix(op.grid, op.block_matrix("b"), d / "b.plf")
    prov = provenance or str(op.meta.get("provenance", ""))
    lines = [f"provenance = {prov}", f"timestamp = {timestamp}", f"sign = {op.sign}",
             f"d = {op.grid.d}", f"M = {op.grid.M}", f"L = {op.grid.L!r}"]
    (d / "header.txt").write_text("\n".join(lines) + "\n")


def load_blockop(directory: Union[str, Path]) -> BlockOp:
    d = Path(directory)
    head = {}
    for line in (d / "header.txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            head[k.strip()] = v.strip()
    grid, C = load_matrix(d / "c.plf")
    grid_b, B = load_matrix(d / "b.plf")
    if grid_b != grid:
        raise ValueError("c and b containers disagree on the grid")
    meta = {"provenance": head.get("provenance", ""), "timestamp": head.get("timestamp", "")}
    return BlockOp(grid, C, B, int(head.get("sign", 1)), meta=meta)
