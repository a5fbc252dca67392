"""Boson-boson (V) and boson-impurity (W) potentials and their assumption reports."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .spectral import Field, GridSpec, fourier, lp_norm, multiplier_apply

FAMILIES = ("gaussian", "cosine-bump")


@dataclass(frozen=True)
class PotentialSpec:
    family: str = "gaussian"
    amplitude: float = 1.0
    width: float = 1.0  # sigma for gaussians, radius for bumps
    role: str = "V"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.role not in ("V", "W"):
            raise ValueError(f"role must be V or W, got {self.role!r}")
        if not self.width > 0:
            raise ValueError(f"width={self.width} must be positive")


def _periodized_gaussian(spec: PotentialSpec, grid: GridSpec) -> np.ndarray:
    """Gaussian summed over the nearest box images, so its grid transform is positive."""
    out = np.zeros(grid.shape)
    xs = grid.coords()
    for img in product((-1, 0, 1), repeat=grid.d):
        r2 = sum((x + k * grid.L) ** 2 for x, k in zip(xs, img))
        out += np.exp(-r2 / (2 * spec.width**2))
    return spec.amplitude * out


def _profile(spec: PotentialSpec, r2: np.ndarray) -> np.ndarray:
    if spec.family == "gaussian":
        return spec.amplitude * np.exp(-r2 / (2 * spec.width**2))
    # raised cosine, smooth to first order at r = radius
    r = np.sqrt(r2)
    out = 0.5 * (1 + np.cos(np.pi * r / spec.width))
    return spec.amplitude * np.where(r < spec.width, out, 0.0)


def build_potential(spec: PotentialSpec, grid: GridSpec, tol: float = 1e-12) -> Field:
    """Real, even potential sampled on the grid (position space)."""
    if spec.width < 2 * grid.h:
        raise ValueError(f"width={spec.width} unresolved: needs >= 2h = {2 * grid.h}")
    if spec.width > grid.L / 8:
        raise ValueError(f"width={spec.width} too large for L_box={grid.L} (limit L/8)")
    if spec.family == "gaussian":
        vals = _periodized_gaussian(spec, grid)
    else:
        vals = _profile(spec, grid.r2())
    V = Field(grid, vals.astype(complex))
    if spec.role == "V":
        vh = fourier(V).values.real
        if vh.min() < -tol * max(np.abs(vh).max(), 1e-300):
            raise ValueError(f"V^ negative on the grid (min {vh.min():.3e}); V must be positive type")
    return V


def integral(f: Field) -> complex:
    return complex(f.values.sum() * f.grid.cell)


def spectral_derivative(f: Field, beta: tuple[int, ...]) -> Field:
    """partial^beta f via the Fourier multiplier (i p)^beta."""
    g = f.grid
    ps = g.momenta()
    sym = np.ones(g.shape, dtype=complex)
    for ax, k in enumerate(beta):
        sym = sym * (1j * ps[ax]) ** k
    return Field(g, multiplier_apply(g, sym, f.values))


def multi_indices(d: int, order: int):
    for beta in product(range(order + 1), repeat=d):
        if sum(beta) == order:
            yield beta


def assumption_report(V: Field, W: Field, k_max: int = 4, M_reg: int = 2) -> dict:
    """Surrogates of the norms appearing in the standing potential assumptions.

    No thresholds are applied; the constants involved are not quantified.
    """
    if V.grid != W.grid:
        raise ValueError("V and W must share a grid")
    g = V.grid
    r = np.sqrt(g.r2())
    rep: dict[str, float] = {}
    vh = fourier(V)
    rep["Vhat_L1"] = lp_norm(vh, 1)
    for k in range(k_max + 1):
        rep[f"yk_V_L1[k={k}]"] = float(np.sum(r**k * np.abs(V.values)) * g.cell)
    rep["y_V_Linf"] = float(np.max(r * np.abs(V.values)))
    # H^2 norm of W from the momentum side
    wh = fourier(W)
    w8 = (1 + g.p2()) ** 2 * np.abs(wh.values) ** 2
    rep["W_H2"] = float(np.sqrt(np.sum(w8) * g.dp**g.d))
    for k in range(k_max + 1):
        rep[f"yk_W_Linf[k={k}]"] = float(np.max(r**k * np.abs(W.values)))
    # W^{M,inf} by finite differences, (1+y^2-Delta)^{1/4} d^beta W in L^2
    wmax = 0.0
    for order in range(M_reg + 1):
        for beta in multi_indices(g.d, order):
            dv = W.values
            for ax, k in enumerate(beta):
                for _ in range(k):
                    dv = (np.roll(dv, -1, axis=ax) - np.roll(dv, 1, axis=ax)) / (2 * g.h)
            wmax = max(wmax, float(np.max(np.abs(dv))))
            dW = spectral_derivative(W, beta)
            rep[f"reg_W_L2[beta={beta}]"] = _quarter_osc_norm(dW)
    rep["W_WMinf"] = wmax
    return rep


def _quarter_osc_norm(f: Field) -> float:
    """||(1 + y^2 - Delta)^{1/4} f||_2 through a dense eigen-decomposition on small grids.

    For grids larger than 1024 points the operator is bounded by the sum of the
    momentum and position quarter powers, which is what is returned there.
    """
    g = f.grid
    n = g.size
    if n <= 1024:
        eye = np.eye(n, dtype=complex)
        lap = np.stack([multiplier_apply(g, g.p2().astype(complex), eye[:, j]) for j in range(n)], axis=1)
        H = lap + np.diag(1 + g.r2().ravel())
        H = 0.5 * (H + H.conj().T)
        w, U = np.linalg.eigh(H)
        v = U @ (np.maximum(w, 0) ** 0.25 * (U.conj().T @ f.values.ravel()))
        return float(np.linalg.norm(v) * np.sqrt(g.cell))
    a = multiplier_apply(g, ((1 + g.p2()) ** 0.25).astype(complex), f.values)
    b = (1 + g.r2()) ** 0.25 * f.values
    return float((np.linalg.norm(a) + np.linalg.norm(b)) * np.sqrt(g.cell))
