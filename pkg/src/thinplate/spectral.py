"""Eigenbasis of -Delta_h on the periodic x Neumann box, projections and smoothed stresses.

Nodal fields are expanded in Fourier modes along x' times cosines along x_d.
The cosine transform diagonalises the compact Neumann second difference used
in :mod:`thinplate.fields`, so the eigenvalue table

    lambda(k, j) = |k|^2 + (2 / dz^2) (1 - cos(pi j dz)) / h^2

belongs to the implemented operator and truncations are exact orthogonal
projections for the trapezoid inner product.

Gauss-point tensors (used by the solver's energy) get the same labels through
a weighted orthonormalisation of the sampled cosines; modes beyond the nodal
resolution are always discarded by a finite projection.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import material
from .fields import NODES, Field, GridSpec, TensorField, grid_ops
from .material import MaterialModel

INF = math.inf


def thickness_eigenvalues(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of the scaled discrete Neumann operator -(1/h^2) d^2/dx_d^2."""
    M = grid.N_thick
    dz = 1.0 / (M - 1)
    j = np.arange(M)
    return 2.0 / dz**2 * (1.0 - np.cos(np.pi * j * dz)) / grid.h**2


@functools.lru_cache(maxsize=64)
def eigenvalue_table(grid: GridSpec) -> np.ndarray:
    """lambda(k, j) on the real-FFT tangential layout, shape (*tan_rfft, N_thick)."""
    ops = grid_ops(grid)
    ksq = ops.k_squared
    return ksq + thickness_eigenvalues(grid).reshape((1,) * (grid.d - 1) + (-1,))


@dataclass(frozen=True, eq=False)
class SpectralRep:
    """Coefficients in the Fourier x cosine basis.

    ``coeffs[..., k, j]`` multiplies exp(i k.x') cos(pi j (x_d + 1/2)); the
    tangential index uses the real-FFT half spectrum on the last axis.
    """

    grid: GridSpec
    coeffs: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalue_table(self.grid)


def _dct_scale(M):
    s = np.full(M, 1.0 / (M - 1))
    s[0] *= 0.5
    s[-1] *= 0.5
    return s


def analyze_array(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    ops = grid_ops(grid)
    a_hat = np.fft.rfftn(a, axes=ops.tan_axes, norm="forward")
    c = scipy.fft.dct(a_hat.real, type=1, axis=-1) + 1j * scipy.fft.dct(a_hat.imag, type=1, axis=-1)
    return c * _dct_scale(grid.N_thick)


def synthesize_array(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    ops = grid_ops(grid)
    y = c / _dct_scale(grid.N_thick)
    a_hat = scipy.fft.idct(y.real, type=1, axis=-1) + 1j * scipy.fft.idct(y.imag, type=1, axis=-1)
    return np.fft.irfftn(a_hat, s=grid.tan_shape, axes=ops.tan_axes, norm="forward")


def analyze(u) -> SpectralRep:
    if getattr(u, "at", NODES) != NODES:
        raise ValueError("analyze expects nodal values")
    return SpectralRep(u.grid, analyze_array(u.grid, u.values))


def synthesize(S: SpectralRep, like=None):
    vals = synthesize_array(S.grid, S.coeffs)
    if vals.ndim == S.grid.d + 1:
        return Field(S.grid, vals)
    return TensorField(S.grid, vals)


def parseval_weights(grid: GridSpec) -> np.ndarray:
    """Weights w with integral |u|^2 = sum w |c|^2 for real u."""
    vol = (2.0 * grid.L) ** (grid.d - 1)
    N = grid.N_tan
    nh = N // 2 + 1
    col = np.full(nh, 2.0)
    col[0] = 1.0
    col[-1] = 1.0
    tw = col.reshape((1,) * (grid.d - 2) + (nh, 1))
    M = grid.N_thick
    cw = np.full(M, 0.5)
    cw[0] = cw[-1] = 1.0
    return vol * tw * cw.reshape((1,) * (grid.d - 1) + (-1,)) * np.ones(eigenvalue_table(grid).shape)


# ---------------------------------------------------------------------------
# projections


def _mask(grid: GridSpec, n: float) -> np.ndarray:
    return eigenvalue_table(grid) <= n * (1 + 1e-12) + 1e-300


class QuadBasis:
    """Weighted-orthonormal cosine basis sampled at the Gauss points."""

    def __init__(self, grid: GridSpec):
        ops = grid_ops(grid)
        M = grid.N_thick
        j = np.arange(M)
        B = np.cos(np.pi * np.outer(ops.x_quad + 0.5, j))
        sw = np.sqrt(ops.w_quad)
        Q, R = np.linalg.qr(sw[:, None] * B)
        Q = Q * np.sign(np.diag(R))
        self.phi = Q / sw[:, None]
        self.w = ops.w_quad

    def coefficients(self, b):
        return (b * self.w) @ self.phi

    def values(self, c):
        return c @ self.phi.T


@functools.lru_cache(maxsize=64)
def quad_basis(grid: GridSpec) -> QuadBasis:
    return QuadBasis(grid)


def project_array(grid: GridSpec, a: np.ndarray, n: float, at: str = NODES) -> np.ndarray:
    """P_n applied entrywise to a nodal or Gauss-point array (..., *tan, points)."""
    if n == INF:
        return a
    if n < 0:
        raise ValueError("projection threshold must be non-negative")
    mask = _mask(grid, n)
    if at == NODES:
        return synthesize_array(grid, analyze_array(grid, a) * mask)
    ops = grid_ops(grid)
    qb = quad_basis(grid)
    a_hat = np.fft.rfftn(a, axes=ops.tan_axes)
    c = qb.coefficients(a_hat) * mask
    return np.fft.irfftn(qb.values(c), s=grid.tan_shape, axes=ops.tan_axes)


def project(x, n: float):
    """P_n on a SpectralRep, Field or TensorField."""
    if isinstance(x, SpectralRep):
        if n == INF:
            return x
        return SpectralRep(x.grid, x.coeffs * _mask(x.grid, n))
    vals = project_array(x.grid, x.values, n, getattr(x, "at", NODES))
    if isinstance(x, Field):
        return Field(x.grid, vals)
    return TensorField(x.grid, vals, x.at)


def h2_operator_norm(grid: GridSpec, n: float) -> float:
    """Exact discrete C_n with ||P_n f||_{H^2} <= C_n ||f||_{L^2}.

    H^2 is the sum of the split H^{2,0}, H^{1,1} and H^{0,2} norms, which are
    diagonal in the eigenbasis.
    """
    ops = grid_ops(grid)
    M = grid.N_thick
    dz = 1.0 / (M - 1)
    mu = 2.0 / dz**2 * (1.0 - np.cos(np.pi * np.arange(M) * dz))
    mu = mu.reshape((1,) * (grid.d - 1) + (-1,))
    k2 = sum(k * k for k in ops.k_deriv)
    # sum over multi-indices |alpha| <= 2 of k^(2 alpha)
    k4 = sum((ops.k_deriv[i] ** 2) * (ops.k_deriv[j] ** 2)
             for i in range(grid.d - 1) for j in range(i, grid.d - 1))
    weight = 1 + k2 + k4 + mu * (1 + k2) + mu**2
    weight = weight * np.ones(eigenvalue_table(grid).shape)
    sel = weight[_mask(grid, n)] if n != INF else weight
    return float(np.sqrt(sel.max()))


# ---------------------------------------------------------------------------
# smoothed nonlinearities


def _matrices(T: TensorField) -> np.ndarray:
    return T.matrices()


def _linear(model: MaterialModel, X: np.ndarray) -> np.ndarray:
    """D^2 W(0) X = 2 c sym X on matrices (..., d, d)."""
    return 2.0 * model.normalization * material.sym(X)


def smoothed_stress_array(model: MaterialModel, G: np.ndarray, grid: GridSpec, n: float, at: str) -> np.ndarray:
    """F_n on a raw component-first array (d, d, *tan, points)."""
    Gm = np.moveaxis(G, (0, 1), (-2, -1))
    if n == INF:
        S = material.first_derivative(model, Gm)
        return np.moveaxis(S, (-2, -1), (0, 1))
    PG = project_array(grid, G, n, at)
    PGm = np.moveaxis(PG, (0, 1), (-2, -1))
    inner_ = material.first_derivative(model, PGm) - _linear(model, PGm)
    corr = project_array(grid, np.moveaxis(inner_, (-2, -1), (0, 1)), n, at)
    return np.moveaxis(_linear(model, Gm), (-2, -1), (0, 1)) + corr


def smoothed_stress(model: MaterialModel, G: TensorField, n: float = INF) -> TensorField:
    """F_n(G) = D^2W(0) G + P_n[DW(P_n G) - D^2W(0) P_n G]."""
    return TensorField(G.grid, smoothed_stress_array(model, G.values, G.grid, n, G.at), G.at)


def frozen_coefficient_array(model, Gu, Gw, grid, n, at):
    Gwm = np.moveaxis(Gw, (0, 1), (-2, -1))
    lin = _linear(model, Gwm)
    if n == INF:
        Gum = np.moveaxis(Gu, (0, 1), (-2, -1))
        out = material.second_derivative_apply(model, Gum, Gwm)
        return np.moveaxis(out, (-2, -1), (0, 1))
    PGu = np.moveaxis(project_array(grid, Gu, n, at), (0, 1), (-2, -1))
    PGw = np.moveaxis(project_array(grid, Gw, n, at), (0, 1), (-2, -1))
    delta = material.second_derivative_apply(model, PGu, PGw) - _linear(model, PGw)
    corr = project_array(grid, np.moveaxis(delta, (-2, -1), (0, 1)), n, at)
    return np.moveaxis(lin, (-2, -1), (0, 1)) + corr


def frozen_coefficient_apply(model: MaterialModel, Gu: TensorField, Gw: TensorField, n: float = INF) -> TensorField:
    """A_n(Gu) Gw = D^2W(0) Gw + P_n[(D^2W(P_n Gu) - D^2W(0)) P_n Gw]."""
    if Gu.grid != Gw.grid or Gu.at != Gw.at:
        raise ValueError("grid mismatch")
    return TensorField(Gu.grid, frozen_coefficient_array(model, Gu.values, Gw.values, Gu.grid, n, Gu.at), Gu.at)
