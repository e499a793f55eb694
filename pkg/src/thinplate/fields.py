"""Grids, fields and the scaled calculus on the rescaled plate.

The domain is the box (-L, L)^(d-1) x (-1/2, 1/2), periodic in the first
d-1 (tangential) directions, with free faces at x_d = +-1/2.

Discretisation:

* tangential directions: Fourier collocation on N_tan equispaced points,
  Nyquist wavenumber dropped from derivatives;
* thickness: N_thick nodes including both faces, trapezoid weights.
  Pointwise nodal gradients use the second-order summation-by-parts first
  derivative (central inside, one-sided at the faces). Energies and strain
  norms are evaluated at two Gauss points per thickness cell of the
  piecewise-linear interpolant, which gives colocated strain components and
  an exactly symmetric discrete operator.

Arrays are laid out as ``(components..., *tangential, thickness)``.
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NODES = "nodes"
QUAD = "quad"

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(frozen=True)
class GridSpec:
    d: int = 2
    L: float = float(np.pi)
    N_tan: int = 16
    N_thick: int = 17
    h: float = 1.0
    dt: float | None = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ValueError("L must be positive")
        n = self.N_tan
        if n < 2 or n & (n - 1):
            raise ValueError(f"N_tan must be a power of two >= 2, got {n}")
        if self.N_thick < 3:
            raise ValueError("N_thick must be at least 3")
        if not 0 < self.h <= 1:
            raise ValueError(f"h must lie in (0, 1], got {self.h}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def tan_shape(self) -> tuple[int, ...]:
        return (self.N_tan,) * (self.d - 1)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return self.tan_shape + (self.N_thick,)

    @property
    def quad_shape(self) -> tuple[int, ...]:
        return self.tan_shape + (2 * (self.N_thick - 1),)

    def with_h(self, h: float) -> "GridSpec":
        return GridSpec(self.d, self.L, self.N_tan, self.N_thick, h, self.dt)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(
            self.d, self.L, self.N_tan * factor, (self.N_thick - 1) * factor + 1, self.h, self.dt
        )


class GridOps:
    """Precomputed discrete operators for one grid. Immutable after construction."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        d, N, M = grid.d, grid.N_tan, grid.N_thick
        self.ntan = d - 1
        self.x_tan = -grid.L + 2.0 * grid.L * np.arange(N) / N
        self.x_d = np.linspace(-0.5, 0.5, M)
        self.dz = 1.0 / (M - 1)
        self.cell_area = (2.0 * grid.L / N) ** (d - 1)
        w = np.full(M, self.dz)
        w[0] = w[-1] = 0.5 * self.dz
        self.w_nodes = w
        self.w_quad = np.full(2 * (M - 1), 0.5 * self.dz)
        self.w_mid = np.full(M - 1, self.dz)
        mids = 0.5 * (self.x_d[:-1] + self.x_d[1:])
        self.x_mid = mids
        self.x_quad = np.stack(
            [self.x_d[:-1] + g * self.dz for g in _GAUSS], axis=-1
        ).reshape(-1)

        # tangential wavenumbers; the last tangential axis uses the real FFT
        self.tan_axes = tuple(range(-d, -1))
        k_full = np.pi / grid.L * np.fft.fftfreq(N, 1.0 / N)
        k_half = np.pi / grid.L * np.fft.rfftfreq(N, 1.0 / N)
        nyq = N // 2
        ks = []
        for j in range(self.ntan):
            last = j == self.ntan - 1
            k = (k_half if last else k_full).copy()
            shape = [1] * (self.ntan + 1)
            shape[j] = k.size
            ks.append(k.reshape(shape))
        self.k = ks
        kd = []
        for j, k in enumerate(ks):
            kk = k.copy()
            flat = kk.reshape(-1)
            flat[np.abs(np.abs(flat) - np.pi / grid.L * nyq) < 1e-12 * (1 + nyq)] = 0.0
            kd.append(kk)
        self.k_deriv = kd
        ksq = sum(k * k for k in ks)
        self.k_squared = ksq

        # dense thickness matrices (N_quad x N_thick)
        Q = 2 * (M - 1)
        Iq = np.zeros((Q, M))
        Dq = np.zeros((Q, M))
        for c in range(M - 1):
            for g, xi in enumerate(_GAUSS):
                Iq[2 * c + g, c] = 1 - xi
                Iq[2 * c + g, c + 1] = xi
                Dq[2 * c + g, c] = -1.0 / self.dz
                Dq[2 * c + g, c + 1] = 1.0 / self.dz
        self.Iq = Iq
        self.Dq = Dq
        # summation-by-parts first derivative at nodes
        D = np.zeros((M, M))
        for j in range(1, M - 1):
            D[j, j - 1] = -0.5 / self.dz
            D[j, j + 1] = 0.5 / self.dz
        D[0, 0], D[0, 1] = -1.0 / self.dz, 1.0 / self.dz
        D[-1, -2], D[-1, -1] = -1.0 / self.dz, 1.0 / self.dz
        self.D_nodes = D

    # ---------------------------------------------------------------- tangential
    def rfft(self, a):
        return np.fft.rfftn(a, axes=self.tan_axes)

    def irfft(self, a_hat):
        s = self.grid.tan_shape
        return np.fft.irfftn(a_hat, s=s, axes=self.tan_axes)

    def tan_grad(self, a: np.ndarray) -> np.ndarray:
        """All tangential derivatives, stacked on a new leading axis."""
        a_hat = self.rfft(a)
        return np.stack([self.irfft(1j * k * a_hat) for k in self.k_deriv])

    def tan_deriv(self, a: np.ndarray, j: int, order: int = 1) -> np.ndarray:
        a_hat = self.rfft(a)
        return self.irfft((1j * self.k_deriv[j]) ** order * a_hat)

    # ---------------------------------------------------------------- thickness
    def to_quad(self, a):
        lo = a[..., :-1] * (1 - _GAUSS[0]) + a[..., 1:] * _GAUSS[0]
        hi = a[..., :-1] * (1 - _GAUSS[1]) + a[..., 1:] * _GAUSS[1]
        return np.stack([lo, hi], axis=-1).reshape(a.shape[:-1] + (-1,))

    def to_quad_T(self, b):
        lo = b[..., 0::2]
        hi = b[..., 1::2]
        out = np.zeros(b.shape[:-1] + (lo.shape[-1] + 1,))
        out[..., :-1] += lo * (1 - _GAUSS[0]) + hi * (1 - _GAUSS[1])
        out[..., 1:] += lo * _GAUSS[0] + hi * _GAUSS[1]
        return out

    def diff_quad(self, a):
        dd = (a[..., 1:] - a[..., :-1]) / self.dz
        return np.repeat(dd, 2, axis=-1)

    def diff_quad_T(self, b):
        s = (b[..., 0::2] + b[..., 1::2]) / self.dz
        out = np.zeros(b.shape[:-1] + (s.shape[-1] + 1,))
        out[..., :-1] -= s
        out[..., 1:] += s
        return out

    def diff_mid(self, a):
        return (a[..., 1:] - a[..., :-1]) / self.dz

    def diff_nodes(self, a):
        out = np.empty(a.shape)
        out[..., 1:-1] = (a[..., 2:] - a[..., :-2]) / (2 * self.dz)
        out[..., 0] = (a[..., 1] - a[..., 0]) / self.dz
        out[..., -1] = (a[..., -1] - a[..., -2]) / self.dz
        return out

    def diff2_nodes(self, a):
        """Compact Neumann second difference (ghost reflection at the faces)."""
        out = np.empty(a.shape)
        out[..., 1:-1] = a[..., 2:] - 2 * a[..., 1:-1] + a[..., :-2]
        out[..., 0] = 2 * (a[..., 1] - a[..., 0])
        out[..., -1] = 2 * (a[..., -2] - a[..., -1])
        return out / self.dz**2

    # ---------------------------------------------------------------- gradients
    def grad_nodes(self, u):
        d, h = self.grid.d, self.grid.h
        G = np.empty((u.shape[0], d) + u.shape[1:])
        G[:, : d - 1] = np.moveaxis(self.tan_grad(u), 0, 1)
        G[:, d - 1] = self.diff_nodes(u) / h
        return G

    def grad_quad(self, u):
        d = self.grid.d
        tg = self.to_quad(self.tan_grad(u))
        G = np.empty((u.shape[0], d) + tg.shape[2:])
        G[:, : d - 1] = np.moveaxis(tg, 0, 1)
        G[:, d - 1] = self.diff_quad(u) / self.grid.h
        return G

    def weak_div(self, S):
        """Nodal field -M^{-1} G^T W S: the variational divergence of a quad tensor."""
        d, h = self.grid.d, self.grid.h
        wS = S * self.w_quad
        acc = self.to_quad_T(wS[:, 0])
        acc_hat = self.rfft(acc) * (1j * self.k_deriv[0])
        for j in range(1, d - 1):
            acc_hat = acc_hat + self.rfft(self.to_quad_T(wS[:, j])) * (1j * self.k_deriv[j])
        out = self.irfft(acc_hat)
        out -= self.diff_quad_T(wS[:, d - 1]) / h
        return out / self.w_nodes

    def div_nodes(self, T):
        d, h = self.grid.d, self.grid.h
        out = self.diff_nodes(T[:, d - 1]) / h
        for j in range(d - 1):
            out = out + self.tan_deriv(T[:, j], j)
        return out

    # ---------------------------------------------------------------- quadrature
    def weights(self, at: str = NODES):
        w = self.w_nodes if at == NODES else self.w_quad
        return self.cell_area * w

    def integrate(self, a, at: str = NODES):
        """Integral over the domain; sums over all leading axes."""
        w = self.weights(at)
        return float(np.sum(a * w))

    def mean(self, u):
        """Component-wise mean of a nodal array shaped (comp, *tan, thick)."""
        w = self.w_nodes
        axes = tuple(range(1, u.ndim))
        vol = 2.0 * self.grid.L
        return np.sum(u * w, axis=axes) * self.cell_area / vol ** (self.grid.d - 1)

    def mesh(self):
        """Coordinate arrays broadcastable to node_shape: (x_1, ..., x_d)."""
        d = self.grid.d
        out = []
        for j in range(d - 1):
            shape = [1] * d
            shape[j] = self.grid.N_tan
            out.append(self.x_tan.reshape(shape))
        out.append(self.x_d.reshape([1] * (d - 1) + [-1]))
        return out


@functools.lru_cache(maxsize=64)
def grid_ops(grid: GridSpec) -> GridOps:
    return GridOps(grid)


# ---------------------------------------------------------------------------
# field containers


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal vector field: values shaped (d, *tangential, N_thick)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = (self.grid.d,) + self.grid.node_shape
        if v.shape != expected:
            raise ValueError(f"field shape {v.shape} does not match grid {expected}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros((grid.d,) + grid.node_shape))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Field":
        """Build from ``fn(*coords) -> sequence of d arrays``."""
        X = grid_ops(grid).mesh()
        comps = fn(*X)
        vals = np.stack([np.broadcast_to(np.asarray(c, float), grid.node_shape) for c in comps])
        return cls(grid, vals)

    def _check(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._check(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - self._check(other))

    def __mul__(self, c):
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Field(self.grid, self.values / c)

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Matrix field: values shaped (d, d, *tangential, n_points) at nodes or Gauss points."""

    grid: GridSpec
    values: np.ndarray
    at: str = NODES

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = self.grid.node_shape if self.at == NODES else self.grid.quad_shape
        expected = (self.grid.d, self.grid.d) + shape
        if v.shape != expected:
            raise ValueError(f"tensor shape {v.shape} does not match {expected}")
        object.__setattr__(self, "values", v)

    def matrices(self) -> np.ndarray:
        """Values with the matrix indices moved last: (..., d, d)."""
        return np.moveaxis(self.values, (0, 1), (-2, -1))

    @classmethod
    def from_matrices(cls, grid, M, at=NODES):
        return cls(grid, np.moveaxis(M, (-2, -1), (0, 1)), at)

    def _check(self, other):
        if isinstance(other, TensorField):
            if other.grid != self.grid or other.at != self.at:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return TensorField(self.grid, self.values + self._check(other), self.at)

    def __sub__(self, other):
        return TensorField(self.grid, self.values - self._check(other), self.at)

    def __mul__(self, c):
        return TensorField(self.grid, self.values * c, self.at)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# scaled calculus


def scaled_gradient(u: Field, at: str = NODES) -> TensorField:
    """Row i, column j: d u_i / d x_j for j < d and (1/h) d u_i / d x_d for j = d."""
    ops = grid_ops(u.grid)
    G = ops.grad_nodes(u.values) if at == NODES else ops.grad_quad(u.values)
    return TensorField(u.grid, G, at)


def _sym_values(G):
    return 0.5 * (G + np.swapaxes(G, 0, 1))


def sym_strain(u: Field, at: str = NODES) -> TensorField:
    G = scaled_gradient(u, at)
    return TensorField(u.grid, _sym_values(G.values), at)


def scaled_divergence(T: TensorField) -> Field:
    """Row-wise divergence with the 1/h weight on the thickness column.

    For nodal tensors this is the pointwise summation-by-parts operator, the
    negative adjoint of the nodal gradient whenever T e_d vanishes on the
    faces. For Gauss-point tensors it is the variational (weak) divergence,
    the exact negative adjoint of the Gauss-point gradient for every T.
    """
    ops = grid_ops(T.grid)
    if T.at == NODES:
        return Field(T.grid, ops.div_nodes(T.values))
    return Field(T.grid, ops.weak_div(T.values))


def inner(a, b) -> float:
    """L2 inner product of two fields or two tensor fields."""
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    at = getattr(a, "at", NODES)
    if at != getattr(b, "at", NODES):
        raise ValueError("location mismatch")
    return grid_ops(a.grid).integrate(a.values * b.values, at)


def scaled_inner(A: TensorField, B: TensorField, h: float | None = None) -> float:
    """Integral of A :_h B = (1/h^2) sym A : sym B + skew A : skew B."""
    if A.grid != B.grid or A.at != B.at:
        raise ValueError("grid mismatch")
    h = A.grid.h if h is None else h
    Av, Bv = A.values, B.values
    sA = _sym_values(Av)
    sB = _sym_values(Bv)
    kA = Av - sA
    kB = Bv - sB
    return grid_ops(A.grid).integrate(sA * sB / h**2 + kA * kB, A.at)


def mean_zero(u: Field) -> Field:
    ops = grid_ops(u.grid)
    m = ops.mean(u.values)
    return Field(u.grid, u.values - m.reshape((-1,) + (1,) * u.grid.d))


# ---------------------------------------------------------------------------
# norms


def _tangential_multi_indices(ntan, m):
    out = []

    def rec(prefix, left, j):
        if j == ntan:
            out.append(tuple(prefix))
            return
        for a in range(left + 1):
            rec(prefix + [a], left - a, j + 1)

    rec([], m, 0)
    return out


def _thickness_blocks(ops, a, m2):
    """(array, weights) for d^k/dx_d^k a, k <= m2, in the split quadrature."""
    if m2 > 2:
        raise ValueError("thickness derivatives above order 2 are not provided")
    blocks = [(a, ops.w_nodes)]
    if m2 >= 1:
        blocks.append((ops.diff_mid(a), ops.w_mid))
    if m2 >= 2:
        blocks.append((ops.diff2_nodes(a), ops.w_nodes))
    return blocks


def _hm1m2_squared(ops, a, m1, m2, pointwise_sq=None):
    """Sum over |alpha| <= m1, k <= m2 of the squared L2 norms."""
    a_hat = ops.rfft(a)
    total = 0.0
    for alpha in _tangential_multi_indices(ops.ntan, m1):
        mult = 1.0
        for j, aj in enumerate(alpha):
            if aj:
                mult = mult * (1j * ops.k_deriv[j]) ** aj
        da = ops.irfft(mult * a_hat) if any(alpha) else a
        for arr, w in _thickness_blocks(ops, da, m2):
            sq = arr * arr if pointwise_sq is None else pointwise_sq(arr)
            total += float(np.sum(sq * w)) * ops.cell_area
    return total


def _grad_h_squared_split(ops, a, m1):
    """||grad_h a||^2 in H^{m1,0}: tangential entries at nodes, thickness entry at midpoints."""
    h = ops.grid.h
    total = 0.0
    tg = ops.tan_grad(a)
    for j in range(ops.ntan):
        total += _hm1m2_squared(ops, tg[j], m1, 0)
    dz = ops.diff_mid(a) / h
    a_hat = ops.rfft(dz)
    for alpha in _tangential_multi_indices(ops.ntan, m1):
        mult = 1.0
        for j, aj in enumerate(alpha):
            if aj:
                mult = mult * (1j * ops.k_deriv[j]) ** aj
        da = ops.irfft(mult * a_hat) if any(alpha) else dz
        total += float(np.sum(da * da * ops.w_mid)) * ops.cell_area
    return total


def norm(x, kind: str = "L2", m1: int = 0, m2: int = 0, h: float | None = None) -> float:
    """Discrete norms.

    kinds:
      ``L2``      plain L2 (fields and tensors, nodes or Gauss points)
      ``L2_h``    L2 of the pointwise |.|_h (tensors)
      ``H``       H^{m1,m2}: tangential derivatives up to m1, thickness up to m2 <= 2
      ``H10``     shorthand for H^{1,0}
      ``H_h``     H^{m1,m2}_h for tensors (L2_h with derivatives)
      ``grad_h``  ||grad_h f||_{L2}, consistent with the spectral -Delta_h
      ``V``       ||(f, grad f)||_{H^{1,0}}
      ``V_h``     ||(f, grad_h f)||_{H^{1,0}}
    """
    grid = x.grid
    ops = grid_ops(grid)
    hh = grid.h if h is None else h
    at = getattr(x, "at", NODES)
    vals = x.values
    if kind == "L2":
        return float(np.sqrt(ops.integrate(vals * vals, at)))
    if kind == "L2_h":
        if not isinstance(x, TensorField):
            raise ValueError("L2_h applies to tensor fields")
        return float(np.sqrt(scaled_inner(x, x, hh)))
    if at != NODES:
        raise ValueError(f"norm {kind!r} needs nodal values")
    if kind == "H10":
        kind, m1, m2 = "H", 1, 0
    if kind == "H":
        flat = vals.reshape((-1,) + grid.node_shape)
        return float(np.sqrt(sum(_hm1m2_squared(ops, c, m1, m2) for c in flat)))
    if kind == "H_h":
        if not isinstance(x, TensorField):
            raise ValueError("H_h applies to tensor fields")
        S = _sym_values(vals)
        K = vals - S
        tot = 0.0
        for c in S.reshape((-1,) + grid.node_shape):
            tot += _hm1m2_squared(ops, c, m1, m2) / hh**2
        for c in K.reshape((-1,) + grid.node_shape):
            tot += _hm1m2_squared(ops, c, m1, m2)
        return float(np.sqrt(tot))
    if kind in ("grad_h", "V", "V_h"):
        if not isinstance(x, Field):
            raise ValueError(f"{kind} applies to vector fields")
        scale = 1.0 if kind == "V" else hh
        g = grid if scale == grid.h else grid.with_h(scale)
        gops = grid_ops(g)
        mm = 0 if kind == "grad_h" else 1
        tot = 0.0
        for c in vals:
            tot += _grad_h_squared_split(gops, c, mm)
            if kind != "grad_h":
                tot += _hm1m2_squared(gops, c, 1, 0)
        return float(np.sqrt(tot))
    raise ValueError(f"unsupported norm kind {kind!r}")


# ---------------------------------------------------------------------------
# snapshots

_HEADER = struct.Struct("<6d")


def write_snapshot(path, u: Field, time: float = 0.0) -> None:
    """Flat little-endian float64 file plus a JSON sidecar with the same metadata."""
    path = Path(path)
    g = u.grid
    meta = dict(d=g.d, N_tan=g.N_tan, N_thick=g.N_thick, L=g.L, h=g.h, time=float(time))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.d, g.N_tan, g.N_thick, g.L, g.h, float(time)))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    meta["shape"] = list(u.values.shape)
    sidecar.write_text(json.dumps(meta, indent=2))


def read_snapshot(path) -> tuple[Field, float]:
    raw = Path(path).read_bytes()
    d, nt, nk, L, h, time = _HEADER.unpack_from(raw)
    grid = GridSpec(int(d), float(L), int(nt), int(nk), float(h))
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return Field(grid, data.reshape((grid.d,) + grid.node_shape).copy()), time
