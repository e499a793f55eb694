"""Spectral solver for the limit plate equation  v_tt + (1/12) Lap'^2 v = g.

Every Fourier mode is a forced harmonic oscillator with frequency
|k|^2 / sqrt(12). The homogeneous part is propagated exactly; the forced part
uses the Duhamel integral with Gauss-Legendre panels, so the only error is
the quadrature of g.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AliasWarning, RegularityWarning
from .solver3d import ForcingSpec

SQRT12 = math.sqrt(12.0)


@dataclass(frozen=True)
class PlateGrid:
    """Periodic grid on (-L, L)^n_tan with N points per direction."""

    n_tan: int = 1
    L: float = math.pi
    N: int = 16

    def __post_init__(self):
        if self.n_tan not in (1, 2):
            raise ValueError("n_tan must be 1 or 2")
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two >= 4")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @classmethod
    def from_grid(cls, grid) -> "PlateGrid":
        """Tangential part of a 3D ``GridSpec``."""
        return cls(grid.d - 1, grid.L, grid.N_tan)

    @property
    def shape(self):
        return (self.N,) * self.n_tan

    @property
    def axes(self):
        return tuple(range(-self.n_tan, 0))

    @functools.cached_property
    def x(self) -> np.ndarray:
        return -self.L + 2.0 * self.L * np.arange(self.N) / self.N

    def mesh(self):
        out = []
        for j in range(self.n_tan):
            shape = [1] * self.n_tan
            shape[j] = self.N
            out.append(self.x.reshape(shape))
        return out

    @functools.cached_property
    def wavevectors(self):
        """(k, k_deriv) per direction on the real-FFT layout; k_deriv has Nyquist zeroed."""
        N = self.N
        full = math.pi / self.L * np.fft.fftfreq(N, 1.0 / N)
        half = math.pi / self.L * np.fft.rfftfreq(N, 1.0 / N)
        ks, kd = [], []
        for j in range(self.n_tan):
            k = (half if j == self.n_tan - 1 else full).copy()
            shape = [1] * self.n_tan
            shape[j] = k.size
            ks.append(k.reshape(shape))
            kk = k.copy()
            kk[np.isclose(np.abs(kk), math.pi / self.L * (N // 2))] = 0.0
            kd.append(kk.reshape(shape))
        return ks, kd

    @functools.cached_property
    def k_squared(self) -> np.ndarray:
        ks, _ = self.wavevectors
        return sum(k * k for k in ks) * np.ones(self.spectral_shape)

    @property
    def spectral_shape(self):
        return (self.N,) * (self.n_tan - 1) + (self.N // 2 + 1,)

    @functools.cached_property
    def frequencies(self) -> np.ndarray:
        return self.k_squared / SQRT12

    @functools.cached_property
    def parseval(self) -> np.ndarray:
        """w with integral |f|^2 = sum w |f_hat|^2 for real f and unnormalised rfft."""
        N = self.N
        col = np.full(N // 2 + 1, 2.0)
        col[0] = col[-1] = 1.0
        w = col.reshape((1,) * (self.n_tan - 1) + (-1,)) * np.ones(self.spectral_shape)
        vol = (2.0 * self.L) ** self.n_tan
        return w * vol / float(N**self.n_tan) ** 2

    @functools.cached_property
    def top_octave(self) -> np.ndarray:
        """Mask of modes whose largest index magnitude exceeds N/4."""
        N = self.N
        idx_full = np.abs(np.fft.fftfreq(N, 1.0 / N))
        idx_half = np.abs(np.fft.rfftfreq(N, 1.0 / N))
        m = np.zeros(self.spectral_shape, dtype=bool)
        for j in range(self.n_tan):
            k = idx_half if j == self.n_tan - 1 else idx_full
            shape = [1] * self.n_tan
            shape[j] = k.size
            m = m | (k.reshape(shape) > N / 4)
        return m

    def rfft(self, a):
        return np.fft.rfftn(a, axes=self.axes)

    def irfft(self, a_hat):
        return np.fft.irfftn(a_hat, s=self.shape, axes=self.axes)


@dataclass(frozen=True, eq=False)
class PlateState:
    """Spectral coefficients of v and v_t at time t."""

    grid: PlateGrid
    v_hat: np.ndarray
    vt_hat: np.ndarray
    t: float = 0.0

    @property
    def v(self) -> np.ndarray:
        return self.grid.irfft(self.v_hat)

    @property
    def vt(self) -> np.ndarray:
        return self.grid.irfft(self.vt_hat)


def plate_energy(state: PlateState) -> float:
    """1/2 ||v_t||^2 + 1/24 ||Lap' v||^2."""
    g = state.grid
    w = g.parseval
    return float(0.5 * np.sum(w * np.abs(state.vt_hat) ** 2)
                 + np.sum(w * g.k_squared**2 * np.abs(state.v_hat) ** 2) / 24.0)


def _sinc_term(omega, tau):
    """sin(omega tau) / omega, equal to tau at omega = 0."""
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sin(omega * tau) / omega
    return np.where(omega == 0.0, tau, out)


def _check_forcing_mean(g_hat, scale):
    if abs(g_hat.flat[0]) > 1e-10 * max(scale, 1.0):
        raise ValueError("plate load g must have zero tangential mean")


class PlateForcing:
    """Spectral samples of g on a grid; wraps a ForcingSpec."""

    def __init__(self, grid: PlateGrid, forcing: ForcingSpec | None):
        self.grid = grid
        self.forcing = forcing
        self.xs = grid.mesh()
        self.zero = forcing is None or forcing.is_zero
        self.pattern = None
        if not self.zero and forcing.spatial is not None:
            self.pattern = grid.rfft(np.broadcast_to(forcing.spatial(*self.xs), grid.shape))
            _check_forcing_mean(self.pattern, float(np.max(np.abs(self.pattern))))

    def __call__(self, t: float) -> np.ndarray:
        if self.pattern is not None:
            return self.pattern * self.forcing.temporal(t)
        g = np.asarray(self.forcing.evaluate(self.xs, t), dtype=float)
        g_hat = self.grid.rfft(np.broadcast_to(g, self.grid.shape))
        _check_forcing_mean(g_hat, float(np.max(np.abs(g_hat))))
        return g_hat


def propagate(state: PlateState, tau: float, forcing: PlateForcing | None = None,
              panels: int = 2, nodes: int = 16) -> PlateState:
    """Exact solution at t + tau (tau >= 0) up to the Duhamel quadrature error."""
    if tau < 0:
        raise ValueError("propagate only runs forward in time")
    om = state.grid.frequencies
    c, s = np.cos(om * tau), np.sin(om * tau)
    v = c * state.v_hat + _sinc_term(om, tau) * state.vt_hat
    vt = -om * s * state.v_hat + c * state.vt_hat
    if forcing is not None and not forcing.zero and tau > 0:
        xi, wi = np.polynomial.legendre.leggauss(nodes)
        edges = np.linspace(0.0, tau, panels + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            for x, w in zip(xi, wi):
                s_ = a + half * (x + 1.0)
                g_hat = forcing(state.t + s_)
                r = tau - s_
                v = v + half * w * _sinc_term(om, r) * g_hat
                vt = vt + half * w * np.cos(om * r) * g_hat
    return PlateState(state.grid, v, vt, state.t + tau)


@dataclass(frozen=True, eq=False)
class PlateTrajectory:
    grid: PlateGrid
    states: tuple
    forcing: ForcingSpec | None
    panels: int
    nodes: int
    max_step: float

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def initial(self) -> PlateState:
        return self.states[0]

    def at(self, t: float) -> PlateState:
        """State at any t >= 0, propagated exactly from the latest sample before t."""
        times = self.times
        i = int(np.searchsorted(times, t + 1e-14, side="right")) - 1
        if i < 0:
            raise ValueError("time precedes the trajectory")
        base = self.states[i]
        if abs(base.t - t) <= 1e-14:
            return base
        return _advance(base, t - base.t, self.forcing, self.panels, self.nodes, self.max_step)


def _advance(state, tau, forcing, panels, nodes, max_step):
    pf = PlateForcing(state.grid, forcing) if forcing is not None else None
    n = max(1, int(math.ceil(tau / max_step - 1e-12)))
    for _ in range(n):
        state = propagate(state, tau / n, pf, panels, nodes)
    return state


def _regularity_check(grid, a_hat, order, name):
    w = grid.parseval * (1.0 + grid.k_squared) ** order * np.abs(a_hat) ** 2
    total = float(np.sum(w))
    if total == 0.0:
        return
    tail = float(np.sum(w[grid.top_octave]))
    if tail > 1e-8 * total:
        warnings.warn(
            f"{name} carries {tail / total:.2e} of its H^{order} norm in the top octave; "
            f"data is not resolved as an H^{order} function",
            RegularityWarning,
            stacklevel=3,
        )


def initial_state(grid: PlateGrid, v0, v1) -> PlateState:
    """v0, v1 as arrays on the grid or callables of the tangential coordinates."""
    xs = grid.mesh()

    def sample(f):
        if f is None:
            return np.zeros(grid.shape)
        if callable(f):
            return np.broadcast_to(np.asarray(f(*xs), dtype=float), grid.shape)
        a = np.asarray(f, dtype=float)
        if a.shape != grid.shape:
            raise ValueError(f"initial data has shape {a.shape}, expected {grid.shape}")
        return a

    v0_hat = grid.rfft(sample(v0))
    v1_hat = grid.rfft(sample(v1))
    _regularity_check(grid, v0_hat, 7, "v0")
    _regularity_check(grid, v1_hat, 5, "v1")
    return PlateState(grid, v0_hat, v1_hat, 0.0)


def plate_solve(grid: PlateGrid, v0, v1, g: ForcingSpec | None = None, T: float = 1.0,
                sample_times: Sequence[float] | None = None, panels: int = 2, nodes: int = 16,
                max_step: float = 0.25) -> PlateTrajectory:
    """Solve on [0, T] and keep the states at ``sample_times`` (default: 0 and T).

    Between samples, the interval is cut into pieces of length at most
    ``max_step``, each integrated with ``panels`` Gauss-Legendre panels of
    ``nodes`` points.
    """
    if sample_times is None:
        sample_times = [0.0, T]
    ts = sorted(set(float(t) for t in sample_times) | {0.0})
    if ts[-1] > T + 1e-12 or ts[0] < 0:
        raise ValueError("sample times must lie in [0, T]")
    if g is not None and not g.is_zero:
        PlateForcing(grid, g)(0.0)
    state = initial_state(grid, v0, v1)
    states = [state]
    for t in ts[1:]:
        state = _advance(state, t - state.t, g, panels, nodes, max_step)
        states.append(PlateState(grid, state.v_hat, state.vt_hat, t))
        state = states[-1]
    return PlateTrajectory(grid, tuple(states), g, panels, nodes, max_step)


# ---------------------------------------------------------------------------
# derivatives


def derivative_hat(grid: PlateGrid, a_hat: np.ndarray, grad: int = 0, lap: int = 0) -> np.ndarray:
    """Symbol of grad^grad Lap^lap applied to a_hat; grad adds leading axes of size n_tan."""
    if grad not in (0, 1, 2):
        raise ValueError("grad order must be 0, 1 or 2")
    _, kd = grid.wavevectors
    out = (-grid.k_squared) ** lap * a_hat
    if grad == 0:
        return out
    if grad == 1:
        return np.stack([1j * k * out for k in kd])
    return np.stack([np.stack([-(ki * kj) * out for kj in kd]) for ki in kd])


def plate_derivatives(state: PlateState, requests: dict) -> dict:
    """Real-space derivatives of v (or v_t).

    ``requests`` maps names to ``(grad, lap)`` or ``(grad, lap, "vt")``; e.g.
    ``{"grad_lap2": (1, 2)}`` returns grad' Lap'^2 v with a leading component
    axis. Warns with AliasWarning when the top octave holds more than 1e-8 of
    a derivative's energy.
    """
    grid = state.grid
    out = {}
    for name, req in requests.items():
        grad, lap = req[0], req[1]
        src = state.vt_hat if len(req) > 2 and req[2] == "vt" else state.v_hat
        d_hat = derivative_hat(grid, src, grad, lap)
        energy = np.abs(d_hat) ** 2 * grid.parseval
        energy = energy.reshape((-1,) + grid.spectral_shape).sum(axis=0)
        total = float(energy.sum())
        if total > 0 and float(energy[grid.top_octave].sum()) > 1e-8 * total:
            warnings.warn(
                f"derivative {name} (grad^{grad} Lap^{lap}) is not resolved: "
                f"top-octave share {float(energy[grid.top_octave].sum()) / total:.2e}",
                AliasWarning,
                stacklevel=2,
            )
        out[name] = grid.irfft(d_hat)
    return out


def _resample_axis(a: np.ndarray, N1: int, axis: int) -> np.ndarray:
    """Full (complex) spectrum along one axis moved from N0 to N1 points."""
    N0 = a.shape[axis]
    a = np.moveaxis(a, axis, 0)
    out = np.zeros((N1,) + a.shape[1:], dtype=complex)
    m = min(N0, N1) // 2
    out[:m] = a[:m]
    out[N1 - m + 1:] = a[N0 - m + 1:]
    if N1 > N0:
        # old Nyquist splits evenly onto +-k
        out[m] = 0.5 * a[m]
        out[N1 - m] = 0.5 * a[m]
    else:
        out[m] = 0.5 * (a[m] + a[N0 - m])
    return np.moveaxis(out, 0, axis) * (N1 / N0)


def resample(state: PlateState, N: int) -> PlateState:
    """Band-limited interpolation onto an N-point grid (truncation when coarser)."""
    g0 = state.grid
    g1 = PlateGrid(g0.n_tan, g0.L, N)

    def move(a_hat):
        full = np.fft.fftn(g0.irfft(a_hat), axes=g0.axes)
        for ax in g0.axes:
            full = _resample_axis(full, N, ax)
        return g1.rfft(np.fft.ifftn(full, axes=g1.axes).real)

    return PlateState(g1, move(state.v_hat), move(state.vt_hat), state.t)


def write_plate_snapshot(path, state: PlateState) -> None:
    """Same binary layout as fields snapshots with a thickness axis of size 1."""
    import json

    from .fields import _HEADER

    path = Path(path)
    g = state.grid
    vals = state.v.reshape((1,) + g.shape + (1,))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.n_tan + 1, g.N, 1, g.L, 0.0, float(state.t)))
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())
    meta = dict(d=g.n_tan + 1, N_tan=g.N, N_thick=1, L=g.L, h=0.0, time=float(state.t), shape=list(vals.shape))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
