"""Explicit time integration of the rescaled nonlinear plate system.

The semi-discrete system is Hamiltonian: the elastic energy

    E(u) = (1/h^2) * sum_q w_q W(grad_h u(x_q))

is evaluated at two Gauss points per thickness cell, the force is
``-M^{-1} dE/du`` with the lumped (trapezoid) mass ``M``, and the free-face
condition holds weakly. Time stepping is velocity Verlet.

Also here: the per-Fourier-mode linear operator (exact stability limit and
spectral inversion of the constant-coefficient operator), the frozen
coefficient linear solver and the preparation of compatible initial data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import material, spectral
from .errors import DomainViolation, NoContraction, SingularOperator, StabilityViolation
from .fields import QUAD, Field, GridSpec, grid_ops, norm, write_snapshot
from .material import MaterialModel

INF = math.inf


# ---------------------------------------------------------------------------
# forcing


@dataclass(frozen=True)
class ForcingSpec:
    """Vertical load g(x', t); the body force is (0, ..., 0, g).

    ``g`` and ``g_t`` take tangential coordinate arrays and a time. A
    separable load ``spatial(x') * temporal(t)`` avoids re-evaluating the
    spatial pattern at every step.
    """

    g: Callable | None = None
    g_t: Callable | None = None
    spatial: Callable | None = None
    temporal: Callable | None = None
    temporal_dot: Callable | None = None

    @classmethod
    def zero(cls) -> "ForcingSpec":
        return cls()

    @classmethod
    def separable(cls, spatial, temporal, temporal_dot=None) -> "ForcingSpec":
        return cls(spatial=spatial, temporal=temporal, temporal_dot=temporal_dot)

    @classmethod
    def tabulated(cls, times, values) -> "ForcingSpec":
        """Load sampled at ``times``; values shaped (n_times, *tangential grid)."""
        from scipy.interpolate import CubicSpline

        spline = CubicSpline(np.asarray(times, float), np.asarray(values, float), axis=0)
        deriv = spline.derivative()
        return cls(g=lambda *a: spline(a[-1]), g_t=lambda *a: deriv(a[-1]))

    @property
    def is_zero(self) -> bool:
        return self.g is None and self.spatial is None

    def _tan_coords(self, grid: GridSpec):
        X = grid_ops(grid).mesh()
        return [x[..., 0] for x in X[:-1]]

    def evaluate(self, xs, t: float) -> np.ndarray:
        """g at tangential coordinate arrays ``xs`` (broadcast together) and time t."""
        shape = np.broadcast_shapes(*(np.shape(x) for x in xs))
        if self.is_zero:
            return np.zeros(shape)
        if self.spatial is not None:
            return np.broadcast_to(self.spatial(*xs) * self.temporal(t), shape)
        return np.broadcast_to(self.g(*xs, t), shape)

    def evaluate_rate(self, xs, t: float, step: float = 1e-3) -> np.ndarray:
        """d g / dt, analytic if supplied, else a fourth-order central difference."""
        shape = np.broadcast_shapes(*(np.shape(x) for x in xs))
        if self.is_zero:
            return np.zeros(shape)
        if self.spatial is not None and self.temporal_dot is not None:
            return np.broadcast_to(self.spatial(*xs) * self.temporal_dot(t), shape)
        if self.g_t is not None:
            return np.broadcast_to(self.g_t(*xs, t), shape)
        f = lambda s: self.evaluate(xs, s)
        return (8 * (f(t + step) - f(t - step)) - (f(t + 2 * step) - f(t - 2 * step))) / (12 * step)

    def load(self, grid: GridSpec, t: float) -> np.ndarray:
        """g on the tangential grid at time t."""
        return np.broadcast_to(self.evaluate(self._tan_coords(grid), t), grid.tan_shape)

    def load_rate(self, grid: GridSpec, t: float) -> np.ndarray:
        return np.broadcast_to(self.evaluate_rate(self._tan_coords(grid), t), grid.tan_shape)

    def body_force_sampler(self, grid: GridSpec, scale: float):
        """t -> nodal scale * (0, ..., g(t)), or None for a zero load; caches separable patterns."""
        if self.is_zero:
            return None
        if self.spatial is not None:
            pattern = body_force(grid, np.broadcast_to(self.spatial(*self._tan_coords(grid)), grid.tan_shape), scale)
            return lambda t: pattern * self.temporal(t)
        return lambda t: body_force(grid, self.load(grid, t), scale)

    def check_mean_zero(self, grid: GridSpec, times: Sequence[float] = (0.0,), tol: float = 1e-10):
        for t in times:
            g = self.load(grid, t)
            scale = max(1.0, float(np.max(np.abs(g))))
            if abs(float(np.mean(g))) > tol * scale:
                raise ValueError(f"vertical load has non-zero tangential mean at t={t}")


def body_force(grid: GridSpec, g_tan: np.ndarray, scale: float) -> np.ndarray:
    """Nodal array of scale * (0, ..., 0, g) constant across the thickness."""
    out = np.zeros((grid.d,) + grid.node_shape)
    out[-1] = scale * g_tan[..., None]
    return out


# ---------------------------------------------------------------------------
# state


@dataclass
class EnergyLedger:
    kinetic: float = 0.0
    elastic: float = 0.0
    work: float = 0.0
    initial: float = 0.0
    # Verlet's modified energy, conserved exactly by the linearised scheme
    shadow: float = 0.0

    @property
    def total(self) -> float:
        return self.kinetic + self.elastic - self.work

    @property
    def drift(self) -> float:
        return self.total - self.initial


@dataclass
class SimState:
    u: Field
    v: Field
    t: float = 0.0
    theta: float = 1.0
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    force: np.ndarray | None = None

    @property
    def h(self) -> float:
        return self.u.grid.h

    @property
    def grid(self) -> GridSpec:
        return self.u.grid


# ---------------------------------------------------------------------------
# elastic operator


class ElasticOperator:
    """Force and energy of the discrete elastic system for one grid."""

    def __init__(self, grid: GridSpec, model: MaterialModel, n_smooth: float = INF):
        if model.d != grid.d:
            raise ValueError("material and grid dimensions differ")
        self.grid = grid
        self.model = model
        self.n = n_smooth
        self.ops = grid_ops(grid)
        self.inv_h2 = 1.0 / grid.h**2

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.ops.grad_quad(u)

    def check(self, G: np.ndarray) -> None:
        size2 = np.sum(G * G, axis=(0, 1))
        worst = float(np.max(size2))
        eps = self.model.epsilon_domain
        if worst > eps * eps:
            idx = np.unravel_index(int(np.argmax(size2)), size2.shape)
            raise DomainViolation(
                f"|grad_h u| = {math.sqrt(worst):.4g} exceeds epsilon_domain = {eps} at point {idx}",
                index=idx,
                value=math.sqrt(worst),
            )

    def stress(self, G: np.ndarray) -> np.ndarray:
        if self.n == INF:
            return material.stress_components(self.model, G)
        return spectral.smoothed_stress_array(self.model, G, self.grid, self.n, QUAD)

    def force_and_energy(self, u: np.ndarray, check: bool = True) -> tuple[np.ndarray, float]:
        """Acceleration (1/h^2) div_h F_n(grad_h u) and elastic energy."""
        G = self.gradient(u)
        if check:
            self.check(G)
        S = self.stress(G)
        force = self.ops.weak_div(S) * self.inv_h2
        return force, self.energy_from(G, S)

    def energy_from(self, G: np.ndarray, S: np.ndarray) -> float:
        ops = self.ops
        if self.n == INF:
            # W = |DW|^2 / (4 c) for the distance energy
            dens = np.sum(S * S, axis=(0, 1)) / (4.0 * self.model.normalization)
        else:
            c = self.model.normalization
            Gs = 0.5 * (G + np.swapaxes(G, 0, 1))
            quad = c * np.sum(Gs * Gs, axis=(0, 1))
            PG = spectral.project_array(self.grid, G, self.n, QUAD)
            PGs = 0.5 * (PG + np.swapaxes(PG, 0, 1))
            PGm = np.moveaxis(PG, (0, 1), (-2, -1))
            Wp = material.energy(self.model, PGm, check=False) - c * np.sum(PGs * PGs, axis=(0, 1))
            dens = quad + Wp
        return float(np.sum(dens * ops.w_quad)) * ops.cell_area * self.inv_h2

    def force(self, u: np.ndarray, check: bool = True) -> np.ndarray:
        return self.force_and_energy(u, check)[0]

    def elastic_energy(self, u: np.ndarray) -> float:
        return self.force_and_energy(u, check=False)[1]

    def tangent_force(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """(1/h^2) div_h (A_n(grad_h u) grad_h w)."""
        Gu = self.gradient(u)
        self.check(Gu)
        Gw = self.gradient(w)
        S = spectral.frozen_coefficient_array(self.model, Gu, Gw, self.grid, self.n, QUAD)
        return self.ops.weak_div(S) * self.inv_h2

    def linear_force(self, w: np.ndarray) -> np.ndarray:
        """(1/h^2) div_h (D^2W(0) grad_h w)."""
        G = self.gradient(w)
        S = 2.0 * self.model.normalization * 0.5 * (G + np.swapaxes(G, 0, 1))
        return self.ops.weak_div(S) * self.inv_h2

    def kinetic(self, v: np.ndarray) -> float:
        return 0.5 * self.ops.integrate(v * v)

    def strain_norm(self, u: np.ndarray) -> float:
        """||(1/h) eps_h(u)||_{L2} at the Gauss points."""
        G = self.gradient(u)
        S = 0.5 * (G + np.swapaxes(G, 0, 1))
        return math.sqrt(self.ops.integrate(S * S, QUAD)) / self.grid.h


internal_force_operator = ElasticOperator


def internal_force(model: MaterialModel, u: Field, h: float | None = None, n_smooth: float = INF) -> Field:
    """(1/h^2) div_h F_n(grad_h u), assembled as the negative energy gradient."""
    grid = u.grid if h is None or h == u.grid.h else u.grid.with_h(h)
    op = ElasticOperator(grid, model, n_smooth)
    return Field(u.grid, op.force(u.values))


# ---------------------------------------------------------------------------
# per-mode linear operator


class ModalOperator:
    """Constant-coefficient operator D^2W(0) block-diagonalised by the tangential FFT.

    For each real-FFT wavevector the stiffness is a dense Hermitian matrix on
    the d * N_thick nodal unknowns, with the same thickness weights as the
    lumped mass, so ``K_k u_k = M f_k`` solves the discrete static problem
    mode by mode.
    """

    def __init__(self, grid: GridSpec, model: MaterialModel):
        self.grid = grid
        self.model = model
        self.ops = grid_ops(grid)
        ops = self.ops
        d = grid.d
        self.mass = np.tile(ops.w_nodes, d)
        shape = ops.k_squared.shape[:-1]
        self.mode_shape = shape
        self.modes = list(np.ndindex(shape))
        self._chol = {}

    def wavevector(self, idx):
        full = tuple(idx) + (0,)
        return np.array([float(k[tuple(i if s > 1 else 0 for i, s in zip(full, k.shape))]) for k in self.ops.k_deriv])

    def gradient_matrix(self, kvec) -> np.ndarray:
        """B with grad_h of the mode exp(i k x') u_hat(x_d) at Gauss points = B u_hat."""
        ops = self.ops
        d, N = self.grid.d, self.grid.N_thick
        Q = ops.Iq.shape[0]
        B = np.zeros((d, d, Q, d, N), dtype=complex)
        for i in range(d):
            for j in range(d - 1):
                B[i, j, :, i, :] = 1j * kvec[j] * ops.Iq
            B[i, d - 1, :, i, :] = ops.Dq / self.grid.h
        return B

    def forms(self, kvec):
        """(Q_eps, Q_grad): thickness-weighted ||(1/h) eps_h||^2 and ||grad_h||^2 of a mode."""
        d, N = self.grid.d, self.grid.N_thick
        B = self.gradient_matrix(kvec)
        Bs = 0.5 * (B + np.swapaxes(B, 0, 1))
        sw = np.sqrt(self.ops.w_quad)[:, None]
        Bf = (B.reshape(d * d, -1, d * N) * sw).reshape(-1, d * N)
        Bsf = (Bs.reshape(d * d, -1, d * N) * sw).reshape(-1, d * N)
        Qg = Bf.conj().T @ Bf
        Qe = Bsf.conj().T @ Bsf / self.grid.h**2
        return Qe, Qg

    def stiffness(self, kvec) -> np.ndarray:
        Qe, _ = self.forms(kvec)
        return 2.0 * self.model.normalization * Qe

    def is_degenerate(self, kvec) -> bool:
        return not np.any(np.abs(kvec) > 0)

    def max_frequency(self) -> float:
        """Largest angular frequency of the linearised semi-discrete system."""
        best = 0.0
        Minv = 1.0 / np.sqrt(self.mass)
        for idx in self.modes:
            K = self.stiffness(self.wavevector(idx))
            A = Minv[:, None] * K * Minv[None, :]
            lam = scipy.linalg.eigvalsh(A, subset_by_index=[A.shape[0] - 1, A.shape[0] - 1])
            best = max(best, float(lam[-1]))
        return math.sqrt(best)

    def eigenmodes(self, idx):
        """Frequencies (ascending) and mass-normalised thickness profiles of one Fourier mode."""
        K = self.stiffness(self.wavevector(idx))
        lam, vec = scipy.linalg.eigh(K, np.diag(self.mass))
        return np.sqrt(np.clip(lam, 0.0, None)), vec

    def _factor(self, idx):
        if idx not in self._chol:
            kvec = self.wavevector(idx)
            K = self.stiffness(kvec)
            if self.is_degenerate(kvec):
                # remove the x_d-constant kernel: penalise the weighted mean of each component
                d, N = self.grid.d, self.grid.N_thick
                P = np.zeros((d * N, d))
                for i in range(d):
                    P[i * N:(i + 1) * N, i] = self.ops.w_nodes
                K = K + P @ P.T * (np.trace(K).real / (d * N) + 1.0)
            try:
                self._chol[idx] = scipy.linalg.cho_factor(K)
            except np.linalg.LinAlgError as exc:
                raise SingularOperator(f"stiffness of mode {idx} is singular") from exc
        return self._chol[idx]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Mean-zero u with -(1/h^2) div_h(D^2W(0) grad_h u) = rhs (nodal accelerations)."""
        d, N = self.grid.d, self.grid.N_thick
        r_hat = self.ops.rfft(rhs)
        out = np.zeros_like(r_hat)
        for idx in self.modes:
            sl = (slice(None),) + idx + (slice(None),)
            b = (r_hat[sl] * self.ops.w_nodes).reshape(d * N)
            x = scipy.linalg.cho_solve(self._factor(idx), b)
            out[sl] = x.reshape(d, N)
        u = self.ops.irfft(out)
        return u - self.ops.mean(u).reshape((-1,) + (1,) * self.grid.d)


def low_frequency_data(grid: GridSpec, model: MaterialModel, rng, amplitude: float = 1e-3,
                       max_wavenumber: int = 3, branches: int = 1) -> np.ndarray:
    """Random smooth displacement built from the slowest linear eigenmodes.

    Each Fourier mode with 0 < |k| <= max_wavenumber contributes its
    ``branches`` lowest thickness profiles with Gaussian coefficients; the
    result is rescaled so that max |grad_h u| = amplitude.
    """
    modal = ModalOperator(grid, model)
    ops = modal.ops
    d, N = grid.d, grid.N_thick
    coef = np.zeros((d,) + ops.k_squared.shape[:-1] + (N,), dtype=complex)
    kmax = max_wavenumber * math.pi / grid.L
    for idx in modal.modes:
        kvec = modal.wavevector(idx)
        kn = float(np.linalg.norm(kvec))
        if kn == 0 or kn > kmax * (1 + 1e-12):
            continue
        _, vec = modal.eigenmodes(idx)
        z = rng.standard_normal(branches) + 1j * rng.standard_normal(branches)
        prof = vec[:, :branches] @ z
        coef[(slice(None),) + idx + (slice(None),)] = prof.reshape(d, N)
    u = ops.irfft(coef)
    G = ops.grad_quad(u)
    size = float(np.sqrt(np.max(np.sum(G * G, axis=(0, 1)))))
    if size == 0.0:
        raise ValueError("no admissible modes below max_wavenumber")
    return u * (amplitude / size)


def stable_dt(grid: GridSpec, model: MaterialModel, cfl: float = 0.5) -> float:
    """cfl * 2 / omega_max, the Verlet limit scaled by the Courant factor."""
    return cfl * 2.0 / ModalOperator(grid, model).max_frequency()


# ---------------------------------------------------------------------------
# time stepping


def _prepare(state: SimState, model, n_smooth):
    return ElasticOperator(state.grid, model, n_smooth)


def init_ledger(state: SimState, op: ElasticOperator) -> SimState:
    force, el = op.force_and_energy(state.u.values)
    kin = op.kinetic(state.v.values)
    ledger = EnergyLedger(kinetic=kin, elastic=el, work=0.0, initial=kin + el, shadow=kin + el)
    return replace(state, ledger=ledger, force=force)


def _ext(grid, forcing, t, scale):
    if forcing is None or forcing.is_zero:
        return None
    return body_force(grid, forcing.load(grid, t), scale)


def step(state: SimState, model: MaterialModel, forcing: ForcingSpec | None, n_smooth: float, dt: float,
         op: ElasticOperator | None = None, sampler=None) -> SimState:
    """One velocity-Verlet step; returns a new state with an updated ledger.

    ``sampler`` (from ``ForcingSpec.body_force_sampler``) replaces ``forcing``
    when given, which avoids re-evaluating separable loads.
    """
    op = op or _prepare(state, model, n_smooth)
    if state.force is None:
        state = init_ledger(state, op)
    grid = state.grid
    if sampler is None and forcing is not None:
        sampler = forcing.body_force_sampler(grid, state.h ** (1.0 + state.theta))
    f0 = sampler(state.t) if sampler else None
    f1 = sampler(state.t + dt) if sampler else None
    a0 = state.force if f0 is None else state.force + f0
    v_half = state.v.values + 0.5 * dt * a0
    u_new = state.u.values + dt * v_half
    force, el = op.force_and_energy(u_new)
    a1 = force if f1 is None else force + f1
    v_new = v_half + 0.5 * dt * a1
    work = state.ledger.work
    if f0 is not None:
        work += dt * op.ops.integrate(0.5 * (f0 + f1) * v_half)
    kin = op.kinetic(v_new)
    shadow = kin + el - work - dt * dt / 8.0 * op.ops.integrate(a1 * a1)
    led = EnergyLedger(kin, el, work, state.ledger.initial, shadow)
    _stability_check(state.ledger, led, state.force is None or state.t == 0.0)
    return SimState(Field(grid, u_new), Field(grid, v_new), state.t + dt, state.theta, led, force)


def _stability_check(old: EnergyLedger, new: EnergyLedger, first: bool = False):
    # The modified energy is an exact invariant of linear Verlet even past the
    # stability limit (it turns indefinite), so two tests are needed: a jump in
    # it flags nonlinear blow-up, and kinetic + elastic outgrowing the energy
    # budget flags linear instability. A stable step keeps the latter within
    # 1 / (1 - (omega dt / 2)^2) of the budget.
    plain = new.kinetic + new.elastic
    budget = abs(new.initial) + abs(new.shadow) + abs(new.work)
    if plain > 10.0 * budget + 1e-250:
        raise StabilityViolation(
            f"energy {plain:.6g} exceeds ten times the available budget {budget:.6g}; reduce dt"
        )
    if first:
        return
    ref = max(abs(old.kinetic) + abs(old.elastic), abs(old.work))
    if ref > 1e-250 and abs(new.shadow - old.shadow) > 0.1 * ref:
        raise StabilityViolation(
            f"energy jumped from {old.shadow:.6g} to {new.shadow:.6g} in one step; reduce dt"
        )


@dataclass
class Trajectory:
    times: np.ndarray
    rows: list
    final: SimState
    steps: int
    dt: float
    observations: dict
    aborted: Exception | None = None

    @property
    def max_relative_drift(self) -> float:
        init = self.rows[0]["kinetic"] + self.rows[0]["elastic"] if self.rows else 0.0
        if init == 0:
            return 0.0
        return max(abs(r["drift"]) for r in self.rows) / abs(init)


CSV_COLUMNS = ("t", "kinetic", "elastic", "work", "drift", "velocity_norm", "strain_norm")


def simulate(
    state0: SimState,
    model: MaterialModel,
    forcing: ForcingSpec | None,
    n_smooth: float,
    T: float,
    dt: float | None = None,
    observers: dict | None = None,
    sample_every: int | None = None,
    n_samples: int = 100,
    csv_path=None,
    snapshot_dir=None,
    cfl: float = 0.5,
    raise_on_abort: bool = True,
) -> Trajectory:
    """Advance to time T, sampling ledger rows and observers on a fixed cadence.

    ``observers`` maps names to callables ``obs(t, u, v) -> value`` on raw
    nodal arrays. With ``dt=None`` the step is ``stable_dt`` for ``cfl``,
    shortened so that an integer number of steps lands on T.
    """
    grid = state0.grid
    if dt is None:
        dt = grid.dt or stable_dt(grid, model, cfl)
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n_steps
    if sample_every is None:
        sample_every = max(1, n_steps // max(1, n_samples))
    op = _prepare(state0, model, n_smooth)
    sampler = None
    if forcing is not None and not forcing.is_zero:
        forcing.check_mean_zero(grid, (0.0, T))
        sampler = forcing.body_force_sampler(grid, state0.h ** (1.0 + state0.theta))
    state = init_ledger(state0, op)
    observers = observers or {}
    obs_out = {k: [] for k in observers}
    rows, times = [], []

    def record(s: SimState):
        led = s.ledger
        row = dict(
            t=s.t,
            kinetic=led.kinetic,
            elastic=led.elastic,
            work=led.work,
            drift=led.drift,
            velocity_norm=math.sqrt(2.0 * led.kinetic),
            strain_norm=op.strain_norm(s.u.values),
        )
        rows.append(row)
        times.append(s.t)
        for k, fn in observers.items():
            obs_out[k].append(fn(s.t, s.u.values, s.v.values))
        if snapshot_dir is not None:
            p = Path(snapshot_dir)
            p.mkdir(parents=True, exist_ok=True)
            write_snapshot(p / f"u_{len(rows) - 1:05d}.bin", s.u, s.t)

    record(state)
    aborted = None
    steps = 0
    try:
        for n in range(1, n_steps + 1):
            state = step(state, model, forcing, n_smooth, dt, op, sampler)
            # keep t exact on the step lattice
            state.t = n * dt
            steps = n
            if n % sample_every == 0 or n == n_steps:
                record(state)
    except (DomainViolation, StabilityViolation) as exc:
        aborted = exc
        if raise_on_abort:
            raise
    if csv_path is not None:
        write_ledger_csv(csv_path, rows)
    return Trajectory(np.array(times), rows, state, steps, dt, obs_out, aborted)


def write_ledger_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in CSV_COLUMNS])


# ---------------------------------------------------------------------------
# frozen-coefficient linear mode


@dataclass
class LinearTrajectory:
    times: np.ndarray
    w: np.ndarray
    wt: np.ndarray
    dt: float


def linearized_solve(
    model: MaterialModel,
    grid: GridSpec,
    u_frozen: Callable[[int, float], np.ndarray] | np.ndarray,
    rhs: Callable[[float], np.ndarray] | None,
    w0: np.ndarray,
    w1: np.ndarray,
    n_smooth: float,
    T: float,
    dt: float,
) -> LinearTrajectory:
    """Verlet for d_t^2 w - (1/h^2) div_h(A_n(grad_h u_frozen(t)) grad_h w) = rhs(t).

    ``u_frozen`` is either an array of frozen displacements on the step
    lattice (shape (n_steps + 1, d, *nodes)) or a callable (step, t) -> array.
    """
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of dt")
    op = ElasticOperator(grid, model, n_smooth)
    frozen = (lambda n, t: u_frozen[n]) if isinstance(u_frozen, np.ndarray) else u_frozen

    def accel(n, w):
        t = n * dt
        a = op.tangent_force(frozen(n, t), w)
        if rhs is not None:
            a = a + rhs(t)
        return a

    W = np.empty((n_steps + 1,) + w0.shape)
    Wt = np.empty_like(W)
    w = np.array(w0, dtype=float)
    v = np.array(w1, dtype=float)
    a = accel(0, w)
    W[0], Wt[0] = w, v
    e_prev = None
    for n in range(n_steps):
        vh = v + 0.5 * dt * a
        w = w + dt * vh
        a = accel(n + 1, w)
        v = vh + 0.5 * dt * a
        W[n + 1], Wt[n + 1] = w, v
        if not np.all(np.isfinite(w)):
            raise StabilityViolation("linearised solve produced non-finite values")
        e = op.kinetic(v)
        if e_prev is not None and e > 1e6 * (e_prev + 1e-300) and e > 1e-200:
            raise StabilityViolation("linearised solve is growing without bound")
        e_prev = e
    return LinearTrajectory(np.arange(n_steps + 1) * dt, W, Wt, dt)


def integrate_in_time(u0: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """u(t_n) = u0 + trapezoid integral of w from 0 to t_n."""
    inc = 0.5 * dt * (w[1:] + w[:-1])
    out = np.empty_like(w)
    out[0] = u0
    out[1:] = u0 + np.cumsum(inc, axis=0)
    return out


@dataclass
class ContractionReport:
    differences: list
    factors: list
    iterates: list


def contraction_demo(
    model: MaterialModel,
    grid: GridSpec,
    u0: np.ndarray,
    u1: np.ndarray,
    forcing: ForcingSpec | None,
    theta: float,
    n_smooth: float,
    T: float,
    dt: float,
    iterations: int = 4,
) -> ContractionReport:
    """Iterate u^{k+1} = u0 + int w^{k+1}, with w^{k+1} solving the frozen problem at u^k.

    Initial data of w are (u1, u2), where u2 is the compatible acceleration
    at t = 0. Reports ||(d_t Z, (1/h) eps_h Z)||_{L^inf L^2} for Z the
    differences of successive iterates and the ratios between them.
    """
    op = ElasticOperator(grid, model, n_smooth)
    scale = grid.h ** (1 + theta)
    n_steps = int(round(T / dt))
    times = np.arange(n_steps + 1) * dt
    f0 = _ext(grid, forcing, 0.0, scale)
    u2 = op.force(u0) + (0 if f0 is None else f0)

    def rhs(t):
        if forcing is None or forcing.is_zero:
            return 0.0
        return body_force(grid, forcing.load_rate(grid, t), scale)

    U = np.stack([u0 + t * u1 for t in times])
    Wt = np.stack([u1 for _ in times])
    iterates = [(U, Wt)]
    diffs = []
    for _ in range(iterations):
        lin = linearized_solve(model, grid, U, rhs, u1, u2, n_smooth, T, dt)
        U_new = integrate_in_time(u0, lin.w, dt)
        W_new = lin.w
        Z = U_new - U
        Zt = W_new - iterates[-1][1]
        vals = [
            math.sqrt(op.kinetic(Zt[n]) * 2.0 + op.strain_norm(Z[n]) ** 2)
            for n in range(n_steps + 1)
        ]
        diffs.append(max(vals))
        U = U_new
        iterates.append((U_new, W_new))
    factors = [diffs[k + 1] / diffs[k] for k in range(len(diffs) - 1) if diffs[k] > 0]
    return ContractionReport(diffs, factors, iterates)


# ---------------------------------------------------------------------------
# initial data


@dataclass
class PreparedData:
    u0: Field
    u1: Field
    iterations0: int
    iterations1: int
    increments: list


def _vh_norm(grid, a):
    return norm(Field(grid, a), "V_h")


def prepare_initial_data(
    model: MaterialModel,
    target_w2: Field,
    target_w3: Field,
    f0: np.ndarray | None,
    ft0: np.ndarray | None,
    h: float,
    theta: float,
    n_smooth: float = INF,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> PreparedData:
    """Compatible initial displacement and velocity.

    u0 solves (1/h^2) div_h F_n(grad_h u0) = w2 - h^{1+theta} f0 by the
    fixed-point map u <- L^{-1}(N(u) - rhs), L the constant-coefficient
    operator inverted mode by mode and N the nonlinear remainder. u1 then
    solves the linear problem (1/h^2) div_h(A_n(grad_h u0) grad_h u1) =
    w3 - h^{1+theta} d_t f0 with the same iteration. ``f0`` and ``ft0`` are
    nodal body-force arrays (already (0, ..., g)); ``None`` means zero.
    """
    grid = target_w2.grid
    if abs(grid.h - h) > 1e-15:
        grid = grid.with_h(h)
    ops = grid_ops(grid)
    scale = h ** (1 + theta)
    op = ElasticOperator(grid, model, n_smooth)
    modal = ModalOperator(grid, model)

    def mean_abs(a):
        return float(np.max(np.abs(ops.mean(a))))

    rhs0 = target_w2.values - (0 if f0 is None else scale * f0)
    rhs1 = target_w3.values - (0 if ft0 is None else scale * ft0)
    for name, r in (("w2", rhs0), ("w3", rhs1)):
        if mean_abs(r) > 1e-10 * max(1e-300, float(np.max(np.abs(r)))) and np.any(r):
            raise SingularOperator(f"right-hand side for {name} has non-zero mean; the problem is not solvable")

    def fixed_point(remainder, rhs, label):
        u = modal.solve(-rhs)
        first = _vh_norm(grid, u)
        ball = 2.0 * first + 1e-300
        history = []
        if first == 0.0:
            return u, 0, history
        for it in range(1, max_iter + 1):
            try:
                u_new = modal.solve(remainder(u) - rhs)
            except DomainViolation as exc:
                raise NoContraction(f"{label}: iterate left the material domain ({exc}); data too large") from exc
            inc = _vh_norm(grid, u_new - u)
            history.append(inc)
            u = u_new
            size = _vh_norm(grid, u)
            if size > ball:
                raise NoContraction(
                    f"{label}: iterate left the ball of radius {ball:.3e} (norm {size:.3e}); data too large"
                )
            if inc < tol:
                return u, it, history
            if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
                raise NoContraction(f"{label}: increments grow ({history[-3:]}); data too large")
        raise NoContraction(f"{label}: no convergence after {max_iter} iterations (last increment {history[-1]:.3e})")

    lin = op.linear_force

    def rem0(u):
        return op.force(u) - lin(u)

    u0, it0, hist0 = fixed_point(rem0, rhs0, "initial displacement")

    def rem1(w):
        return op.tangent_force(u0, w) - lin(w)

    u1, it1, hist1 = fixed_point(rem1, rhs1, "initial velocity")
    return PreparedData(Field(grid, u0), Field(grid, u1), it0, it1, [hist0, hist1])
