"""Discrete Korn constant of the thin periodic box.

C(h) = sup ||grad_h u|| / ||(1/h) eps_h(u)|| over periodic mean-zero fields.
Both quadratic forms are assembled with the solver's Gauss-point rule and
are block diagonal in the tangential Fourier modes, so the pencil is solved
exactly mode by mode with a dense generalised symmetric eigensolver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EigenFailure, ZeroField
from .fields import QUAD, Field, GridSpec, grid_ops
from .material import MaterialModel
from .solver3d import ModalOperator

SHIFT = 1e-14


@dataclass(frozen=True)
class KornProblem:
    grid: GridSpec

    def __post_init__(self):
        if not (0 < self.grid.h <= 1):
            raise ValueError("h must lie in (0, 1]")

    @property
    def modal(self) -> ModalOperator:
        return ModalOperator(self.grid, MaterialModel(d=self.grid.d))

    def constraint_basis(self, modal: ModalOperator, kvec) -> np.ndarray | None:
        """Orthonormal basis of the complement of x_d-constant fields, for modes where they are in the kernel."""
        if not modal.is_degenerate(kvec):
            return None
        d, N = self.grid.d, self.grid.N_thick
        w = modal.ops.w_nodes
        C = np.zeros((d * N, d))
        for i in range(d):
            C[i * N:(i + 1) * N, i] = w
        # null space of the weighted-mean functionals
        return scipy.linalg.null_space(C.T)


@dataclass
class KornResult:
    h: float
    N_tan: int
    N_thick: int
    constant: float
    iterations: int
    residual: float
    mode: tuple
    vector: np.ndarray | None = None

    def csv_row(self):
        return [self.h, self.N_tan, self.N_thick, self.constant, self.iterations, self.residual]


CSV_HEADER = ["h", "N_tan", "N_thick", "C", "iterations", "residual"]


def _mode_pencil(problem: KornProblem, modal: ModalOperator, idx):
    kvec = modal.wavevector(idx)
    Qe, Qg = modal.forms(kvec)
    B = problem.constraint_basis(modal, kvec)
    if B is not None:
        Qe = B.T @ Qe @ B
        Qg = B.T @ Qg @ B
    Qe = 0.5 * (Qe + Qe.conj().T)
    Qg = 0.5 * (Qg + Qg.conj().T)
    scale = max(1.0, float(np.max(np.abs(np.diag(Qg)))))
    Qg = Qg + SHIFT * scale * np.eye(Qg.shape[0])
    return Qe, Qg, B


def korn_constant(grid: GridSpec, keep_vector: bool = True, tol: float = 1e-8) -> KornResult:
    """(lambda_min)^(-1/2) of Q_eps u = lambda Q_grad u on periodic mean-zero fields."""
    problem = KornProblem(grid)
    modal = problem.modal
    best = (math.inf, None, None, None)
    worst_res = 0.0
    for idx in modal.modes:
        Qe, Qg, B = _mode_pencil(problem, modal, idx)
        try:
            lam, vec = scipy.linalg.eigh(Qe, Qg, subset_by_index=[0, 0])
        except np.linalg.LinAlgError as exc:
            raise EigenFailure(f"generalised eigensolve failed for mode {idx}: {exc}") from exc
        x = vec[:, 0]
        r = Qe @ x - lam[0] * (Qg @ x)
        # normwise backward error of the eigenpair
        scale = (np.linalg.norm(Qe, 2) + abs(lam[0]) * np.linalg.norm(Qg, 2)) * np.linalg.norm(x)
        res = float(np.linalg.norm(r) / max(scale, 1e-300))
        worst_res = max(worst_res, res)
        if lam[0] < best[0]:
            best = (float(lam[0]), idx, x if B is None else B @ x, res)
    if worst_res > tol:
        raise EigenFailure(f"eigenpair residual {worst_res:.2e} exceeds {tol:.0e}")
    lam, idx, x, _ = best
    if lam <= 0:
        raise EigenFailure(f"non-positive smallest eigenvalue {lam:.3e}; the constrained form is singular")
    vec = _mode_to_field(grid, modal, idx, x) if keep_vector else None
    return KornResult(grid.h, grid.N_tan, grid.N_thick, 1.0 / math.sqrt(lam), len(modal.modes), worst_res, idx, vec)


def _mode_to_field(grid, modal, idx, x) -> np.ndarray:
    ops = modal.ops
    d, N = grid.d, grid.N_thick
    coef = np.zeros((d,) + ops.k_squared.shape[:-1] + (N,), dtype=complex)
    coef[(slice(None),) + idx + (slice(None),)] = x.reshape(d, N)
    u = ops.irfft(coef)
    if not np.any(np.abs(u) > 0):
        # a purely imaginary profile on a self-conjugate mode synthesises to zero
        coef *= 1j
        u = ops.irfft(coef)
    return u


@dataclass(frozen=True)
class Certificate:
    ratio: float
    enforced: tuple


def korn_certificate(grid: GridSpec, u) -> Certificate:
    """Rayleigh ratio ||grad_h u|| / ||(1/h) eps_h u|| after removing the mean."""
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    ops = grid_ops(grid)
    mean = ops.mean(vals)
    enforced = []
    if np.any(np.abs(mean) > 0):
        vals = vals - mean.reshape((-1,) + (1,) * grid.d)
        enforced.append("mean-zero")
    G = ops.grad_quad(vals)
    num = ops.integrate(G * G, QUAD)
    S = 0.5 * (G + np.swapaxes(G, 0, 1))
    den = ops.integrate(S * S, QUAD) / grid.h**2
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if num <= (1e-13 * scale) ** 2:
        raise ZeroField("field vanishes after the admissibility projection")
    if den == 0.0:
        return Certificate(math.inf, tuple(enforced))
    return Certificate(math.sqrt(num / den), tuple(enforced))


def norm_equivalence(grid: GridSpec) -> tuple[float, float]:
    """(c, C) with c ||(1/h) eps_h u|| <= ||grad_h u||_{L2_h} <= C ||(1/h) eps_h u||.

    ||A||_h^2 = |sym A|^2 / h^2 + |skew A|^2, so the lower constant is 1 and
    the upper one is the largest eigenvalue of (Q_eps + Q_skew) against Q_eps.
    """
    problem = KornProblem(grid)
    modal = problem.modal
    lo, hi = math.inf, 0.0
    for idx in modal.modes:
        Qe, Qg, B = _mode_pencil(problem, modal, idx)
        # Q_skew = Q_grad - h^2 Q_eps
        Qh = Qe + (Qg - grid.h**2 * Qe)
        Qe_s = Qe + SHIFT * max(1.0, float(np.max(np.abs(np.diag(Qe))))) * np.eye(Qe.shape[0])
        lam = scipy.linalg.eigh(Qh, Qe_s, eigvals_only=True)
        lo = min(lo, float(lam[0]))
        hi = max(hi, float(lam[-1]))
    return math.sqrt(max(lo, 0.0)), math.sqrt(hi)


def korn_sweep(h_values, d: int = 2, N_tan: int = 64, N_thick: int = 33, L: float = math.pi,
               csv_path=None) -> list[KornResult]:
    out = []
    for h in h_values:
        out.append(korn_constant(GridSpec(d, L, N_tan, N_thick, h), keep_vector=False))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in out:
                w.writerow(r.csv_row())
    return out
