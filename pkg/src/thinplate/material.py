"""Distance-to-rotations energy and its derivatives near the identity.

All functions act on stacks of matrices: ``G`` has shape ``(..., d, d)`` and
the returned arrays keep the leading batch shape. The energy is

    W(I + G) = normalization * sum_i (sigma_i - 1)**2

where sigma_i are the singular values of ``I + G``. With the default
normalization 1/2 the Hessian at the identity is the symmetric part map.

Derivatives follow from the polar decomposition ``I + G = R U``:
``DW = 2 c (F - R)``, and differentiating ``R`` reduces to Sylvester
equations ``Omega U + U Omega = M`` for skew ``Omega``, which have closed
forms in two and three dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainViolation


@dataclass(frozen=True)
class MaterialModel:
    d: int = 2
    normalization: float = 0.5
    epsilon_domain: float = 0.1

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if not self.normalization > 0:
            raise ValueError("normalization must be positive")
        # |G| < 1 in Frobenius norm keeps det(I + G) > 0
        if not 0 < self.epsilon_domain < 1:
            raise ValueError("epsilon_domain must lie in (0, 1)")


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def skew(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def frob(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(A * A, axis=(-1, -2)))


def check_domain(model: MaterialModel, G: np.ndarray) -> None:
    """Raise DomainViolation if any matrix in the stack is outside the ball."""
    G = np.asarray(G, dtype=float)
    size = frob(G)
    worst = float(np.max(size)) if size.size else 0.0
    if worst > model.epsilon_domain:
        idx = np.unravel_index(int(np.argmax(size)), size.shape) if size.ndim else ()
        raise DomainViolation(
            f"|G| = {worst:.4g} exceeds epsilon_domain = {model.epsilon_domain}",
            index=idx,
            value=worst,
        )
    det = np.linalg.det(np.eye(model.d) + G)
    if np.any(det <= 0):
        idx = np.unravel_index(int(np.argmin(det)), det.shape) if det.ndim else ()
        raise DomainViolation("det(I + G) <= 0", index=idx, value=float(np.min(det)))


# ----------------------------------------------------------------------------
# polar decomposition


def _polar2(G):
    """Rotation part of I + G in 2D, returned with I - R computed stably."""
    a = G[..., 1, 0] - G[..., 0, 1]
    b = 2.0 + G[..., 0, 0] + G[..., 1, 1]
    phi = np.arctan2(a, b)
    s = np.sin(phi)
    c = np.cos(phi)
    one_minus_c = 2.0 * np.sin(0.5 * phi) ** 2
    R = np.empty(G.shape)
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    IminusR = np.empty(G.shape)
    IminusR[..., 0, 0] = one_minus_c
    IminusR[..., 0, 1] = s
    IminusR[..., 1, 0] = -s
    IminusR[..., 1, 1] = one_minus_c
    return R, IminusR


def _polar3(G):
    F = np.eye(3) + G
    Us, _, Vt = np.linalg.svd(F)
    # det(F) > 0 inside the domain, but guard the sign anyway
    sign = np.sign(np.linalg.det(Us @ Vt))
    Us = Us.copy()
    Us[..., :, -1] *= sign[..., None]
    R = Us @ Vt
    return R, np.eye(3) - R


def polar_factor(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (R, U) with I + G = R U, R a rotation and U symmetric positive."""
    G = np.asarray(G, dtype=float)
    d = G.shape[-1]
    R, _ = _polar2(G) if d == 2 else _polar3(G)
    U = sym(np.swapaxes(R, -1, -2) @ (np.eye(d) + G))
    return R, U


def _distance_matrix(G):
    """F - R, the rotation-free part of the deformation, without cancellation."""
    d = G.shape[-1]
    _, IminusR = _polar2(G) if d == 2 else _polar3(G)
    return G + IminusR


# ----------------------------------------------------------------------------
# Sylvester solves for skew unknowns


def _axial(M):
    return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)


def _from_axial(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 2, 1] = w[..., 0]
    out[..., 1, 2] = -w[..., 0]
    out[..., 0, 2] = w[..., 1]
    out[..., 2, 0] = -w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 0, 1] = -w[..., 2]
    return out


def solve_skew_sylvester(U: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Skew Omega with Omega U + U Omega = skew(M), for symmetric positive U."""
    M = skew(M)
    d = U.shape[-1]
    if d == 2:
        w = M[..., 1, 0] / (U[..., 0, 0] + U[..., 1, 1])
        out = np.zeros(np.broadcast_shapes(U.shape, M.shape))
        out[..., 1, 0] = w
        out[..., 0, 1] = -w
        return out
    # W(w) S + S W(w) = W((tr S) I - S) w for symmetric S
    tr = np.trace(U, axis1=-2, axis2=-1)
    A = tr[..., None, None] * np.eye(3) - U
    m = _axial(M)
    A, m = np.broadcast_arrays(A, m[..., None])
    w = np.linalg.solve(A, m)[..., 0]
    return _from_axial(w)


# ----------------------------------------------------------------------------
# public evaluations


def energy(model: MaterialModel, G, check: bool = True) -> np.ndarray:
    """W(I + G) for a stack of matrices."""
    G = np.asarray(G, dtype=float)
    if check:
        check_domain(model, G)
    D = _distance_matrix(G)
    return model.normalization * np.sum(D * D, axis=(-1, -2))


def first_derivative(model: MaterialModel, G, check: bool = True) -> np.ndarray:
    """DW(I + G) as a matrix, paired with the Frobenius inner product."""
    G = np.asarray(G, dtype=float)
    if check:
        check_domain(model, G)
    return 2.0 * model.normalization * _distance_matrix(G)


def _rotation_rate(R, U, H):
    """Omega with dR[H] = R Omega."""
    Rt = np.swapaxes(R, -1, -2)
    X = Rt @ H
    return solve_skew_sylvester(U, X - np.swapaxes(X, -1, -2))


def second_derivative_apply(model: MaterialModel, G, H, check: bool = True) -> np.ndarray:
    """D^2 W(I + G)[H]."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    if check:
        check_domain(model, G)
    R, U = polar_factor(G)
    Om = _rotation_rate(R, U, H)
    return 2.0 * model.normalization * (H - R @ Om)


def third_derivative_apply(model: MaterialModel, G, H1, H2, check: bool = True) -> np.ndarray:
    """D^3 W(I + G)[H1, H2] as a matrix; contract with H3 for the full form."""
    G = np.asarray(G, dtype=float)
    H1 = np.asarray(H1, dtype=float)
    H2 = np.asarray(H2, dtype=float)
    if check:
        check_domain(model, G)
    R, U = polar_factor(G)
    Rt = np.swapaxes(R, -1, -2)
    Om1 = _rotation_rate(R, U, H1)
    Om2 = _rotation_rate(R, U, H2)
    dU2 = Rt @ H2 - Om2 @ U
    A = Om2 @ Rt @ H1
    rhs = -A + np.swapaxes(A, -1, -2) - (Om1 @ dU2 + dU2 @ Om1)
    dOm1 = solve_skew_sylvester(U, rhs)
    d2R = R @ (Om2 @ Om1 + dOm1)
    return -2.0 * model.normalization * d2R


def second_derivative_matrix(model: MaterialModel, G, check: bool = True) -> np.ndarray:
    """Full Hessian as an array of shape (..., d, d, d, d): out[..., i, j, k, l]."""
    G = np.asarray(G, dtype=float)
    d = model.d
    out = np.empty(G.shape + (d, d))
    for k in range(d):
        for l in range(d):
            E = np.zeros((d, d))
            E[k, l] = 1.0
            out[..., k, l] = second_derivative_apply(model, G, E, check=check)
    return out


# ----------------------------------------------------------------------------
# scaled norms


def scaled_abs(A: np.ndarray, h: float) -> np.ndarray:
    """Pointwise |A|_h: symmetric part weighted by 1/h."""
    S = sym(A)
    K = skew(A)
    return np.sqrt(np.sum(S * S, axis=(-1, -2)) / h**2 + np.sum(K * K, axis=(-1, -2)))


def _riesz_h(M, h):
    """Representer B of B' -> M:B' in the :_h inner product."""
    return h**2 * sym(M) + skew(M)


@dataclass(frozen=True)
class MultilinearNormResult:
    value: float
    starts: int
    maximizer: tuple


def scaled_multilinear_norm(
    form: Callable[..., float],
    d: int,
    order: int,
    h: float,
    starts: int = 64,
    sweeps: int = 60,
    seed: int = 0,
) -> MultilinearNormResult:
    """Lower bound for sup |form(A_1..A_n)| over |A_j|_h <= 1.

    Block-coordinate ascent: with all slots but one fixed the form is linear
    in the free slot, so its exact maximiser on the |.|_h sphere is the
    normalised :_h representer of the partial gradient. Restarted from
    ``starts`` random points; the best value is returned.
    """
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    basis = []
    for i in range(d):
        for j in range(d):
            E = np.zeros((d, d))
            E[i, j] = 1.0
            basis.append(E)

    def normalise(A):
        return A / float(scaled_abs(A, h))

    def partial(slots, k):
        M = np.zeros((d, d))
        for E in basis:
            args = list(slots)
            args[k] = E
            M += form(*args) * E
        return M

    best = 0.0
    best_args: tuple = ()
    for _ in range(starts):
        slots = [normalise(rng.standard_normal((d, d))) for _ in range(order)]
        value = abs(form(*slots))
        for _ in range(sweeps):
            for k in range(order):
                M = partial(slots, k)
                if not np.any(M):
                    continue
                R = _riesz_h(M, h)
                slots[k] = normalise(R)
            new = abs(form(*slots))
            if new <= value * (1 + 1e-13):
                value = max(value, new)
                break
            value = new
        if value > best:
            best = value
            best_args = tuple(slots)
    return MultilinearNormResult(value=best, starts=starts, maximizer=best_args)


def third_derivative_form(model: MaterialModel, G=None) -> Callable[..., float]:
    """Trilinear form (A1, A2, A3) -> D^3 W(I + G)(A1, A2, A3)."""
    G0 = np.zeros((model.d, model.d)) if G is None else np.asarray(G, dtype=float)

    def form(A1, A2, A3):
        return float(np.sum(third_derivative_apply(model, G0, A1, A2) * A3))

    return form


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    Q, Rm = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(Rm))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def stress_components(model: MaterialModel, G: np.ndarray) -> np.ndarray:
    """DW on a component-first array (d, d, ...), without domain checks.

    Two-dimensional fast path of :func:`first_derivative` for the solver's
    inner loop; falls back to the generic route in three dimensions.
    """
    c2 = 2.0 * model.normalization
    if G.shape[0] == 2:
        g00, g01, g10, g11 = G[0, 0], G[0, 1], G[1, 0], G[1, 1]
        phi = np.arctan2(g10 - g01, 2.0 + g00 + g11)
        s = np.sin(phi)
        omc = 2.0 * np.sin(0.5 * phi) ** 2
        S = np.empty(G.shape)
        S[0, 0] = c2 * (g00 + omc)
        S[0, 1] = c2 * (g01 + s)
        S[1, 0] = c2 * (g10 - s)
        S[1, 1] = c2 * (g11 + omc)
        return S
    Gm = np.moveaxis(G, (0, 1), (-2, -1))
    return np.moveaxis(first_derivative(model, Gm, check=False), (-2, -1), (0, 1))
