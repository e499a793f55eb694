"""First-order thin-plate ansatz, its residual, prepared data and the h-sweep.

Given the plate deflection v(x', t), the approximate 3D displacement is

    u~ = h^(1+th) (0, v) + h^(2+th) (-x_d grad v, 0)
         + h^(4+th) (p1(x_d) grad Lap v, 0) + h^(5+th) (0, p2(x_d) Lap^2 v)

with the thickness profiles p1, p2 below. Everything here is evaluated
spectrally in x' and exactly (polynomials) in x_d.
"""

from __future__ import annotations

import json
import math
import time as _time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from . import plate2d, solver3d
from .errors import DomainViolation, StabilityViolation
from .fields import QUAD, Field, GridSpec, grid_ops
from .material import MaterialModel
from .plate2d import PlateGrid, PlateState, PlateTrajectory
from .rates import fit_rate
from .solver3d import INF, ForcingSpec

P1 = Polynomial([0.0, -0.25, 0.0, 1.0 / 3.0])
P2 = Polynomial([-1.0 / 384.0, 0.0, 1.0 / 48.0, 0.0, -1.0 / 24.0])
DP1 = P1.deriv()
DP2 = P2.deriv()


def _derivs(state: PlateState, names, vt=False):
    table = {
        "v": (0, 0), "grad": (1, 0), "hess": (2, 0), "grad_lap": (1, 1), "hess_lap": (2, 1),
        "lap2": (0, 2), "grad_lap2": (1, 2), "hess_lap2": (2, 2), "lap3": (0, 3),
    }
    req = {n: table[n] + (("vt",) if vt else ()) for n in names}
    return plate2d.plate_derivatives(state, req)


def _z(grid: GridSpec, at):
    ops = grid_ops(grid)
    if isinstance(at, str):
        return ops.x_d if at != QUAD else ops.x_quad
    return np.asarray(at, dtype=float)


def _tan(a):
    return a[..., None]


# ---------------------------------------------------------------------------
# pointwise evaluation from plate derivatives


def ansatz_from_derivatives(D: dict, h: float, theta: float, z: np.ndarray) -> np.ndarray:
    """u~ on (component, *tan, z) from v, grad v, grad Lap v, Lap^2 v."""
    n_tan = D["grad"].shape[0]
    s = h**theta
    out = np.empty((n_tan + 1,) + D["v"].shape + (z.size,))
    for i in range(n_tan):
        out[i] = s * (-h**2 * _tan(D["grad"][i]) * z + h**4 * _tan(D["grad_lap"][i]) * P1(z))
    out[n_tan] = s * (h * _tan(D["v"]) + h**5 * _tan(D["lap2"]) * P2(z))
    return out


def ansatz_strain_from_derivatives(D: dict, h: float, theta: float, z: np.ndarray) -> np.ndarray:
    """eps_h(u~) as (d, d, *tan, z), block by block from the closed form."""
    n = D["grad"].shape[0]
    d = n + 1
    s = h**theta
    E = np.empty((d, d) + D["v"].shape + (z.size,))
    for i in range(n):
        for j in range(n):
            E[i, j] = s * (-h**2 * _tan(D["hess"][i, j]) * z + h**4 * _tan(D["hess_lap"][i, j]) * P1(z))
        off = s * (0.5 * h**3 * _tan(D["grad_lap"][i]) * DP1(z) + 0.5 * h**5 * _tan(D["grad_lap2"][i]) * P2(z))
        E[i, n] = off
        E[n, i] = off
    E[n, n] = s * h**4 * _tan(D["lap2"]) * DP2(z)
    return E


def residual_from_derivatives(D: dict, h: float, theta: float, z: np.ndarray) -> np.ndarray:
    """r_h = (1/h^2) div_h eps_h(u~) - h^(1+th) (0, -Lap^2 v / 12)."""
    n = D["grad_lap2"].shape[0]
    s = h**theta
    out = np.empty((n + 1,) + D["lap3"].shape + (z.size,))
    prof = P1(z) + 0.5 * DP2(z)
    for i in range(n):
        out[i] = s * h**2 * _tan(D["grad_lap2"][i]) * prof
    out[n] = s * 0.5 * h**3 * _tan(D["lap3"]) * P2(z)
    return out


ANSATZ_NEEDS = ("v", "grad", "grad_lap", "lap2")
STRAIN_NEEDS = ("v", "grad", "hess", "hess_lap", "grad_lap", "grad_lap2", "lap2")
RESIDUAL_NEEDS = ("grad_lap2", "lap3")


# ---------------------------------------------------------------------------
# bundle


@dataclass(eq=False)
class AnsatzBundle:
    """Ansatz for one plate trajectory at fixed h and theta on a 3D grid."""

    plate: PlateTrajectory
    h: float
    theta: float
    grid: GridSpec

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if self.grid.h != self.h:
            self.grid = self.grid.with_h(self.h)
        if PlateGrid.from_grid(self.grid) != self.plate.grid:
            raise ValueError("plate grid does not match the tangential part of the 3D grid")
        self._cache = {}

    def state(self, t: float) -> PlateState:
        key = ("state", float(t))
        if key not in self._cache:
            self._cache[key] = self.plate.at(t)
        return self._cache[key]

    def displacement(self, t: float, at=None, vt: bool = False) -> np.ndarray:
        z = _z(self.grid, at if at is not None else "nodes")
        D = _derivs(self.state(t), ANSATZ_NEEDS, vt)
        return ansatz_from_derivatives(D, self.h, self.theta, z)

    def velocity(self, t: float, at=None) -> np.ndarray:
        return self.displacement(t, at, vt=True)

    def strain(self, t: float, at=QUAD, vt: bool = False) -> np.ndarray:
        D = _derivs(self.state(t), STRAIN_NEEDS, vt)
        return ansatz_strain_from_derivatives(D, self.h, self.theta, _z(self.grid, at))

    def face_traction(self, t: float) -> np.ndarray:
        """(1/h) eps_h(u~) e_d at x_d = -1/2 and +1/2, shape (2, d, *tan)."""
        E = self.strain(t, at=np.array([-0.5, 0.5]))
        return np.moveaxis(E[:, -1] / self.h, -1, 0)

    def residual(self, t: float, at=None) -> np.ndarray:
        D = _derivs(self.state(t), RESIDUAL_NEEDS)
        return residual_from_derivatives(D, self.h, self.theta, _z(self.grid, at if at is not None else "nodes"))


def build_ansatz(plate: PlateTrajectory, h: float, theta: float, t: float, grid: GridSpec) -> Field:
    """u~ sampled at the nodes of ``grid`` at time t."""
    b = AnsatzBundle(plate, h, theta, grid)
    return Field(b.grid, b.displacement(t))


def _exact_l2(grid: GridSpec, fn) -> float:
    """L2 norm of a field polynomial in x_d, by 8-point Gauss-Legendre across the thickness."""
    xg, wg = np.polynomial.legendre.leggauss(8)
    vals = fn(0.5 * xg)
    area = (2.0 * grid.L / grid.N_tan) ** (grid.d - 1)
    return math.sqrt(float(np.sum(vals * vals * 0.5 * wg)) * area)


def residual(plate: PlateTrajectory, h: float, theta: float, t: float, grid: GridSpec):
    """(nodal residual Field, its L2 norm)."""
    b = AnsatzBundle(plate, h, theta, grid)
    nrm = _exact_l2(b.grid, lambda z: b.residual(t, at=z))
    return Field(b.grid, b.residual(t)), nrm


def residual_sup_norm(plate: PlateTrajectory, h: float, theta: float, grid: GridSpec, times) -> float:
    b = AnsatzBundle(plate, h, theta, grid)
    return max(_exact_l2(b.grid, lambda z: b.residual(t, at=z)) for t in times)


def discrete_residual(plate: PlateTrajectory, h: float, theta: float, t: float, grid: GridSpec,
                      model: MaterialModel | None = None) -> np.ndarray:
    """Second path: discrete (1/h^2) div_h D^2W(0) grad_h of the sampled ansatz minus the leading term."""
    b = AnsatzBundle(plate, h, theta, grid)
    model = model or MaterialModel(d=grid.d)
    op = solver3d.ElasticOperator(b.grid, model)
    u = b.displacement(t)
    lead = np.zeros_like(u)
    D = _derivs(b.state(t), ("lap2",))
    lead[-1] = -(h ** (1 + theta)) / 12.0 * D["lap2"][..., None]
    return op.linear_force(u) - lead


# ---------------------------------------------------------------------------
# prepared data


@dataclass(eq=False)
class PreparedTargets:
    u2: Field
    u3: Field
    u0_ansatz: Field
    u1_ansatz: Field


def _accel_state(plate: PlateTrajectory, order: int) -> PlateState:
    """Plate state whose v-coefficients are d_t^order v at t = 0 (order 2 or 3)."""
    s0 = plate.initial
    g = s0.grid
    k4 = g.k_squared**2 / 12.0
    forcing = plate2d.PlateForcing(g, plate.forcing) if plate.forcing is not None and not plate.forcing.is_zero else None
    if order == 2:
        g_hat = forcing(0.0) if forcing else 0.0
        c = g_hat - k4 * s0.v_hat
    else:
        if forcing:
            rate = plate.forcing.evaluate_rate(g.mesh(), 0.0)
            gt_hat = g.rfft(np.broadcast_to(rate, g.shape))
        else:
            gt_hat = 0.0
        c = gt_hat - k4 * s0.vt_hat
    return PlateState(g, c * np.ones_like(s0.v_hat), np.zeros_like(s0.v_hat), 0.0)


def prepared_data_targets(plate: PlateTrajectory, h: float, theta: float, grid: GridSpec) -> PreparedTargets:
    """(u2, u3, u~0, u~1): time derivatives 2 and 3 of the ansatz at t=0 plus the ansatz data.

    d_t^2 v(0) = g(0) - Lap^2 v0 / 12 and d_t^3 v(0) = g_t(0) - Lap^2 v1 / 12,
    and the ansatz is linear in v, so u_{2+j} is the ansatz of those.
    """
    grid = grid.with_h(h)
    z = grid_ops(grid).x_d
    out = []
    for order in (2, 3):
        D = _derivs(_accel_state(plate, order), ANSATZ_NEEDS)
        out.append(Field(grid, ansatz_from_derivatives(D, h, theta, z)))
    s0 = plate.initial
    u0 = ansatz_from_derivatives(_derivs(s0, ANSATZ_NEEDS), h, theta, z)
    u1 = ansatz_from_derivatives(_derivs(s0, ANSATZ_NEEDS, vt=True), h, theta, z)
    return PreparedTargets(out[0], out[1], Field(grid, u0), Field(grid, u1))


# ---------------------------------------------------------------------------
# convergence study


def default_forcing() -> ForcingSpec:
    return ForcingSpec.separable(
        lambda *xs: np.cos(xs[0]), np.cos, lambda t: -np.sin(t)
    )


@dataclass(frozen=True)
class ConvergenceConfig:
    d: int = 2
    L: float = math.pi
    theta: float = 0.5
    h_values: tuple = (0.25, 0.125, 0.0625, 0.03125, 0.015625)
    T: float = 1.0
    N_tan: int = 16
    N_thick: int = 9
    cfl: float = 0.5
    n_samples: int = 100
    v0_amplitude: float = 0.1
    forced: bool = True
    n_smooth: float = INF
    epsilon_domain: float = 0.1
    richardson: bool = True
    target_window: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta = {self.theta} outside (0, 1]")
        if any(not (0 < h <= 1) for h in self.h_values):
            raise ValueError("all h must lie in (0, 1]")

    @property
    def target_slope(self) -> float:
        return 1.0 + 2.0 * self.theta

    def grid(self, h: float, refine: int = 1) -> GridSpec:
        return GridSpec(self.d, self.L, self.N_tan, (self.N_thick - 1) * refine + 1, h)

    def plate_data(self):
        amp = self.v0_amplitude
        v0 = lambda *xs: amp * np.cos(xs[0])
        return v0, None, (default_forcing() if self.forced else ForcingSpec.zero())


@dataclass
class LegResult:
    h: float
    error: float
    initial_gap: float
    residual: float
    steps: int
    dt: float
    wall: float
    prepare_iterations: tuple
    aborted: str | None = None
    error_history: list = field(default_factory=list)


def _error_norm(op: solver3d.ElasticOperator, du: np.ndarray, dv: np.ndarray) -> float:
    return math.sqrt(2.0 * op.kinetic(dv) + op.strain_norm(du) ** 2)


def run_leg(cfg: ConvergenceConfig, h: float, refine: int = 1) -> LegResult:
    """Prepare data, simulate and measure the error against the ansatz for one h."""
    t0 = _time.perf_counter()
    grid = cfg.grid(h, refine)
    model = MaterialModel(d=cfg.d, epsilon_domain=cfg.epsilon_domain)
    v0, v1, g = cfg.plate_data()
    pgrid = PlateGrid.from_grid(grid)
    dt = solver3d.stable_dt(grid, model, cfg.cfl)
    n_steps = max(1, int(math.ceil(cfg.T / dt - 1e-9)))
    dt = cfg.T / n_steps
    every = max(1, n_steps // cfg.n_samples)
    sample_idx = sorted(set(list(range(0, n_steps + 1, every)) + [n_steps]))
    times = [n * dt for n in sample_idx]
    plate = plate2d.plate_solve(pgrid, v0, v1, g, cfg.T, times)
    bundle = AnsatzBundle(plate, h, cfg.theta, grid)

    targets = prepared_data_targets(plate, h, cfg.theta, grid)
    f0 = solver3d.body_force(grid, g.load(grid, 0.0), 1.0) if not g.is_zero else None
    ft0 = solver3d.body_force(grid, g.load_rate(grid, 0.0), 1.0) if not g.is_zero else None
    prep = solver3d.prepare_initial_data(model, targets.u2, targets.u3, f0, ft0, h, cfg.theta, cfg.n_smooth)
    op = solver3d.ElasticOperator(grid, model, cfg.n_smooth)
    gap = max(
        op.strain_norm(prep.u0.values - targets.u0_ansatz.values),
        op.strain_norm(prep.u1.values - targets.u1_ansatz.values),
    )
    res = residual_sup_norm(plate, h, cfg.theta, grid, times)

    def observe(t, u, v):
        return _error_norm(op, u - bundle.displacement(t), v - bundle.velocity(t))

    state = solver3d.SimState(prep.u0, prep.u1, 0.0, cfg.theta)
    aborted = None
    try:
        traj = solver3d.simulate(state, model, g, cfg.n_smooth, cfg.T, dt=dt, sample_every=every,
                                 observers={"error": observe})
        hist = traj.observations["error"]
        steps = traj.steps
    except (DomainViolation, StabilityViolation) as exc:
        aborted = f"{type(exc).__name__}: {exc}"
        hist, steps = [], 0
    err = max(hist) if hist else float("nan")
    return LegResult(h, err, gap, res, steps, dt, _time.perf_counter() - t0,
                     (prep.iterations0, prep.iterations1), aborted, hist)


@dataclass
class RateReport:
    config: dict
    legs: list
    slope: float | None
    intercept: float | None
    residuals: tuple
    gap_slope: float | None
    residual_slope: float | None
    target: float
    window: float
    degenerate: bool
    richardson: dict | None
    floor_detected: bool = False

    @property
    def passed(self) -> bool:
        return self.slope is not None and abs(self.slope - self.target) <= self.window

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, indent=2, default=float)


def _fit(pairs):
    pairs = [(h, e) for h, e in pairs if e is not None and np.isfinite(e) and e > 0]
    if len(pairs) < 3:
        return None
    return fit_rate(pairs)


def convergence_study(cfg: ConvergenceConfig, out_dir=None, progress=None) -> RateReport:
    """Sweep h, fit log-log slopes and optionally write JSON, CSV and a plot script."""
    legs = []
    for h in cfg.h_values:
        leg = run_leg(cfg, h)
        if leg.aborted:
            warnings.warn(f"h={h}: solver aborted ({leg.aborted}); excluded from the fit", RuntimeWarning)
        legs.append(leg)
        if progress:
            progress(leg)
    ok = [lg for lg in legs if not lg.aborted]
    degenerate = all(lg.error == 0.0 for lg in ok)
    fit = None if degenerate else _fit([(lg.h, lg.error) for lg in ok])
    gap_fit = _fit([(lg.h, lg.initial_gap) for lg in legs])
    res_fit = _fit([(lg.h, lg.residual) for lg in legs])
    rich = None
    if cfg.richardson and ok and not degenerate:
        finest = min(ok, key=lambda lg: lg.h)
        fine = run_leg(cfg, finest.h, refine=2)
        disc = abs(finest.error - fine.error)
        expected = math.exp(fit.intercept) * finest.h**cfg.target_slope if fit else finest.error
        rich = dict(h=finest.h, error=finest.error, error_refined=fine.error,
                    discretization_error=disc, budget=0.1 * expected,
                    within_budget=bool(disc <= 0.1 * expected))
    report = RateReport(
        config=asdict(cfg),
        legs=[asdict(lg) | {"error_history": None} for lg in legs],
        slope=fit.slope if fit else None,
        intercept=fit.intercept if fit else None,
        residuals=fit.residuals if fit else (),
        gap_slope=gap_fit.slope if gap_fit else None,
        residual_slope=res_fit.slope if res_fit else None,
        target=cfg.target_slope,
        window=cfg.target_window,
        degenerate=degenerate,
        richardson=rich,
        floor_detected=bool(fit.floor_detected) if fit else False,
    )
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: RateReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rate_report.json").write_text(report.to_json())
    with open(out / "errors.csv", "w") as fh:
        fh.write("h,error,initial_gap,residual,steps,dt,aborted\n")
        for lg in report.legs:
            fh.write(f"{lg['h']!r},{lg['error']!r},{lg['initial_gap']!r},{lg['residual']!r},"
                     f"{lg['steps']},{lg['dt']!r},{1 if lg['aborted'] else 0}\n")
    (out / "plot_errors.gp").write_text(
        "set logscale xy\n"
        "set datafile separator ','\n"
        "set key top left\n"
        "set xlabel 'h'\n"
        "set ylabel 'error'\n"
        "set terminal pngcairo size 800,600\n"
        "set output 'errors.png'\n"
        "plot 'errors.csv' every ::1 using 1:2 with linespoints title 'solution error', \\\n"
        "     'errors.csv' every ::1 using 1:3 with linespoints title 'initial-data gap', \\\n"
        "     'errors.csv' every ::1 using 1:4 with linespoints title 'residual'\n"
    )
