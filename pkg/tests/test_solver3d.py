import csv
import math

import numpy as np
import pytest

from thinplate.errors import DomainViolation, NoContraction, SingularOperator, StabilityViolation
from thinplate.fields import Field, GridSpec, grid_ops
from thinplate.material import MaterialModel
from thinplate.solver3d import (
    CSV_COLUMNS,
    ElasticOperator,
    ForcingSpec,
    ModalOperator,
    SimState,
    body_force,
    contraction_demo,
    integrate_in_time,
    internal_force,
    linearized_solve,
    low_frequency_data,
    prepare_initial_data,
    simulate,
    stable_dt,
    step,
)

MODEL2 = MaterialModel(d=2)


def small_field(grid, rng, size=1e-3):
    return low_frequency_data(grid, MaterialModel(d=grid.d), rng, amplitude=size, max_wavenumber=3, branches=3)


def mean_free(grid, a):
    return a - grid_ops(grid).mean(a).reshape((-1,) + (1,) * grid.d)


@pytest.mark.parametrize("d", [2, 3])
def test_force_is_negative_energy_gradient(d, rng):
    grid = GridSpec(d=d, N_tan=8, N_thick=5, h=0.5)
    op = ElasticOperator(grid, MaterialModel(d=d))
    u = small_field(grid, rng, 0.02)
    w = rng.standard_normal(u.shape)
    eps = 1e-6
    dE = (op.elastic_energy(u + eps * w) - op.elastic_energy(u - eps * w)) / (2 * eps)
    assert dE == pytest.approx(-op.ops.integrate(op.force(u) * w), rel=1e-6)


@pytest.mark.parametrize("n", [math.inf, 40.0])
def test_smoothed_force_is_energy_gradient(n, grid2, rng):
    op = ElasticOperator(grid2, MODEL2, n)
    u = small_field(grid2, rng, 0.02)
    w = rng.standard_normal(u.shape)
    eps = 1e-6
    dE = (op.elastic_energy(u + eps * w) - op.elastic_energy(u - eps * w)) / (2 * eps)
    assert dE == pytest.approx(-op.ops.integrate(op.force(u) * w), rel=1e-6)


def test_tangent_force_linearises_force(grid2, rng):
    op = ElasticOperator(grid2, MODEL2)
    u = small_field(grid2, rng, 0.02)
    w = small_field(grid2, np.random.default_rng(7), 1.0)
    eps = 1e-7
    fd = (op.force(u + eps * w) - op.force(u - eps * w)) / (2 * eps)
    T = op.tangent_force(u, w)
    assert np.max(np.abs(fd - T)) < 1e-6 * np.max(np.abs(T))


def test_linear_force_is_tangent_at_zero(grid2, rng):
    op = ElasticOperator(grid2, MODEL2)
    w = rng.standard_normal((2,) + grid2.node_shape)
    assert np.allclose(op.tangent_force(np.zeros_like(w), w), op.linear_force(w), atol=1e-10)


def test_internal_force_wrapper(grid2, rng):
    u = Field(grid2, small_field(grid2, rng))
    f = internal_force(MODEL2, u)
    assert np.array_equal(f.values, ElasticOperator(grid2, MODEL2).force(u.values))


def test_modal_stiffness_reproduces_linear_force(grid2, rng):
    """Synthesising K_k u_k / M mode by mode equals -linear_force."""
    modal = ModalOperator(grid2, MODEL2)
    op = ElasticOperator(grid2, MODEL2)
    ops = grid_ops(grid2)
    u = rng.standard_normal((2,) + grid2.node_shape)
    u_hat = ops.rfft(u)
    out = np.zeros_like(u_hat)
    for idx in modal.modes:
        sl = (slice(None),) + idx + (slice(None),)
        K = modal.stiffness(modal.wavevector(idx))
        out[sl] = (K @ u_hat[sl].reshape(-1) / modal.mass).reshape(2, -1)
    ref = -op.linear_force(u)
    assert np.max(np.abs(ops.irfft(out) - ref)) < 1e-9 * np.max(np.abs(ref))


@pytest.mark.parametrize("d", [2, 3])
def test_modal_solve_inverts_linear_operator(d, rng):
    grid = GridSpec(d=d, N_tan=8, N_thick=5, h=0.25)
    model = MaterialModel(d=d)
    op = ElasticOperator(grid, model)
    # a right-hand side in the range: image of a random field
    rhs = -op.linear_force(rng.standard_normal((d,) + grid.node_shape))
    u = ModalOperator(grid, model).solve(rhs)
    assert np.max(np.abs(-op.linear_force(u) - rhs)) < 1e-8 * np.max(np.abs(rhs))
    assert np.max(np.abs(grid_ops(grid).mean(u))) < 1e-12


def test_stable_dt_matches_explicit_eigenvalues():
    grid = GridSpec(d=2, N_tan=4, N_thick=5, h=0.5)
    op = ElasticOperator(grid, MODEL2)
    n = 2 * np.prod(grid.node_shape)
    # assemble -M^{-1} dF/du column by column
    A = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        A[:, j] = -op.linear_force(e.reshape((2,) + grid.node_shape)).ravel()
    omega = math.sqrt(np.max(np.linalg.eigvals(A).real))
    assert stable_dt(grid, MODEL2, cfl=1.0) == pytest.approx(2.0 / omega, rel=1e-10)


def test_stable_dt_scales_with_thickness_squared():
    dts = [stable_dt(GridSpec(d=2, N_tan=8, N_thick=9, h=h), MODEL2) for h in (0.1, 0.05)]
    assert dts[1] / dts[0] == pytest.approx(0.25, rel=0.05)


def test_unforced_run_conserves_energy(rng):
    grid = GridSpec(d=2, N_tan=8, N_thick=9, h=0.25)
    u0 = Field(grid, low_frequency_data(grid, MODEL2, rng, amplitude=1e-3, max_wavenumber=2))
    state = SimState(u0, Field.zeros(grid), theta=1.0)
    drifts = []
    for cfl in (0.4, 0.2):
        traj = simulate(state, MODEL2, None, math.inf, T=0.5, cfl=cfl)
        drifts.append(traj.max_relative_drift)
    assert drifts[0] < 1e-4
    assert math.log2(drifts[0] / drifts[1]) > 1.8


def test_step_advances_time_and_ledger(grid2, rng):
    u0 = Field(grid2, small_field(grid2, rng))
    s = SimState(u0, Field.zeros(grid2))
    dt = stable_dt(grid2, MODEL2)
    s1 = step(s, MODEL2, None, math.inf, dt)
    assert s1.t == pytest.approx(dt)
    assert s1.ledger.initial == pytest.approx(s1.ledger.kinetic + s1.ledger.elastic, rel=1e-3)


def test_too_large_step_is_flagged(grid2, rng):
    u0 = Field(grid2, 1e-9 * rng.standard_normal((2,) + grid2.node_shape))
    s = SimState(u0, Field.zeros(grid2))
    with pytest.raises(StabilityViolation):
        simulate(s, MODEL2, None, math.inf, T=1.0, dt=3 * stable_dt(grid2, MODEL2, cfl=1.0))


def test_large_strain_aborts(grid2):
    X, Z = grid_ops(grid2).mesh()
    vals = np.zeros((2,) + grid2.node_shape)
    vals[1] = 0.5 * np.sin(X) + 0 * Z
    s = SimState(Field(grid2, vals), Field.zeros(grid2))
    with pytest.raises(DomainViolation):
        simulate(s, MODEL2, None, math.inf, T=0.01)


def test_abort_is_reported_when_not_raised(grid2):
    X, Z = grid_ops(grid2).mesh()
    vals = np.zeros((2,) + grid2.node_shape)
    vals[1] = 0.06 * np.sin(X) + 0 * Z
    vals[0] = -0.06 * grid2.h * Z * np.cos(X)
    s = SimState(Field(grid2, vals), Field(grid2, 50 * vals))
    traj = simulate(s, MODEL2, None, math.inf, T=0.2, raise_on_abort=False)
    assert isinstance(traj.aborted, DomainViolation)
    assert traj.steps < int(round(0.2 / traj.dt))


def test_forcing_mean_is_checked(grid2):
    bad = ForcingSpec.separable(lambda x: 1.0 + np.cos(x), np.cos)
    with pytest.raises(ValueError):
        bad.check_mean_zero(grid2)
    s = SimState(Field.zeros(grid2), Field.zeros(grid2))
    with pytest.raises(ValueError):
        simulate(s, MODEL2, bad, math.inf, T=0.01)


def test_forcing_rate_finite_difference_matches_analytic(grid2):
    exact = ForcingSpec.separable(np.cos, np.sin, np.cos)
    numeric = ForcingSpec(g=lambda x, t: np.cos(x) * np.sin(t))
    for t in (0.0, 0.7):
        assert np.allclose(exact.load_rate(grid2, t), numeric.load_rate(grid2, t), atol=1e-10)


def test_tabulated_forcing_interpolates(grid2):
    x = grid_ops(grid2).x_tan if hasattr(grid_ops(grid2), "x_tan") else ForcingSpec()._tan_coords(grid2)[0]
    times = np.linspace(0, 1, 41)
    vals = np.array([np.cos(x) * np.sin(t) for t in times])
    f = ForcingSpec.tabulated(times, vals)
    assert np.allclose(f.load(grid2, 0.33), np.cos(x) * np.sin(0.33), atol=1e-6)


def test_work_balances_energy_under_forcing(rng):
    grid = GridSpec(d=2, N_tan=8, N_thick=5, h=0.25)
    forcing = ForcingSpec.separable(np.cos, np.cos, lambda t: -np.sin(t))
    s = SimState(Field.zeros(grid), Field.zeros(grid), theta=1.0)
    traj = simulate(s, MODEL2, forcing, math.inf, T=0.5, cfl=0.25)
    last = traj.rows[-1]
    assert last["work"] != 0.0
    assert abs(last["drift"]) < 1e-3 * abs(last["work"])


def test_csv_and_snapshots(tmp_path, grid2, rng):
    s = SimState(Field(grid2, small_field(grid2, rng)), Field.zeros(grid2))
    simulate(s, MODEL2, None, math.inf, T=0.05, n_samples=4, csv_path=tmp_path / "ledger.csv",
             snapshot_dir=tmp_path / "snaps")
    with open(tmp_path / "ledger.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) >= 3
    assert len(list((tmp_path / "snaps").glob("*.bin"))) == len(rows) - 1


def test_observers_receive_sampled_states(grid2, rng):
    s = SimState(Field(grid2, small_field(grid2, rng)), Field.zeros(grid2))
    traj = simulate(s, MODEL2, None, math.inf, T=0.05, n_samples=5,
                    observers={"t": lambda t, u, v: t})
    assert np.allclose(traj.observations["t"], traj.times)
    assert traj.times[-1] == pytest.approx(0.05)


def test_body_force_layout(grid3):
    g = np.ones(grid3.tan_shape)
    f = body_force(grid3, g, 0.5)
    assert np.all(f[:-1] == 0) and np.all(f[-1] == 0.5)


# ---------------------------------------------------------------------------
# linearised solves and initial data


def test_linearized_solve_requires_commensurate_horizon(grid2):
    z = np.zeros((2,) + grid2.node_shape)
    with pytest.raises(ValueError):
        linearized_solve(MODEL2, grid2, lambda n, t: z, None, z, z, math.inf, T=1.0, dt=0.3)


def test_linearized_solve_matches_nonlinear_for_tiny_data(rng):
    grid = GridSpec(d=2, N_tan=8, N_thick=5, h=0.5)
    w0 = low_frequency_data(grid, MODEL2, rng, amplitude=1e-7)
    z = np.zeros_like(w0)
    dt = stable_dt(grid, MODEL2, 0.4)
    n = 20
    lin = linearized_solve(MODEL2, grid, lambda k, t: z, None, w0, z, math.inf, T=n * dt, dt=dt)
    traj = simulate(SimState(Field(grid, w0), Field.zeros(grid)), MODEL2, None, math.inf, T=n * dt, dt=dt,
                    sample_every=n)
    assert np.max(np.abs(lin.w[-1] - traj.final.u.values)) < 1e-6 * np.max(np.abs(w0))


def test_integrate_in_time_is_exact_for_linear_rates():
    dt = 0.1
    t = np.arange(11) * dt
    w = np.stack([np.full(3, 2 * s) for s in t])
    u = integrate_in_time(np.zeros(3), w, dt)
    assert np.allclose(u[:, 0], t**2)


def test_contraction_on_small_configuration(rng):
    grid = GridSpec(d=2, N_tan=8, N_thick=5, h=0.25)
    theta = 0.5
    u0 = low_frequency_data(grid, MODEL2, rng, amplitude=5e-3, max_wavenumber=2)
    u1 = np.zeros_like(u0)
    dt = stable_dt(grid, MODEL2, 0.4)
    n = int(math.ceil(0.25 / dt))
    rep = contraction_demo(MODEL2, grid, u0, u1, ForcingSpec.separable(np.cos, np.cos), theta, math.inf,
                           T=n * dt, dt=dt, iterations=4)
    assert len(rep.differences) == 4
    assert all(f <= 0.5 for f in rep.factors)


def test_prepared_data_zero_targets(grid2):
    z = Field.zeros(grid2)
    out = prepare_initial_data(MODEL2, z, z, None, None, grid2.h, 0.5)
    assert np.all(out.u0.values == 0) and np.all(out.u1.values == 0)


def test_prepared_data_satisfies_equations(grid2, rng):
    h, theta = grid2.h, 0.5
    op = ElasticOperator(grid2, MODEL2)
    u_true = small_field(grid2, rng, 5e-3)
    w_true = small_field(grid2, np.random.default_rng(3), 1e-2)
    g = ForcingSpec.separable(np.cos, np.cos, lambda t: -np.sin(t))
    f0 = body_force(grid2, g.load(grid2, 0.0), 1.0)
    ft0 = body_force(grid2, g.load_rate(grid2, 0.0), 1.0)
    scale = h ** (1 + theta)
    w2 = Field(grid2, op.force(u_true) + scale * f0)
    w3 = Field(grid2, op.tangent_force(u_true, w_true) + scale * ft0)
    out = prepare_initial_data(MODEL2, w2, w3, f0, ft0, h, theta)
    r0 = op.force(out.u0.values) + scale * f0 - w2.values
    r1 = op.tangent_force(out.u0.values, out.u1.values) + scale * ft0 - w3.values
    assert np.max(np.abs(r0)) < 1e-9 * np.max(np.abs(w2.values))
    assert np.max(np.abs(r1)) < 1e-9 * np.max(np.abs(w3.values))
    assert np.allclose(out.u0.values, mean_free(grid2, u_true), atol=1e-9)
    inc = out.increments[0]
    assert all(b < a for a, b in zip(inc, inc[1:]))


def test_prepared_data_rejects_large_targets(grid2, rng):
    op = ElasticOperator(grid2, MODEL2)
    big = Field(grid2, -op.linear_force(small_field(grid2, rng, 0.5)))
    z = Field.zeros(grid2)
    with pytest.raises(NoContraction):
        prepare_initial_data(MODEL2, big, z, None, None, grid2.h, 0.5)


def test_prepared_data_rejects_nonzero_mean(grid2):
    vals = np.zeros((2,) + grid2.node_shape)
    vals[1] = 1e-3
    z = Field.zeros(grid2)
    with pytest.raises(SingularOperator):
        prepare_initial_data(MODEL2, Field(grid2, vals), z, None, None, grid2.h, 0.5)
