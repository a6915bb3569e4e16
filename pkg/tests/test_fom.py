import numpy as np
import pytest

import oracle
from poddiv.errors import ConfigError, ContractError, DimensionError, StepError
from poddiv.fespace import build_taylor_hood
from poddiv.fom import FomConfig, FomSolver, Scheme, SnapshotSet, fom_run, fom_step
from poddiv.mesh import unit_square_mesh
from poddiv.problems import ManufacturedSolution, desk_forcing, zero_forcing
from poddiv.verify import desk_config, fom_energy_residuals, random_fields


def test_rest_state_stays_at_rest(space4):
    for scheme in Scheme:
        res = fom_run(FomConfig(nu=0.1, dt=0.1, T=0.5, scheme=scheme, window=(0.0, 0.5)), space4)
        assert not np.any(res.snapshots.vectors)
        assert not np.any(res.pressures)


def dense_stokes_steps(space, nu, mu, dt, steps, forcing):
    """Unsteady Stokes by implicit Euler with dense oracle matrices and a mean-zero multiplier."""
    M, A, G, B = oracle.dense_matrices(space)
    free = space.free_dofs
    nf, npr = len(free), space.n_pre
    K = np.zeros((nf + npr + 1, nf + npr + 1))
    K[:nf, :nf] = (M / dt + nu * A + mu * G)[np.ix_(free, free)]
    K[:nf, nf:nf + npr] = -B[:, free].T
    K[nf:nf + npr, :nf] = B[:, free]
    w = space.pressure_weights
    K[nf:nf + npr, -1] = w
    K[-1, nf:nf + npr] = w
    u = np.zeros(space.n_vel)
    out = []
    for n in range(1, steps + 1):
        rhs = np.zeros(len(K))
        rhs[:nf] = (M @ u / dt + forcing.load(space, n * dt))[free]
        x = np.linalg.solve(K, rhs)
        u = np.zeros(space.n_vel)
        u[free] = x[:nf]
        out.append((u, x[nf:nf + npr]))
    return out


def test_stokes_limit_matches_dense_oracle():
    space = build_taylor_hood(unit_square_mesh(3))
    cfg = FomConfig(nu=0.3, dt=0.05, T=0.25, mu=0.5, forcing=desk_forcing(), convection=False)
    res = fom_run(cfg, space, keep_states=True)
    ref = dense_stokes_steps(space, 0.3, 0.5, 0.05, 5, cfg.forcing)
    for state, (u, p) in zip(res.states[1:], ref):
        assert np.max(np.abs(state.u - u)) <= 1e-9 * np.max(np.abs(u))
        assert np.max(np.abs(state.p - p)) <= 1e-9 * np.max(np.abs(p))


def test_inviscid_skew_energy_does_not_grow(space4, rng):
    (u0,) = random_fields(space4, 1, rng)
    cfg = FomConfig(nu=0.0, dt=0.05, T=0.5, mu=0.05, initial=u0.coef, test_mode=True)
    energy = fom_run(cfg, space4).series.kinetic_energy
    norms = np.sqrt(2 * energy)
    assert np.all(norms[2:] <= norms[1:-1] + 1e-12)


@pytest.mark.parametrize("mu", [0.05, 0.0])
def test_energy_identity(space8, mu):
    cfg = desk_config(T=0.1, mu=mu)
    assert np.max(fom_energy_residuals(space8, cfg)) <= 1e-9


def test_picard_converges_to_tolerance(space8):
    res = fom_run(desk_config(T=0.05), space8, keep_states=True)
    assert all(s.increment <= 1e-10 for s in res.states[1:])
    assert np.all(res.series.picard_iterations[1:] >= 2)


def test_picard_failure_carries_increment(space8):
    cfg = desk_config(T=0.05, picard_max_iters=1)
    with pytest.raises(StepError) as info:
        fom_run(cfg, space8)
    assert info.value.increment > 1e-10


def test_fom_step_matches_solver(space8):
    cfg = desk_config(T=0.02)
    solver = FomSolver(space8, cfg)
    s0 = solver.initial_state()
    assert np.array_equal(fom_step(s0, cfg, space8).u, solver.step(s0).u)


def test_bdf2_and_euler_agree_to_first_order():
    space = build_taylor_hood(unit_square_mesh(8))
    ms = ManufacturedSolution(1.0)
    runs = {}
    for scheme in Scheme:
        cfg = FomConfig(nu=1.0, dt=0.01, T=0.2, scheme=scheme, forcing=ms.forcing(), initial=ms.velocity(0.0),
                        window=(0.2, 0.2))
        runs[scheme] = fom_run(cfg, space).snapshots.vectors[0]
    scale = np.max(np.abs(runs[Scheme.BDF2]))
    assert np.max(np.abs(runs[Scheme.BDF2] - runs[Scheme.IMPLICIT_EULER])) <= 10 * 0.01 * scale


@pytest.mark.parametrize("scheme, order", [(Scheme.IMPLICIT_EULER, 1.0), (Scheme.BDF2, 2.0)])
def test_temporal_error_order(scheme, order):
    """Refining dt against a fine-dt run on the same mesh isolates the temporal error."""
    space = build_taylor_hood(unit_square_mesh(6))
    ms = ManufacturedSolution(1.0)

    def final(dt):
        cfg = FomConfig(nu=1.0, dt=dt, T=0.2, scheme=scheme, forcing=ms.forcing(), initial=ms.velocity(0.0),
                        window=(0.2, 0.2))
        return fom_run(cfg, space).snapshots.vectors[0]

    ref = final(0.00125)
    e1, e2 = (np.max(np.abs(final(dt) - ref)) for dt in (0.02, 0.01))
    assert np.log2(e1 / e2) == pytest.approx(order, abs=0.3)


# ---------------------------------------------------------------------------
# configuration and snapshots
# ---------------------------------------------------------------------------

def test_period_of_167_snapshots():
    cfg = FomConfig(nu=0.01, dt=2e-3, T=1.0, window=(0.5, 0.832))
    assert len(cfg.snapshot_steps()) == 167
    space = build_taylor_hood(unit_square_mesh(1))
    assert len(fom_run(cfg, space).snapshots) == 167


def test_stride(space4):
    cfg = FomConfig(nu=0.1, dt=0.1, T=1.0, window=(0.2, 1.0), stride=3)
    snaps = fom_run(cfg, space4).snapshots
    assert np.allclose(snaps.times, [0.2, 0.5, 0.8])
    assert snaps.spacing == pytest.approx(0.3)


@pytest.mark.parametrize("kw, msg", [
    ({"dt": 0.3}, "does not divide"),
    ({"window": (0.5, 1.5)}, "not inside"),
    ({"window": (-0.1, 0.5)}, "not inside"),
    ({"window": (0.55, 0.8)}, "multiple of dt"),
    ({"mu": -1.0}, "nonnegative"),
    ({"nu": 0.0}, "test_mode"),
    ({"stride": 0}, "stride"),
    ({"reference_end": 0.5}, "window"),
])
def test_config_validation(kw, msg):
    args = {"nu": 0.1, "dt": 0.1, "T": 1.0, **kw}
    with pytest.raises(ConfigError, match=msg):
        FomConfig(**args)


def test_reference_states(space4):
    cfg = FomConfig(nu=0.1, dt=0.1, T=1.0, window=(0.5, 0.7), reference_end=1.0, forcing=desk_forcing())
    res = fom_run(cfg, space4)
    assert len(res.snapshots) == 3 and len(res.reference) == 6
    assert np.array_equal(res.reference.vectors[:3], res.snapshots.vectors)


def test_initial_condition_shape(space4):
    with pytest.raises(DimensionError):
        fom_run(FomConfig(nu=0.1, dt=0.1, T=0.1, initial=np.zeros(3)), space4)


def test_snapshot_set_contract(space4):
    v = np.zeros((3, space4.n_vel))
    with pytest.raises(ContractError):
        SnapshotSet(space4, [0.0, 0.2, 0.1], v, 0.1)
    with pytest.raises(ContractError):
        SnapshotSet(space4, [0.0, 0.1, 0.3], v, 0.1)
    with pytest.raises(DimensionError):
        SnapshotSet(space4, [0.0], np.zeros((1, 5)), 0.1)
    empty = SnapshotSet(space4, [], np.zeros((0, space4.n_vel)), 0.1)
    assert len(empty) == 0 and empty.mean().shape == (space4.n_vel,)


def test_series_columns(space4):
    ms = ManufacturedSolution(1.0)
    cfg = FomConfig(nu=1.0, dt=0.01, T=0.02, forcing=ms.forcing(), initial=ms.velocity(0.0), exact=ms)
    cols = fom_run(cfg, space4).series.columns()
    assert list(cols) == ["step", "time", "kinetic_energy", "div_norm", "err_l2"]
    assert all(len(c) == 3 for c in cols.values())


def test_zero_forcing_default():
    assert FomConfig(nu=1.0, dt=0.1, T=1.0).forcing.is_zero
    assert zero_forcing().name == "zero"
