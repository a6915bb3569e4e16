import numpy as np
import pytest

from poddiv.assembly import ConvectionForm
from poddiv.fespace import VELOCITY, build_taylor_hood, interpolate
from poddiv.mesh import unit_square_mesh
from poddiv.pod import PodConfig, build_basis
from poddiv.problems import DESK, desk_forcing
from poddiv.verify import (DESK_MU, DESK_NU, Check, loglog_slope, monotone_violation, nested_prolongation,
                           rank_sweep, SUITES)


def test_check_verdicts():
    assert Check("a", 1e-12, 1e-11).passed
    assert not Check("a", 1e-10, 1e-11).passed
    assert Check("b", 0.0, -1e-10, upper=False).passed
    assert not Check("c", float("nan"), 1.0).passed
    assert set(SUITES) == {"algebra", "pod", "energy", "convergence"}


def test_monotone_violation():
    assert monotone_violation([4.0, 2.0, 1.0], floor=0.0) == 0.0
    assert monotone_violation([4.0, 5.0, 1.0], floor=0.0) == pytest.approx(0.25)
    # rises that end within twice the floor are ignored
    assert monotone_violation([4.0, 1.0, 1.5, 1.2], floor=1.0) == 0.0
    assert monotone_violation([4.0, 1.0, 2.5], floor=1.0) == pytest.approx(1.5)


def test_loglog_slope():
    tails = 10.0 ** -np.arange(1, 8)
    assert loglog_slope(3 * tails, tails) == pytest.approx(1.0)
    assert loglog_slope(tails ** 0.5, tails) == pytest.approx(0.5)
    e = np.concatenate([tails[:4], [1e-25, 1e-26, 1e-27]])
    assert loglog_slope(e, tails) == pytest.approx(1.0)


def test_nested_prolongation_is_exact_for_p2():
    coarse = build_taylor_hood(unit_square_mesh(3))
    fine = build_taylor_hood(unit_square_mesh(6))
    f = lambda x, y: (x * x - 3 * x * y + 1, y * y + x)
    out = nested_prolongation(coarse, fine, interpolate(coarse, VELOCITY, f).coef)
    assert out.shape == (1, fine.n_vel)
    assert np.max(np.abs(out[0] - interpolate(fine, VELOCITY, f).coef)) <= 1e-14


def test_rank_sweep(desk8):
    basis = build_basis(desk8, PodConfig())
    sw = rank_sweep(desk8, desk_forcing(DESK), DESK_NU, DESK_MU, ranks=[1, 3, 5], basis=basis)
    assert list(sw.ranks) == [1, 3, 5]
    assert np.array_equal(sw.tails, basis.tails[[1, 3, 5]])
    for form in ConvectionForm:
        e = sw.errors[form]
        assert e.shape == (3,) and np.all(np.diff(e) < 0)
        assert sw.floor(form) == e[-1]
    assert np.all(np.diff(sw.stiffness_norms) >= 0)
