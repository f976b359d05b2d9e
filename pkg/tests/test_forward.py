import numpy as np
import pytest

from oracles import instance
from wentzell.errors import DataError, DimensionError, ParameterError
from wentzell.forward import (TimeSchedule, control_field, read_trajectory_bin, solve_forward,
                              uncontrolled_terminal, write_trajectory_bin, write_trajectory_csv)
from wentzell.grid import StatePair, inner_product_mu, make_grid, norm_mu
from wentzell.operators import CoefficientSet, assemble


def heat(extents=1.0, cells=12):
    g = make_grid(extents, cells)
    return g, assemble(g, CoefficientSet.build(g))


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_constants_are_equilibria(theta):
    g, ops = heat((1.0, 1.0), (5, 4))
    one = StatePair.constant(g, 1.0)
    traj = solve_forward(ops, one, None, TimeSchedule(1.0, 10, theta))
    # equal up to the rounding of the sparse LU solves
    assert np.abs(traj.values - 1.0).max() <= 1e-14


def test_mass_conservation(rng):
    g, ops = heat((1.0, 2.0), (6, 5))
    Y0 = StatePair.from_vector(rng.standard_normal(g.n_total), g)
    traj = solve_forward(ops, Y0, None, TimeSchedule(1.0, 200))
    one = StatePair.constant(g, 1.0)
    mass = np.array([inner_product_mu(f, one, g) for f in traj.frames])
    assert np.abs(np.diff(mass)).max() <= 1e-12 * max(1.0, abs(mass[0]))


@pytest.mark.parametrize("theta,band", [(0.5, (3.0, 5.0)), (1.0, (1.7, 2.4))])
def test_convergence_order_against_expm(frozen, theta, band):
    case = frozen["expm8"]
    g, ops, _ = instance(6, seed=2, potentials=True)
    Y0 = StatePair.from_vector(np.array(case["Y0"]), g)
    exact = np.array(case["terminal"])
    errs = []
    for nt in (20, 40, 80):
        Y = solve_forward(ops, Y0, None, TimeSchedule(case["T"], nt, theta)).terminal.vector
        errs.append(np.abs(Y - exact).max())
    for coarse, fine in zip(errs, errs[1:]):
        assert band[0] <= coarse / fine <= band[1]


def test_uncontrolled_terminal(rng):
    g, ops = heat()
    sched = TimeSchedule(0.5, 16)
    assert np.array_equal(uncontrolled_terminal(ops, StatePair.zeros(g), sched).vector, np.zeros(g.n_total))
    c = StatePair.constant(g, 2.5)
    np.testing.assert_allclose(uncontrolled_terminal(ops, c, sched).vector, c.vector, rtol=1e-14)
    g, ops, _ = instance(8, seed=3, potentials=True)
    Y0 = StatePair.from_vector(rng.standard_normal(g.n_total), g)
    assert np.array_equal(uncontrolled_terminal(ops, Y0, sched).vector,
                          solve_forward(ops, Y0, None, sched).terminal.vector)


def test_dissipative_for_implicit_euler(rng):
    g, ops = heat((1.0, 1.0), (6, 6))
    Y0 = StatePair.from_vector(rng.standard_normal(g.n_total), g)
    traj = solve_forward(ops, Y0, None, TimeSchedule(1.0, 50, 1.0))
    norms = [norm_mu(f, g) for f in traj.frames]
    assert all(b <= a * (1 + 1e-14) for a, b in zip(norms, norms[1:]))


def test_linearity(rng):
    g, ops, mask = instance(10, seed=4, potentials=True)
    sched = TimeSchedule(0.5, 20)
    Y0 = StatePair.from_vector(rng.standard_normal(g.n_total), g)
    v1 = control_field(sched, rng.standard_normal((20, g.n_bulk)) * mask, g)
    v2 = control_field(sched, rng.standard_normal((20, g.n_bulk)) * mask, g)
    v12 = control_field(sched, v1.bulk + v2.bulk, g)
    lhs = solve_forward(ops, Y0, v12, sched, mask).values
    rhs = solve_forward(ops, Y0, v1, sched).values + solve_forward(ops, StatePair.zeros(g), v2, sched).values
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()


def test_control_validation(rng):
    g, ops, mask = instance(10)
    sched = TimeSchedule(0.5, 4)
    v = control_field(sched, np.ones((4, g.n_bulk)), g)
    with pytest.raises(DimensionError):
        solve_forward(ops, StatePair.zeros(g), v, sched, mask)
    with pytest.raises(DimensionError):
        control_field(sched, np.ones((3, g.n_bulk)), g)


@pytest.mark.parametrize("kwargs", [dict(T=0.0, nt=4), dict(T=1.0, nt=1), dict(T=1.0, nt=4, theta=0.3)])
def test_schedule_validation(kwargs):
    with pytest.raises(ParameterError):
        TimeSchedule(**kwargs)


def test_time_dependent_sample_count():
    g, ops, _ = instance(6, seed=5, potentials=True, time_dependent=True, nt=8)
    with pytest.raises(DimensionError):
        solve_forward(ops, StatePair.zeros(g), None, TimeSchedule(1.0, 4))


def test_trajectory_files(tmp_path, rng):
    g, ops, _ = instance(6, seed=6, potentials=True)
    traj = solve_forward(ops, StatePair.from_vector(rng.standard_normal(g.n_total), g), None, TimeSchedule(0.1, 5))
    write_trajectory_bin(tmp_path / "t.bin", traj)
    back = read_trajectory_bin(tmp_path / "t.bin")
    assert np.array_equal(back.values, traj.values) and np.array_equal(back.times, traj.times)
    write_trajectory_csv(tmp_path / "t.csv", traj)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "time,node_kind,index,value" and len(rows) == 1 + 6 * g.n_total
    (tmp_path / "bad.bin").write_bytes(b"not a trajectory file at all")
    with pytest.raises(DataError):
        read_trajectory_bin(tmp_path / "bad.bin")
