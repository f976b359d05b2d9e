import math

import numpy as np
import pytest

from oracles import instance
from wentzell.carleman import (build_morse, carleman_ratio, default_s_values, empirical_obs_constant,
                               eval_weights, log_weight)
from wentzell.errors import DegenerateObservationError, GeometryError, ParameterError
from wentzell.forward import TimeSchedule
from wentzell.grid import StatePair, make_grid
from wentzell.operators import CoefficientSet, assemble, control_mask


def obs(ops, mask, T):
    # implicit Euler with dt = 1/64; see the decisions ledger for why not CN
    return empirical_obs_constant(ops, TimeSchedule(T, int(64 * T), 1.0), mask)


def test_morse_1d_profile():
    g = make_grid(1.0, 50)
    w = build_morse(g, (0.4, 0.6), amplitude=2.0)
    nb = g.n_bulk
    assert np.all(w.eta0[nb:] == 0) and np.all(w.eta0[:nb] > 0)
    assert w.center == (0.5,)
    x = g.bulk_coords[:, 0]
    np.testing.assert_allclose(w.eta0[:nb], 2.0 * np.sin(np.pi * np.minimum(x, 1 - x)), rtol=1e-14)
    # slope at the left end: h pi / (2 c)
    assert w.grad_eta0[0, 0] == pytest.approx(2.0 * math.pi / 1.0 * math.cos(math.pi * x[0]), rel=1e-12)
    outside = ~w.mask
    assert np.abs(w.grad_eta0[outside]).min() > 1e-8


def test_morse_2d_profile():
    g = make_grid((1.0, 1.0), (21, 21))
    w = build_morse(g, [(0.3, 0.7), (0.3, 0.7)])
    nb = g.n_bulk
    gn = np.linalg.norm(w.grad_eta0, axis=1)
    assert np.all(w.eta0[:nb] > 0) and np.all(w.eta0[nb:] == 0)
    assert gn[~w.mask].min() > 1e-8
    # the only (near) critical node is the centre cell
    centre = np.argmin(np.linalg.norm(g.bulk_coords - 0.5, axis=1))
    assert np.argmin(gn) == centre and gn[centre] < 1e-12
    # outward normal derivative at every boundary face (face midpoints are never corners)
    dn = np.einsum("ij,ij->i", w.grad_eta0[g.bdry_cell], g.bdry_normal)
    assert np.all(dn < 0)


def test_morse_geometry_error():
    g = make_grid(1.0, 10)
    with pytest.raises(GeometryError):
        build_morse(g, (0.0, 0.1))


def test_weights_examples():
    g = make_grid(1.0, 20)
    w = build_morse(g, (0.4, 0.6), T=2.0, m=2.0, lam=1.0)
    bnode = g.n_bulk
    xi, alpha = eval_weights(w, bnode, 1.0)
    assert xi == pytest.approx(math.exp(1.0 * 2.0 * w.sup) / (4.0 / 4), rel=1e-14)
    ts = np.linspace(0.01, 1.99, 50)
    for node in range(g.n_total):
        xi, alpha = eval_weights(w, node, ts)
        assert np.all(alpha > 0) and np.all(xi > 0)
        half = ts < 1.0
        assert np.all(np.diff(xi[half]) < 0) and np.all(np.diff(alpha[half]) < 0)
        assert np.all(np.diff(xi[~half]) > 0) and np.all(np.diff(alpha[~half]) > 0)
    with pytest.raises(ParameterError):
        eval_weights(w, 0, 2.0)


def test_weight_vanishes_at_initial_time():
    g = make_grid(1.0, 20)
    w = build_morse(g, (0.4, 0.6), s=4.0)
    lw = log_weight(w, np.array([1e-3, 1e-4, 1e-5])) + 3 * math.log(w.s)
    assert np.all(np.diff(lw, axis=0) < 0)
    assert np.all(lw[-1] < -700)  # exp underflows: the weight is 0 in double precision


def test_weight_parameter_validation():
    g = make_grid(1.0, 10)
    for bad in (dict(m=1.0), dict(lam=0.5), dict(s=0.5), dict(T=0.0)):
        with pytest.raises(ParameterError):
            build_morse(g, (0.4, 0.6), **bad)


def test_ratio_zero_datum():
    g, ops, mask = instance(16)
    sched = TimeSchedule(1.0, 32)
    w = build_morse(g, (0.3, 0.7), T=1.0)
    with pytest.raises(DegenerateObservationError):
        carleman_ratio(ops, sched, w, StatePair.zeros(g))


def test_ratio_finite_and_bounded_over_s(rng):
    g, ops, mask = instance(16)
    sched = TimeSchedule(1.0, 32)
    base = build_morse(g, (0.3, 0.7), T=1.0)
    PhiT = StatePair.from_vector(rng.standard_normal(g.n_total), g)
    R = [carleman_ratio(ops, sched, base.with_params(s=s), PhiT) for s in default_s_values(1.0)]
    assert all(math.isfinite(r) and r >= 1.0 for r in R)
    assert R[-1] <= 10 * np.median(R)


def test_ratio_resolves_at_mild_parameters(rng):
    # with small s the weight no longer concentrates everything on omega
    g, ops, mask = instance(16)
    sched = TimeSchedule(1.0, 32)
    w = build_morse(g, (0.3, 0.7), T=1.0, m=1.1, lam=1.0, s=1.0, amplitude=0.01)
    r = carleman_ratio(ops, sched, w, StatePair.from_vector(rng.standard_normal(g.n_total), g))
    assert 1.0 < r < 1e6


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_obs_constant_matches_extended_precision_oracle(frozen, T):
    g, ops, mask = instance(16)
    assert obs(ops, mask, T) == pytest.approx(frozen["obs16"][str(T)], rel=1e-6)


def test_obs_constant_power_route():
    g, ops, mask = instance(16)
    sched = TimeSchedule(1.0, 64, 1.0)
    dense = empirical_obs_constant(ops, sched, mask, method="dense")
    power = empirical_obs_constant(ops, sched, mask, method="power", power_iters=500)
    assert power == pytest.approx(dense, rel=1e-6)


def test_obs_constant_monotone(frozen):
    g, ops, mask = instance(16)
    wide = control_mask(g, (0.2, 0.8))
    assert obs(ops, wide, 1.0) == pytest.approx(frozen["obs16"]["wide_1.0"], rel=1e-6)
    assert obs(ops, wide, 1.0) <= obs(ops, mask, 1.0)
    vals = [obs(ops, mask, T) for T in (0.25, 0.5, 1.0, 2.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_obs_constant_grows_with_antidamping_potential():
    g, ops, mask = instance(16)
    anti = assemble(g, CoefficientSet.build(g, a=-1.0))
    assert obs(anti, mask, 1.0) >= 0.99 * obs(ops, mask, 1.0)


@pytest.mark.xfail(strict=True, reason="a damping potential a = +1 lowers the constant by about 10%; see ledger")
def test_obs_constant_does_not_drop_with_damping_potential():
    g, ops, mask = instance(16)
    damped = assemble(g, CoefficientSet.build(g, a=1.0))
    assert obs(damped, mask, 1.0) >= 0.99 * obs(ops, mask, 1.0)


def test_obs_constant_empty_mask():
    g, ops, mask = instance(8)
    with pytest.raises(GeometryError):
        empirical_obs_constant(ops, TimeSchedule(1.0, 8), np.zeros(g.n_bulk, bool))
