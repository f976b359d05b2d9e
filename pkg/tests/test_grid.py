import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wentzell.errors import DataError, DimensionError
from wentzell.grid import (StatePair, SpaceTimeField, inner_product_mu, make_grid, norm_mu, read_state_csv,
                           sobolev_norms, write_state_csv)

G1 = make_grid(1.0, 16)
G2 = make_grid((1.0, 2.0), (5, 7))
# keep away from underflow: squares of |x| < 1e-150 vanish in double precision
finite = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-100)


def state(g, values):
    return StatePair.from_vector(np.asarray(values, float), g)


@pytest.mark.parametrize("g", [G1, G2], ids=["1d", "2d"])
def test_grid_measures(g):
    assert np.all(g.cell_volumes > 0) and np.all(g.bdry_weights > 0)
    area = np.prod(g.extents)
    assert math.isclose(g.cell_volumes.sum(), area, rel_tol=1e-14)
    perimeter = 2.0 if g.dim == 1 else 2 * sum(g.extents)
    assert math.isclose(g.bdry_weights.sum(), perimeter, rel_tol=1e-14)


def test_boundary_topology():
    assert G1.n_bdry == 2
    # 2D boundary nodes form a single closed cycle
    seen, k = [], 0
    for _ in range(G2.n_bdry):
        seen.append(k)
        k = G2.bdry_next[k]
    assert k == 0 and sorted(seen) == list(range(G2.n_bdry))


def test_inner_product_examples():
    g = make_grid(1.0, 10)
    one = StatePair.constant(g, 1.0)
    assert inner_product_mu(one, one, g) == pytest.approx(3.0, rel=1e-15)
    assert inner_product_mu(StatePair.zeros(g), one, g) == 0.0
    U = StatePair(2 * np.ones(g.n_bulk), np.zeros(2))
    V = StatePair(np.ones(g.n_bulk), 3 * np.ones(2))
    assert inner_product_mu(U, V, g) == pytest.approx(2.0, rel=1e-15)


def test_inner_product_shape_mismatch():
    with pytest.raises(DimensionError):
        inner_product_mu(StatePair.zeros(G1), StatePair.zeros(make_grid(1.0, 8)), G1)


def test_state_rejects_nonfinite():
    with pytest.raises(DataError):
        StatePair(np.array([1.0, np.nan]), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(arrays(float, G1.n_total, elements=finite), arrays(float, G1.n_total, elements=finite))
def test_inner_product_symmetric_and_split(u, v):
    U, V = state(G1, u), state(G1, v)
    assert inner_product_mu(U, V, G1) == pytest.approx(inner_product_mu(V, U, G1), rel=1e-12, abs=1e-9)
    bulk_only = StatePair(U.bulk, np.zeros(2))
    bdry_only = StatePair(np.zeros(G1.n_bulk), U.bdry)
    total = inner_product_mu(bulk_only, V, G1) + inner_product_mu(bdry_only, V, G1)
    assert total == pytest.approx(inner_product_mu(U, V, G1), rel=1e-12, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, G2.n_total, elements=finite))
def test_inner_product_positive(u):
    U = state(G2, u)
    if np.any(u != 0):
        assert inner_product_mu(U, U, G2) > 0


@settings(max_examples=50, deadline=None)
@given(arrays(float, G2.n_total, elements=finite), st.floats(-50, 50).filter(lambda c: c == 0 or abs(c) > 1e-6))
def test_norms_homogeneous(u, c):
    U = state(G2, u)
    base = np.array(sobolev_norms(U, G2))
    scaled = np.array(sobolev_norms(c * U, G2))
    np.testing.assert_allclose(scaled, abs(c) * base, rtol=1e-12, atol=1e-300)


def test_sobolev_constants_and_linear():
    g = make_grid(1.0, 16)
    l2, h1, h2 = sobolev_norms(StatePair.constant(g, 1.0), g)
    assert h1 == pytest.approx(math.sqrt(2), rel=1e-14)
    assert h2 == pytest.approx(math.sqrt(2), rel=1e-14)
    lin = StatePair.from_function(g, lambda x: x[:, 0])
    assert sobolev_norms(lin, g)[1] == pytest.approx(math.sqrt(2), rel=1e-13)


def test_sobolev_matches_loop_oracle(frozen):
    case = frozen["sobolev16"]
    U = StatePair(np.array(case["bulk"]), np.array(case["bdry"]))
    np.testing.assert_allclose(sobolev_norms(U, G1), case["norms"], rtol=1e-13)


def test_state_csv_roundtrip(tmp_path, rng):
    U = state(G2, rng.standard_normal(G2.n_total))
    path = tmp_path / "u.csv"
    write_state_csv(path, U, G2)
    back = read_state_csv(path, G2)
    assert np.array_equal(back.vector, U.vector)


def test_space_time_field_checks():
    with pytest.raises(DataError):
        SpaceTimeField(np.array([0.0, 0.0]), np.zeros((2, 3)), 1)
    with pytest.raises(DimensionError):
        SpaceTimeField(np.array([0.0, 1.0]), np.zeros((3, 3)), 1)


def test_norm_of_constant_2d():
    one = StatePair.constant(G2, 1.0)
    assert norm_mu(one, G2) ** 2 == pytest.approx(2.0 + 6.0, rel=1e-14)
