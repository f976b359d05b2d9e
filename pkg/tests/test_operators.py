import numpy as np
import pytest

from wentzell.errors import CoefficientError, DimensionError, GeometryError
from wentzell.grid import make_grid
from wentzell.operators import CoefficientSet, assemble, control_mask

# 1D, h = 1/4, A = 1: cells c0..c3 then boundary nodes at x=0 and x=1.
# Bulk faces carry A/h = 4, half-cell faces to the boundary A/(h/2) = 8.
HAND_K = np.array([
    [-12, 4, 0, 0, 8, 0],
    [4, -8, 4, 0, 0, 0],
    [0, 4, -8, 4, 0, 0],
    [0, 0, 4, -12, 0, 8],
    [8, 0, 0, 0, -8, 0],
    [0, 0, 0, 8, 0, -8],
], dtype=float)


def random_ops(g, rng, nsamp=1):
    c = CoefficientSet.build(
        g, A=rng.uniform(0.5, 2, g.n_bulk), A_gamma=rng.uniform(0.5, 2, g.n_bdry),
        a=rng.uniform(-1, 1, (nsamp, g.n_bulk)), b=rng.uniform(-1, 1, (nsamp, g.n_bdry)),
        B=rng.uniform(-0.5, 0.5, (nsamp, g.n_bulk, g.dim)), B_gamma=rng.uniform(-0.5, 0.5, (nsamp, g.n_bdry)))
    return assemble(g, c)


def test_hand_assembled_stiffness():
    g = make_grid(1.0, 4)
    ops = assemble(g, CoefficientSet.build(g))
    np.testing.assert_allclose(ops.K.toarray(), HAND_K, atol=1e-13)
    np.testing.assert_allclose(ops.mass, [0.25] * 4 + [1.0, 1.0])


@pytest.mark.parametrize("extents,cells", [(1.0, 9), ((1.0, 1.5), (6, 5))])
def test_stiffness_structure(extents, cells, rng):
    g = make_grid(extents, cells)
    ops = random_ops(g, rng)
    K = ops.K.toarray()
    scale = np.abs(K).max()
    assert np.abs(K - K.T).max() <= 1e-12 * scale
    assert np.abs(K @ np.ones(g.n_total)).max() <= 1e-10 * scale
    for _ in range(100):
        u = rng.standard_normal(g.n_total)
        assert u @ K @ u <= 1e-10 * (u @ u)
        # mu-integral of M^{-1} K u vanishes
        assert abs(np.ones(g.n_total) @ (K @ u)) <= 1e-10 * scale * np.abs(u).max()
    assert np.all(ops.mass > 0)


def test_zero_potentials_give_zero_drift():
    g = make_grid((1.0, 1.0), (4, 4))
    ops = assemble(g, CoefficientSet.build(g))
    assert all(D.count_nonzero() == 0 for D in ops.D)


def test_time_samples(rng):
    g = make_grid(1.0, 6)
    ops = random_ops(g, rng, nsamp=5)
    assert len(ops.D) == 5
    assert not np.allclose(ops.D_at(0).toarray(), ops.D_at(4).toarray())


def test_sup_norms():
    g = make_grid((1.0, 1.0), (3, 3))
    B = np.zeros((g.n_bulk, 2))
    B[4] = (3.0, 4.0)
    c = CoefficientSet.build(g, a=-2.0, b=np.linspace(0, 0.5, g.n_bdry), B=B)
    assert c.sup_norms == (2.0, 0.5, 5.0, 0.0)


def test_ellipticity_and_shapes():
    g = make_grid(1.0, 4)
    with pytest.raises(CoefficientError):
        CoefficientSet.build(g, A=np.array([1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(DimensionError):
        CoefficientSet.build(g, a=np.ones(5))


def test_control_mask_examples():
    g = make_grid(1.0, 10)
    mask = control_mask(g, (0.3, 0.7))
    np.testing.assert_allclose(g.bulk_coords[mask, 0], [0.35, 0.45, 0.55, 0.65])
    with pytest.raises(GeometryError):
        control_mask(g, (0.0, 0.5))
    g2 = make_grid((1.0, 1.0), (8, 8))
    m2 = control_mask(g2, [(0.25, 0.75), (0.25, 0.75)]).reshape(8, 8)
    expected = np.zeros((8, 8), bool)
    expected[2:6, 2:6] = True
    assert np.array_equal(m2, expected)
