"""Grids, bulk/boundary state pairs and the discrete product-space norms.

The discretisation is cell centred.  Bulk unknowns sit at cell centres and
boundary unknowns at the midpoints of boundary faces, so every bulk cell that
touches the boundary is connected to exactly one boundary node per touching
face.  In 1D the boundary consists of the two endpoints, each carrying unit
(counting) measure.

A state is stored as one flat vector ``[bulk | bdry]`` of length
``grid.n_total``; :class:`StatePair` is the user-facing view of such a vector.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DataError, DimensionError, ResolutionError

__all__ = [
    "Grid",
    "StatePair",
    "SpaceTimeField",
    "make_grid",
    "inner_product_mu",
    "norm_mu",
    "sobolev_norms",
    "write_state_csv",
    "read_state_csv",
]


def _three_point(d1, d2):
    """Weights of the non-uniform three point first and second derivative.

    Stencil nodes sit at offsets ``-d1, 0, +d2``; both formulas are exact
    for quadratics.
    """
    first = (-d2 / (d1 * (d1 + d2)), (d2 - d1) / (d1 * d2), d1 / (d2 * (d1 + d2)))
    second = (2.0 / (d1 * (d1 + d2)), -2.0 / (d1 * d2), 2.0 / (d2 * (d1 + d2)))
    return first, second


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid on an interval or an axis-aligned rectangle.

    Attributes
    ----------
    dim : int
        Space dimension (1 or 2).
    extents : tuple of float
        Side lengths of the domain.
    shape : tuple of int
        Number of cells per axis.
    spacing : ndarray, shape (dim,)
        Mesh widths ``h`` per axis.
    bulk_coords, cell_volumes
        Cell centres and cell volumes.
    bdry_coords, bdry_weights
        Boundary node coordinates and their surface-measure weights.
    bdry_cell, bdry_normal, bdry_face, bdry_dist
        For each boundary node: the adjacent bulk cell, the outer normal, the
        measure of the shared face and the centre-to-face distance.
    bdry_next, bdry_next_dist
        Successor of each boundary node along the closed boundary cycle and
        the arclength to it (2D only; empty coupling in 1D).
    """

    dim: int
    extents: tuple
    shape: tuple
    spacing: np.ndarray
    bulk_coords: np.ndarray
    cell_volumes: np.ndarray
    bdry_coords: np.ndarray
    bdry_weights: np.ndarray
    bdry_cell: np.ndarray
    bdry_normal: np.ndarray
    bdry_face: np.ndarray
    bdry_dist: np.ndarray
    bdry_next: np.ndarray
    bdry_next_dist: np.ndarray
    # per axis: full-state index of the lower/upper neighbour of each cell
    # and the distance to it
    nbr_lo: tuple
    nbr_hi: tuple
    dist_lo: tuple
    dist_hi: tuple

    @property
    def n_bulk(self):
        return self.cell_volumes.size

    @property
    def n_bdry(self):
        return self.bdry_weights.size

    @property
    def n_total(self):
        return self.n_bulk + self.n_bdry

    @cached_property
    def mass(self):
        """Diagonal of the mass matrix of the product measure."""
        return np.concatenate([self.cell_volumes, self.bdry_weights])

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def perimeter(self):
        return 2.0 if self.dim == 1 else 2.0 * float(sum(self.extents))

    @cached_property
    def bdry_prev(self):
        prev = np.empty_like(self.bdry_next)
        prev[self.bdry_next] = np.arange(self.n_bdry)
        return prev

    # ------------------------------------------------------------------
    # discrete calculus, all acting on the flat [bulk | bdry] vector
    # ------------------------------------------------------------------
    @cached_property
    def gradient(self):
        """Per-axis nodal gradient at bulk nodes, shape ``(n_bulk, n_total)``.

        Centred in the interior; next to the boundary the trace value at the
        face midpoint enters a one-sided second-order three point formula.
        """
        mats = []
        rows = np.arange(self.n_bulk)
        for ax in range(self.dim):
            (w_lo, w_c, w_hi), _ = _three_point(self.dist_lo[ax], self.dist_hi[ax])
            mats.append(self._stencil(rows, (self.nbr_lo[ax], rows, self.nbr_hi[ax]),
                                      (w_lo, w_c, w_hi), self.n_bulk))
        return tuple(mats)

    @cached_property
    def laplacian(self):
        """Nodal Laplacian at bulk nodes (sum of per-axis three point formulas)."""
        rows = np.arange(self.n_bulk)
        out = sp.csr_matrix((self.n_bulk, self.n_total))
        for ax in range(self.dim):
            _, (w_lo, w_c, w_hi) = _three_point(self.dist_lo[ax], self.dist_hi[ax])
            out = out + self._stencil(rows, (self.nbr_lo[ax], rows, self.nbr_hi[ax]),
                                      (w_lo, w_c, w_hi), self.n_bulk)
        return out.tocsr()

    @cached_property
    def tangential_gradient(self):
        """Derivative along the boundary cycle, shape ``(n_bdry, n_total)``.

        Identically zero in 1D, where the boundary is zero dimensional.
        """
        if self.dim == 1:
            return sp.csr_matrix((self.n_bdry, self.n_total))
        (w_lo, w_c, w_hi), _ = self._cycle_weights
        return self._cycle_stencil((w_lo, w_c, w_hi))

    @cached_property
    def laplace_beltrami(self):
        """Second derivative along the boundary cycle (zero in 1D)."""
        if self.dim == 1:
            return sp.csr_matrix((self.n_bdry, self.n_total))
        _, (w_lo, w_c, w_hi) = self._cycle_weights
        return self._cycle_stencil((w_lo, w_c, w_hi))

    @cached_property
    def _cycle_weights(self):
        d_prev = self.bdry_next_dist[self.bdry_prev]
        return _three_point(d_prev, self.bdry_next_dist)

    def _cycle_stencil(self, weights):
        nb = self.n_bulk
        idx = np.arange(self.n_bdry)
        cols = (nb + self.bdry_prev, nb + idx, nb + self.bdry_next)
        return self._stencil(idx, cols, weights, self.n_bdry)

    def _stencil(self, rows, cols, weights, nrows):
        r = np.concatenate([rows] * 3)
        c = np.concatenate(cols)
        w = np.concatenate([np.broadcast_to(x, rows.shape) for x in weights])
        return sp.csr_matrix((w, (r, c)), shape=(nrows, self.n_total))

    @cached_property
    def edges(self):
        """All nearest-neighbour couplings as ``(i, j, geometric conductance)``.

        Bulk-bulk faces carry ``area / distance``, bulk-boundary faces
        ``area / (h/2)``, boundary-cycle edges ``1 / arclength``.  These are
        the weights of the energy form and, multiplied by diffusivities, of
        the stiffness matrix.  Returned as a dict of three edge groups.
        """
        nb = self.n_bulk
        bi, bj, bw = [], [], []
        for ax in range(self.dim):
            hi = self.nbr_hi[ax]
            inner = hi < nb
            cells = np.arange(nb)[inner]
            area = self.cell_volumes[cells] / self.spacing[ax]
            bi.append(cells)
            bj.append(hi[inner])
            bw.append(area / self.spacing[ax])
        bulk = (np.concatenate(bi), np.concatenate(bj), np.concatenate(bw))
        trace = (self.bdry_cell.copy(), nb + np.arange(self.n_bdry),
                 self.bdry_face / self.bdry_dist)
        if self.dim == 1:
            empty = np.zeros(0, dtype=int)
            cycle = (empty, empty, np.zeros(0))
        else:
            k = np.arange(self.n_bdry)
            cycle = (nb + k, nb + self.bdry_next, 1.0 / self.bdry_next_dist)
        return {"bulk": bulk, "trace": trace, "cycle": cycle}

    @cached_property
    def energy_form(self):
        """Matrix of ``int |grad u|^2 + int_Gamma |grad_Gamma u_Gamma|^2``."""
        return _graph_laplacian(self.n_total, [self.edges[k] for k in ("bulk", "trace", "cycle")])

    @property
    def norm_equivalence_constant(self):
        """``c`` with ``l2 <= c * h1`` for every discrete state on this grid.

        Discrete Poincare argument along grid lines ending on the boundary:
        ``c^2 = max(1 + 2 L, 2 L^2)`` with ``L`` the shortest side.
        """
        L = min(self.extents)
        return float(np.sqrt(max(1.0 + 2.0 * L, 2.0 * L * L)))

    def check_second_differences(self):
        if min(self.shape) < 3:
            raise ResolutionError(
                f"need at least 3 bulk nodes per axis for second differences, got {self.shape}")

    def inside(self, lo, hi):
        """Boolean mask of bulk nodes strictly inside the box ``(lo, hi)``."""
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        x = self.bulk_coords
        return np.all((x > lo) & (x < hi), axis=1)


def _graph_laplacian(n, edge_groups):
    rows, cols, vals = [], [], []
    for i, j, w in edge_groups:
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [w, w, -w, -w]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def make_grid(extents, cells):
    """Build a 1D or 2D tensor grid.

    Parameters
    ----------
    extents : float or sequence of float
        Domain side lengths; ``Omega = (0, Lx)`` or ``(0, Lx) x (0, Ly)``.
    cells : int or sequence of int
        Number of cells per axis.

    Examples
    --------
    >>> g = make_grid(1.0, 4)
    >>> g.n_bulk, g.n_bdry
    (4, 2)
    """
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    cells = tuple(int(c) for c in np.atleast_1d(cells))
    if len(extents) != len(cells) or len(extents) not in (1, 2):
        raise DimensionError("extents and cells must both have length 1 or 2")
    if min(extents) <= 0 or min(cells) < 1:
        raise DimensionError("extents must be positive and cells >= 1")
    return _grid_1d(*extents, *cells) if len(extents) == 1 else _grid_2d(extents, cells)


def _grid_1d(L, nx):
    h = L / nx
    x = (np.arange(nx) + 0.5) * h
    nb = nx
    idx = np.arange(nx)
    lo = np.where(idx > 0, idx - 1, nb + 0)
    hi = np.where(idx < nx - 1, idx + 1, nb + 1)
    dlo = np.where(idx > 0, h, h / 2)
    dhi = np.where(idx < nx - 1, h, h / 2)
    return Grid(
        dim=1, extents=(L,), shape=(nx,), spacing=np.array([h]),
        bulk_coords=x[:, None], cell_volumes=np.full(nx, h),
        bdry_coords=np.array([[0.0], [L]]), bdry_weights=np.ones(2),
        bdry_cell=np.array([0, nx - 1]), bdry_normal=np.array([[-1.0], [1.0]]),
        bdry_face=np.ones(2), bdry_dist=np.full(2, h / 2),
        bdry_next=np.array([1, 0]), bdry_next_dist=np.full(2, np.inf),
        nbr_lo=(lo,), nbr_hi=(hi,), dist_lo=(dlo,), dist_hi=(dhi,),
    )


def _grid_2d(extents, cells):
    Lx, Ly = extents
    nx, ny = cells
    hx, hy = Lx / nx, Ly / ny
    xc = (np.arange(nx) + 0.5) * hx
    yc = (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(xc, yc)  # row iy, column ix -> cell ix + nx*iy
    nb = nx * ny

    def cell(ix, iy):
        return ix + nx * iy

    # counter-clockwise cycle of face midpoints: bottom, right, top, left
    ix_b = np.arange(nx)
    iy_r = np.arange(ny)
    ix_t = np.arange(nx)[::-1]
    iy_l = np.arange(ny)[::-1]
    coords = np.concatenate([
        np.c_[xc[ix_b], np.zeros(nx)], np.c_[np.full(ny, Lx), yc[iy_r]],
        np.c_[xc[ix_t], np.full(nx, Ly)], np.c_[np.zeros(ny), yc[iy_l]]])
    bcell = np.concatenate([cell(ix_b, 0), cell(nx - 1, iy_r), cell(ix_t, ny - 1), cell(0, iy_l)])
    normal = np.concatenate([np.tile([0.0, -1.0], (nx, 1)), np.tile([1.0, 0.0], (ny, 1)),
                             np.tile([0.0, 1.0], (nx, 1)), np.tile([-1.0, 0.0], (ny, 1))])
    face = np.concatenate([np.full(nx, hx), np.full(ny, hy), np.full(nx, hx), np.full(ny, hy)])
    dist = np.concatenate([np.full(nx, hy / 2), np.full(ny, hx / 2),
                           np.full(nx, hy / 2), np.full(ny, hx / 2)])
    arc = np.concatenate([xc[ix_b], Lx + yc[iy_r], Lx + Ly + (Lx - xc[ix_t]),
                          2 * Lx + Ly + (Ly - yc[iy_l])])
    perim = 2 * (Lx + Ly)
    ng = arc.size
    nxt = (np.arange(ng) + 1) % ng
    nxt_dist = np.mod(arc[nxt] - arc, perim)

    def bdry_index(side, k):
        off = {"bottom": 0, "right": nx, "top": nx + ny, "left": 2 * nx + ny}[side]
        if side in ("top", "left"):
            k = (nx if side == "top" else ny) - 1 - k
        return nb + off + k

    IX, IY = np.meshgrid(np.arange(nx), np.arange(ny))
    IX, IY = IX.ravel(), IY.ravel()
    lo_x = np.where(IX > 0, cell(IX - 1, IY), bdry_index("left", IY))
    hi_x = np.where(IX < nx - 1, cell(IX + 1, IY), bdry_index("right", IY))
    lo_y = np.where(IY > 0, cell(IX, IY - 1), bdry_index("bottom", IX))
    hi_y = np.where(IY < ny - 1, cell(IX, IY + 1), bdry_index("top", IX))
    dlo_x = np.where(IX > 0, hx, hx / 2)
    dhi_x = np.where(IX < nx - 1, hx, hx / 2)
    dlo_y = np.where(IY > 0, hy, hy / 2)
    dhi_y = np.where(IY < ny - 1, hy, hy / 2)
    return Grid(
        dim=2, extents=(Lx, Ly), shape=(nx, ny), spacing=np.array([hx, hy]),
        bulk_coords=np.c_[X.ravel(), Y.ravel()], cell_volumes=np.full(nb, hx * hy),
        bdry_coords=coords, bdry_weights=face.copy(), bdry_cell=bcell, bdry_normal=normal,
        bdry_face=face, bdry_dist=dist, bdry_next=nxt, bdry_next_dist=nxt_dist,
        nbr_lo=(lo_x, lo_y), nbr_hi=(hi_x, hi_y), dist_lo=(dlo_x, dlo_y), dist_hi=(dhi_x, dhi_y),
    )


@dataclass(frozen=True)
class StatePair:
    """Bulk values at cell centres plus boundary values at boundary nodes."""

    bulk: np.ndarray
    bdry: np.ndarray

    def __post_init__(self):
        bulk = np.asarray(self.bulk, dtype=float).reshape(-1)
        bdry = np.asarray(self.bdry, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(bulk)) and np.all(np.isfinite(bdry))):
            raise DataError("state contains non-finite entries")
        object.__setattr__(self, "bulk", bulk)
        object.__setattr__(self, "bdry", bdry)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.n_bulk), np.zeros(grid.n_bdry))

    @classmethod
    def constant(cls, grid, c):
        return cls(np.full(grid.n_bulk, float(c)), np.full(grid.n_bdry, float(c)))

    @classmethod
    def from_vector(cls, vec, grid):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (grid.n_total,):
            raise DimensionError(f"expected vector of length {grid.n_total}, got {vec.shape}")
        return cls(vec[: grid.n_bulk], vec[grid.n_bulk:])

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(coords)`` at bulk nodes and take its exact trace."""
        return cls(fn(grid.bulk_coords), fn(grid.bdry_coords))

    @property
    def vector(self):
        return np.concatenate([self.bulk, self.bdry])

    def check(self, grid):
        if self.bulk.size != grid.n_bulk or self.bdry.size != grid.n_bdry:
            raise DimensionError(
                f"state has ({self.bulk.size}, {self.bdry.size}) values, grid expects "
                f"({grid.n_bulk}, {grid.n_bdry})")
        return self

    def __add__(self, other):
        return StatePair(self.bulk + other.bulk, self.bdry + other.bdry)

    def __sub__(self, other):
        return StatePair(self.bulk - other.bulk, self.bdry - other.bdry)

    def __mul__(self, c):
        return StatePair(c * self.bulk, c * self.bdry)

    __rmul__ = __mul__

    def __neg__(self):
        return StatePair(-self.bulk, -self.bdry)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """A time-indexed stack of states.

    ``values`` has shape ``(n_frames, n_total)``.  Trajectories span
    ``[0, T]``; controls use one frame per time step, sampled inside it.
    ``stages`` optionally holds the intermediate adjoint values paired with
    those controls.
    """

    times: np.ndarray
    values: np.ndarray
    n_bulk: int
    stages: "SpaceTimeField | None" = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != times.size:
            raise DimensionError("values must have one row per time")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def bulk(self):
        return self.values[:, : self.n_bulk]

    @property
    def bdry(self):
        return self.values[:, self.n_bulk:]

    def frame(self, k):
        v = self.values[k]
        return StatePair(v[: self.n_bulk], v[self.n_bulk:])

    @property
    def frames(self):
        return [self.frame(k) for k in range(self.times.size)]

    @property
    def terminal(self):
        return self.frame(-1)

    def __len__(self):
        return self.times.size


def inner_product_mu(U, V, g):
    """``<U, V>`` in L^2(Omega) x L^2(Gamma) with the product measure.

    >>> g = make_grid(1.0, 10)
    >>> inner_product_mu(StatePair.constant(g, 1), StatePair.constant(g, 1), g)
    3.0
    """
    U.check(g)
    V.check(g)
    return float(np.dot(U.bulk * g.cell_volumes, V.bulk) + np.dot(U.bdry * g.bdry_weights, V.bdry))


def norm_mu(U, g):
    return float(np.sqrt(max(inner_product_mu(U, U, g), 0.0)))


def sobolev_norms(U, g):
    """Discrete ``(L^2, H^1, H^2)`` norms of a state pair.

    ``h1^2 = int|grad u|^2 + int_Gamma |grad_Gamma u|^2 + int_Gamma u^2`` with
    the gradient integrals taken face by face (the energy form of the
    stiffness matrix); ``h2^2 = int|Lap u|^2 + int_Gamma|Lap_Gamma u|^2 +
    int_Gamma u^2`` with three point second differences.  On the rectangle the
    boundary cycle is not smooth at the corners; the cycle second difference
    is used there as is.
    """
    U.check(g)
    g.check_second_differences()
    vec = U.vector
    bw = g.bdry_weights
    l2 = norm_mu(U, g)
    trace2 = float(np.dot(bw * U.bdry, U.bdry))
    h1 = np.sqrt(max(float(vec @ (g.energy_form @ vec)) + trace2, 0.0))
    lap = g.laplacian @ vec
    lb = g.laplace_beltrami @ vec
    h2 = np.sqrt(float(np.dot(g.cell_volumes * lap, lap) + np.dot(bw * lb, lb)) + trace2)
    return l2, float(h1), float(h2)


def write_state_csv(path, U, g):
    """Write ``node_kind,index,x[,y],value`` rows."""
    U.check(g)
    axes = ["x", "y"][: g.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_kind", "index", *axes, "value"])
        for kind, coords, vals in (("bulk", g.bulk_coords, U.bulk), ("bdry", g.bdry_coords, U.bdry)):
            for i, (c, v) in enumerate(zip(coords, vals)):
                w.writerow([kind, i, *(repr(float(t)) for t in c), repr(float(v))])


def read_state_csv(path, g):
    bulk = np.full(g.n_bulk, np.nan)
    bdry = np.full(g.n_bdry, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            target = {"bulk": bulk, "bdry": bdry}.get(row["node_kind"])
            if target is None:
                raise DataError(f"unknown node_kind {row['node_kind']!r}")
            i = int(row["index"])
            if not 0 <= i < target.size:
                raise DimensionError(f"index {i} out of range for {row['node_kind']}")
            target[i] = float(row["value"])
    if np.isnan(bulk).any() or np.isnan(bdry).any():
        raise DataError(f"{path}: missing node values")
    return StatePair(bulk, bdry)
