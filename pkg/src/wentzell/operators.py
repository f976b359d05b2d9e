"""Coupled bulk/boundary generator, drift-reaction operators and control mask.

Everything is mass weighted: the semi-discrete system reads

    M Y' = (K - D(t)) Y + M P_omega v

where ``M`` is the diagonal of the product measure, ``K`` the symmetric
negative semidefinite diffusion operator (bulk stiffness, boundary
Laplace-Beltrami stiffness and the conormal flux between every boundary node
and its adjacent cell) and ``D(t) = M (B . grad + a | B_Gamma . grad_Gamma + b)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CoefficientError, DimensionError, GeometryError
from .grid import Grid, _graph_laplacian

logger = logging.getLogger(__name__)

__all__ = ["CoefficientSet", "DiscreteOperatorSet", "assemble", "control_mask", "PECLET_LIMIT"]

PECLET_LIMIT = 2.0


def _as_time_field(value, n, name, vector_dim=None):
    """Broadcast a coefficient to shape ``(n_times, n[, dim])``."""
    arr = np.asarray(value, dtype=float)
    tail = (n,) if vector_dim is None else (n, vector_dim)
    if arr.ndim == 0:
        arr = np.broadcast_to(arr, tail)
    elif vector_dim is not None and arr.shape == (vector_dim,):
        arr = np.broadcast_to(arr, tail)
    if arr.shape == tail:
        arr = arr[None]
    if arr.shape[1:] != tail:
        raise DimensionError(f"coefficient {name!r} has shape {np.shape(value)}, expected "
                             f"{tail} or (n_times, *{tail})")
    if not np.all(np.isfinite(arr)):
        raise CoefficientError(f"coefficient {name!r} has non-finite samples")
    return np.array(arr)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Sampled coefficients of the controlled system.

    ``A`` and ``A_gamma`` are isotropic diffusivities per node.  ``a``, ``b``,
    ``B`` and ``B_gamma`` carry a leading time axis of length 1 (constant in
    time) or ``nt + 1`` (one sample per time node).  ``B`` is a bulk vector
    field ``(..., n_bulk, dim)``; ``B_gamma`` is the scalar tangential
    component along the boundary cycle and has no effect in 1D.

    Use :meth:`build` to broadcast constants and validate.
    """

    A: np.ndarray
    A_gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    B: np.ndarray
    B_gamma: np.ndarray

    @classmethod
    def build(cls, grid, A=1.0, A_gamma=1.0, a=0.0, b=0.0, B=0.0, B_gamma=0.0):
        nb, ng, dim = grid.n_bulk, grid.n_bdry, grid.dim
        A = _as_time_field(A, nb, "A")
        A_gamma = _as_time_field(A_gamma, ng, "A_gamma")
        if A.shape[0] != 1 or A_gamma.shape[0] != 1:
            raise CoefficientError("diffusivities must be constant in time")
        coeffs = cls(
            A=A[0], A_gamma=A_gamma[0],
            a=_as_time_field(a, nb, "a"), b=_as_time_field(b, ng, "b"),
            B=_as_time_field(B, nb, "B", vector_dim=dim),
            B_gamma=_as_time_field(B_gamma, ng, "B_gamma"),
        )
        coeffs.validate()
        return coeffs

    def validate(self):
        if self.A.min() <= 0 or self.A_gamma.min() <= 0:
            raise CoefficientError(
                f"ellipticity violated: min A = {self.A.min():g}, min A_gamma = {self.A_gamma.min():g}")
        counts = {f.shape[0] for f in (self.a, self.b, self.B, self.B_gamma)} - {1}
        if len(counts) > 1:
            raise DimensionError(f"time-dependent coefficients disagree on sample count: {counts}")

    @property
    def n_times(self):
        return max(f.shape[0] for f in (self.a, self.b, self.B, self.B_gamma))

    @property
    def sup_norms(self):
        """``(|a|_inf, |b|_inf, |B|_inf, |B_gamma|_inf)``; vector fields use the
        Euclidean length at each sample."""
        return (float(np.abs(self.a).max()), float(np.abs(self.b).max()),
                float(np.linalg.norm(self.B, axis=-1).max()), float(np.abs(self.B_gamma).max()))

    @property
    def ellipticity(self):
        return float(self.A.min()), float(self.A_gamma.min())


@dataclass(frozen=True, eq=False)
class DiscreteOperatorSet:
    """Assembled operators; treat as immutable.

    ``D`` is a tuple with one sparse matrix per time sample (a single entry
    when the coefficients are constant in time).  ``_cache`` holds step
    factorizations keyed by time schedule and never changes results.
    """

    grid: Grid
    coeffs: CoefficientSet
    mass: np.ndarray
    K: sp.csr_matrix
    D: tuple
    upwinded: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_total(self):
        return self.grid.n_total

    @property
    def time_constant(self):
        return len(self.D) == 1

    def D_at(self, k):
        return self.D[0] if len(self.D) == 1 else self.D[k]


def _harmonic(x, y):
    return 2.0 * x * y / (x + y)


def stiffness(grid, A, A_gamma):
    """Symmetric ``K`` with zero row sums; negative semidefinite."""
    e = grid.edges
    bi, bj, bw = e["bulk"]
    ti, tj, tw = e["trace"]
    ci, cj, cw = e["cycle"]
    nb = grid.n_bulk
    groups = [
        (bi, bj, bw * _harmonic(A[bi], A[bj])),
        (ti, tj, tw * A[ti]),
        (ci, cj, cw * _harmonic(A_gamma[ci - nb], A_gamma[cj - nb])) if ci.size else (ci, cj, cw),
    ]
    return (-_graph_laplacian(grid.n_total, groups)).tocsr()


def _upwind_rows(grid):
    """Per-axis first-order one-sided gradients (backward, forward)."""
    out = []
    rows = np.arange(grid.n_bulk)
    for ax in range(grid.dim):
        lo, hi = grid.nbr_lo[ax], grid.nbr_hi[ax]
        dlo, dhi = grid.dist_lo[ax], grid.dist_hi[ax]
        back = grid._stencil(rows, (lo, rows, hi), (-1.0 / dlo, 1.0 / dlo, 0.0 * dlo), grid.n_bulk)
        fwd = grid._stencil(rows, (lo, rows, hi), (0.0 * dhi, -1.0 / dhi, 1.0 / dhi), grid.n_bulk)
        out.append((back, fwd))
    return out


def _drift_matrix(grid, coeffs, k):
    """Mass-weighted drift/reaction operator for time sample ``k``."""
    nb, ng = grid.n_bulk, grid.n_bdry
    pick = lambda f: f[0] if f.shape[0] == 1 else f[k]
    a, b, B, Bg = pick(coeffs.a), pick(coeffs.b), pick(coeffs.B), pick(coeffs.B_gamma)
    vol, w = grid.cell_volumes, grid.bdry_weights
    upwinded = False

    bulk = sp.csr_matrix(sp.hstack([sp.diags(vol * a), sp.csr_matrix((nb, ng))]))
    upwind = None
    for ax in range(grid.dim):
        Bax = B[:, ax]
        if not np.any(Bax):
            continue
        G = grid.gradient[ax]
        peclet = np.abs(Bax) * grid.spacing[ax] / coeffs.A
        hot = peclet > PECLET_LIMIT
        if hot.any():
            upwinded = True
            upwind = upwind or _upwind_rows(grid)
            back, fwd = upwind[ax]
            keep = sp.diags((~hot).astype(float))
            G = keep @ G + sp.diags((hot & (Bax > 0)).astype(float)) @ back \
                + sp.diags((hot & (Bax <= 0)).astype(float)) @ fwd
        bulk = bulk + sp.diags(vol * Bax) @ G

    bdry = sp.csr_matrix(sp.hstack([sp.csr_matrix((ng, nb)), sp.diags(w * b)]))
    if grid.dim > 1 and np.any(Bg):
        Gt = grid.tangential_gradient
        arc = 0.5 * (grid.bdry_next_dist + grid.bdry_next_dist[grid.bdry_prev])
        hot = np.abs(Bg) * arc / coeffs.A_gamma > PECLET_LIMIT
        if hot.any():
            upwinded = True
            nbv = nb + np.arange(ng)
            d_prev = grid.bdry_next_dist[grid.bdry_prev]
            d_next = grid.bdry_next_dist
            idx = np.arange(ng)
            cols = (nb + grid.bdry_prev, nbv, nb + grid.bdry_next)
            back = grid._stencil(idx, cols, (-1 / d_prev, 1 / d_prev, 0 * d_prev), ng)
            fwd = grid._stencil(idx, cols, (0 * d_next, -1 / d_next, 1 / d_next), ng)
            Gt = sp.diags((~hot).astype(float)) @ Gt + sp.diags((hot & (Bg > 0)).astype(float)) @ back \
                + sp.diags((hot & (Bg <= 0)).astype(float)) @ fwd
        bdry = bdry + sp.diags(w * Bg) @ Gt
    return sp.vstack([bulk, bdry]).tocsr(), upwinded


def assemble(g, c):
    """Assemble mass, diffusion and drift operators on grid ``g``.

    Parameters
    ----------
    g : Grid
    c : CoefficientSet

    Returns
    -------
    DiscreteOperatorSet

    Notes
    -----
    Drift terms use the centred gradient of :attr:`Grid.gradient`.  Where the
    cell Peclet number ``|B| h / A`` exceeds 2 the row switches to first
    order upwinding and a warning is logged; the adjoint solver transposes
    whatever was assembled, so duality is unaffected.
    """
    if c.A.shape != (g.n_bulk,) or c.A_gamma.shape != (g.n_bdry,):
        raise DimensionError("coefficient fields do not match the grid")
    if c.B.shape[-1] != g.dim:
        raise DimensionError("drift field dimension does not match the grid")
    c.validate()
    K = stiffness(g, c.A, c.A_gamma)
    D, up = [], False
    for k in range(c.n_times):
        Dk, upk = _drift_matrix(g, c, k)
        D.append(Dk)
        up |= upk
    if up:
        logger.warning("cell Peclet number above %.0f: switched affected rows to upwind", PECLET_LIMIT)
    return DiscreteOperatorSet(grid=g, coeffs=c, mass=g.mass.copy(), K=K, D=tuple(D), upwinded=up)


def control_mask(g, omega):
    """Boolean mask of bulk nodes inside the control region.

    ``omega`` is ``(lo, hi)`` in 1D or ``((x_lo, x_hi), (y_lo, y_hi))`` in
    2D.  Its closure must stay at least one cell away from the boundary.

    >>> from wentzell.grid import make_grid
    >>> control_mask(make_grid(1.0, 10), (0.3, 0.7)).nonzero()[0]
    array([3, 4, 5, 6])
    """
    box = np.asarray(omega, dtype=float)
    if box.shape == (2,) and g.dim == 1:
        box = box[None]
    if box.shape != (g.dim, 2):
        raise GeometryError(f"omega must give (lo, hi) per axis, got {omega!r}")
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi <= lo):
        raise GeometryError("empty control region")
    L = np.asarray(g.extents)
    tol = 1e-12 * L
    if np.any(lo < g.spacing - tol) or np.any(hi > L - g.spacing + tol):
        raise GeometryError("omega must be compactly contained in Omega "
                            "(closure at least one cell away from the boundary)")
    mask = g.inside(lo, hi)
    if not mask.any():
        raise GeometryError("control region contains no bulk node")
    return mask
