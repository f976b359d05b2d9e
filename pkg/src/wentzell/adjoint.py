"""Backward adjoint solves as the exact transpose of the forward scheme.

The backward sweep of :class:`wentzell.forward._Stepper` applies the
transposed step matrices in the mass-weighted pairing, so for any control
``v`` and final datum ``Phi_T``

    <Y(T; 0, v), Phi_T>_mu = sum_n dt <v^n, psi^n>_omega

holds to rounding.  ``psi^n`` are the stage values stored in
``trajectory.stages``; they approximate the adjoint state at the control
sampling times.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DimensionError
from .forward import stepper
from .grid import SpaceTimeField

__all__ = ["solve_adjoint", "observation", "stage_matrices_gram", "strong_form_adjoint"]


def solve_adjoint(ops, PhiT, sched):
    """Adjoint trajectory with ``frames[nt] == PhiT``.

    Returns
    -------
    SpaceTimeField
        Nodal values at ``sched.times``; ``.stages`` holds the ``nt`` stage
        values at ``sched.stage_times``.
    """
    g = ops.grid
    PhiT.check(g)
    stages = np.empty((sched.nt, g.n_total))

    def keep(n, psi):
        stages[n] = psi

    nodal = stepper(ops, sched).backward(PhiT.vector, on_stage=keep)
    st = SpaceTimeField(sched.stage_times, stages, g.n_bulk)
    return SpaceTimeField(sched.times, nodal, g.n_bulk, stages=st)


def observation(Phi, mask):
    """Restrict the bulk part to the control region, frame by frame.

    The boundary part is dropped (set to zero) and bulk values outside
    ``mask`` vanish.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (Phi.n_bulk,):
        raise DimensionError(f"mask has shape {mask.shape}, expected ({Phi.n_bulk},)")
    values = np.zeros_like(Phi.values)
    values[:, : Phi.n_bulk] = Phi.bulk * mask
    return SpaceTimeField(Phi.times, values, Phi.n_bulk)


def stage_matrices_gram(ops, sched, mask):
    """Dense ``G = M Lambda`` and ``E0`` (final datum to initial adjoint state).

    ``G[i, j] = sum_n dt <psi_i^n, psi_j^n>_omega`` where ``psi_i`` is the
    stage trajectory started from the ``i``-th unit vector.  By the duality
    identity this is the mass-weighted controllability Gramian; it is
    symmetric by construction.  One batched backward sweep on the identity.
    """
    g = ops.grid
    N = g.n_total
    w = sched.dt * g.cell_volumes[mask]
    G = np.zeros((N, N))

    def gather(n, psi):
        obs = psi[: g.n_bulk][mask]
        G[...] += obs.T @ (w[:, None] * obs)

    E0 = stepper(ops, sched).backward(np.eye(N), on_stage=gather, keep=False)
    return 0.5 * (G + G.T), E0


def strong_form_adjoint(ops, PhiT, sched):
    """Independent backward theta-scheme for the adjoint equation.

    Discretizes ``-M Phi' = (K - D(t)^T) Phi`` directly.  It is consistent
    with :func:`solve_adjoint` (both converge to the same continuous adjoint)
    but is not the exact transpose of the forward scheme; it serves as a
    cross-check only.
    """
    g = ops.grid
    M = sp.diags(ops.mass)
    th, dt = sched.theta, sched.dt
    Phi = PhiT.vector.copy()
    out = [Phi]
    for n in range(sched.nt - 1, -1, -1):
        lhs = (M - th * dt * (ops.K - ops.D_at(n).T)).tocsc()
        rhs = (M + (1 - th) * dt * (ops.K - ops.D_at(n + 1).T)) @ Phi
        Phi = splu(lhs).solve(rhs)
        out.append(Phi)
    return SpaceTimeField(sched.times, np.stack(out[::-1]), g.n_bulk)
