"""Theta-scheme time stepping of the controlled forward system.

One step reads

    (M - theta dt (K - D^{n+1})) Y^{n+1} = (M + (1 - theta) dt (K - D^n)) Y^n + dt M P v^n

with the control held constant on each step (``v^n`` is sampled at
``t_n + theta dt``: the midpoint for Crank-Nicolson, the right end for
implicit Euler).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DataError, DimensionError, InstabilityError, ParameterError, SolverError
from .grid import SpaceTimeField, StatePair

__all__ = [
    "TimeSchedule",
    "solve_forward",
    "uncontrolled_terminal",
    "control_field",
    "write_trajectory_csv",
    "write_trajectory_bin",
    "read_trajectory_bin",
]


@dataclass(frozen=True)
class TimeSchedule:
    T: float
    nt: int
    theta: float = 0.5

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"horizon T must be positive, got {self.T}")
        if int(self.nt) != self.nt or self.nt < 2:
            raise ParameterError(f"need nt >= 2 steps, got {self.nt}")
        if not 0.5 <= self.theta <= 1.0:
            raise ParameterError(f"theta must lie in [1/2, 1], got {self.theta}")

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def stage_times(self):
        """Sampling time of the control on each step."""
        return (np.arange(self.nt) + self.theta) * self.dt


class _Stepper:
    """Factorized step matrices for one (operators, schedule) pair."""

    def __init__(self, ops, sched):
        D = ops.D
        if len(D) not in (1, sched.nt + 1):
            raise DimensionError(f"operators carry {len(D)} time samples; schedule needs 1 or {sched.nt + 1}")
        M = sp.diags(ops.mass)
        th, dt = sched.theta, sched.dt
        self.mass = ops.mass
        self.dt = dt
        self.nt = sched.nt
        self.time_constant = len(D) == 1
        n_mats = 1 if self.time_constant else sched.nt
        self._lu, self._minus = [], []
        for n in range(n_mats):
            Dp, Dm = (D[0], D[0]) if self.time_constant else (D[n + 1], D[n])
            plus = (M - th * dt * (ops.K - Dp)).tocsc()
            try:
                self._lu.append(splu(plus))
            except RuntimeError as exc:
                raise SolverError(f"step matrix {n} is singular: {exc}") from exc
            self._minus.append((M + (1.0 - th) * dt * (ops.K - Dm)).tocsr())

    def lu(self, n):
        return self._lu[0 if self.time_constant else n]

    def minus(self, n):
        return self._minus[0 if self.time_constant else n]

    def forward(self, Y0, ctrl=None, keep=True):
        """Propagate ``Y0`` (shape ``(N,)`` or ``(N, k)``).

        ``ctrl`` is ``None`` or an array ``(nt, n_bulk[, k])`` of already
        masked bulk control values.
        """
        Y = np.array(Y0, dtype=float)
        out = [Y.copy()] if keep else None
        nb = None if ctrl is None else ctrl.shape[1]
        for n in range(self.nt):
            rhs = self.minus(n) @ Y
            if ctrl is not None:
                w = self.mass[:nb] if ctrl.ndim == 2 else self.mass[:nb, None]
                rhs[:nb] += self.dt * w * ctrl[n]
            Y = self.lu(n).solve(rhs)
            if not np.all(np.isfinite(Y)):
                raise InstabilityError(f"non-finite state after step {n + 1}", step=n + 1)
            if keep:
                out.append(Y)
        return np.stack(out) if keep else Y

    def backward(self, PhiT, on_stage=None, keep=True):
        """Exact transpose sweep of :meth:`forward`.

        Returns nodal adjoint values ``Phi^0..Phi^nt`` (if ``keep``) and
        calls ``on_stage(n, psi)`` with the stage values paired to ``v^n``.
        """
        m = self.mass if np.ndim(PhiT) == 1 else self.mass[:, None]
        Phi = np.array(PhiT, dtype=float)
        out = [Phi] if keep else None
        for n in range(self.nt - 1, -1, -1):
            psi = self.lu(n).solve(m * Phi, trans="T")
            Phi = (self.minus(n).T @ psi) / m
            if not np.all(np.isfinite(Phi)):
                raise InstabilityError(f"non-finite adjoint state at step {n}", step=n)
            if on_stage is not None:
                on_stage(n, psi)
            if keep:
                out.append(Phi)
        return np.stack(out[::-1]) if keep else Phi


def stepper(ops, sched):
    key = (float(sched.T), int(sched.nt), float(sched.theta))
    st = ops._cache.get(key)
    if st is None:
        st = ops._cache[key] = _Stepper(ops, sched)
    return st


def control_field(sched, bulk_values, grid):
    """Wrap ``(nt, n_bulk)`` control samples as a SpaceTimeField."""
    bulk_values = np.asarray(bulk_values, dtype=float)
    if bulk_values.shape != (sched.nt, grid.n_bulk):
        raise DimensionError(f"control must have shape {(sched.nt, grid.n_bulk)}, got {bulk_values.shape}")
    values = np.hstack([bulk_values, np.zeros((sched.nt, grid.n_bdry))])
    return SpaceTimeField(sched.stage_times, values, grid.n_bulk)


def _control_array(v, sched, grid, mask=None):
    if v is None:
        return None
    if len(v) != sched.nt or v.values.shape[1] != grid.n_total:
        raise DimensionError(f"control needs {sched.nt} frames of length {grid.n_total}")
    if np.any(v.bdry != 0):
        raise DimensionError("controls act in the bulk only; boundary part must vanish")
    bulk = v.bulk
    if mask is not None and np.any(bulk[:, ~mask] != 0):
        raise DimensionError("control is not supported in omega")
    return bulk


def solve_forward(ops, Y0, v, sched, mask=None):
    """Trajectory of the controlled system from ``Y0``.

    Parameters
    ----------
    ops : DiscreteOperatorSet
    Y0 : StatePair
    v : SpaceTimeField or None
        Control with one frame per step (see :func:`control_field`); ``None``
        means no control.
    sched : TimeSchedule
    mask : ndarray of bool, optional
        If given, ``v`` is checked to vanish outside it.
    """
    g = ops.grid
    Y0.check(g)
    ctrl = _control_array(v, sched, g, mask)
    traj = stepper(ops, sched).forward(Y0.vector, ctrl)
    return SpaceTimeField(sched.times, traj, g.n_bulk)


def uncontrolled_terminal(ops, Y0, sched):
    return solve_forward(ops, Y0, None, sched).terminal


# ----------------------------------------------------------------------
# trajectory persistence
# ----------------------------------------------------------------------
_MAGIC = b"WNTZTRJ1"
_HEADER = struct.Struct("<8sIII")  # magic, n_bulk, n_bdry, n_frames


def write_trajectory_csv(path, field):
    """Rows ``time,node_kind,index,value``."""
    nb = field.n_bulk
    with open(path, "w") as fh:
        fh.write("time,node_kind,index,value\n")
        for t, row in zip(field.times, field.values):
            for i, val in enumerate(row):
                kind, j = ("bulk", i) if i < nb else ("bdry", i - nb)
                fh.write(f"{t!r},{kind},{j},{float(val)!r}\n")


def write_trajectory_bin(path, field):
    """Binary cache: little-endian header (magic, n_bulk, n_bdry, n_frames),
    then ``n_frames`` float64 times, then the float64 values row by row."""
    nf, N = field.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, field.n_bulk, N - field.n_bulk, nf))
        fh.write(np.asarray(field.times, "<f8").tobytes())
        fh.write(np.asarray(field.values, "<f8").tobytes())


def read_trajectory_bin(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, nb, ng, nf = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DataError(f"{path}: not a trajectory cache")
    off = _HEADER.size
    expected = off + 8 * nf * (1 + nb + ng)
    if len(raw) != expected:
        raise DataError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    times = np.frombuffer(raw, "<f8", nf, off)
    values = np.frombuffer(raw, "<f8", nf * (nb + ng), off + 8 * nf).reshape(nf, nb + ng)
    return SpaceTimeField(times.copy(), values.copy(), nb)
