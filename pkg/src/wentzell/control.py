"""Minimal-norm approximate controls by minimizing the dual functional

    J(Phi) = 1/2 int_{omega x (0,T)} |phi|^2 + eps ||Phi||_mu - <Y1, Phi>_mu

over adjoint final data.  ``Lambda`` (the controllability Gramian) maps
``Phi`` to the terminal state reached from zero with control ``1_omega phi``;
the smooth part of ``J`` has gradient ``Lambda Phi - Y1``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import solve_adjoint, stage_matrices_gram
from .errors import DimensionError, NonConvergenceError, ParameterError
from .forward import control_field, solve_forward, stepper, uncontrolled_terminal, write_trajectory_csv
from .grid import SpaceTimeField, StatePair, write_state_csv

logger = logging.getLogger(__name__)

__all__ = [
    "ControlOptions",
    "Certificate",
    "ControlSolution",
    "Gramian",
    "gramian_apply",
    "gramian_dense",
    "prox_scaled_norm",
    "minimize_J",
    "reduce_target",
    "smooth_target",
    "solution_record",
    "write_solution",
]


@dataclass(frozen=True)
class ControlOptions:
    """Settings for :func:`minimize_J`.

    ``tol`` is the absolute stopping level on the optimality residual; when
    ``None`` it is ``tol_factor * min(||Y1||, eps)``.  Scaling with ``eps``
    keeps the achieved target gap within ``eps * (1 + tol_factor)``.
    ``gramian`` picks the Gramian path: ``"dense"`` assembles it once,
    ``"operator"`` applies it by a backward and a forward sweep per
    iteration, ``"auto"`` goes dense up to ``dense_limit`` unknowns.
    """

    tol: float | None = None
    tol_factor: float = 1e-6
    max_iter: int = 5000
    gramian: str = "auto"
    dense_limit: int = 2500
    power_iters: int = 20
    x0: StatePair | None = None
    restart: bool = True

    def __post_init__(self):
        if self.gramian not in ("auto", "dense", "operator"):
            raise ParameterError(f"unknown gramian mode {self.gramian!r}")
        if self.max_iter < 1 or self.power_iters < 1:
            raise ParameterError("iteration counts must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ParameterError("tol must be positive")


@dataclass(frozen=True)
class Certificate:
    target_gap: float
    optimality_residual: float
    J_value: float
    iterations: int
    identity_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class ControlSolution:
    """Optimal adjoint datum, the control it generates and its certificate.

    ``identity_residual`` is ``cost^2 + eps ||Phi|| - <Y1, Phi>``, which
    vanishes at the minimizer.
    """

    PhiT_hat: StatePair
    control: SpaceTimeField
    terminal: StatePair
    cost: float
    certificate: Certificate
    eps: float
    target_norm: float
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def target_gap(self):
        return self.certificate.target_gap

    @property
    def optimality_residual(self):
        return self.certificate.optimality_residual

    @property
    def J_value(self):
        return self.certificate.J_value

    @property
    def iterations(self):
        return self.certificate.iterations


# ----------------------------------------------------------------------
# Gramian
# ----------------------------------------------------------------------
def _check_mask(g, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (g.n_bulk,):
        raise DimensionError(f"mask has shape {mask.shape}, expected ({g.n_bulk},)")
    return mask


def gramian_apply(ops, sched, mask, PhiT):
    """``Lambda Phi_T``: adjoint solve, restriction to omega, forward solve from 0."""
    g = ops.grid
    mask = _check_mask(g, mask)
    adj = solve_adjoint(ops, PhiT, sched)
    v = control_field(sched, adj.stages.bulk * mask, g)
    return solve_forward(ops, StatePair.zeros(g), v, sched, mask).terminal


def gramian_dense(ops, sched, mask):
    """Dense ``Lambda`` as an ``(N, N)`` array acting on flat state vectors.

    Assembled from one batched adjoint sweep (see
    :func:`wentzell.adjoint.stage_matrices_gram`); the result is symmetric
    in the mass-weighted inner product.
    """
    G = _dense_pair(ops, sched, _check_mask(ops.grid, mask))[0]
    return G / ops.mass[:, None]


def _dense_pair(ops, sched, mask):
    key = ("gram", float(sched.T), int(sched.nt), float(sched.theta), mask.tobytes())
    hit = ops._cache.get(key)
    if hit is None:
        hit = ops._cache[key] = stage_matrices_gram(ops, sched, mask)
    return hit


class Gramian:
    """``Lambda`` as a linear map on flat vectors, dense or matrix-free."""

    def __init__(self, ops, sched, mask, mode="auto", dense_limit=2500):
        self.ops, self.sched = ops, sched
        self.grid = ops.grid
        self.mask = _check_mask(self.grid, mask)
        self.mass = ops.mass
        if mode == "auto":
            mode = "dense" if self.grid.n_total <= dense_limit else "operator"
        self.mode = mode
        self.applications = 0
        self._mat = None
        if mode == "dense":
            self._mat = _dense_pair(ops, sched, self.mask)[0] / self.mass[:, None]

    def __call__(self, x):
        self.applications += 1
        if self._mat is not None:
            return self._mat @ x
        g, st = self.grid, stepper(self.ops, self.sched)
        stages = np.empty((self.sched.nt, g.n_bulk))

        def keep(n, psi):
            stages[n] = psi[: g.n_bulk] * self.mask

        st.backward(x, on_stage=keep, keep=False)
        return st.forward(np.zeros(g.n_total), stages, keep=False)

    def observed_cost2(self, x):
        """``sum_n dt ||psi^n||^2_omega`` for adjoint datum ``x``."""
        g = self.grid
        w = self.sched.dt * g.cell_volumes * self.mask
        total = 0.0

        def acc(n, psi):
            nonlocal total
            total += float(np.dot(w * psi[: g.n_bulk], psi[: g.n_bulk]))

        stepper(self.ops, self.sched).backward(x, on_stage=acc, keep=False)
        return total


# ----------------------------------------------------------------------
# proximal map and objective
# ----------------------------------------------------------------------
def prox_scaled_norm(z, t, g):
    """Proximal map of ``t ||.||_mu``: ``(1 - t / ||z||_mu)_+ z``.

    >>> from wentzell.grid import make_grid
    >>> g = make_grid(1.0, 4)
    >>> z = StatePair.constant(g, 2.0 / 3 ** 0.5)   # ||z||_mu = 2
    >>> float(np.round(prox_scaled_norm(z, 1.0, g).bulk[0] * 3 ** 0.5, 12))
    1.0
    """
    if t < 0:
        raise ParameterError("threshold t must be non-negative")
    z.check(g)
    vec = _prox_vec(z.vector, t, g.mass)
    return StatePair.from_vector(vec, g)


def _prox_vec(x, t, mass):
    nrm = math.sqrt(max(float(np.dot(mass * x, x)), 0.0))
    if nrm <= t:
        return np.zeros_like(x)
    return (1.0 - t / nrm) * x


# relative rounding level of one Gramian application (a few hundred ulps)
_NOISE = 1e-13


def _mu(x, y, mass):
    return float(np.dot(mass * x, y))


# ----------------------------------------------------------------------
# solver
# ----------------------------------------------------------------------
def _power_lmax(lam, mass, n_iter, rng):
    x = rng.standard_normal(mass.size)
    x /= math.sqrt(_mu(x, x, mass))
    est = 0.0
    for _ in range(n_iter):
        y = lam(x)
        est = _mu(y, x, mass)
        ny = math.sqrt(max(_mu(y, y, mass), 0.0))
        if ny == 0.0:
            break
        x = y / ny
    return est


def minimize_J(ops, sched, mask, Y1, eps, opts=None):
    """Minimize the dual functional and assemble the optimal control.

    Monotone FISTA with function-value restart.  The step ``1/L`` starts
    from a power-iteration estimate of ``lambda_max(Lambda)``; ``L`` doubles
    whenever the quadratic upper bound fails, so an underestimate never
    breaks descent.  Each iteration costs one Gramian application: images
    of extrapolated points are formed by linearity.

    Parameters
    ----------
    ops : DiscreteOperatorSet
    sched : TimeSchedule
    mask : ndarray of bool
        Control region over bulk nodes.
    Y1 : StatePair
        Target (already reduced by :func:`reduce_target` if ``Y0 != 0``).
    eps : float
        Target radius.
    opts : ControlOptions, optional

    Returns
    -------
    ControlSolution

    Raises
    ------
    NonConvergenceError
        Iteration budget exhausted; ``best`` holds the best iterate's
        solution and ``residual`` its optimality residual.
    """
    opts = opts or ControlOptions()
    g = ops.grid
    mask = _check_mask(g, mask)
    if not eps > 0 or not math.isfinite(eps):
        raise ParameterError(f"eps must be positive and finite, got {eps}")
    Y1.check(g)
    y1 = Y1.vector
    mass = ops.mass
    y1n = math.sqrt(_mu(y1, y1, mass))

    if y1n <= eps:
        # 0 lies in the subdifferential: J(Phi) >= (eps - ||Y1||) ||Phi|| >= 0 = J(0)
        return _assemble(ops, sched, mask, np.zeros(g.n_total), Y1, eps, y1n, 0, 0.0, (0.0,), None)

    lam = Gramian(ops, sched, mask, opts.gramian, opts.dense_limit)
    tol = opts.tol if opts.tol is not None else opts.tol_factor * min(y1n, eps)
    rng = np.random.default_rng(0)
    L = _power_lmax(lam, mass, opts.power_iters, rng)
    if not L > 0:
        raise NonConvergenceError("Gramian vanishes on the control region", residual=y1n)

    def F(x, lx):
        return 0.5 * _mu(lx, x, mass) + eps * math.sqrt(max(_mu(x, x, mass), 0.0)) - _mu(y1, x, mass)

    def dF(z, lz, x, lx):
        # F(z) - F(x) from differences only; avoids cancellation near the optimum
        d, ld = z - x, lz - lx
        nz, nx = math.sqrt(_mu(z, z, mass)), math.sqrt(_mu(x, x, mass))
        dnorm = _mu(d, z + x, mass) / (nz + nx) if nz + nx > 0 else 0.0
        return 0.5 * _mu(ld, z + x, mass) - _mu(y1, d, mass) + eps * dnorm

    def residual(x, lx):
        nx = math.sqrt(max(_mu(x, x, mass), 0.0))
        if nx == 0.0:
            # distance of 0 from the subdifferential at the origin
            r = lx - y1
            return max(math.sqrt(_mu(r, r, mass)) - eps, 0.0)
        r = lx - y1 + (eps / nx) * x
        return math.sqrt(_mu(r, r, mass))

    if opts.x0 is not None:
        opts.x0.check(g)
        x = opts.x0.vector.copy()
        lx = lam(x)
    else:
        x = np.zeros(g.n_total)
        lx = np.zeros(g.n_total)
    Fx = F(x, lx)
    y, ly = x.copy(), lx.copy()
    t = 1.0
    history = [Fx]
    best = (residual(x, lx), x, lx)
    it = 0
    while it < opts.max_iter:
        if best[0] <= tol:
            break
        it += 1
        grad_y = ly - y1
        while True:
            z = _prox_vec(y - grad_y / L, eps / L, mass)
            lz = lam(z)
            d = z - y
            # f is quadratic: the upper-bound test is exactly <Lambda d, d> <= L |d|^2
            if _mu(lz - ly, d, mass) <= L * _mu(d, d, mass) * (1.0 + 1e-12):
                break
            L *= 2.0
        delta = dF(z, lz, x, lx)
        # below this level the sign of delta is rounding noise from the Gramian
        # application itself; refusing such steps would stall the iteration
        noise = _NOISE * L * (math.sqrt(_mu(z, z, mass)) + math.sqrt(_mu(x, x, mass))) ** 2
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if delta <= noise:
            x_new, lx_new, F_new = z, lz, F(z, lz)
        else:
            x_new, lx_new, F_new = x, lx, Fx
        if opts.restart and delta > 0.0:
            # function-value restart: drop momentum, restart from x
            t_next = 1.0
            y, ly = x_new.copy(), lx_new.copy()
        else:
            a1, a2 = t / t_next, (t - 1.0) / t_next
            y = x_new + a1 * (z - x_new) + a2 * (x_new - x)
            ly = lx_new + a1 * (lz - lx_new) + a2 * (lx_new - lx)
        x, lx, Fx, t = x_new, lx_new, F_new, t_next
        history.append(Fx)
        r = residual(x, lx)
        if r < best[0]:
            best = (r, x, lx)

    r, xb, _ = best
    sol = _assemble(ops, sched, mask, xb, Y1, eps, y1n, it, r, tuple(history), lam)
    if r > tol:
        sol = replace(sol, converged=False)
        raise NonConvergenceError(
            f"dual minimization stopped after {it} iterations with residual {r:.3e} > tol {tol:.3e}",
            best=sol, residual=r, history=tuple(history))
    return sol


def _assemble(ops, sched, mask, x, Y1, eps, y1n, iterations, resid, history, lam):
    g = ops.grid
    Phi = StatePair.from_vector(x, g)
    adj = solve_adjoint(ops, Phi, sched)
    v = control_field(sched, adj.stages.bulk * mask, g)
    terminal = solve_forward(ops, StatePair.zeros(g), v, sched, mask).terminal
    w = sched.dt * g.cell_volumes * mask
    cost2 = float(np.sum(w * v.bulk * v.bulk))
    mass = ops.mass
    gap_vec = terminal.vector - Y1.vector
    phin = math.sqrt(_mu(x, x, mass))
    y1phi = _mu(Y1.vector, x, mass)
    cert = Certificate(
        target_gap=math.sqrt(_mu(gap_vec, gap_vec, mass)),
        optimality_residual=float(resid),
        J_value=0.5 * cost2 + eps * phin - y1phi,
        iterations=int(iterations),
        identity_residual=cost2 + eps * phin - y1phi,
    )
    return ControlSolution(PhiT_hat=Phi, control=v, terminal=terminal, cost=math.sqrt(cost2),
                           certificate=cert, eps=float(eps), target_norm=y1n, history=history)


def reduce_target(ops, sched, Y0, Y1):
    """``Y1 - Y(T; Y0, v=0)``: the target seen from a zero initial state."""
    Y1.check(ops.grid)
    return Y1 - uncontrolled_terminal(ops, Y0, sched)


def smooth_target(g, rng, modes=3, scale=1.0):
    """Random smooth state: a few low Fourier modes sampled with exact trace.

    Coefficients decay like ``1/k^2`` so the target sits comfortably inside
    the reachable set up to ``eps``.
    """
    L = np.asarray(g.extents, dtype=float)
    coef = {}
    ks = range(modes + 1)
    for kx in ks:
        for ky in (ks if g.dim == 2 else [0]):
            kk = 1.0 + kx * kx + ky * ky
            coef[kx, ky] = rng.standard_normal(2) / kk

    def fn(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[0])
        for (kx, ky), (c, s) in coef.items():
            phase = np.pi * kx * pts[:, 0] / L[0]
            if g.dim == 2:
                phase = phase + np.pi * ky * pts[:, 1] / L[1]
            out += c * np.cos(phase) + s * np.sin(phase)
        return scale * out

    return StatePair.from_function(g, fn)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------
def solution_record(sol):
    c = sol.certificate
    return {
        "eps": sol.eps,
        "target_norm": sol.target_norm,
        "cost": sol.cost,
        "target_gap": c.target_gap,
        "optimality_residual": c.optimality_residual,
        "identity_residual": c.identity_residual,
        "J_value": c.J_value,
        "iterations": c.iterations,
        "converged": sol.converged,
    }


def write_solution(sol, g, prefix):
    """Write ``<prefix>.json``, ``<prefix>_PhiT.csv`` and ``<prefix>_control.csv``."""
    with open(f"{prefix}.json", "w") as fh:
        json.dump(solution_record(sol), fh, indent=2)
    write_state_csv(f"{prefix}_PhiT.csv", sol.PhiT_hat, g)
    write_trajectory_csv(f"{prefix}_control.csv", sol.control)
