"""Carleman weights and empirical observability diagnostics.

The weight functions are

    xi(x, t)    = exp(lam (m |eta0| + eta0(x))) / (t (T - t))
    alpha(x, t) = (exp(2 lam m |eta0|) - exp(lam (m |eta0| + eta0(x)))) / (t (T - t))

with ``|eta0|`` the sup norm of the profile ``eta0``.  At the defaults
``exp(-2 s alpha)`` underflows double precision everywhere, so all weighted
integrals are formed in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .adjoint import solve_adjoint
from .forward import stepper
from .errors import DegenerateObservationError, GeometryError, ParameterError
from .operators import control_mask

__all__ = [
    "CarlemanWeights",
    "build_morse",
    "eval_weights",
    "log_weight",
    "carleman_ratio",
    "empirical_obs_constant",
    "default_s_values",
    "observation_factor",
]

DENSE_PENCIL_LIMIT = 400


def _profile(x, c, L, amp):
    """Piecewise sine on ``[0, L]``: zero at both ends, maximum ``amp`` at ``c``."""
    x = np.asarray(x, dtype=float)
    left = amp * np.sin(np.pi * x / (2.0 * c))
    right = amp * np.sin(np.pi * (L - x) / (2.0 * (L - c)))
    val = np.where(x <= c, left, right)
    dleft = amp * np.pi / (2.0 * c) * np.cos(np.pi * x / (2.0 * c))
    dright = -amp * np.pi / (2.0 * (L - c)) * np.cos(np.pi * (L - x) / (2.0 * (L - c)))
    return np.clip(val, 0.0, None), np.where(x <= c, dleft, dright)


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    """Profile ``eta0`` on all nodes (bulk then boundary) and weight parameters.

    ``grad_eta0`` holds the exact gradient of the closed-form profile at the
    bulk nodes, shape ``(n_bulk, dim)``; ``mask`` marks the bulk nodes of
    omega and ``T`` is the horizon the weights live on.
    """

    eta0: np.ndarray
    grad_eta0: np.ndarray
    center: tuple
    mask: np.ndarray
    T: float = 1.0
    m: float = 2.0
    lam: float = 2.0
    s: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if not self.m > 1:
            raise ParameterError(f"m must exceed 1, got {self.m}")
        if not self.lam >= 1:
            raise ParameterError(f"lambda must be at least 1, got {self.lam}")
        if not self.s >= 1:
            raise ParameterError(f"s must be at least 1, got {self.s}")

    @property
    def sup(self):
        return float(self.eta0.max())

    def with_params(self, **changes):
        return replace(self, **changes)


def build_morse(g, omega, T=1.0, amplitude=1.0, **params):
    """Profile with one interior critical point, at the centre of ``omega``.

    1D: ``amplitude * sin(pi x / (2c))`` on ``[0, c]`` mirrored onto
    ``[c, L]``; 2D: product of the two axis profiles.  Boundary nodes get
    exactly zero.  Extra keyword arguments (``m``, ``lam``, ``s``) go to
    :class:`CarlemanWeights`.

    >>> from wentzell.grid import make_grid
    >>> w = build_morse(make_grid(1.0, 10), (0.4, 0.6))
    >>> float(w.eta0[10]), float(w.eta0[11])
    (0.0, 0.0)
    """
    box = np.asarray(omega, dtype=float).reshape(g.dim, 2)
    center = box.mean(axis=1)
    L = np.asarray(g.extents, dtype=float)
    if np.any(center < g.spacing) or np.any(center > L - g.spacing):
        raise GeometryError("centre of omega lies within one cell of the boundary")
    if not amplitude > 0:
        raise ParameterError("amplitude must be positive")
    vals, ders = [], []
    for ax in range(g.dim):
        v, d = _profile(g.bulk_coords[:, ax], center[ax], L[ax], 1.0)
        vals.append(v)
        ders.append(d)
    eta = amplitude * np.prod(vals, axis=0)
    grad = np.empty((g.n_bulk, g.dim))
    for ax in range(g.dim):
        others = [vals[k] for k in range(g.dim) if k != ax]
        grad[:, ax] = amplitude * ders[ax] * (np.prod(others, axis=0) if others else 1.0)
    eta_full = np.concatenate([eta, np.zeros(g.n_bdry)])
    return CarlemanWeights(eta0=eta_full, grad_eta0=grad, center=tuple(center),
                           mask=control_mask(g, omega), T=float(T), **params)


def _check_t(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t >= T):
        raise ParameterError("weights are defined for 0 < t < T only")
    return t


def eval_weights(w, node, t):
    """``(xi, alpha)`` at node index (or index array) ``node`` and time ``t``.

    Values overflow to ``inf`` only for extreme parameters; use
    :func:`log_weight` for weighted integrals.
    """
    T = w.T
    t = _check_t(t, T)
    eta = w.eta0[node]
    tt = t * (T - t)
    top = w.lam * (w.m * w.sup + eta)
    xi = np.exp(top) / tt
    alpha = (np.exp(2.0 * w.lam * w.m * w.sup) - np.exp(top)) / tt
    return xi, alpha


def log_weight(w, t, power=3):
    """``log(xi^power exp(-2 s alpha))`` on all nodes at times ``t``.

    Returns an array ``(len(t), n_total)``.
    """
    T = w.T
    t = _check_t(np.atleast_1d(t), T)[:, None]
    tt = t * (T - t)
    top = w.lam * (w.m * w.sup + w.eta0[None, :])
    alpha_num = math.exp(2.0 * w.lam * w.m * w.sup) - np.exp(top)
    return power * (top - np.log(tt)) - 2.0 * w.s * alpha_num / tt


def default_s_values(T):
    return tuple(k * (T + T * T) for k in (4.0, 8.0, 16.0))


def carleman_ratio(ops, sched, w, PhiT):
    """Ratio of the weighted global terms to the weighted observation term.

    ``R = (int_{Omega_T} + int_{Gamma_T}) xi^3 e^{-2 s alpha} |phi|^2 /
    int_{omega_T} xi^3 e^{-2 s alpha} |phi|^2`` for the adjoint trajectory
    from ``PhiT``.  The common factor ``s^3 lambda^4`` cancels.  Time
    integrals use the trapezoid rule on the interior time nodes (the weight
    vanishes at ``t = 0`` and ``t = T``).

    With nonzero potentials the adjoint is not homogeneous for the pure heat
    operator; the ratio is then a diagnostic only.
    """
    g = ops.grid
    if not math.isclose(w.T, sched.T):
        raise ParameterError("weights and schedule use different horizons")
    mask = w.mask
    phi = solve_adjoint(ops, PhiT, sched)
    times = sched.times[1:-1]
    vals = phi.values[1:-1]
    lw = log_weight(w, times) + math.log(sched.dt)
    with np.errstate(divide="ignore"):
        lvals = np.log(vals * vals) + np.log(ops.mass)[None, :]
    num = logsumexp(lw + lvals)
    obs = np.zeros(g.n_total, dtype=bool)
    obs[: g.n_bulk] = mask
    den = logsumexp((lw + lvals)[:, obs])
    if not np.isfinite(den):
        raise DegenerateObservationError("adjoint state vanishes on the observation region")
    return float(math.exp(num - den))


def observation_factor(ops, sched, mask):
    """Triangular ``R`` with ``R^T R = M Lambda`` and the map ``E0: Phi_T -> Phi(0)``.

    The weighted observed stages ``sqrt(dt vol) psi^n|_omega`` of a batched
    backward sweep on the identity are stacked and reduced by QR as they
    arrive, so the Gramian is never formed explicitly.  Forming it would
    square its condition number, which already reaches ``1e17`` on 1D grids
    with 16 cells: the top pencil eigenvalue then lives in directions that
    double precision cannot resolve.
    """
    g = ops.grid
    N = g.n_total
    w = np.sqrt(sched.dt * g.cell_volumes[mask])
    R = np.zeros((0, N))
    pending = []

    def flush():
        nonlocal R, pending
        if pending:
            R = sla.qr(np.vstack([R, *pending]), mode="r", overwrite_a=True, check_finite=False)[0][:N]
            pending = []

    rows = [0]

    def gather(n, psi):
        pending.append(w[:, None] * psi[: g.n_bulk][mask])
        rows[0] += int(mask.sum())
        if rows[0] >= N:
            flush()
            rows[0] = 0

    E0 = stepper(ops, sched).backward(np.eye(N), on_stage=gather, keep=False)
    flush()
    if R.shape[0] < N:
        R = np.vstack([R, np.zeros((N - R.shape[0], N))])
    return R, E0


def empirical_obs_constant(ops, sched, mask, method="auto", power_iters=200, seed=0):
    """Largest ratio ``||Phi(0)||^2_mu / sum_n dt ||phi^n||^2_omega``.

    This is the top eigenvalue of the pencil ``(E0^T M E0, M Lambda)``,
    computed as ``sigma_max(M^(1/2) E0 R^(-1))^2`` with ``R`` from
    :func:`observation_factor`.  ``method="dense"`` takes a full SVD,
    ``"power"`` runs power iteration on the same operator and ``"auto"``
    uses the SVD up to 400 unknowns.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GeometryError("empty observation region")
    R, E0 = observation_factor(ops, sched, mask)
    d = np.abs(np.diag(R))
    if d.min() <= np.finfo(float).eps * d.max() * 1e-3:
        raise DegenerateObservationError("observation Gramian is numerically singular")
    N = R.shape[0]
    if method == "auto":
        method = "dense" if N <= DENSE_PENCIL_LIMIT else "power"
    C = np.sqrt(ops.mass)[:, None] * E0
    if method == "dense":
        # C R^{-1} = (R^{-T} C^T)^T
        Z = sla.solve_triangular(R, C.T, trans="T")
        return float(sla.svdvals(Z)[0] ** 2)
    if method != "power":
        raise ParameterError(f"unknown method {method!r}")
    x = np.random.default_rng(seed).standard_normal(N)
    est = 0.0
    for _ in range(power_iters):
        # x -> R^{-T} C^T C R^{-1} x
        y = sla.solve_triangular(R, x)
        y = sla.solve_triangular(R, C.T @ (C @ y), trans="T")
        est = float(np.dot(x, y)) / float(np.dot(x, x))
        x = y / np.linalg.norm(y)
    return est
