"""Explicit cost-of-control bounds with a calibrated generic constant.

The generic constant ``C(Omega, omega)`` of the estimates is not explicit;
here it is a user value ``kappa`` (see :func:`calibrate_kappa`).  Norm
conventions: ``|a|, |b|`` are sup-norms, ``|B|, |B_Gamma|`` sup-norms of the
Euclidean length, target norms are the discrete product-space norms of
:func:`wentzell.grid.sobolev_norms`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import DataError, ParameterError
from .grid import sobolev_norms

__all__ = [
    "BoundInputs",
    "SweepRecord",
    "bound_inputs",
    "eval_N",
    "eval_M",
    "eval_cost_bound",
    "log_cost_bound",
    "eval_obs_constant",
    "choose_delta",
    "eval_L",
    "eval_N1",
    "eval_M1",
    "eval_semilinear_bound",
    "calibrate_kappa",
]


@dataclass(frozen=True)
class BoundInputs:
    """Scalar inputs of the bounds.

    ``norms`` is ``(|a|, |b|, |B|, |B_Gamma|)``; ``target_norms`` is
    ``(||Y1||_L2, ||Y1||_H1, ||Y1||_H2)``.  ``eps`` may be ``inf`` (the
    large-tolerance limit).
    """

    T: float
    eps: float
    norms: tuple = (0.0, 0.0, 0.0, 0.0)
    target_norms: tuple = (0.0, 0.0, 0.0)
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "norms", tuple(float(v) for v in self.norms))
        object.__setattr__(self, "target_norms", tuple(float(v) for v in self.target_norms))
        if len(self.norms) != 4 or len(self.target_norms) != 3:
            raise ParameterError("norms needs 4 entries and target_norms 3")
        if not self.T > 0 or not math.isfinite(self.T):
            raise ParameterError(f"T must be positive, got {self.T}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if any(not (v >= 0 and math.isfinite(v)) for v in self.norms + self.target_norms):
            raise ParameterError("norms must be finite and non-negative")
        if not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise ParameterError(f"kappa must be finite and non-negative, got {self.kappa}")


def bound_inputs(coeffs, Y1, g, T, eps, kappa=1.0):
    """Collect :class:`BoundInputs` from coefficients and a target state."""
    return BoundInputs(T=T, eps=eps, norms=coeffs.sup_norms, target_norms=sobolev_norms(Y1, g), kappa=kappa)


def _S(a, b, B, Bg):
    return a + b + B * B + Bg * Bg


def eval_N(inp):
    """``1 + 1/T + T(|a|+|b|+|B|^2+|B_G|^2) + |a|^(2/3) + |b|^(2/3) + |B|^2 + |B_G|^2``.

    >>> eval_N(BoundInputs(T=0.5, eps=1.0, norms=(0, 8, 0, 0)))
    11.0
    """
    a, b, B, Bg = inp.norms
    T = inp.T
    return 1.0 + 1.0 / T + T * _S(a, b, B, Bg) + a ** (2 / 3) + b ** (2 / 3) + B * B + Bg * Bg


def eval_M(inp):
    """``S + (|a|+|b|)||Y1|| + (|B|+|B_G|)||Y1||_H1 + ||Y1||_H2`` with
    ``S = |a|+|b|+|B|^2+|B_G|^2``."""
    a, b, B, Bg = inp.norms
    l2, h1, h2 = inp.target_norms
    return _S(a, b, B, Bg) + (a + b) * l2 + (B + Bg) * h1 + h2


def log_cost_bound(inp):
    """Natural log of :func:`eval_cost_bound`; ``-inf`` for a zero target."""
    l2 = inp.target_norms[0]
    if l2 == 0.0:
        return -math.inf
    m_term = 0.0 if math.isinf(inp.eps) else eval_M(inp) / inp.eps
    return inp.kappa * (eval_N(inp) + m_term) + math.log(l2)


class BoundValue(NamedTuple):
    value: float
    overflow: bool


def _exp_checked(log_value):
    if log_value == -math.inf:
        return BoundValue(0.0, False)
    if log_value > math.log(np.finfo(float).max):
        return BoundValue(math.inf, True)
    return BoundValue(math.exp(log_value), False)


def eval_cost_bound(inp, with_flag=False):
    """``exp(kappa (N + M/eps)) ||Y1||_L2``.

    Returns ``inf`` on overflow; pass ``with_flag=True`` to get a
    ``(value, overflow)`` pair instead.
    """
    res = _exp_checked(log_cost_bound(inp))
    return res if with_flag else res.value


def eval_obs_constant(inp):
    """``exp(kappa (1 + 1/T + T(|a|+|b|+|B|+|B_G|) + |B|^2 + |B_G|^2 + |a|^(2/3) + |b|^(2/3)))``.

    The drift enters the ``T(...)`` term with first powers here, unlike
    :func:`eval_N`; both follow their respective estimates.
    """
    a, b, B, Bg = inp.norms
    T = inp.T
    expo = 1.0 + 1.0 / T + T * (a + b + B + Bg) + B * B + Bg * Bg + a ** (2 / 3) + b ** (2 / 3)
    return _exp_checked(inp.kappa * expo).value


def _safe_ratio(num, den):
    return math.inf if den == 0.0 else num / den


def choose_delta(inp, C_cal):
    """Time shift ``delta = min{T, eps/(3 C ||Y1||_H2), K1, K2}``.

    ``K1 = ln(1 + eps/(3(|a|+|b|)||Y1||_L2)) / S`` and
    ``K2 = ln(1 + eps/(3(|B|^2+|B_G|^2)||Y1||_H1)) / S``.  Vanishing
    denominators give ``+inf`` candidates.

    Returns
    -------
    tuple
        ``(delta, K1, K2)``
    """
    if not C_cal > 0:
        raise ParameterError("C_cal must be positive")
    a, b, B, Bg = inp.norms
    l2, h1, h2 = inp.target_norms
    eps = inp.eps
    S = _S(a, b, B, Bg)

    def K(den):
        if S == 0.0:
            return math.inf
        return math.log1p(_safe_ratio(eps, 3.0 * den)) / S

    K1 = K((a + b) * l2)
    K2 = K((B * B + Bg * Bg) * h1)
    second = _safe_ratio(eps, 3.0 * C_cal * h2)
    return min(inp.T, second, K1, K2), K1, K2


def eval_L(delta, norms):
    """``(exp(delta S) - 1) / S`` with ``S = |a|+|b|+|B|^2+|B_G|^2``; ``delta`` when ``S = 0``."""
    if delta < 0:
        raise ParameterError("delta must be non-negative")
    S = _S(*(float(v) for v in norms))
    if S == 0.0:
        return float(delta)
    return math.expm1(delta * S) / S


def eval_N1(T, L_F, L_G):
    """Semilinear analogue of :func:`eval_N` with Lipschitz constants.

    >>> eval_N1(1.0, 1.0, 0.0)
    6.0
    """
    if not T > 0:
        raise ParameterError("T must be positive")
    if L_F < 0 or L_G < 0:
        raise ParameterError("Lipschitz constants must be non-negative")
    q = L_F + L_G + L_F ** 2 + L_G ** 2
    return 1.0 + 1.0 / T + T * q + L_F ** (2 / 3) + L_G ** (2 / 3) + L_F ** 2 + L_G ** 2


def eval_M1(L_F, L_G, target_norms):
    l2, h1, h2 = (float(v) for v in target_norms)
    return L_F + L_G + L_F ** 2 + L_G ** 2 + (L_F + L_G) * l2 + (L_F + L_G) * h1 + h2


def eval_semilinear_bound(T, eps, L_F, L_G, target_norms, kappa, with_flag=False):
    """``exp(kappa (N1 + M1/eps)) ||Y1||_L2``."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    l2 = float(target_norms[0])
    if l2 == 0.0:
        res = BoundValue(0.0, False)
    else:
        m_term = 0.0 if math.isinf(eps) else eval_M1(L_F, L_G, target_norms) / eps
        res = _exp_checked(kappa * (eval_N1(T, L_F, L_G) + m_term) + math.log(l2))
    return res if with_flag else res.value


@dataclass(frozen=True)
class SweepRecord:
    """One solved instance: bound inputs (``kappa`` ignored) and the achieved cost."""

    inputs: BoundInputs
    cost: float

    def __post_init__(self):
        if not (self.cost >= 0 and math.isfinite(self.cost)):
            raise DataError(f"cost must be finite and non-negative, got {self.cost}")


def calibrate_kappa(records):
    """Smallest ``kappa >= 0`` whose bound envelopes every record.

    ``kappa = max ln(cost / ||Y1||) / (N + M/eps)``, then nudged up by a few
    ulps if rounding leaves some ``eval_cost_bound`` below its cost, so the
    envelope holds exactly in floating point.

    >>> inp = BoundInputs(T=1.0, eps=1.0, target_norms=(1.0, 1.0, 1.0))
    >>> calibrate_kappa([SweepRecord(inp, 1.0)])
    0.0
    """
    records = list(records)
    if not records:
        raise DataError("calibration needs at least one sweep record")
    kappa = 0.0
    for rec in records:
        l2 = rec.inputs.target_norms[0]
        if rec.cost == 0.0:
            continue
        if l2 == 0.0:
            raise DataError("nonzero cost recorded for a zero target")
        expo = eval_N(rec.inputs) + (0.0 if math.isinf(rec.inputs.eps) else eval_M(rec.inputs) / rec.inputs.eps)
        kappa = max(kappa, math.log(rec.cost / l2) / expo)
    for _ in range(64):
        if all(eval_cost_bound(replace(r.inputs, kappa=kappa)) >= r.cost for r in records):
            return kappa
        kappa = float(np.nextafter(kappa, math.inf))
    raise DataError("could not make the calibrated bound envelope all records")
