"""
Observability constant and the Carleman weight
==============================================

The smallest C with ||Phi(0)||^2 <= C * int_omega_T |phi|^2 for the
adjoint system, computed from a QR factor of the stacked observations.
It shrinks as the horizon grows or the observation region widens.
"""
import numpy as np

from wentzell.carleman import build_morse, carleman_ratio, default_s_values, empirical_obs_constant
from wentzell.forward import TimeSchedule
from wentzell.grid import StatePair, make_grid
from wentzell.operators import CoefficientSet, assemble, control_mask

g = make_grid(1.0, 16)
ops = assemble(g, CoefficientSet.build(g))

# implicit Euler: Crank-Nicolson keeps stiff modes alive and inflates C
for box in ((0.3, 0.7), (0.2, 0.8)):
    mask = control_mask(g, box)
    vals = [empirical_obs_constant(ops, TimeSchedule(T, int(64 * T), 1.0), mask) for T in (0.25, 0.5, 1.0, 2.0)]
    print(f"omega = {box}: " + "  ".join(f"T={T}: {c:9.3f}" for T, c in zip((0.25, 0.5, 1.0, 2.0), vals)))

# the weighted energy ratio stays finite across the usual s range
sched = TimeSchedule(1.0, 32)
rng = np.random.default_rng(1)
PhiT = StatePair.from_vector(rng.standard_normal(g.n_total), g)
base = build_morse(g, (0.3, 0.7), T=1.0)
for s in default_s_values(1.0):
    print(f"s = {s:5.1f}: ratio {carleman_ratio(ops, sched, base.with_params(s=s), PhiT):.6f}")

mild = build_morse(g, (0.3, 0.7), T=1.0, m=1.1, lam=1.0, s=1.0, amplitude=0.01)
print(f"mild weight: ratio {carleman_ratio(ops, sched, mild, PhiT):.3f}")
