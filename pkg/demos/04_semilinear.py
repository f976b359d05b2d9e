"""
Controlling a semilinear problem by Picard iteration
====================================================

Freeze the nonlinearity as potentials along the current trajectory, solve
the linear control problem, and repeat.  The returned control is finally
checked on the true nonlinear system.
"""
import numpy as np

from wentzell.control import smooth_target
from wentzell.errors import NonConvergenceError
from wentzell.forward import TimeSchedule
from wentzell.grid import StatePair, make_grid, norm_mu
from wentzell.operators import CoefficientSet, assemble, control_mask
from wentzell.semilinear import Nonlinearity, PicardOptions, Term, picard_control

g = make_grid(1.0, 32)
ops = assemble(g, CoefficientSet.build(g))
sched = TimeSchedule(0.5, 64)
mask = control_mask(g, (0.3, 0.7))
Y1 = smooth_target(g, np.random.default_rng(1))
eps = 0.1 * norm_mu(Y1, g)

for coef in (0.1, 1.0, 10.0):
    nl = Nonlinearity(F=[Term("sine", coef)])
    res = picard_control(ops, StatePair.zeros(g), Y1, eps, nl, sched, mask)
    print(f"F = {coef:4} sin(y): {res.iterations:2d} iterations, "
          f"fp residual {res.fp_residual:.1e}, nonlinear gap {res.nonlinear_gap / eps:.6f} eps")

# a tight budget turns slow convergence into a typed report with the history
try:
    picard_control(ops, StatePair.zeros(g), Y1, eps, Nonlinearity(F=[Term("sine", 10.0)]), sched, mask,
                   PicardOptions(max_iter=3))
except NonConvergenceError as exc:
    print(f"\nbudget of 3: {type(exc).__name__}")
    for it, fp, cost, gap in exc.history:
        print(f"  iteration {it}: fp residual {fp:.2e}, cost {cost:.3f}")
