"""The two jump-drift weights give different skeletons and different rates.

Run: python demos/03_drift_weight_switch.py

In a one-mode pure-jump model the controlled skeleton moves at speed
w(phi) * c * lambda. With w(r) = r - 1 the cheapest way to reach level a
costs lambda T ell(phi*), which matches the Poisson Cramer rate. With
w = ell the speed and the running cost are the same function of phi, so the
minimum is just the distance a - u0, which is not the decay rate that Monte
Carlo sampling of the jump clock exhibits.
"""

import numpy as np

from goyld import (CoefficientFamily, CovarianceQ, MarkSpace, ModelParams, OptimizerConfig,
                   RateQuery, ShellGrid, minimize_rate)
from goyld.ldp_verify import poisson_cramer_rate

grid = ShellGrid(1.0, 3)
params = ModelParams(1e-9, grid, u0=np.array([1.0, 0, 0], complex), nonlinear=False)
q = CovarianceQ([1.0, 0, 0])
marks = MarkSpace(["z"], [1.0])
fam = CoefficientFamily("additive", np.zeros(3), [[1.0, 0, 0]], q, marks)

print(" level   Cramer   standard   paper_literal")
for level in (2.0, 3.0, 4.02):
    query = RateQuery("terminal_energy_above", level ** 2, 1.0, 1e-4)
    row = [poisson_cramer_rate(1.0, level)]
    for weight in ("standard", "paper_literal"):
        res = minimize_rate(query, params, fam, marks, q,
                            OptimizerConfig(n_nodes=2, dt=1e-2, jump_drift_weight=weight))
        row.append(res.best_cost)
    print(f" {level:5.2f}  " + "  ".join(f"{x:8.4f}" for x in row))
