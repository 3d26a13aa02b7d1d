"""
How fast do solutions vanish at the boundary?
=============================================

Fit the exponent in ``sup{|u| : d <= h} ~ h^beta`` for solves on the cubes
domain, with and without a drift that blows up near the boundary, then look
at the one-dimensional example where a ``1/d`` drift destroys any power law.
"""

# %%
import numpy as np

from parabolab import lab, solver
from parabolab.grid_domain import make_domain, make_grid

cubes = make_domain("shrinking_cubes", levels=3)
disc = solver.discretize(cubes, make_grid(cubes, 1 / 32))
f = np.where(disc.dist.d > 0.2, 1.0, 0.0)
for name, op in (("heat", solver.heat_operator()),
                 ("drift d^-1/2", solver.drift_coefficients(disc, lambda d: d ** -0.5)),
                 ("drift 5/d", solver.drift_coefficients(disc, lambda d: 5 / d))):
    sol = solver.solve_dirichlet(op, disc, f)
    fit = lab.estimate_beta(lab.decay_profile(sol.u, disc.dist.d, occupancy=disc.occupancy, h_grid=disc.grid.h))
    print(f"{name:13s} beta_est = {fit.beta_est:.3f} +- {fit.stderr:.3f}  (r2 {fit.r2:.3f})")

# %% [markdown]
# Caloric ratio at the slab wall: the value at the top of a cylinder whose
# wall carries data 1 and whose part outside the domain carries 0.

# %%
slab = make_domain("half_space_slab", n=1)
for r in (0.25, 0.125, 0.0625):
    g = lab.caloric_ratio(slab, X0=[r / 2, 0.5], r=r)
    print(f"r={r}: ratio {g.ratio:.4f}, exterior density {g.exterior_density:.2f}")

# %% [markdown]
# The one-dimensional example: ``u = -eta(x)/ln x`` solves
# ``u'' + b u' = f`` with bounded ``f`` and ``b ~ 1/x``.  It vanishes at 0
# slower than any power, although ``x^-beta u`` only starts growing below
# ``x = exp(-1/beta)``.

# %%
rep = lab.example_1d()
print(f"u(0.1) = {rep['u_at_0_1']:.5f}, max error of the numerical solve {rep['sup_err']:.1e}")
for beta, w in rep["weighted"].items():
    print(f"beta={beta}: x^-beta u at 1e-3 {w['at_1e_3']:.4f}, at 1e-6 {w['at_1e_6']:.4f}, "
          f"turns upward below x = {w['minimizer']:.1e}")
