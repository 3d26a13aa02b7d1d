"""
Thermal capacity and Wiener sums
================================

Capacities of small space-time boxes come from a linear program on
cell-averaged heat kernels.  Summing the capacity of the domain's complement
over heat-kernel shells gives a series that keeps growing at a regular
boundary point and stalls at the tip of a thin spike.
"""

# %%
import numpy as np

from parabolab import capacity
from parabolab.grid_domain import make_domain

cell = (1 / 16, 1 / 16, 1 / 64)
for m in (2, 4, 8):
    K = capacity.box_set(2, [m, m, max(1, round((m / 16) ** 2 * 64))], cell)
    cap, volp, ratio = capacity.capacity_vs_volume(K)
    print(f"{m}x{m} square: cap = {cap:.4f}, |K|^(n/(n+2)) = {volp:.4f}, ratio = {ratio:.3f}")

# %% [markdown]
# The capacity is invariant under lattice translations and scales like
# ``s^n`` under parabolic dilation ``(x, t) -> (s x, s^2 t)``.

# %%
K = capacity.box_set(2, [3, 3, 4], (0.1, 0.1, 0.01))
base = capacity.thermal_capacity_lp(K)
print("translated:", capacity.thermal_capacity_lp(K.translated([4, -2, 5])) == base)
for s in (0.5, 2.0):
    print(f"s={s}: cap(sK) / (s^2 cap K) = {capacity.thermal_capacity_lp(K.scaled(s)) / (s * s * base):.4f}")

# %% [markdown]
# Partial sums at a wall point of the slab and at the spike tip.

# %%
slab = make_domain("half_space_slab", n=1)
spike = make_domain("inner_spike")
for name, spec, X0 in (("slab", slab, [0.0, 0.5]), ("spike", spike, spike.special_points["tip"])):
    rep = capacity.wiener_partial_sums(spec, X0, 2.0, 8)
    print(f"{name:6s} S_K = {np.round(rep.partial_sums, 3)}")
    print(f"       slope {rep.slope:.4f}, 95% CI ({rep.slope_ci[0]:.3g}, {rep.slope_ci[1]:.3g})")
