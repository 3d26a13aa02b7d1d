"""Numerical lab for boundary regularity of parabolic equations in irregular domains."""
from __future__ import annotations

from .grid_domain import (Grid, DomainSpec, DomainMask, BoundaryClass, DistanceField, GridField,
                          CoarseGridError, DegenerateDomainError, make_grid, make_domain, rasterize,
                          classify_boundary, distance_field, parabolic_distance, rescale, GENERATORS)
from .geometry import (check_condition_A, check_condition_B, heat_ball_volume, heat_kernel,
                       interior_measure_check, vmo_modulus, weighted_norm_F)
from .capacity import (DiscreteCompactSet, thermal_capacity_lp, parabolic_capacity_upper,
                       wiener_partial_sums)
from .solver import (CoefficientSet, GridCoefficients, Discretization, Solution, discretize, heat_operator,
                     regularize_coeffs, solve_dirichlet, solve_sequence, barrier_psi, drift_coefficients)
from .lab import caloric_ratio, decay_profile, estimate_beta, example_1d, max_principle_suite

__version__ = "0.1.0"
