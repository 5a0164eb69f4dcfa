"""Numerical laboratory for mean-value dynamic programming principles.

Solves and simulates generalized random walks whose increments combine a
point-dependent symmetric measure with uniform-ball noise, and verifies
the associated maximum-principle, envelope, decomposition and oscillation
estimates at desk scale.
"""

__version__ = "0.1.0"

from .dpp_core import (
    GridFunction,
    Params,
    Residual,
    apply_L,
    apply_L_pucci,
    ball_average,
    initial_subsolution,
    nonuniqueness_check,
    residual,
    solve_dpp,
    solve_pucci,
)
from .fields import FieldSpec, VectorField
from .geometry import Collar, Cube, Domain, Grid, Region, build_grid, dyadic_pre, dyadic_split, eps_cover, make_collar
from .measures import DirectionSet, MeasureFamily, check_symmetry, expect, pucci_extreme, sample
from .scenarios import Scenario, ScenarioError, get_scenario, scenario_list, scenario_load
