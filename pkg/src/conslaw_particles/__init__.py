"""Deterministic particle schemes for 1-D non-local conservation laws with congestion."""

from .density import (
    OrderingError,
    ParticleConfig,
    PwcDensity,
    SideDensities,
    l1_distance,
    quantile_init,
    reconstruct,
    side_densities,
    total_variation,
    w1_distance,
)
from .dynamics import VelocityEval, VelocityField
from .exprdsl import FieldExpr, evaluate, parse
from .integrator import IntegratorSettings, Trajectory, integrate
from .scenario import ConfigError, Scenario, SpeciesSpec, builtin_library, load_scenario, validate

__version__ = "0.1.0"
