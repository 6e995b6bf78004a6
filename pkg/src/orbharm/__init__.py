"""Numerical Riemannian geometry on effective orbifolds: atlases, orbifold maps, tension, heat flow and foliations."""
from .atlas import (Chart, Domain, FiniteGroupAction, OrbifoldAtlas, cone_atlas, football_atlas, isotropy_order,
                    mirror_atlas, rotation2d, reflection2d, validate_atlas)
from .errors import *  # noqa: F401,F403
from .foliation import (FoliatedManifold, FoliatedMap, build_mapping_torus, build_product,
                        induced_transverse_map, leaf_space_orbifold, theorem_harness, transverse_tension)
from .geometry import MetricField, ModelTensor, christoffel, stabilizer_algebra_dim
from .harmonic import FlowParams, energy, heat_flow, is_harmonic, tension
from .lifts import ComplexPowerLift, ExpressionLift, GridLift, PolynomialLift
from .orbmap import CompleteOrbifoldMap, compose, single_chart_map, validate_map

__version__ = "0.1.0"
