"""Inner polytope approximations of aggregate DER/ADN power flexibility."""

from .core import (
    DerEnvelope,
    FleetScenario,
    FleetSpec,
    GeneratorConfig,
    Polytope,
    TimeGrid,
    generate_fleet,
    validate_envelope,
)
from .approx import ApproxResult, ApproxSettings, PrototypeKind, build_prototype, run_inner_approx
from .eam import FeasibleSetSpec, der_support, disaggregate, fleet_support, init_bounds

__version__ = "0.1.0"

__all__ = [
    "ApproxResult",
    "ApproxSettings",
    "DerEnvelope",
    "FeasibleSetSpec",
    "FleetScenario",
    "FleetSpec",
    "GeneratorConfig",
    "Polytope",
    "PrototypeKind",
    "TimeGrid",
    "build_prototype",
    "der_support",
    "disaggregate",
    "fleet_support",
    "generate_fleet",
    "init_bounds",
    "run_inner_approx",
    "validate_envelope",
]
