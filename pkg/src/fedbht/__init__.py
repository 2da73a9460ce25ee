"""Explicit finite-element solver for heat transport in perfused,
deforming soft tissue.

The public surface re-exported here covers the typical workflow: load or
generate a mesh, describe the material and perfusion, pick a formulation
variant, run the transient, and check it against the assembled-matrix
reference solver.
"""

__version__ = "0.1.0"

from .config import ScenarioConfig, load_scenario
from .deformation import (
    AffineDeformation,
    DeformationState,
    IdentityDeformation,
    TrajectoryDeformation,
    deformation_gradient,
    load_trajectory,
)
from .errors import (
    ConfigError,
    ConflictError,
    DivergenceError,
    FedbhtError,
    GeometryError,
    MeshFormatError,
    NotSPDError,
    RangeZeroError,
    SingularDeformationError,
    StabilityError,
    TopologyError,
)
from .integrator import (
    BoundaryConditions,
    DirichletBC,
    FilmBC,
    FluxBC,
    Schedule,
    SimulationRecord,
    build_thermal_state,
    lumped_thermal_mass,
    run,
)
from .kernels import ConductionOperator, Variant, accumulate_global_loads
from .material import (
    MaterialModel,
    PerfusionParams,
    PropertyTable,
    TensorPropertyTable,
)
from .mesh import Mesh, load_mesh, load_node_set, precompute, write_mesh
from .metrics import (
    MetricsReport,
    compare_snapshots,
    normalized_error,
    total_relative_error,
)
from .stability import StabilityEstimate, estimate_critical_dt, power_iteration

__all__ = [
    "__version__",
    "AffineDeformation",
    "BoundaryConditions",
    "ConductionOperator",
    "ConfigError",
    "ConflictError",
    "DeformationState",
    "DirichletBC",
    "DivergenceError",
    "FedbhtError",
    "FilmBC",
    "FluxBC",
    "GeometryError",
    "IdentityDeformation",
    "MaterialModel",
    "Mesh",
    "MeshFormatError",
    "MetricsReport",
    "NotSPDError",
    "PerfusionParams",
    "PropertyTable",
    "RangeZeroError",
    "ScenarioConfig",
    "Schedule",
    "SimulationRecord",
    "SingularDeformationError",
    "StabilityError",
    "StabilityEstimate",
    "TensorPropertyTable",
    "TopologyError",
    "TrajectoryDeformation",
    "Variant",
    "accumulate_global_loads",
    "build_thermal_state",
    "compare_snapshots",
    "deformation_gradient",
    "estimate_critical_dt",
    "load_mesh",
    "load_node_set",
    "load_scenario",
    "load_trajectory",
    "lumped_thermal_mass",
    "normalized_error",
    "power_iteration",
    "precompute",
    "run",
    "total_relative_error",
    "write_mesh",
]
