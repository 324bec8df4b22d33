"""Co-design of structure, actuator layout and actuation for soft bodies.

The package couples a differentiable MLS-MPM simulator with density-based
design fields and a constrained Adam optimizer. See README.md for the CLI and
file formats.
"""

from .adjoint import CheckpointPlan, GradientResult, SimProblem, finite_diff_gradient, gradient
from .design import DerivedDesign, DesignVariables, FilterSpec, PulseParams, derive_design
from .errors import ConfigError, InstabilityError, OutOfDomainError, SimulationError
from .losses import TaskSpec, augmented_lagrangian, constraint_values, penalty, task_loss
from .optimizer import AdamState, ALRunState, OptimizerOptions, al_minimize
from .scenario import ScenarioConfig, build_problem, load_config, seed_particles
from .sim import (
    BoundarySpec,
    MaterialConstants,
    ParticleState,
    SimContext,
    SimParams,
    Trajectory,
    cfl_max_dt,
    lame_from_elastic,
)

__all__ = [
    "CheckpointPlan", "GradientResult", "SimProblem", "finite_diff_gradient", "gradient",
    "DerivedDesign", "DesignVariables", "FilterSpec", "PulseParams", "derive_design",
    "ConfigError", "InstabilityError", "OutOfDomainError", "SimulationError",
    "TaskSpec", "augmented_lagrangian", "constraint_values", "penalty", "task_loss",
    "AdamState", "ALRunState", "OptimizerOptions", "al_minimize",
    "ScenarioConfig", "build_problem", "load_config", "seed_particles",
    "BoundarySpec", "MaterialConstants", "ParticleState", "SimContext", "SimParams",
    "Trajectory", "cfl_max_dt", "lame_from_elastic",
]

__version__ = "0.1.0"
