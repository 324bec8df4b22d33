from .params import (
    BoundaryArrays,
    BoundarySpec,
    MaterialConstants,
    SimParams,
    cfl_max_dt,
    lame_from_elastic,
)
from .state import GridField, ParticleState
from .forward import (
    Frame,
    SimContext,
    Trajectory,
    actuation_kirchhoff,
    boundary_region_mask,
    contact_force,
    neo_hookean_kirchhoff,
    run_engine,
    step,
)

__all__ = [
    "BoundaryArrays", "BoundarySpec", "MaterialConstants", "SimParams",
    "cfl_max_dt", "lame_from_elastic", "GridField", "ParticleState",
    "Frame", "SimContext", "Trajectory", "actuation_kirchhoff",
    "boundary_region_mask", "contact_force", "neo_hookean_kirchhoff",
    "run_engine", "step",
]
