"""Two-phase Cahn-Hilliard / Navier-Stokes flow on evolving closed surfaces.

Tangential velocity and phase field are discretized with P1 finite elements
on triangulated spheres whose shape follows a prescribed, globally
area-preserving normal motion.
"""

__version__ = "0.1.0"

from .config import InitialSpec, NumericsSpec, OutputSpec, SimConfig
from .errors import (ConfigurationError, ContractError, GeometryError, MeshQualityError,
                     PhysicsError, SolverError, StepError, SurfChnsError)
from .geometry import GeometryPreset, SurfaceState, compute_surface_state
from .mesh import TriMesh, make_icosphere
from .physics import MaterialSpec, PotentialSpec
from .stepper import StepState, Trajectory, coupled_step, initial_state, run

__all__ = [
    "__version__", "SimConfig", "NumericsSpec", "InitialSpec", "OutputSpec", "GeometryPreset",
    "SurfaceState", "compute_surface_state", "TriMesh", "make_icosphere", "MaterialSpec",
    "PotentialSpec", "StepState", "Trajectory", "coupled_step", "initial_state", "run",
    "SurfChnsError", "ConfigurationError", "ContractError", "GeometryError", "MeshQualityError",
    "PhysicsError", "SolverError", "StepError",
]
