"""Run configuration with resolved defaults."""

from dataclasses import dataclass, field, fields, asdict
from typing import Optional, Tuple

from .errors import ConfigurationError
from .geometry import GeometryPreset
from .physics import MaterialSpec, PotentialSpec

LINEAR_SOLVERS = ("auto", "direct", "minres")


@dataclass(frozen=True)
class NumericsSpec:
    """Time step, coupling and discretization parameters.

    ``penalty_beta`` of ``None`` resolves to ``100 nu_max / h`` on the mesh.
    """

    dt: float = 1e-3
    t_end: float = 0.01
    omega: float = 1.0
    picard_max: int = 2
    picard_tol: float = 1e-8
    picard_strict: bool = False
    penalty_beta: Optional[float] = None
    gamma: float = 0.1
    quality_min: float = 0.2
    linear_solver: str = "auto"
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"numerics.dt must be positive, got {self.dt!r}")
        if not self.t_end >= 0:
            raise ConfigurationError(f"numerics.t_end must be non-negative, got {self.t_end!r}")
        if not self.omega >= 0:
            raise ConfigurationError(f"numerics.omega must be non-negative, got {self.omega!r}")
        if int(self.picard_max) != self.picard_max or self.picard_max < 1:
            raise ConfigurationError(f"numerics.picard_max must be a positive integer, got {self.picard_max!r}")
        if not self.picard_tol > 0:
            raise ConfigurationError("numerics.picard_tol must be positive")
        if self.penalty_beta is not None and not self.penalty_beta >= 0:
            raise ConfigurationError("numerics.penalty_beta must be non-negative")
        if not self.gamma >= 0:
            raise ConfigurationError("numerics.gamma must be non-negative")
        if not 0 < self.quality_min < 1:
            raise ConfigurationError("numerics.quality_min must lie in (0, 1)")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ConfigurationError(f"numerics.linear_solver must be one of {LINEAR_SOLVERS}")
        if not self.solver_tol > 0:
            raise ConfigurationError("numerics.solver_tol must be positive")


@dataclass(frozen=True)
class InitialSpec:
    """Initial phase field and velocity as expressions in ``x, y, z, r``.

    ``v0`` lists the three Cartesian components; the field is projected
    tangentially and then onto weakly divergence-free fields.
    """

    phi0: str = "0"
    v0: Tuple[str, str, str] = ("0", "0", "0")
    delta0: float = 0.1
    monitor_separation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "v0", tuple(self.v0))
        if len(self.v0) != 3:
            raise ConfigurationError("initial.v0 needs exactly three component expressions")
        if not 0 < self.delta0 < 0.5:
            raise ConfigurationError(f"initial.delta0 must lie in (0, 0.5), got {self.delta0!r}")


@dataclass(frozen=True)
class OutputSpec:
    cadence: int = 1
    write_vtk: bool = True
    write_csv: bool = True

    def __post_init__(self):
        if int(self.cadence) != self.cadence or self.cadence < 1:
            raise ConfigurationError(f"output.cadence must be a positive integer, got {self.cadence!r}")


@dataclass(frozen=True)
class SimConfig:
    preset: GeometryPreset = field(default_factory=GeometryPreset)
    subdivisions: int = 3
    material: MaterialSpec = field(default_factory=MaterialSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    numerics: NumericsSpec = field(default_factory=NumericsSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if int(self.subdivisions) != self.subdivisions or not 0 <= self.subdivisions <= 7:
            raise ConfigurationError(f"geometry.subdivisions must be an integer in [0, 7], got {self.subdivisions!r}")

    @property
    def n_steps(self):
        """Number of time steps to reach ``t_end``."""
        n = self.numerics.t_end / self.numerics.dt
        return int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else int(n)

    def replace(self, **sections):
        """Copy with whole sections or per-section overrides.

        ``cfg.replace(numerics={"dt": 1e-3})`` updates a single key.
        """
        from dataclasses import replace as _r

        kw = {}
        for name, val in sections.items():
            if isinstance(val, dict):
                kw[name] = _r(getattr(self, name), **val)
            else:
                kw[name] = val
        return _r(self, **kw)


def section_dict(obj):
    """Plain-dict view of a config section, dropping private fields."""
    return {f.name: getattr(obj, f.name) for f in fields(obj) if not f.name.startswith("_")}


__all__ = ["SimConfig", "NumericsSpec", "InitialSpec", "OutputSpec", "section_dict", "asdict"]
