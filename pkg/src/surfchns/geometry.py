"""Evolving-surface geometry: curvature data, presets and the normal flow.

A time slice of the surface is a :class:`SurfaceState`.  It carries the
vertex positions of the fixed-connectivity mesh together with everything
the finite-element assembly needs (face areas, hat-function gradients,
dual areas) and the curvature quantities n, H, the face shape operator
and K.

Nodal integrals ``sum_i a_i f_i`` use the mixed Voronoi dual areas ``a_i``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import lpmv

from . import expr as _expr
from . import mesh as _mesh
from .errors import ConfigurationError, GeometryError, MeshQualityError

logger = logging.getLogger(__name__)

PRESET_KINDS = ("stationary_sphere", "oscillating_harmonic_sphere", "custom_normal_field")

#: smallest admissible ``sum_i a_i H_i^2`` before the area constraint is declared unenforceable
CONSTRAINT_THRESHOLD = 1e-10


def real_harmonic(ell, m, points):
    """Real spherical harmonic in Legendre normalisation.

    ``P_l^|m|(cos theta) cos(m phi)`` for ``m >= 0`` and ``sin(|m| phi)`` for
    ``m < 0``, evaluated on the radial projection of ``points``.
    """
    if abs(m) > ell:
        raise ConfigurationError(f"harmonic index |m|={abs(m)} exceeds l={ell}")
    p = np.asarray(points, dtype=float)
    r = np.linalg.norm(p, axis=1)
    ct = np.clip(p[:, 2] / r, -1.0, 1.0)
    ph = np.arctan2(p[:, 1], p[:, 0])
    # drop the Condon-Shortley phase
    leg = (-1.0) ** abs(m) * lpmv(abs(m), ell, ct)
    return leg * (np.cos(m * ph) if m >= 0 else np.sin(-m * ph))


@dataclass(frozen=True)
class GeometryPreset:
    """Prescribed normal evolution of the surface.

    Parameters
    ----------
    kind : str
        ``stationary_sphere``, ``oscillating_harmonic_sphere`` or
        ``custom_normal_field``.
    radius : float
        Initial sphere radius ``R0``.
    amplitude : float
        Relative amplitude ``eps`` of the oscillation.
    frequency : float
        Angular frequency ``omega_g``.
    ell, m : int
        Harmonic indices of the oscillation mode.
    normal_field : str or callable, optional
        For ``custom_normal_field``: an expression in ``x, y, z, r, t`` or a
        callable ``f(points, t) -> (N,)``.
    """

    kind: str = "stationary_sphere"
    radius: float = 1.0
    amplitude: float = 0.05
    frequency: float = 2.0 * np.pi
    ell: int = 2
    m: int = 0
    normal_field: Optional[Union[str, Callable]] = None
    _code: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in PRESET_KINDS:
            raise ConfigurationError(f"unknown geometry preset {self.kind!r}; expected one of {PRESET_KINDS}")
        if not self.radius > 0:
            raise ConfigurationError(f"radius must be positive, got {self.radius!r}")
        if self.ell < 0 or abs(self.m) > self.ell:
            raise ConfigurationError(f"invalid harmonic indices (l, m) = ({self.ell}, {self.m})")
        if self.kind == "custom_normal_field":
            if self.normal_field is None:
                raise ConfigurationError("custom_normal_field needs a normal_field expression or callable")
            if isinstance(self.normal_field, str):
                object.__setattr__(self, "_code", _expr.compile_expression(self.normal_field))

    @property
    def is_stationary(self):
        return self.kind == "stationary_sphere" or (
            self.kind == "oscillating_harmonic_sphere" and self.amplitude == 0.0)

    def raw_normal_velocity(self, points, t):
        """Normal velocity before the inextensibility correction."""
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        if self.is_stationary:
            return np.zeros(n)
        if self.kind == "oscillating_harmonic_sphere":
            amp = self.radius * self.amplitude * self.frequency * np.cos(self.frequency * t)
            return amp * real_harmonic(self.ell, self.m, points)
        if self._code is not None:
            return _expr.evaluate(self._code, points, t)
        out = np.asarray(self.normal_field(points, t), dtype=float)
        if out.shape != (n,):
            raise ConfigurationError(f"normal_field returned shape {out.shape}, expected ({n},)")
        return out

    def ambient_velocity(self, points, t):
        """Radial extension ``raw_vn(x, t) x/|x|`` of the prescribed flow."""
        points = np.asarray(points, dtype=float)
        xhat = points / np.linalg.norm(points, axis=1, keepdims=True)
        return self.raw_normal_velocity(points, t)[:, None] * xhat

    def initial_mesh(self, subdivisions):
        return _mesh.make_icosphere(subdivisions, self.radius)

    def describe(self):
        """Parameter listing used by the ``presets`` command."""
        if self.kind == "stationary_sphere":
            return "stationary_sphere: radius R0; v_n = 0"
        if self.kind == "oscillating_harmonic_sphere":
            return ("oscillating_harmonic_sphere: radius R0, amplitude eps, frequency omega_g, harmonic (l, m); "
                    "raw v_n = R0 eps omega_g cos(omega_g t) Y_lm(x/|x|)")
        return "custom_normal_field: radius R0, normal_field expression in x, y, z, r, t"


@dataclass(frozen=True, eq=False)
class SurfaceState:
    """Geometry of one time slice.

    Attributes
    ----------
    mesh : TriMesh
    t : float
    positions : (N, 3)
    normal : (N, 3)
        Unit outward vertex normals.
    mean_curv : (N,)
        Sum of principal curvatures, positive on spheres.
    weingarten : (F, 3, 3)
        Symmetric tangential shape operator per face.
    gauss_curv : (N,)
    v_n : (N,)
        Normal velocity after the inextensibility correction.
    face_area, face_normal, grads, dual_area
        Assembly data, see :func:`surfchns.mesh.barycentric_gradients`.
    h : float
        Mean edge length.
    """

    mesh: _mesh.TriMesh
    t: float
    positions: np.ndarray
    normal: np.ndarray
    mean_curv: np.ndarray
    weingarten: np.ndarray
    gauss_curv: np.ndarray
    v_n: np.ndarray
    face_area: np.ndarray
    face_normal: np.ndarray
    grads: np.ndarray
    dual_area: np.ndarray
    h: float

    @property
    def n_vertices(self):
        return self.positions.shape[0]

    @property
    def faces(self):
        return self.mesh.faces

    @property
    def projector(self):
        """Per-vertex tangential projector ``I - n n^T``, shape (N, 3, 3)."""
        return np.eye(3)[None] - self.normal[:, :, None] * self.normal[:, None, :]

    @property
    def area(self):
        return float(self.face_area.sum())

    def integrate(self, values):
        """Nodal quadrature ``sum_i a_i f_i``."""
        return float(self.dual_area @ np.asarray(values, dtype=float))

    def with_vn(self, v_n):
        """Copy of this slice with a different normal velocity."""
        return _replace(self, v_n=np.asarray(v_n, dtype=float))


def _replace(state, **kw):
    from dataclasses import replace
    return replace(state, **kw)


def _curvatures(mesh, pos):
    faces = mesh.faces
    n = mesh.n_vertices
    grads, area, fn = _mesh.barycentric_gradients(pos, faces)
    dual = _mesh.mixed_vertex_areas(pos, faces, n)
    normal = _mesh.vertex_normals(pos, faces, n)
    stiff = _mesh.stiffness_matrix(pos, faces, n)
    hvec = stiff @ pos
    mean_curv = np.einsum("ij,ij->i", hvec, normal) / dual
    return grads, area, fn, dual, normal, mean_curv


def _weingarten(faces, normal, grads, fn):
    g = np.einsum("fki,fkj->fij", normal[faces], grads)
    g = 0.5 * (g + np.swapaxes(g, 1, 2))
    pf = np.eye(3)[None] - fn[:, :, None] * fn[:, None, :]
    return pf @ g @ pf


def enforce_inextensibility(state, raw_vn):
    """Remove the ``H`` component of a normal velocity.

    Parameters
    ----------
    state : SurfaceState
    raw_vn : (N,) array

    Returns
    -------
    ndarray
        ``raw_vn - c H`` with ``c = sum a H raw / sum a H^2`` so that the
        discrete ``integral of H v_n`` vanishes.
    """
    raw = np.asarray(raw_vn, dtype=float)
    h = state.mean_curv
    w = state.dual_area * h
    denom = float(w @ h)
    if not denom > CONSTRAINT_THRESHOLD:
        raise GeometryError(f"area constraint not enforceable: integral of H^2 = {denom:.3e}")
    return raw - (float(w @ raw) / denom) * h


def compute_surface_state(mesh, positions=None, t=0.0, preset=None, raw_vn=None):
    """Assemble the geometric data of a time slice.

    Parameters
    ----------
    mesh : TriMesh
    positions : (N, 3) array, optional
        Defaults to the reference vertices.
    t : float
    preset : GeometryPreset, optional
        Supplies the raw normal velocity at time ``t``.
    raw_vn : (N,) array, optional
        Overrides the preset velocity.  Zero when neither is given.

    Returns
    -------
    SurfaceState
    """
    pos = mesh.vertices if positions is None else np.asarray(positions, dtype=float)
    if pos.shape != mesh.vertices.shape:
        raise GeometryError(f"positions shape {pos.shape} does not match mesh {mesh.vertices.shape}")
    if not np.all(np.isfinite(pos)):
        raise GeometryError("non-finite vertex positions")
    grads, area, fn, dual, normal, mean_curv = _curvatures(mesh, pos)
    gauss = _mesh.angle_defects(pos, mesh.faces, mesh.n_vertices) / dual
    wein = _weingarten(mesh.faces, normal, grads, fn)
    state = SurfaceState(
        mesh=mesh, t=float(t), positions=pos, normal=normal, mean_curv=mean_curv,
        weingarten=wein, gauss_curv=gauss, v_n=np.zeros(mesh.n_vertices),
        face_area=area, face_normal=fn, grads=grads, dual_area=dual,
        h=_mesh.mean_edge_length(pos, mesh.edges),
    )
    if raw_vn is None and preset is not None:
        raw_vn = preset.raw_normal_velocity(pos, t)
    if raw_vn is not None:
        raw = np.asarray(raw_vn, dtype=float)
        if np.any(raw):
            state = state.with_vn(enforce_inextensibility(state, raw))
    return state


def _stage_velocity(mesh, pos, t, preset):
    raw = preset.raw_normal_velocity(pos, t)
    if not np.any(raw):
        return np.zeros_like(pos)
    faces, n = mesh.faces, mesh.n_vertices
    dual = _mesh.mixed_vertex_areas(pos, faces, n)
    normal = _mesh.vertex_normals(pos, faces, n)
    h = np.einsum("ij,ij->i", _mesh.stiffness_matrix(pos, faces, n) @ pos, normal) / dual
    w = dual * h
    denom = float(w @ h)
    if not denom > CONSTRAINT_THRESHOLD:
        raise GeometryError(f"area constraint not enforceable: integral of H^2 = {denom:.3e}")
    vn = raw - (float(w @ raw) / denom) * h
    return vn[:, None] * normal


def check_quality(mesh, pos, threshold=0.2):
    """Raise ``MeshQualityError`` when the worst radius ratio drops below ``threshold``."""
    q = _mesh.radius_ratio(pos, mesh.faces)
    worst = int(np.argmin(q))
    if not q[worst] >= threshold:
        raise MeshQualityError(
            f"mesh quality {q[worst]:.3f} below {threshold} at face {worst}", face=worst)
    return float(q[worst])


def advance_positions(state, preset, dt, quality_min=0.2):
    """One classical RK4 step of ``x' = v_n n`` on all vertices.

    Normals, curvature and the corrected normal velocity are recomputed at
    every stage.

    Returns
    -------
    ndarray, shape (N, 3)
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt!r}")
    if preset.is_stationary:
        return state.positions.copy()
    mesh, x, t = state.mesh, state.positions, state.t
    k1 = _stage_velocity(mesh, x, t, preset)
    k2 = _stage_velocity(mesh, x + 0.5 * dt * k1, t + 0.5 * dt, preset)
    k3 = _stage_velocity(mesh, x + 0.5 * dt * k2, t + 0.5 * dt, preset)
    k4 = _stage_velocity(mesh, x + dt * k3, t + dt, preset)
    new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    check_quality(mesh, new, quality_min)
    return new
