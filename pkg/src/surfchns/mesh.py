"""Triangle mesh container and per-face geometric primitives.

All routines are vectorised over faces.  Positions are passed explicitly so
that the same connectivity can be evaluated on every time slice of an
evolving surface.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, GeometryError

logger = logging.getLogger(__name__)

MAX_SUBDIVISIONS = 7


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Fixed connectivity of a closed, oriented triangulation.

    Parameters
    ----------
    vertices : ndarray, shape (N, 3)
        Reference positions on the initial surface.
    faces : ndarray, shape (F, 3)
        Vertex indices, counter-clockwise when seen from outside.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    @cached_property
    def edges(self):
        """Unique undirected edges as sorted index pairs, shape (E, 2)."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def validate(self, positions=None):
        """Check the closed 2-manifold invariants; raise ``GeometryError``."""
        f = self.faces
        if f.min() < 0 or f.max() >= self.n_vertices:
            raise GeometryError("face index out of range")
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        _, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise GeometryError("mesh is not closed: some edge is not shared by exactly two faces")
        # consistent orientation: every directed edge appears once
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        if np.any(dcounts != 1):
            raise GeometryError("inconsistent face orientation")
        pos = self.vertices if positions is None else positions
        area = face_areas(pos, f)
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise GeometryError(f"degenerate face {bad[0]} (area {area[bad[0]]:.3e})", face=int(bad[0]))
        if signed_volume(pos, f) <= 0.0:
            raise GeometryError("faces are not oriented outward")
        return True


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def make_icosphere(subdivisions=3, radius=1.0):
    """Geodesic sphere by repeated midpoint subdivision of an icosahedron.

    Parameters
    ----------
    subdivisions : int
        Number of 1-to-4 refinements, at most ``MAX_SUBDIVISIONS``.
    radius : float
        Sphere radius.

    Returns
    -------
    TriMesh
        ``10 * 4**subdivisions + 2`` vertices, all at distance ``radius``.
    """
    if int(subdivisions) != subdivisions or subdivisions < 0:
        raise ConfigurationError(f"subdivisions must be a non-negative integer, got {subdivisions!r}")
    if subdivisions > MAX_SUBDIVISIONS:
        raise ConfigurationError(
            f"subdivisions={subdivisions} exceeds the memory guard of {MAX_SUBDIVISIONS}")
    if not radius > 0:
        raise ConfigurationError(f"radius must be positive, got {radius!r}")
    v, f = _icosahedron()
    for _ in range(int(subdivisions)):
        nv = v.shape[0]
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        v = np.vstack([v, mid])
        nf = f.shape[0]
        ab = nv + inv[:nf]
        bc = nv + inv[nf:2 * nf]
        ca = nv + inv[2 * nf:]
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        f = np.concatenate([
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ])
    return TriMesh(radius * v, f)


# ---------------------------------------------------------------------------
# per-face primitives


def face_normals_unnormalized(pos, faces):
    p0, p1, p2 = pos[faces[:, 0]], pos[faces[:, 1]], pos[faces[:, 2]]
    return np.cross(p1 - p0, p2 - p0)


def face_areas(pos, faces):
    return 0.5 * np.linalg.norm(face_normals_unnormalized(pos, faces), axis=1)


def face_unit_normals(pos, faces):
    fn = face_normals_unnormalized(pos, faces)
    nrm = np.linalg.norm(fn, axis=1, keepdims=True)
    bad = np.flatnonzero(nrm[:, 0] <= 0.0)
    if bad.size:
        raise GeometryError(f"degenerate face {bad[0]}", face=int(bad[0]))
    return fn / nrm


def signed_volume(pos, faces):
    p0, p1, p2 = pos[faces[:, 0]], pos[faces[:, 1]], pos[faces[:, 2]]
    return np.einsum("ij,ij->", p0, np.cross(p1, p2)) / 6.0


def barycentric_gradients(pos, faces):
    """Tangential gradients of the three hat functions on each flat face.

    Returns
    -------
    grads : ndarray, shape (F, 3, 3)
        ``grads[f, k]`` is the gradient of the local basis function of vertex
        ``faces[f, k]``.
    areas : ndarray, shape (F,)
    normals : ndarray, shape (F, 3)
    """
    p = pos[faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl = np.linalg.norm(fn, axis=1)
    bad = np.flatnonzero(dbl <= 0.0)
    if bad.size:
        raise GeometryError(f"degenerate face {bad[0]}", face=int(bad[0]))
    n = fn / dbl[:, None]
    grads = np.empty((faces.shape[0], 3, 3))
    for k in range(3):
        opp = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grads[:, k] = np.cross(n, opp) / dbl[:, None]
    return grads, 0.5 * dbl, n


def corner_angles(pos, faces):
    """Interior angle at each corner, shape (F, 3)."""
    p = pos[faces]
    out = np.empty(faces.shape, dtype=float)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        out[:, k] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))
    return out


def mixed_vertex_areas(pos, faces, n_vertices=None):
    """Mixed Voronoi dual areas; they partition every triangle exactly."""
    if n_vertices is None:
        n_vertices = int(faces.max()) + 1
    p = pos[faces]
    area = face_areas(pos, faces)
    ang = corner_angles(pos, faces)
    cot = 1.0 / np.tan(ang)
    obtuse = ang.max(axis=1) > np.pi / 2
    out = np.zeros(n_vertices)
    for k in range(3):
        j, l = (k + 1) % 3, (k + 2) % 3
        e_kj = np.einsum("ij,ij->i", p[:, j] - p[:, k], p[:, j] - p[:, k])
        e_kl = np.einsum("ij,ij->i", p[:, l] - p[:, k], p[:, l] - p[:, k])
        vor = (e_kj * cot[:, l] + e_kl * cot[:, j]) / 8.0
        val = np.where(obtuse, np.where(ang[:, k] > np.pi / 2, area / 2, area / 4), vor)
        np.add.at(out, faces[:, k], val)
    return out


def vertex_normals(pos, faces, n_vertices=None):
    """Unit vertex normals from inverse-squared-edge weighted corner normals.

    The weights reproduce the exact normal whenever the vertex and its
    one-ring lie on a common sphere.
    """
    if n_vertices is None:
        n_vertices = int(faces.max()) + 1
    p = pos[faces]
    acc = np.zeros((n_vertices, 3))
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        w = np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b)
        np.add.at(acc, faces[:, k], np.cross(a, b) / w[:, None])
    nrm = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(nrm <= 0.0):
        raise GeometryError("vertex normal undefined (zero accumulated normal)")
    return acc / nrm


def angle_defects(pos, faces, n_vertices=None):
    if n_vertices is None:
        n_vertices = int(faces.max()) + 1
    total = np.zeros(n_vertices)
    np.add.at(total, faces.ravel(), corner_angles(pos, faces).ravel())
    return 2.0 * np.pi - total


def radius_ratio(pos, faces):
    """``2 r_in / R_circ`` per face; 1 for equilateral, 0 for degenerate."""
    p = pos[faces]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = face_areas(pos, faces)
    return 16.0 * area ** 2 / ((a + b + c) * a * b * c)


def mean_edge_length(pos, edges):
    return float(np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1).mean())


def stiffness_matrix(pos, faces, n_vertices=None, face_weight=None):
    """Cotangent stiffness ``sum_f w_f A_f grad(lam_a) . grad(lam_b)`` in CSR form."""
    import scipy.sparse as sp

    if n_vertices is None:
        n_vertices = int(faces.max()) + 1
    grads, area, _ = barycentric_gradients(pos, faces)
    w = area if face_weight is None else area * np.asarray(face_weight, dtype=float)
    local = np.einsum("fad,fbd->fab", grads, grads) * w[:, None, None]
    rows = np.repeat(faces, 3, axis=1).ravel()
    cols = np.tile(faces, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n_vertices, n_vertices))
