"""Discrete flow-map differential and surface Piola transform.

For every face the flow map between two slices of the same connectivity is
affine, so its differential is fixed by the two edge vectors:
``D = E_t (E_0^T E_0)^{-1} E_0^T`` and ``D^- = E_0 (E_t^T E_t)^{-1} E_t^T``.
Vertex-level maps fit a quadratic map between tangent coordinates of the
two-ring neighbours in least squares; its linear part gives J, D, D^-, A and
A^{-1}, so that push and pull are exact inverses of each other on tangent
vectors.  The quadratic terms absorb curvature of the patch and keep the
linear part second-order accurate.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, GeometryError

TANGENCY_TOL = 1e-8


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def _proj(n):
    return np.eye(3) - _outer(n, n)


@dataclass(frozen=True, eq=False)
class FlowFrame:
    """Piola data between the reference slice and the current slice.

    Face arrays have a leading dimension F, vertex arrays a leading N.
    ``A = D / J + n_t n_0^T`` and ``A^{-1} = J D^- + n_0 n_t^T``.
    """

    D: np.ndarray
    Dminus: np.ndarray
    J: np.ndarray
    Jinv: np.ndarray
    A: np.ndarray
    Ainv: np.ndarray
    n0: np.ndarray
    nt: np.ndarray
    # vertex level
    Dv: np.ndarray
    Dv_minus: np.ndarray
    Jv: np.ndarray
    Av: np.ndarray
    Av_inv: np.ndarray
    n0v: np.ndarray
    ntv: np.ndarray

    @property
    def n_faces(self):
        return self.D.shape[0]


def tangent_basis(normals):
    """Orthonormal tangent frames, shape (N, 3, 2), right-handed with the normal."""
    n = np.asarray(normals, dtype=float)
    helper = np.zeros_like(n)
    idx = np.argmin(np.abs(n), axis=1)
    helper[np.arange(n.shape[0]), idx] = 1.0
    t1 = helper - np.einsum("ij,ij->i", helper, n)[:, None] * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=2)


def _face_edges(pos, faces):
    p = pos[faces]
    return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (F, 3, 2)


def _left_inverse_map(e_to, e_from):
    """``E_to (E_from^T E_from)^{-1} E_from^T`` per face."""
    gram = np.swapaxes(e_from, 1, 2) @ e_from
    det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] ** 2
    bad = np.flatnonzero(~(det > 0.0))
    if bad.size:
        raise GeometryError(f"collapsed face {bad[0]} in flow frame", face=int(bad[0]))
    return e_to @ np.linalg.solve(gram, np.swapaxes(e_from, 1, 2))


def _two_ring(mesh):
    """Padded neighbour table of the two-ring, -1 marks padding."""
    n = mesh.n_vertices
    e = mesh.edges
    adj = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                        shape=(n, n)).tocsr()
    ring = (adj + adj @ adj).tocsr()
    ring.setdiag(0)
    ring.eliminate_zeros()
    ring.sort_indices()
    count = np.diff(ring.indptr)
    table = np.full((n, count.max()), -1, dtype=np.int64)
    cols = np.arange(table.shape[1])[None, :] < count[:, None]
    table[cols] = ring.indices
    return table


def _fit_vertex_maps(mesh, pos0, pos_t, b0, bt):
    """Linear part (N, 2, 2) of a quadratic fit ``b ~ M a + Q(a, a)``.

    ``a`` and ``b`` are tangent coordinates of the two-ring offsets on the two
    slices; offsets are scaled by the local ring size for conditioning.
    """
    n = mesh.n_vertices
    nb = _two_ring(mesh)
    w = (nb >= 0).astype(float)
    idx = np.where(nb >= 0, nb, np.arange(n)[:, None])
    a = np.einsum("nia,nki->nka", b0, pos0[idx] - pos0[:, None])
    b = np.einsum("nia,nki->nka", bt, pos_t[idx] - pos_t[:, None])
    h = np.sqrt(np.einsum("nka,nka->n", a, a) / w.sum(axis=1))
    a = a / h[:, None, None]
    x = np.stack([a[..., 0], a[..., 1], a[..., 0] ** 2, a[..., 0] * a[..., 1], a[..., 1] ** 2], axis=-1)
    x = x * w[..., None]
    gram = np.einsum("nkp,nkq->npq", x, x)
    rhs = np.einsum("nkp,nkc->npc", x, b * w[..., None])
    coef = np.linalg.solve(gram, rhs)
    return np.swapaxes(coef[:, :2, :], 1, 2) / h[:, None, None]


def compute_flow_frame(mesh, pos0, pos_t, state0=None, state_t=None):
    """Flow-map differential and Piola matrices from ``pos0`` to ``pos_t``.

    Parameters
    ----------
    mesh : TriMesh
    pos0, pos_t : (N, 3) arrays
        Vertex positions of the two slices.
    state0, state_t : SurfaceState, optional
        Reuse their vertex normals when given.

    Returns
    -------
    FlowFrame
    """
    from . import mesh as _mesh

    faces = mesh.faces
    pos0 = np.asarray(pos0, dtype=float)
    pos_t = np.asarray(pos_t, dtype=float)
    if pos0.shape != pos_t.shape or pos0.shape != mesh.vertices.shape:
        raise GeometryError("flow frame slices do not share the mesh connectivity")
    e0 = _face_edges(pos0, faces)
    et = _face_edges(pos_t, faces)
    D = _left_inverse_map(et, e0)
    Dm = _left_inverse_map(e0, et)
    fn0 = np.cross(e0[:, :, 0], e0[:, :, 1])
    fnt = np.cross(et[:, :, 0], et[:, :, 1])
    a0 = np.linalg.norm(fn0, axis=1)
    at = np.linalg.norm(fnt, axis=1)
    bad = np.flatnonzero(~(at > 0.0))
    if bad.size:
        raise GeometryError(f"collapsed face {bad[0]} in flow frame", face=int(bad[0]))
    n0 = fn0 / a0[:, None]
    nt = fnt / at[:, None]
    J = at / a0
    Jinv = a0 / at
    A = D * Jinv[:, None, None] + _outer(nt, n0)
    Ainv = Dm * J[:, None, None] + _outer(n0, nt)

    n = mesh.n_vertices
    n0v = state0.normal if state0 is not None else _mesh.vertex_normals(pos0, faces, n)
    ntv = state_t.normal if state_t is not None else _mesh.vertex_normals(pos_t, faces, n)
    b0 = tangent_basis(n0v)
    bt = tangent_basis(ntv)
    M = _fit_vertex_maps(mesh, pos0, pos_t, b0, bt)
    Jv = np.abs(np.linalg.det(M))
    if np.any(~(Jv > 0.0)):
        raise GeometryError("vertex flow differential is singular")
    Dv = bt @ M @ np.swapaxes(b0, 1, 2)
    Dv_minus = b0 @ np.linalg.inv(M) @ np.swapaxes(bt, 1, 2)
    Av = Dv / Jv[:, None, None] + _outer(ntv, n0v)
    Av_inv = Dv_minus * Jv[:, None, None] + _outer(n0v, ntv)
    return FlowFrame(D=D, Dminus=Dm, J=J, Jinv=Jinv, A=A, Ainv=Ainv, n0=n0, nt=nt,
                     Dv=Dv, Dv_minus=Dv_minus, Jv=Jv, Av=Av, Av_inv=Av_inv, n0v=n0v, ntv=ntv)


def identity_frame(mesh, state=None):
    pos = mesh.vertices if state is None else state.positions
    return compute_flow_frame(mesh, pos, pos, state, state)


def _check_tangent(field, normals, tol, where):
    f = np.asarray(field, dtype=float)
    if f.shape != normals.shape:
        raise ContractError(f"{where}: field shape {f.shape} does not match {normals.shape}")
    scale = max(1.0, float(np.abs(f).max(initial=0.0)))
    off = np.abs(np.einsum("ij,ij->i", f, normals))
    worst = int(np.argmax(off)) if off.size else 0
    if off.size and off[worst] > tol * scale:
        raise ContractError(f"{where}: field is not tangential at vertex {worst} (|f.n| = {off[worst]:.3e})")
    return f


def piola_push(frame, field0, tol=TANGENCY_TOL):
    """Push a tangent field on the reference slice to the current slice."""
    f = _check_tangent(field0, frame.n0v, tol, "piola_push")
    return np.einsum("nij,nj->ni", frame.Av, f)


def piola_pull(frame, field_t, tol=TANGENCY_TOL):
    """Pull a tangent field on the current slice back to the reference slice."""
    f = _check_tangent(field_t, frame.ntv, tol, "piola_pull")
    return np.einsum("nij,nj->ni", frame.Av_inv, f)
