"""Harmonic lift, Leray projection and the pulled-back gradient.

The lift solves ``-lap Pi = H v_n`` with a mean-zero gauge and returns the
recovered gradient ``u_hat = P grad Pi``.  The projection splits a tangent
field into a part that is weakly divergence-free and a recovered gradient,
orthogonally in the lumped L2 inner product of the current slice.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import PhysicsError

logger = logging.getLogger(__name__)

COMPAT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LiftResult:
    Pi: np.ndarray
    u_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    div_free: np.ndarray
    potential: np.ndarray


def harmonic_lift(state, tol=1e-12, stiffness=None):
    """Gradient field carrying the area-change part of the velocity.

    Parameters
    ----------
    state : SurfaceState
        Supplies ``H`` and the corrected normal velocity ``v_n``.
    stiffness : sparse matrix, optional
        Reuse an already assembled stiffness matrix.

    Returns
    -------
    LiftResult
    """
    n = state.n_vertices
    b = state.dual_area * state.mean_curv * state.v_n
    scale = float(np.abs(b).sum())
    if scale == 0.0:
        return LiftResult(np.zeros(n), np.zeros((n, 3)))
    total = float(b.sum())
    if abs(total) > COMPAT_TOL * max(scale, 1.0):
        raise PhysicsError(f"lift data incompatible: integral of H v_n = {total:.3e}")
    b = b - total * state.dual_area / state.dual_area.sum()
    k = fem.assemble_stiffness(state) if stiffness is None else stiffness
    pi = fem.solve_linear(k, b, tol=max(tol, 1e-12), nullspace=state.dual_area)
    pi = fem.mean_zero(state, pi)
    return LiftResult(pi, fem.recover_gradient(state, pi))


class LerayProjector:
    """Reusable projection onto weakly divergence-free fields of one slice.

    With ``G`` the tangentially projected gradient recovery and ``M`` the
    lumped mass, ``p`` solves ``G^T M G p = G^T M v`` and the divergence-free
    part is ``v - G p``.  The map is an M-orthogonal projection, so it is
    idempotent and ``G^T M (v - G p) = 0`` holds to solver precision.
    """

    def __init__(self, state):
        self.state = state
        self.G = fem.gradient_operator(state, project=True)
        self.M = sp.diags(np.tile(state.dual_area, 3))
        self.L = (self.G.T @ self.M @ self.G).tocsr()
        c = state.dual_area.reshape(-1, 1)
        big = sp.bmat([[self.L, sp.csr_matrix(c)], [sp.csr_matrix(c.T), None]], format="csc")
        self._lu = fem.factorize(big)

    def weak_divergence(self, v):
        """``-int grad psi_i . v`` in the recovered sense, shape (N,)."""
        return -(self.G.T @ (self.M @ fem.flat(v)))

    def __call__(self, v):
        n = self.state.n_vertices
        v = np.asarray(v, dtype=float)
        rhs = self.G.T @ (self.M @ fem.flat(v))
        p = self._lu.solve(np.append(rhs, 0.0))[:n]
        p = fem.mean_zero(self.state, p)
        div_free = v - fem.unflat(self.G @ p, n)
        return ProjectionResult(div_free, p)


def helmholtz_project(field, state, projector=None):
    """Split a tangent field into divergence-free part and gradient potential."""
    proj = LerayProjector(state) if projector is None else projector
    return proj(field)


def pullback_gradient(p0, frame, state0):
    """Gradient of a pushed-forward scalar, pulled back to the reference slice.

    ``A^{-1} D^{-T} grad_0 p`` at every vertex, with ``grad_0`` the
    recovered tangential gradient on the reference slice.
    """
    g0 = fem.recover_gradient(state0, p0)
    m = frame.Av_inv @ np.swapaxes(frame.Dv_minus, 1, 2)
    return np.einsum("nij,nj->ni", m, g0)
