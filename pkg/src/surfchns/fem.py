"""P1 surface finite elements on flat triangles.

Scalar fields are arrays of shape (N,), vector fields arrays of shape (N, 3).
Vector unknowns are stored component-blocked: degree of freedom ``k*N + i``
is component ``k`` at vertex ``i`` (see :func:`flat` and :func:`unflat`).
All operators are ``scipy.sparse`` CSR matrices.

Weighted integrals use exact quadrature of products of hat functions on each
flat face, ``int lam_a lam_b lam_c = A/10, A/30, A/60`` for three, two or no
equal indices.
"""

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import pymetis
except ImportError:  # pragma: no cover - optional speed-up
    pymetis = None

from .errors import PhysicsError, SolverError

logger = logging.getLogger(__name__)

DIRECT_LIMIT = 50_000

# int lam_a lam_b lam_c / A on a triangle
_I3 = np.full((3, 3, 3), 1.0 / 60.0)
for _a in range(3):
    for _b in range(3):
        if _a == _b:
            _I3[_a, _a, :] = 1.0 / 30.0
            _I3[_a, :, _a] = 1.0 / 30.0
            _I3[:, _a, _a] = 1.0 / 30.0
for _a in range(3):
    _I3[_a, _a, _a] = 1.0 / 10.0
# int lam_a lam_b / A
_I2 = (np.ones((3, 3)) + np.eye(3)) / 12.0


def flat(v):
    """(N, 3) -> component-blocked (3N,)."""
    return np.ascontiguousarray(np.asarray(v, dtype=float).T).ravel()


def unflat(x, n=None):
    """Component-blocked (3N,) -> (N, 3)."""
    x = np.asarray(x, dtype=float)
    if n is None:
        n = x.size // 3
    return x[: 3 * n].reshape(3, n).T.copy()


_PLANS = {}
_PLAN_LIMIT = 16


def _pattern(faces, vector, n):
    if not vector:
        return np.repeat(faces, 3, axis=1).ravel(), np.tile(faces, (1, 3)).ravel(), (n, n)
    fa = faces[:, :, None, None, None]
    fb = faces[:, None, None, :, None]
    k = np.arange(3)[None, None, :, None, None]
    l = np.arange(3)[None, None, None, None, :]
    shape = (faces.shape[0], 3, 3, 3, 3)
    rows = np.broadcast_to(k * n + fa, shape).ravel()
    cols = np.broadcast_to(l * n + fb, shape).ravel()
    return rows, cols, (3 * n, 3 * n)


def _plan(faces, vector, n):
    """CSR structure and entry map for one connectivity, cached.

    The cache holds a reference to ``faces`` so the identity key stays valid.
    """
    key = (id(faces), vector, n)
    hit = _PLANS.get(key)
    if hit is not None and hit[0] is faces:
        return hit[1:]
    rows, cols, shape = _pattern(faces, vector, n)
    code = rows.astype(np.int64) * shape[1] + cols
    uniq, where = np.unique(code, return_inverse=True)
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, uniq // shape[1] + 1, 1)
    plan = (np.cumsum(indptr), (uniq % shape[1]).astype(np.int64), where.ravel(), uniq.size, shape)
    if len(_PLANS) >= _PLAN_LIMIT:
        _PLANS.pop(next(iter(_PLANS)))
    _PLANS[key] = (faces,) + plan
    return plan


def _assemble(faces, local, n, vector):
    indptr, indices, where, nnz, shape = _plan(faces, vector, n)
    data = np.bincount(where, weights=np.asarray(local, dtype=float).ravel(), minlength=nnz)
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def _scatter(faces, local, n):
    """Assemble per-face (F, 3, 3) blocks into an (n, n) CSR matrix."""
    return _assemble(faces, local, n, False)


def _scatter_vector(faces, local, n):
    """Assemble (F, 3, 3, 3, 3) blocks ``[f, a, k, b, l]`` into (3n, 3n)."""
    return _assemble(faces, local, n, True)


def _face_values(state, weight):
    """Nodal weight -> (F, 3) corner values; scalars broadcast."""
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return np.full(state.faces.shape, float(w))
    if w.shape != (state.n_vertices,):
        raise ValueError(f"weight has shape {w.shape}, expected ({state.n_vertices},)")
    return w[state.faces]


def _blockdiag3(m):
    return sp.block_diag([m, m, m], format="csr")


def assemble_mass(state, weight=1.0, arity=1, lumped=None, weight_min=None):
    """Weighted P1 mass matrix.

    Parameters
    ----------
    state : SurfaceState
    weight : float or (N,) array
        P1 weight, integrated exactly.
    arity : {1, 3}
    lumped : {None, "rowsum", "voronoi"}
        ``rowsum`` lumps the consistent matrix, ``voronoi`` uses
        ``weight_i * dual_area_i``.
    weight_min : float, optional
        When given the weight acts as a density and must stay above it.
    """
    w = np.asarray(weight, dtype=float)
    if weight_min is not None and np.any(w < weight_min):
        raise PhysicsError(f"density weight {w.min():.3e} below the admissible minimum {weight_min:.3e}")
    n = state.n_vertices
    if lumped == "voronoi":
        wv = np.broadcast_to(w, (n,)) if w.ndim == 0 else w
        m = sp.diags(wv * state.dual_area, format="csr")
    else:
        wf = _face_values(state, w)
        local = np.einsum("abc,fc->fab", _I3, wf) * state.face_area[:, None, None]
        m = _scatter(state.faces, local, n)
        if lumped == "rowsum":
            m = sp.diags(np.asarray(m.sum(axis=1)).ravel(), format="csr")
        elif lumped is not None:
            raise ValueError(f"unknown lumping {lumped!r}")
    return _blockdiag3(m) if arity == 3 else m


def assemble_stiffness(state, weight=None):
    """Weighted cotangent stiffness ``int w grad psi_i . grad psi_j``."""
    g = state.grads
    w = state.face_area if weight is None else state.face_area * _face_values(state, weight).mean(axis=1)
    local = np.einsum("fad,fbd->fab", g, g) * w[:, None, None]
    return _scatter(state.faces, local, state.n_vertices)


def _face_projectors(state):
    n = state.face_normal
    return np.eye(3)[None] - n[:, :, None] * n[:, None, :]


def assemble_deformation(state, viscosity, penalty_beta=0.0, nu_min=None):
    """Vector form ``2 int nu E_S(u):E_S(w) + beta sum_i a_i (u.n)(w.n)``.

    ``E_S`` is the symmetric part of ``P grad(u) P`` on each face.  The
    penalty is nodal (dual-area) quadrature with the vertex normals.
    """
    nu = np.asarray(viscosity, dtype=float)
    if nu_min is not None and np.any(nu < nu_min):
        raise PhysicsError(f"viscosity {nu.min():.3e} below the floor {nu_min:.3e}")
    n = state.n_vertices
    g = state.grads                   # (F, 3, 3): [f, a, d]
    p = _face_projectors(state)       # columns p_k = P e_k
    nu_f = _face_values(state, nu).mean(axis=1) * state.face_area
    pp = np.einsum("fik,fil->fkl", p, p)        # p_k . p_l
    gg = np.einsum("fad,fbd->fab", g, g)        # g_a . g_b
    pg = np.einsum("fik,fbi->fkb", p, g)        # p_k . g_b
    # 2 E(a,k):E(b,l) = (p_k.p_l)(g_a.g_b) + (p_k.g_b)(g_a.p_l)
    local = (np.einsum("fkl,fab->fakbl", pp, gg) + np.einsum("fkb,fla->fakbl", pg, pg))
    local *= nu_f[:, None, None, None, None]
    a = _scatter_vector(state.faces, local, n)
    if penalty_beta:
        a = a + penalty_matrix(state, penalty_beta)
    return a.tocsr()


def penalty_matrix(state, beta):
    """Nodal normal penalty ``beta sum_i a_i (u_i.n_i)(w_i.n_i)``."""
    n = state.n_vertices
    nn = state.normal
    blocks = []
    for k in range(3):
        row = [sp.diags(beta * state.dual_area * nn[:, k] * nn[:, l]) for l in range(3)]
        blocks.append(row)
    return sp.bmat(blocks, format="csr")


def assemble_div(state, kind="face"):
    """Divergence coupling, shape (N, 3N).

    ``face`` gives ``int psi_i div psi_j`` exactly for P1 on flat faces.
    ``ibp`` gives ``-int grad psi_i . R psi_j`` with the lumped, recovered
    nodal gradient; it is the negative transpose of the recovery operator.
    """
    n = state.n_vertices
    faces = state.faces
    if kind == "face":
        w = state.face_area / 3.0
        blocks = []
        for k in range(3):
            local = np.broadcast_to(w[:, None, None], (faces.shape[0], 3, 3)) * state.grads[:, None, :, k]
            blocks.append(_scatter(faces, local, n))
        return sp.hstack(blocks, format="csr")
    if kind == "ibp":
        g = gradient_operator(state)
        return (-(g.T @ sp.diags(np.tile(state.dual_area, 3)))).tocsr()
    raise ValueError(f"unknown divergence kind {kind!r}")


def weak_divergence(state, v, kind="face"):
    return assemble_div(state, kind) @ flat(v)


def assemble_advection(state, wind, coeff=1.0):
    """Transport operator ``C_ij = int coeff (wind . grad psi_j) psi_i``, shape (N, N)."""
    wind = np.asarray(wind, dtype=float)
    n = state.n_vertices
    faces = state.faces
    cf = _face_values(state, coeff)
    wf = wind[faces]                                          # (F, 3, 3)
    vec = np.einsum("abc,fb,fcd->fad", _I3, cf, wf) * state.face_area[:, None, None]
    local = np.einsum("fad,fjd->faj", vec, state.grads)
    return _scatter(faces, local, n)


def assemble_matrix_mass(state, face_matrix, coeff=1.0):
    """Vector form ``int coeff (G_f psi_j) . psi_i`` with a per-face matrix G_f."""
    n = state.n_vertices
    cf = _face_values(state, coeff)
    scal = np.einsum("abc,fc->fab", _I3, cf) * state.face_area[:, None, None]
    local = np.einsum("fab,fkl->fakbl", scal, np.asarray(face_matrix, dtype=float))
    return _scatter_vector(state.faces, local, n)


def load_vector(state, values, coeff=1.0):
    """Consistent load ``int coeff f psi_i`` for scalar (N,) or vector (N, 3) data."""
    v = np.asarray(values, dtype=float)
    m = assemble_mass(state, coeff)
    if v.ndim == 1:
        return m @ v
    return flat(m @ v)


def face_gradient(state, u):
    """Piecewise-constant tangential gradient of a P1 field.

    Scalar ``u`` gives (F, 3); vector ``u`` gives (F, 3, 3) with
    ``[f, i, j] = d_j u_i``.
    """
    u = np.asarray(u, dtype=float)
    uf = u[state.faces]
    if u.ndim == 1:
        return np.einsum("fa,fad->fd", uf, state.grads)
    return np.einsum("fai,faj->fij", uf, state.grads)


def gradient_operator(state, project=True):
    """Sparse (3N, N) area-weighted gradient recovery ``grad u`` at vertices."""
    n = state.n_vertices
    faces = state.faces
    wsum = np.zeros(n)
    for k in range(3):
        np.add.at(wsum, faces[:, k], state.face_area)
    blocks = []
    for d in range(3):
        local = state.face_area[:, None, None] * np.broadcast_to(
            state.grads[:, None, :, d], (faces.shape[0], 3, 3))
        blocks.append(sp.diags(1.0 / wsum) @ _scatter(faces, local, n))
    g = sp.vstack(blocks, format="csr")
    if project:
        nn = state.normal
        rows = []
        for k in range(3):
            rows.append([sp.diags((1.0 if k == l else 0.0) - nn[:, k] * nn[:, l]) for l in range(3)])
        g = sp.bmat(rows, format="csr") @ g
    return g.tocsr()


def recover_gradient(state, u, project=True):
    """Vertex gradient by area-weighted averaging of face gradients.

    Scalar input gives (N, 3); vector input gives (N, 3, 3) with
    ``[i, k, l] = d_l u_k``, projected as ``P grad(u) P`` when ``project``.
    """
    u = np.asarray(u, dtype=float)
    fg = face_gradient(state, u)
    n = state.n_vertices
    wsum = np.zeros(n)
    acc = np.zeros((n,) + fg.shape[1:])
    for k in range(3):
        np.add.at(acc, state.faces[:, k], fg * state.face_area.reshape((-1,) + (1,) * (fg.ndim - 1)))
        np.add.at(wsum, state.faces[:, k], state.face_area)
    acc /= wsum.reshape((-1,) + (1,) * (fg.ndim - 1))
    if project:
        p = state.projector
        if u.ndim == 1:
            acc = np.einsum("nij,nj->ni", p, acc)
        else:
            acc = p @ acc @ p
    return acc


def mean_zero(state, u):
    """Remove the dual-area weighted mean."""
    u = np.asarray(u, dtype=float)
    return u - state.integrate(u) / state.dual_area.sum()


ND_MIN_SIZE = 4000
_ORDERINGS = {}


def _nested_dissection(csc):
    """Cached nested-dissection permutation of the pattern of ``A + A^T``."""
    key = (csc.shape, csc.nnz, hash(csc.indptr.tobytes()), hash(csc.indices.tobytes()))
    perm = _ORDERINGS.get(key)
    if perm is None:
        g = (csc + csc.T).tocsr()
        g.setdiag(0)
        g.eliminate_zeros()
        g.sort_indices()
        if hasattr(pymetis, "CSRAdjacency"):
            perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(g.indptr, g.indices))
        else:
            perm, _ = pymetis.nested_dissection(xadj=g.indptr, adjncy=g.indices)
        perm = np.asarray(perm, dtype=np.int64)
        if len(_ORDERINGS) >= 32:
            _ORDERINGS.pop(next(iter(_ORDERINGS)))
        _ORDERINGS[key] = perm
    return perm


class _PermutedLU:
    """Solve interface of a factorization of ``A[p][:, p]``."""

    def __init__(self, lu, perm):
        self._lu = lu
        self._perm = perm
        self._inv = np.argsort(perm)
        self.shape = lu.shape

    def solve(self, rhs):
        rhs = np.asarray(rhs)
        return self._lu.solve(rhs[self._perm])[self._inv]


def factorize(op, symmetric=True):
    """Sparse LU with a fill-reducing ordering of ``A + A^T``.

    Symmetric-mode pivoting keeps the ordering intact on symmetric
    (possibly indefinite) saddle matrices; the residual is checked by the
    callers.  Large symmetric-pattern systems use a cached nested-dissection
    ordering, the rest multiple minimum degree.
    """
    csc = sp.csc_matrix(op)
    csc.sum_duplicates()
    if not symmetric:
        return spla.splu(csc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1.0)
    opts = dict(SymmetricMode=True)
    if pymetis is None or csc.shape[0] < ND_MIN_SIZE:
        return spla.splu(csc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3, options=opts)
    perm = _nested_dissection(csc)
    lu = spla.splu(csc[perm][:, perm].tocsc(), permc_spec="NATURAL", diag_pivot_thresh=1e-3, options=opts)
    return _PermutedLU(lu, perm)


def _bordered(op, c):
    c = np.asarray(c, dtype=float).reshape(-1, 1)
    return sp.bmat([[op, sp.csr_matrix(c)], [sp.csr_matrix(c.T), None]], format="csc")


def solve_linear(op, rhs, method="direct", tol=1e-10, max_iter=None, nullspace=None,
                 preconditioner="diagonal"):
    """Solve ``op x = rhs``.

    Parameters
    ----------
    op : sparse matrix
    rhs : array
    method : {"direct", "cg", "minres", "auto"}
        ``auto`` picks ``direct`` up to ``DIRECT_LIMIT`` unknowns, MINRES above.
    tol : float
        Relative residual tolerance.
    nullspace : array, optional
        Weight vector ``c`` of a one-dimensional kernel.  The system is
        solved with ``c . x = 0`` imposed and ``rhs`` projected onto the
        range when necessary.

    Returns
    -------
    ndarray

    Raises
    ------
    SolverError
        Breakdown or tolerance not reached; carries the residual history.
    """
    b = np.asarray(rhs, dtype=float)
    n = op.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "minres"
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)
    history = []
    if method == "direct":
        if nullspace is not None:
            big = _bordered(op, nullspace)
            x = factorize(big).solve(np.append(b, 0.0))[:n]
        else:
            x = factorize(op).solve(b)
    elif method in ("cg", "minres"):
        c = None
        if nullspace is not None:
            c = np.asarray(nullspace, dtype=float)
            ones = np.ones(n)
            # project the data onto the range of a symmetric op with kernel 1
            b = b - ones * (ones @ b) / n
        m = None
        if preconditioner == "diagonal":
            d = op.diagonal()
            d = np.where(np.abs(d) > 0, np.abs(d), 1.0)
            m = sp.diags(1.0 / d)
        maxit = max_iter or 20 * n

        def cb(xk):
            history.append(float(np.linalg.norm(op @ xk - b)) / bnorm)

        solver = spla.cg if method == "cg" else spla.minres
        kw = dict(rtol=tol) if method == "cg" else dict(rtol=tol)
        x, info = solver(op, b, M=m, maxiter=maxit, callback=cb, **kw)
        if info != 0:
            raise SolverError(f"{method} did not converge (info={info})", history)
        if c is not None:
            x = x - (c @ x) / c.sum()
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(op @ x - b)) / bnorm
    history.append(res)
    if not np.all(np.isfinite(x)) or res > max(tol, 1e-8) * 10:
        raise SolverError(f"linear solve residual {res:.3e} above tolerance {tol:.1e}", history)
    return x
