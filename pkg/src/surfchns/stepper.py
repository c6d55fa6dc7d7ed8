"""Time stepping of the coupled phase-field / surface-flow system.

One step of :func:`coupled_step`

1. advances the surface by RK4 of the normal flow,
2. transports the velocity by the Piola map and carries the phase field
   over nodally,
3. computes the harmonic lift ``u_hat`` of the area-change velocity,
4. runs Picard sweeps of a Cahn-Hilliard solve followed by a
   variable-viscosity Stokes solve for the divergence-free velocity ``V``.

The Cahn-Hilliard step is written in conservative form,
``M_{n+1} phi_{n+1} - M_n phi_n - dt C^T phi~ + dt K mu = 0``, with the
nodal mass ``M = diag(dual_area)``; this conserves ``sum a_i phi_i`` exactly
on a moving mesh.
"""

import logging
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from . import expr as _expr
from .config import SimConfig
from .diagnostics import make_row
from .errors import (ConfigurationError, ContractError, PhysicsError, SolverError,
                     StepError, SurfChnsError)
from .geometry import advance_positions, compute_surface_state
from .physics import (chemical_potential, density, flux_Jrho, korteweg_rhs, psi_concave,
                      psi_convex, viscosity)
from .piola import compute_flow_frame, piola_push, tangent_basis
from .projection import harmonic_lift

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StepState:
    """Unknowns on one time slice.

    ``V`` is the weakly divergence-free velocity, ``u_hat`` the harmonic
    lift, ``v_total = V + u_hat`` the tangential material velocity.
    """

    surface: object
    V: np.ndarray
    u_hat: np.ndarray
    pi: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    Pi: np.ndarray
    step: int = 0
    picard_iters: int = 0
    picard_update: float = 0.0
    separation_event: bool = False
    diag: object = None

    @property
    def v_total(self):
        return self.V + self.u_hat

    @property
    def t(self):
        return self.surface.t


def _tangential(surface, v):
    n = surface.normal
    v = np.asarray(v, dtype=float)
    return v - np.einsum("ij,ij->i", v, n)[:, None] * n


def penalty_beta(config, surface):
    b = config.numerics.penalty_beta
    return 100.0 * config.material.nu_max / surface.h if b is None else float(b)


# ---------------------------------------------------------------------------
# initial data


def _tangent_frame_matrix(surface):
    """Sparse (3N, 2N) map from vertex tangent coordinates to blocked vectors."""
    n = surface.n_vertices
    tb = tangent_basis(surface.normal)                     # (N, 3, 2)
    idx = np.arange(n)
    rows = (np.arange(3)[:, None, None] * n + idx[None, None, :]).repeat(2, axis=1)
    cols = (np.arange(2)[None, :, None] * n + idx[None, None, :]).repeat(3, axis=0)
    vals = np.transpose(tb, (1, 2, 0))
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 2 * n))


def project_initial_velocity(surface, v, gamma=0.1):
    """Lumped-L2 projection onto the constraint used by the Stokes solve.

    The stabilized saddle system is solved in vertex tangent-plane
    coordinates, so the result is exactly tangential and satisfies the
    constraint row to solver precision.  Killing fields of the sphere are
    reproduced exactly.

    Returns
    -------
    V : (N, 3)
    p : (N,)
        Multiplier of the constraint row, mean-zero.
    """
    n = surface.n_vertices
    T = _tangent_frame_matrix(surface)
    m = fem.assemble_mass(surface, 1.0, arity=3, lumped="voronoi")
    a = (T.T @ m @ T).tocsr()
    c, p = _saddle_solve(surface, a, T.T @ (m @ fem.flat(v)), gamma, basis=T)
    return fem.unflat(T @ c, n), p


def initial_state(config, mesh=None):
    """Evaluate and validate the initial data of a run."""
    preset = config.preset
    if mesh is None:
        mesh = preset.initial_mesh(config.subdivisions)
    surface = compute_surface_state(mesh, mesh.vertices, 0.0, preset)
    x = surface.positions
    phi = _expr.evaluate(config.initial.phi0, x, 0.0)
    ini = config.initial
    if ini.monitor_separation and np.max(np.abs(phi)) > 1.0 - 2.0 * ini.delta0 + 1e-12:
        raise ConfigurationError(
            f"initial.phi0 reaches |phi| = {np.max(np.abs(phi)):.4f} > 1 - 2 delta0 = {1 - 2 * ini.delta0:.4f}")
    v0 = np.stack([_expr.evaluate(c, x, 0.0) for c in ini.v0], axis=1)
    v0 = _tangential(surface, v0)
    n = mesh.n_vertices
    if np.any(v0):
        V, pi = project_initial_velocity(surface, v0, config.numerics.gamma)
    else:
        V, pi = np.zeros_like(v0), np.zeros(n)
    lift = harmonic_lift(surface)
    mu = chemical_potential(surface, phi, config.potential)
    return StepState(surface=surface, V=V, u_hat=lift.u_hat, pi=pi, phi=phi, mu=mu, Pi=lift.Pi)


# ---------------------------------------------------------------------------
# transport


def transport_step(prev, frame):
    """Carry the unknowns of the previous slice onto the new one.

    Returns
    -------
    V_tilde : (N, 3)
        Piola pushforward of the tangential part of ``V``.
    phi_tilde : (N,)
        Nodal carryover of ``phi``.
    """
    V = _tangential(prev.surface, prev.V)
    return piola_push(frame, V), prev.phi.copy()


# ---------------------------------------------------------------------------
# Cahn-Hilliard


def cahn_hilliard_system(surface, phi_tilde, dt, spec, stiffness=None):
    """Factorized Cahn-Hilliard matrix and the explicit potential terms.

    The matrix depends on ``phi_tilde`` only, so Picard sweeps of one step
    share it.

    Returns
    -------
    (SuperLU, ndarray)
    """
    if not dt > 0:
        raise ContractError(f"dt must be positive, got {dt!r}")
    phi_t = np.asarray(phi_tilde, dtype=float)
    m1 = surface.dual_area
    k = fem.assemble_stiffness(surface) if stiffness is None else stiffness
    d2 = psi_convex(spec, phi_t, 2)
    lin = psi_convex(spec, phi_t, 1) - d2 * phi_t + psi_concave(spec, phi_t, 1)
    M1 = sp.diags(m1)
    # unknowns ordered (mu, phi) with both rows negated: a symmetric system
    big = sp.bmat([[-dt * k, -M1], [-M1, k + sp.diags(m1 * d2)]], format="csc")
    try:
        lu = fem.factorize(big)
    except RuntimeError as exc:
        raise StepError(f"Cahn-Hilliard factorization failed: {exc}") from None
    return lu, lin


def step_cahn_hilliard(surface, v_total, phi_tilde, dt, spec, prev_dual_area=None,
                       stiffness=None, events=None, system=None):
    """One linearly implicit Cahn-Hilliard step.

    The convex part of the potential is linearized about ``phi_tilde`` by one
    Newton step, the concave part is explicit, and advection is explicit in
    conservative form.

    Parameters
    ----------
    system : tuple, optional
        Output of :func:`cahn_hilliard_system` for the same inputs.

    Returns
    -------
    phi, mu : (N,) arrays
    """
    if not dt > 0:
        raise ContractError(f"dt must be positive, got {dt!r}")
    n = surface.n_vertices
    phi_t = np.asarray(phi_tilde, dtype=float)
    m1 = surface.dual_area
    m0 = m1 if prev_dual_area is None else np.asarray(prev_dual_area, dtype=float)
    lu, lin = cahn_hilliard_system(surface, phi_t, dt, spec, stiffness) if system is None else system
    rhs1 = m0 * phi_t
    v = np.asarray(v_total, dtype=float)
    if np.any(v):
        c = fem.assemble_advection(surface, v)
        rhs1 = rhs1 + dt * (c.T @ phi_t)
    sol = lu.solve(np.concatenate([-rhs1, -m1 * lin]))
    if not np.all(np.isfinite(sol)):
        raise StepError("Cahn-Hilliard solve produced non-finite values")
    mu, phi = sol[:n], sol[n:]
    if spec.kind == "regularized_log":
        out = np.abs(phi) > 1.0
        if np.any(out):
            logger.warning("phase field left [-1, 1] at %d vertices; clamped", int(out.sum()))
            if events is not None:
                events["phi_clamp"] += int(out.sum())
            phi = np.clip(phi, -1.0, 1.0)
    return phi, mu


# ---------------------------------------------------------------------------
# Stokes


def _saddle_solve(surface, A, rhs_u, gamma, method="auto", tol=1e-10, stiffness=None, basis=None):
    """Solve the stabilized saddle system with a mean-zero pressure.

    ``basis`` maps the velocity unknowns to blocked vertex vectors when they
    are not the blocked vectors themselves.
    """
    n = surface.n_vertices
    B = -fem.assemble_div(surface, "face")
    if basis is not None:
        B = B @ basis
    k = fem.assemble_stiffness(surface) if stiffness is None else stiffness
    S = (gamma * surface.h ** 2) * k
    c = sp.csr_matrix(surface.dual_area.reshape(-1, 1))
    big = sp.bmat([[A, B.T, None], [B, -S, c], [None, c.T, None]], format="csc")
    rhs = np.concatenate([rhs_u, np.zeros(n + 1)])
    size = big.shape[0]
    if method == "auto":
        method = "direct" if size <= fem.DIRECT_LIMIT else "minres"
    if method == "direct":
        try:
            sol = fem.factorize(big).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"saddle factorization failed: {exc}") from None
        bn = float(np.linalg.norm(rhs)) or 1.0
        res = float(np.linalg.norm(big @ sol - rhs)) / bn
        if not np.all(np.isfinite(sol)) or res > 1e-6:
            raise SolverError(f"saddle solve residual {res:.3e}", [res])
    else:
        sol = fem.solve_linear(big.tocsr(), rhs, method="minres", tol=tol)
    m = A.shape[0]
    return sol[:m], sol[m: m + n]


def _lift_forcing(surface, nu, u_hat, rho):
    """Weak form of ``2 P div(nu v_n H) + rho/2 grad(v_n^2)``, flat (3N,)."""
    n = surface.n_vertices
    faces = surface.faces
    vn = surface.v_n
    out = np.zeros((3, n))
    if not np.any(vn):
        return out.ravel()
    # int_f nu v_n, exact for P1 factors
    nv = np.einsum("ab,fa,fb->f", fem._I2, nu[faces], vn[faces]) * surface.face_area
    hg = np.einsum("fkl,fal->fak", surface.weingarten, surface.grads)       # (F, a, k)
    term = -2.0 * nv[:, None, None] * hg
    # int_f rho psi_a times the face gradient of v_n^2
    g2 = fem.face_gradient(surface, vn * vn)
    rho_a = np.einsum("ab,fb->fa", fem._I2, rho[faces]) * surface.face_area[:, None]
    term = term + 0.5 * rho_a[:, :, None] * g2[:, None, :]
    for k in range(3):
        np.add.at(out[k], faces, term[:, :, k])
    return out.ravel()


def stokes_operator(surface, phi, material, dt=None, omega=0.0, beta=0.0, events=None):
    """``rho M / dt + omega M + A_def`` with viscosity ``nu(phi)``."""
    rho = density(material, phi)
    nu = viscosity(material, phi, events)
    a = fem.assemble_deformation(surface, nu, beta, nu_min=material.nu_min)
    if dt is not None:
        a = a + fem.assemble_mass(surface, rho, arity=3, weight_min=1e-12) / dt
    if omega:
        a = a + omega * fem.assemble_mass(surface, 1.0, arity=3)
    return a.tocsr(), rho, nu


def step_stokes(surface, phi_next, mu_next, V_tilde, u_hat, dt, config, V_ref=None,
                u_hat_ref=None, V_adv=None, stiffness=None, events=None):
    """Linearized momentum solve for the divergence-free velocity.

    Parameters
    ----------
    V_tilde : (N, 3)
        Piola-transported velocity of the previous slice.
    V_ref, u_hat_ref : (N, 3), optional
        Previous-slice fields projected onto the new tangent planes, used in
        the normal time derivative.  Default to ``V_tilde`` and ``u_hat``.
    V_adv : (N, 3), optional
        Lagged velocity in the advecting wind.  Defaults to ``V_tilde``.

    Returns
    -------
    V, pi : arrays of shape (N, 3) and (N,)
    """
    mat = config.material
    num = config.numerics
    n = surface.n_vertices
    beta = penalty_beta(config, surface)
    V_ref = V_tilde if V_ref is None else V_ref
    u_hat_ref = u_hat if u_hat_ref is None else u_hat_ref
    V_adv = V_tilde if V_adv is None else V_adv
    A, rho, nu = stokes_operator(surface, phi_next, mat, dt=dt, beta=beta, events=events)
    M_rho = fem.assemble_mass(surface, rho, arity=3)
    J = flux_Jrho(surface, mu_next, mat)
    wind = rho[:, None] * (V_adv + u_hat) + J
    blk = lambda m: sp.block_diag([m, m, m], format="csr")  # noqa: E731
    A = A + blk(fem.assemble_advection(surface, wind))
    vn = surface.v_n
    has_vn = bool(np.any(vn))
    has_lift = bool(np.any(u_hat))
    if has_vn:
        m_curv = fem.assemble_matrix_mass(surface, surface.weingarten, rho * vn)
        A = A + m_curv
    if has_lift:
        gu = fem.face_gradient(surface, u_hat)
        pf = np.eye(3)[None] - surface.face_normal[:, :, None] * surface.face_normal[:, None, :]
        A = A + fem.assemble_matrix_mass(surface, pf @ gu @ pf, rho)

    rhs = (M_rho @ fem.flat(V_ref)) / dt + korteweg_rhs(surface, phi_next)
    if has_vn:
        rhs -= fem.assemble_matrix_mass(surface, surface.weingarten, vn) @ fem.flat(J)
        rhs += _lift_forcing(surface, nu, u_hat, rho)
    if has_lift:
        uf = fem.flat(u_hat)
        rhs -= (M_rho @ (uf - fem.flat(u_hat_ref))) / dt
        rhs -= blk(fem.assemble_advection(surface, rho[:, None] * u_hat + J)) @ uf
        if has_vn:
            rhs -= m_curv @ uf
        rhs -= fem.assemble_deformation(surface, nu, 0.0) @ uf
    u, pi = _saddle_solve(surface, A.tocsr(), rhs, num.gamma, num.linear_solver, num.solver_tol, stiffness)
    return fem.unflat(u, n), pi


def stokes_resolvent(surface, phi, f, omega, material, beta=None, gamma=0.1, method="auto"):
    """Solve ``2 int nu E(u):E(w) + omega int u.w = int f.w`` on div-free fields.

    Returns
    -------
    ndarray, shape (N, 3)
    """
    if not omega > 0:
        raise ContractError(f"omega must be positive, got {omega!r}")
    if beta is None:
        beta = 100.0 * material.nu_max / surface.h
    A, _, _ = stokes_operator(surface, phi, material, omega=omega, beta=beta)
    rhs = fem.assemble_mass(surface, 1.0, arity=3) @ fem.flat(f)
    u, _ = _saddle_solve(surface, A, rhs, gamma, method)
    return fem.unflat(u, surface.n_vertices)


# ---------------------------------------------------------------------------
# coupling


def _rel_update(new, old):
    num = sum(float(np.linalg.norm(a - b)) for a, b in zip(new, old))
    den = sum(float(np.linalg.norm(a)) for a in new)
    return num / den if den > 0 else num


def coupled_step(prev, config, events=None, mesh=None):
    """Advance a :class:`StepState` by one time step.

    Raises
    ------
    StepError
        Linear solver failure, or Picard non-convergence with
        ``numerics.picard_strict``.
    MeshQualityError
        The surface advance degraded the triangulation below the threshold.
    """
    t0 = time.perf_counter()
    events = Counter() if events is None else events
    num = config.numerics
    dt = num.dt
    preset = config.preset
    s0 = prev.surface
    mesh = s0.mesh if mesh is None else mesh
    t_new = s0.t + dt
    if preset.is_stationary:
        s1 = replace(s0, t=t_new)
    else:
        pos = advance_positions(s0, preset, dt, num.quality_min)
        s1 = compute_surface_state(mesh, pos, t_new, preset)
    frame = compute_flow_frame(mesh, s0.positions, s1.positions, s0, s1)
    V_tilde, phi_tilde = transport_step(prev, frame)
    V_ref = _tangential(s1, prev.V)
    u_ref = _tangential(s1, prev.u_hat)
    k = fem.assemble_stiffness(s1)
    lift = harmonic_lift(s1, stiffness=k)

    V_k, phi_k = V_tilde, phi_tilde
    iters, upd = 0, np.inf
    try:
        ch = cahn_hilliard_system(s1, phi_tilde, dt, config.potential, k)
        for iters in range(1, num.picard_max + 1):
            phi_n, mu_n = step_cahn_hilliard(
                s1, V_k + lift.u_hat, phi_tilde, dt, config.potential,
                prev_dual_area=s0.dual_area, stiffness=k, events=events, system=ch)
            V_n, pi_n = step_stokes(
                s1, phi_n, mu_n, V_tilde, lift.u_hat, dt, config, V_ref=V_ref,
                u_hat_ref=u_ref, V_adv=V_k, stiffness=k, events=events)
            upd = _rel_update((V_n, phi_n), (V_k, phi_k))
            V_k, phi_k = V_n, phi_n
            if upd < num.picard_tol:
                break
    except (SolverError, PhysicsError) as exc:
        raise StepError(f"step {prev.step + 1} at t={t_new:.6g}: {exc}") from exc
    if upd >= num.picard_tol:
        events["picard_unconverged"] += 1
        if num.picard_strict and upd > 10 * num.picard_tol:
            raise StepError(f"Picard iteration stalled at relative update {upd:.3e} after {iters} sweeps")

    sep = False
    ini = config.initial
    if ini.monitor_separation and np.max(np.abs(phi_k)) > 1.0 - ini.delta0:
        sep = True
        events["separation"] += 1
        logger.warning("separation margin violated at t=%.6g: max|phi| = %.6f",
                       t_new, float(np.max(np.abs(phi_k))))
    state = StepState(surface=s1, V=V_k, u_hat=lift.u_hat, pi=pi_n, phi=phi_k, mu=mu_n, Pi=lift.Pi,
                      step=prev.step + 1, picard_iters=iters, picard_update=float(upd),
                      separation_event=sep)
    e_prev = prev.diag.energy if prev.diag is not None else np.nan
    row = make_row(state, config.potential, config.material, iters, time.perf_counter() - t0,
                   gamma=num.gamma)
    row = replace(row, energy_balance=row.energy - e_prev)
    return replace(state, diag=row)


@dataclass
class Trajectory:
    """Output of :func:`run`: emitted states, all diagnostics rows, events."""

    states: List[StepState] = field(default_factory=list)
    rows: list = field(default_factory=list)
    events: Counter = field(default_factory=Counter)
    abort: Optional[dict] = None

    @property
    def final(self):
        return self.states[-1] if self.states else None


def run(config, on_output: Optional[Callable] = None, keep_states=True):
    """Integrate from ``t = 0`` to ``t_end``.

    Parameters
    ----------
    config : SimConfig
    on_output : callable, optional
        Called as ``on_output(state)`` at every output step (cadence
        ``output.cadence``), including the initial state.
    keep_states : bool
        Keep emitted states in the returned trajectory.

    Returns
    -------
    Trajectory
        On a step failure ``abort`` holds a machine-readable record and the
        states up to the failure are retained.
    """
    if not isinstance(config, SimConfig):
        raise ConfigurationError("run expects a SimConfig")
    traj = Trajectory()
    state = initial_state(config)
    state = replace(state, diag=make_row(state, config.potential, config.material, 0, 0.0,
                                         gamma=config.numerics.gamma))
    cadence = config.output.cadence

    def emit(s):
        traj.rows.append(s.diag)
        if keep_states:
            traj.states.append(s)
        if on_output is not None:
            on_output(s)

    emit(state)
    n_steps = config.n_steps
    for i in range(1, n_steps + 1):
        try:
            state = coupled_step(state, config, traj.events)
        except SurfChnsError as exc:
            traj.abort = {
                "step": i, "t": float(state.t + config.numerics.dt),
                "error": type(exc).__name__, "message": str(exc),
                "face": getattr(exc, "face", None),
            }
            logger.error("run aborted at step %d: %s", i, exc)
            break
        if i % cadence == 0:
            emit(state)
    return traj
