"""Independent closed-form and brute-force checks of the discretization.

Every check returns an :class:`OracleReport` with one error per mesh level
and an observed order from a least-squares fit of ``log(err)`` against
``log(h)``.  A report passes when the finest-level error is below its
threshold and, if an order is declared, the observed order is at least the
declared order minus 0.3.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import fem
from .geometry import GeometryPreset, advance_positions, compute_surface_state, real_harmonic
from .mesh import make_icosphere, mean_edge_length
from .piola import compute_flow_frame, tangent_basis

ORDER_SLACK = 0.3


@dataclass(frozen=True)
class OracleReport:
    """Outcome of one refinement study.

    ``order`` is ``nan`` for fewer than three levels.
    """

    name: str
    levels: tuple
    errors: tuple
    order: float
    threshold: float
    declared_order: float = float("nan")
    passed: bool = False
    details: dict = field(default_factory=dict, compare=False)

    def summary(self):
        errs = ", ".join(f"{e:.3e}" for e in self.errors)
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: levels {list(self.levels)} errors [{errs}] "
                f"order {self.order:.2f} (declared {self.declared_order:.2f}, threshold {self.threshold:.1e})")


def observed_order(h, errors):
    """Least-squares slope of ``log(err)`` against ``log(h)``; ``nan`` below three levels."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3 or np.any(e <= 0):
        return float("nan")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


def make_report(name, levels, h, errors, threshold, declared_order=float("nan"), **details):
    errors = tuple(float(e) for e in errors)
    order = observed_order(h, errors)
    ok = errors[-1] <= threshold
    if not math.isnan(declared_order):
        ok = ok and not math.isnan(order) and order >= declared_order - ORDER_SLACK
    details.setdefault("h", tuple(float(x) for x in h))
    return OracleReport(name, tuple(levels), errors, order, float(threshold),
                        float(declared_order), bool(ok), details)


def _sphere_state(level, radius=1.0):
    return compute_surface_state(make_icosphere(level, radius))


def _h(state):
    return mean_edge_length(state.positions, state.mesh.edges)


def evolve_to(preset, level, t, dt=5e-3):
    """Reference and evolved slices of ``preset`` on an icosphere of ``level``.

    Returns
    -------
    (SurfaceState, SurfaceState)
    """
    mesh = preset.initial_mesh(level)
    s0 = compute_surface_state(mesh, t=0.0, preset=preset)
    s = s0
    n = int(round(t / dt)) if t > 0 else 0
    for k in range(n):
        step = t - s.t if k == n - 1 else dt
        s = compute_surface_state(mesh, advance_positions(s, preset, step), s.t + step, preset)
    return s0, s


# ---------------------------------------------------------------------------
# spectral identities


def laplace_eigenvalues(state, count=16):
    """Smallest generalized eigenvalues of ``K x = lam M x`` (consistent mass)."""
    k = fem.assemble_stiffness(state)
    m = fem.assemble_mass(state)
    n = state.n_vertices
    if n <= 800:
        return sla.eigh(k.toarray(), m.toarray(), eigvals_only=True)[:count]
    # shift-invert about a small negative shift keeps the constant mode regular
    vals = spla.eigsh(k.tocsc(), k=count, M=m.tocsc(), sigma=-0.5, which="LM",
                      return_eigenvectors=False, v0=np.ones(n))
    return np.sort(vals)


def spectral_oracle(levels=(2, 3, 4), threshold=2e-2, declared_order=2.0):
    """Laplace-Beltrami and biharmonic checks on the unit sphere.

    For each level, the error is the largest relative deviation of the
    eigenvalue clusters ``l = 1..3`` from ``l(l+1)`` and of the biharmonic
    Rayleigh quotients of interpolated harmonics ``l = 1, 2`` from
    ``(l(l+1))^2``.
    """
    errors, hs, per_level = [], [], []
    for lev in levels:
        s = _sphere_state(lev)
        lam = laplace_eigenvalues(s, 16)
        rows = {}
        start = 1
        for ell in (1, 2, 3):
            cluster = lam[start:start + 2 * ell + 1]
            start += 2 * ell + 1
            exact = ell * (ell + 1.0)
            rows[f"lap_l{ell}"] = float(np.max(np.abs(cluster - exact)) / exact)
        k = fem.assemble_stiffness(s).tocsc()
        m = fem.assemble_mass(s).tocsc()
        lu = fem.factorize(m)
        for ell in (1, 2):
            worst = 0.0
            for mm in range(-ell, ell + 1):
                u = real_harmonic(ell, mm, s.positions)
                w = k @ lu.solve(k @ u)
                q = float(u @ w) / float(u @ (m @ u))
                exact = (ell * (ell + 1.0)) ** 2
                worst = max(worst, abs(q - exact) / exact)
            rows[f"bih_l{ell}"] = worst
        per_level.append(rows)
        errors.append(max(rows.values()))
        hs.append(_h(s))
    return make_report("spectral", levels, hs, errors, threshold, declared_order,
                       components=tuple(per_level))


def harmonic_lift_oracle(levels=(3, 4, 5), threshold=1e-3, declared_order=1.5):
    """Lift of ``v_n = z/2`` on the unit sphere against ``Pi = z/2``."""
    from .projection import harmonic_lift

    errors, hs = [], []
    for lev in levels:
        s = _sphere_state(lev)
        z = s.positions[:, 2]
        lift = harmonic_lift(s.with_vn(0.5 * z))
        errors.append(math.sqrt(s.integrate((lift.Pi - 0.5 * z) ** 2)))
        hs.append(_h(s))
    return make_report("harmonic_lift", levels, hs, errors, threshold, declared_order)


# ---------------------------------------------------------------------------
# flow map differential


@dataclass(frozen=True)
class RadialMap:
    """Uniform dilation ``x -> scale x`` used as a closed-form flow map."""

    scale: float = 1.5
    radius: float = 1.0

    def initial_mesh(self, level):
        return make_icosphere(level, self.radius)

    def flow_map(self, points, t):
        return self.scale * np.asarray(points, dtype=float)


def _rk4_flow(preset, points, t, dt):
    x = np.asarray(points, dtype=float).copy()
    n = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    tau = 0.0
    for _ in range(n):
        h = min(dt, t - tau)
        k1 = preset.ambient_velocity(x, tau)
        k2 = preset.ambient_velocity(x + 0.5 * h * k1, tau + 0.5 * h)
        k3 = preset.ambient_velocity(x + 0.5 * h * k2, tau + 0.5 * h)
        k4 = preset.ambient_velocity(x + h * k3, tau + h)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        tau += h
    return x


def fd_flow_oracle(preset, t=0.1, epsilon=1e-5, levels=(3,), threshold=None, dt=5e-3,
                   declared_order=float("nan")):
    """Flow-frame differential against central differences of the flow map.

    Mesh vertices and points displaced by ``+-epsilon`` along two tangent
    directions of the reference slice are carried by the same flow (the
    closed-form ``flow_map`` when the preset has one, otherwise RK4 on the
    ambient velocity).  The error per level is the largest discrepancy
    ``|D_v tau - FD(tau)|`` over vertices and directions.
    """
    if threshold is None:
        threshold = 1e-8 if hasattr(preset, "flow_map") else 5e-2
    errors, hs = [], []
    for lev in levels:
        mesh = preset.initial_mesh(lev)
        x0 = mesh.vertices
        s0 = compute_surface_state(mesh)
        basis = tangent_basis(s0.normal)
        if hasattr(preset, "flow_map"):
            move = lambda p: preset.flow_map(p, t)  # noqa: E731
        else:
            move = lambda p: _rk4_flow(preset, p, t, dt)  # noqa: E731
        pts = [x0]
        for a in range(2):
            pts += [x0 + epsilon * basis[:, :, a], x0 - epsilon * basis[:, :, a]]
        moved = np.split(move(np.concatenate(pts)), 5)
        xt = moved[0]
        st = compute_surface_state(mesh, xt)
        frame = compute_flow_frame(mesh, x0, xt, s0, st)
        worst = 0.0
        for a in range(2):
            # difference the displacements so a static map is reproduced exactly
            plus = moved[1 + 2 * a] - pts[1 + 2 * a]
            minus = moved[2 + 2 * a] - pts[2 + 2 * a]
            fd = basis[:, :, a] + (plus - minus) / (2.0 * epsilon)
            dv = np.einsum("nij,nj->ni", frame.Dv, basis[:, :, a])
            worst = max(worst, float(np.abs(dv - fd).max()))
        errors.append(worst)
        hs.append(_h(s0))
    return make_report("fd_flow", levels, hs, errors, threshold, declared_order,
                       epsilon=float(epsilon), t=float(t))


# ---------------------------------------------------------------------------
# pullback identities


def recovered_laplacian(state, u):
    """Trace of the twice-recovered gradient of a scalar field."""
    g = fem.recover_gradient(state, u)
    return np.einsum("nii->n", fem.recover_gradient(state, g))


def pulled_back_laplacian(state0, frame, state_t, phi0):
    """Laplacian on the current slice expressed through reference-slice data.

    ``hess_0(phi) : D^- D^-T + grad_0(phi) . div_t(D^-)``, with the Hessian
    from double gradient recovery on the reference slice and the divergence
    of the rows of ``D^-`` recovered on the current slice.
    """
    g0 = fem.recover_gradient(state0, phi0)
    hess = fem.recover_gradient(state0, g0)  # [i, m, k] = d_k g_m
    dm = frame.Dv_minus
    dd = dm @ np.swapaxes(dm, 1, 2)
    div_rows = np.empty_like(g0)
    for m in range(3):
        div_rows[:, m] = np.einsum("nss->n", fem.recover_gradient(state_t, dm[:, m, :], project=False))
    return np.einsum("nmk,nmk->n", hess, dd) + np.einsum("nm,nm->n", g0, div_rows)


def _default_test_function(p):
    return p[:, 2] + p[:, 0] * p[:, 1]


def pullback_laplacian_check(preset, t=0.1, test_function=None, levels=(3, 4, 5), threshold=2e-2,
                             declared_order=1.1, dt=5e-3):
    """Discrepancy between the pulled-back Laplacian and the direct one.

    The direct side is the recovered Laplacian of the transported nodal
    field on the current slice; the error is its L2 distance to
    :func:`pulled_back_laplacian` on the reference slice.
    """
    f = _default_test_function if test_function is None else test_function
    errors, hs = [], []
    for lev in levels:
        if hasattr(preset, "flow_map"):
            mesh = preset.initial_mesh(lev)
            s0 = compute_surface_state(mesh)
            st = compute_surface_state(mesh, preset.flow_map(mesh.vertices, t))
        else:
            s0, st = evolve_to(preset, lev, t, dt)
        frame = compute_flow_frame(s0.mesh, s0.positions, st.positions, s0, st)
        phi = np.asarray(f(s0.positions), dtype=float)
        direct = recovered_laplacian(st, phi)
        pulled = pulled_back_laplacian(s0, frame, st, phi)
        errors.append(math.sqrt(s0.integrate((direct - pulled) ** 2)))
        hs.append(_h(s0))
    return make_report("pullback_laplacian", levels, hs, errors, threshold, declared_order, t=float(t))


def gaussian_identity_residual(state, v):
    """``P div(grad^T v) - K v`` by double recovery, nodal (N, 3)."""
    g = fem.recover_gradient(state, v)  # [i, k, l] = d_l v_k
    t = np.swapaxes(g, 1, 2)
    lhs = np.empty_like(v)
    for k in range(3):
        lhs[:, k] = np.einsum("nll->n", fem.recover_gradient(state, t[:, k, :], project=False))
    lhs = np.einsum("nij,nj->ni", state.projector, lhs)
    return lhs, lhs - state.gauss_curv[:, None] * v


def _dual_norm(state, r_nodal):
    """``H^{-1}`` norm of a nodal density, tested against P1 functions."""
    op = fem.assemble_stiffness(state) + fem.assemble_mass(state)
    lu = fem.factorize(op)
    r = state.dual_area[:, None] * r_nodal
    return math.sqrt(sum(float(r[:, c] @ lu.solve(r[:, c])) for c in range(r.shape[1])))


def gaussian_identity_check(levels=(3, 4, 5), radii=(1.0, 2.0), threshold=5e-3, declared_order=1.5,
                            scaling_tol=1e-2):
    """Weak check of ``P div(grad^T v) = K v`` for rotation fields on spheres.

    The error per level is the worst relative ``H^{-1}`` residual over the
    radii.  The fitted curvature ``<lhs, v> / <v, v>`` at the finest level
    must scale as ``R^-2`` between the radii within ``scaling_tol``.
    """
    errors, hs, fits = [], [], {}
    for lev in levels:
        worst = 0.0
        for r in radii:
            s = _sphere_state(lev, r)
            p = s.positions
            v = np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)
            lhs, res = gaussian_identity_residual(s, v)
            vv = s.integrate(np.einsum("ij,ij->i", v, v))
            worst = max(worst, _dual_norm(s, res) / math.sqrt(vv))
            fits[(lev, r)] = s.integrate(np.einsum("ij,ij->i", lhs, v)) / vv
        errors.append(worst)
        hs.append(_h(_sphere_state(lev)))
    fine = levels[-1]
    k_ref = fits[(fine, radii[0])]
    scaling = {r: fits[(fine, r)] / k_ref * (r / radii[0]) ** 2 for r in radii}
    report = make_report("gaussian_identity", levels, hs, errors, threshold, declared_order,
                         fitted_curvature={f"{k[0]}:{k[1]}": v for k, v in fits.items()},
                         scaling=scaling)
    scaling_ok = all(abs(x - 1.0) <= scaling_tol for x in scaling.values())
    if not scaling_ok and report.passed:
        from dataclasses import replace
        report = replace(report, passed=False)
    return report


# ---------------------------------------------------------------------------
# suites consumed by the command line


def divergence_preservation_check(preset=None, t=0.1, levels=(3, 4, 5), threshold=1e-3,
                                  declared_order=1.2, dt=5e-3):
    """Weak divergence of the Piola push of a rotation field.

    ``e3 x x`` has zero discrete divergence on the reference sphere; the
    pushed field is measured with the same discrete divergence on the
    evolved slice.
    """
    from .diagnostics import div_residual
    from .piola import piola_push

    preset = GeometryPreset("oscillating_harmonic_sphere") if preset is None else preset
    errors, hs, start = [], [], []
    for lev in levels:
        s0, st = evolve_to(preset, lev, t, dt)
        frame = compute_flow_frame(s0.mesh, s0.positions, st.positions, s0, st)
        p = s0.positions
        v0 = np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)
        start.append(div_residual(s0, v0))
        errors.append(div_residual(st, piola_push(frame, v0)))
        hs.append(_h(s0))
    return make_report("divergence_preservation", levels, hs, errors, threshold, declared_order,
                       reference_residual=tuple(start))


def stokes_rotation_check(levels=(2, 3, 4), omega=1.0, threshold=1e-6):
    """Resolvent with ``f = omega e3 x x`` must return the rotation exactly."""
    from .physics import MaterialSpec
    from .stepper import stokes_resolvent

    errors, hs = [], []
    mat = MaterialSpec()
    for lev in levels:
        s = _sphere_state(lev)
        p = s.positions
        rot = np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)
        u = stokes_resolvent(s, np.zeros(len(p)), omega * rot, omega, mat)
        num = s.integrate(np.einsum("ij,ij->i", u - rot, u - rot))
        den = s.integrate(np.einsum("ij,ij->i", rot, rot))
        errors.append(math.sqrt(num / den))
        hs.append(_h(s))
    return make_report("stokes_rotation", levels, hs, errors, threshold)


def cahn_hilliard_mode_check(level=4, dt=1e-3, eps=1e-3, threshold=1e-3):
    """One CH step on ``eps z`` with the quartic potential against the mode ODE.

    The single-step amplification of the ``l = 1`` mode is
    ``1 / (1 + dt lam (lam + psi''(0)))`` with ``lam = 2`` and the implicit
    convex part linearized at zero.
    """
    from .physics import PotentialSpec, psi_d2
    from .stepper import step_cahn_hilliard

    s = _sphere_state(level)
    z = s.positions[:, 2]
    spec = PotentialSpec("quartic")
    phi, _ = step_cahn_hilliard(s, np.zeros((len(z), 3)), eps * z, dt, spec)
    amp = float(phi @ (s.dual_area * z)) / float(z @ (s.dual_area * z)) / eps
    lam = 2.0
    exact = 1.0 / (1.0 + dt * lam * (lam + float(psi_d2(spec, np.zeros(1))[0])))
    err = abs(amp - exact) / exact
    return make_report("cahn_hilliard_mode", (level,), (_h(s),), (err,), threshold,
                       amplification=amp, expected=exact)


SUITES = ("geometry", "laplace", "stokes", "cahn-hilliard", "pullback", "all")


def run_suite(name):
    """Reports of one named verification suite."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    osc = GeometryPreset("oscillating_harmonic_sphere")
    groups = {
        "geometry": lambda: [fd_flow_oracle(GeometryPreset("stationary_sphere"), threshold=1e-12),
                             fd_flow_oracle(RadialMap(1.5)),
                             fd_flow_oracle(osc, levels=(2, 3, 4), declared_order=1.0)],
        "laplace": lambda: [spectral_oracle(), harmonic_lift_oracle()],
        "stokes": lambda: [stokes_rotation_check()],
        "cahn-hilliard": lambda: [cahn_hilliard_mode_check()],
        "pullback": lambda: [pullback_laplacian_check(osc), gaussian_identity_check()],
    }
    if name == "all":
        return [r for key in SUITES[:-1] for r in groups[key]()]
    return groups[name]()
