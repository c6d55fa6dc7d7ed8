"""Per-step scalar diagnostics: mass, area, energy parts and residuals."""

from dataclasses import dataclass, fields

import numpy as np

from . import fem
from .physics import density, psi_eval

CSV_COLUMNS = (
    "t", "mass", "area", "energy", "kinetic", "potential", "gradient", "max_abs_phi",
    "separation_margin", "div_residual", "constraint_residual", "tangency_max",
    "picard_iters", "wall_time",
)


@dataclass(frozen=True)
class DiagRow:
    t: float
    mass: float
    area: float
    energy: float
    kinetic: float
    potential: float
    gradient: float
    max_abs_phi: float
    separation_margin: float
    div_residual: float
    constraint_residual: float
    tangency_max: float
    picard_iters: int
    wall_time: float
    # kept in memory only; not part of the CSV layout
    energy_balance: float = float("nan")

    def values(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


assert tuple(f.name for f in fields(DiagRow))[: len(CSV_COLUMNS)] == CSV_COLUMNS


def energy_parts(surface, phi, v_total, potential, material, stiffness=None):
    """Kinetic, potential and gradient energy of a slice.

    Kinetic and potential parts use nodal (dual-area) quadrature; the gradient
    part is ``phi^T K phi / 2`` which is exact for P1.
    """
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(v_total, dtype=float) + surface.v_n[:, None] * surface.normal
    rho = density(material, phi)
    kinetic = 0.5 * surface.integrate(rho * np.einsum("ij,ij->i", u, u))
    pot = surface.integrate(psi_eval(potential, phi))
    k = fem.assemble_stiffness(surface) if stiffness is None else stiffness
    grad = 0.5 * float(phi @ (k @ phi))
    return kinetic, pot, grad


def energy(step_state, potential, material):
    """Total energy and its three parts ``(E, kinetic, potential, gradient)``."""
    kin, pot, grad = energy_parts(step_state.surface, step_state.phi, step_state.v_total,
                                  potential, material)
    return kin + pot + grad, kin, pot, grad


def div_residual(surface, V, pi=None, gamma=0.0):
    """Dual norm ``sqrt(sum r_i^2 / a_i)`` of the weak divergence ``r``.

    With a pressure ``pi`` the residual is that of the stabilized constraint
    row ``r = B V + gamma h^2 K pi`` actually imposed by the saddle solves,
    taken modulo constants (the mean-pressure multiplier absorbs them).
    """
    r = fem.assemble_div(surface, "face") @ fem.flat(V)
    if pi is not None:
        if gamma:
            r = r + (gamma * surface.h ** 2) * (fem.assemble_stiffness(surface) @ pi)
        a = surface.dual_area
        r = r - a * (r.sum() / a.sum())
    return float(np.sqrt(np.sum(r * r / surface.dual_area)))


def residuals(step_state, gamma=None):
    """``(div_residual, constraint_residual, tangency_max)`` of a step state.

    ``gamma`` selects the stabilized constraint row; ``None`` measures the
    plain weak divergence of ``V``.
    """
    s = step_state.surface
    if gamma is None:
        d = div_residual(s, step_state.V)
    else:
        d = div_residual(s, step_state.V, step_state.pi, gamma)
    c = abs(s.integrate(s.mean_curv * s.v_n))
    tang = float(np.abs(np.einsum("ij,ij->i", step_state.V, s.normal)).max(initial=0.0))
    return d, c, tang


def make_row(step_state, potential, material, picard_iters=0, wall_time=0.0, energy_balance=float("nan"),
             gamma=None):
    s = step_state.surface
    e, kin, pot, grad = energy(step_state, potential, material)
    d, c, tang = residuals(step_state, gamma)
    m = float(np.max(np.abs(step_state.phi))) if step_state.phi.size else 0.0
    return DiagRow(
        t=float(s.t), mass=s.integrate(step_state.phi), area=s.area, energy=e, kinetic=kin,
        potential=pot, gradient=grad, max_abs_phi=m, separation_margin=1.0 - m,
        div_residual=d, constraint_residual=c, tangency_max=tang,
        picard_iters=int(picard_iters), wall_time=float(wall_time), energy_balance=energy_balance,
    )
