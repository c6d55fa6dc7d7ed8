"""Constitutive laws: double-well potentials, density, viscosity, fluxes.

The logarithmic potential is

    Psi(s) = theta/2 [(1+s) ln(1+s) + (1-s) ln(1-s)] - theta_c/2 s^2

inside ``|s| <= 1 - delta_reg``.  Outside, the convex logarithmic part is
continued by its Taylor polynomial of order 4 about ``+-(1 - delta_reg)``,
which matches four derivatives and is therefore C^4 on the real line.
The polynomial stays convex because every derivative of order >= 2 of the
convex part has the sign of ``s`` raised to the derivative order.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from math import factorial

import numpy as np

from . import fem
from .errors import ConfigurationError, PhysicsError

logger = logging.getLogger(__name__)

POTENTIAL_KINDS = ("regularized_log", "quartic")
NU_PROFILES = ("constant", "affine", "smooth-interp")


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potential.

    Parameters
    ----------
    kind : {"regularized_log", "quartic"}
    theta, theta_c : float
        Absolute and critical temperature of the logarithmic potential.
    delta_reg : float
        Width of the regularization window, in (0, 0.1).
    taylor_order : {2, 4}
        Order of the continuation outside the window.  Order 2 gives the
        cheaper C^2 variant.
    """

    kind: str = "regularized_log"
    theta: float = 1.0
    theta_c: float = 2.0
    delta_reg: float = 1e-4
    taylor_order: int = 4

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigurationError(f"unknown potential kind {self.kind!r}; expected one of {POTENTIAL_KINDS}")
        if not self.theta > 0 or not self.theta_c > 0:
            raise ConfigurationError("theta and theta_c must be positive")
        if not 0 < self.delta_reg < 0.1:
            raise ConfigurationError(f"delta_reg must lie in (0, 0.1), got {self.delta_reg!r}")
        if self.taylor_order not in (2, 4):
            raise ConfigurationError(f"taylor_order must be 2 or 4, got {self.taylor_order!r}")


@dataclass(frozen=True)
class MaterialSpec:
    """Densities, viscosity law and mobility of the two-phase fluid.

    ``rho(s) = (rho1 + rho2)/2 + (rho2 - rho1)/2 s`` and likewise the affine
    viscosity profile, so ``s = -1`` is phase 1 and ``s = +1`` phase 2.
    """

    rho1: float = 1.0
    rho2: float = 1.0
    nu_profile: str = "constant"
    nu1: float = 1.0
    nu2: float = 1.0
    nu_min: float = 1e-3
    mobility: float = 1.0

    def __post_init__(self):
        if not self.rho1 > 0 or not self.rho2 > 0:
            raise ConfigurationError(f"densities must be positive, got rho1={self.rho1!r}, rho2={self.rho2!r}")
        if self.nu_profile not in NU_PROFILES:
            raise ConfigurationError(f"unknown viscosity profile {self.nu_profile!r}; expected one of {NU_PROFILES}")
        if not self.nu_min > 0:
            raise ConfigurationError("nu_min must be positive")
        if self.nu1 < self.nu_min or self.nu2 < self.nu_min:
            raise ConfigurationError(f"viscosities must be at least nu_min={self.nu_min}")
        if self.mobility != 1.0:
            raise ConfigurationError("only unit mobility is supported")

    @property
    def rho_min(self):
        return min(self.rho1, self.rho2)

    @property
    def nu_max(self):
        return max(self.nu1, self.nu2)


# ---------------------------------------------------------------------------
# potential


def _log_convex(s, k, theta):
    """k-th derivative of theta/2 [(1+s)ln(1+s) + (1-s)ln(1-s)], |s| < 1."""
    if k == 0:
        return 0.5 * theta * ((1 + s) * np.log1p(s) + (1 - s) * np.log1p(-s))
    if k == 1:
        return 0.5 * theta * (np.log1p(s) - np.log1p(-s))
    # d^k/ds^k for k >= 2: theta/2 (k-2)! [(-1)^k (1+s)^(1-k) + (1-s)^(1-k)]
    c = 0.5 * theta * factorial(k - 2)
    return c * ((-1.0) ** k * (1 + s) ** (1 - k) + (1 - s) ** (1 - k))


def psi_convex(spec, s, k=0):
    """k-th derivative (k <= 4) of the convex part."""
    s = np.asarray(s, dtype=float)
    if spec.kind == "quartic":
        return [0.25 * s ** 4 + 0.25, s ** 3, 3 * s ** 2, 6 * s, np.full_like(s, 6.0)][k]
    edge = 1.0 - spec.delta_reg
    inside = np.abs(s) <= edge
    si = np.where(inside, s, 0.0)
    out = np.where(inside, _log_convex(si, k, spec.theta), 0.0)
    order = spec.taylor_order
    for sgn in (1.0, -1.0):
        mask = (sgn * s) > edge
        if not np.any(mask):
            continue
        s0 = sgn * edge
        d = s[mask] - s0
        val = np.zeros_like(d)
        for j in range(k, order + 1):
            val += _log_convex(s0, j, spec.theta) * d ** (j - k) / factorial(j - k)
        out = out.copy() if out.base is not None else out
        out[mask] = val
    return out


def psi_concave(spec, s, k=0):
    s = np.asarray(s, dtype=float)
    a = 1.0 if spec.kind == "quartic" else spec.theta_c
    return [-0.5 * a * s ** 2, -a * s, np.full_like(s, -a), np.zeros_like(s), np.zeros_like(s)][k]


def _psi(spec, s, k):
    s_arr = np.asarray(s, dtype=float)
    out = psi_convex(spec, s_arr, k) + psi_concave(spec, s_arr, k)
    return float(out) if np.ndim(s) == 0 else out


def psi_eval(spec, s):
    return _psi(spec, s, 0)


def psi_d1(spec, s):
    return _psi(spec, s, 1)


def psi_d2(spec, s):
    return _psi(spec, s, 2)


def psi_d3(spec, s):
    return _psi(spec, s, 3)


# ---------------------------------------------------------------------------
# material laws


def density(material, phi):
    phi = np.asarray(phi, dtype=float)
    return 0.5 * (material.rho1 + material.rho2) + 0.5 * (material.rho2 - material.rho1) * phi


def viscosity(material, phi, events=None):
    """Pointwise viscosity, clamped at ``nu_min``.

    Parameters
    ----------
    events : collections.Counter, optional
        Receives the number of clamped vertices under ``"viscosity_clamp"``.
    """
    phi = np.asarray(phi, dtype=float)
    m = material
    if m.nu_profile == "constant":
        nu = np.full(phi.shape, float(m.nu1))
    elif m.nu_profile == "affine":
        nu = 0.5 * (m.nu1 + m.nu2) + 0.5 * (m.nu2 - m.nu1) * phi
    else:
        tau = np.clip(0.5 * (phi + 1.0), 0.0, 1.0)
        nu = m.nu1 + (m.nu2 - m.nu1) * tau * tau * (3.0 - 2.0 * tau)
    low = nu < m.nu_min
    if np.any(low):
        nu = np.where(low, m.nu_min, nu)
        if events is not None:
            events["viscosity_clamp"] += int(low.sum())
    return nu


def chemical_potential(state, phi, spec, stiffness=None):
    """``mu = M^{-1} K phi + Psi'(phi)`` with the lumped (dual-area) mass."""
    k = fem.assemble_stiffness(state) if stiffness is None else stiffness
    phi = np.asarray(phi, dtype=float)
    return (k @ phi) / state.dual_area + psi_d1(spec, phi)


def flux_Jrho(state, mu, material):
    """Relative mass flux ``-((rho1 - rho2)/2) grad mu``, recovered at vertices."""
    c = -0.5 * (material.rho1 - material.rho2)
    if c == 0.0:
        return np.zeros((state.n_vertices, 3))
    return c * fem.recover_gradient(state, mu)


def korteweg_rhs(state, phi):
    """Weak capillary force ``int (grad phi x grad phi) : grad psi``, flat (3N,)."""
    g = fem.face_gradient(state, phi)                                   # (F, 3)
    proj = np.einsum("fad,fd->fa", state.grads, g) * state.face_area[:, None]  # (F, 3)
    n = state.n_vertices
    out = np.zeros((3, n))
    for k in range(3):
        np.add.at(out[k], state.faces, proj * g[:, k:k + 1])
    return out.ravel()


def energy_density_potential(spec, phi):
    return psi_eval(spec, phi)


def new_event_counter():
    return Counter()


def check_separation(phi, delta0):
    """Return the separation margin ``1 - max|phi|`` and whether it dropped below ``delta0``."""
    margin = 1.0 - float(np.max(np.abs(phi))) if np.size(phi) else 1.0
    return margin, margin < delta0


__all__ = [
    "PotentialSpec", "MaterialSpec", "psi_eval", "psi_d1", "psi_d2", "psi_d3", "psi_convex",
    "psi_concave", "density", "viscosity", "chemical_potential", "flux_Jrho", "korteweg_rhs",
    "check_separation", "PhysicsError",
]
