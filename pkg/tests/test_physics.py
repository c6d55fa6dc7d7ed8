import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from surfchns import ConfigurationError, MaterialSpec, PotentialSpec, make_icosphere
from surfchns import fem
from surfchns.geometry import compute_surface_state
from surfchns.physics import (check_separation, chemical_potential, density, flux_Jrho, korteweg_rhs,
                              psi_concave, psi_convex, psi_d1, psi_d2, psi_d3, psi_eval, viscosity)
from surfchns.projection import helmholtz_project

LOG = PotentialSpec("regularized_log")
QUARTIC = PotentialSpec("quartic")


@pytest.fixture(scope="module")
def s4():
    return compute_surface_state(make_icosphere(4))


class TestPotential:
    @pytest.mark.parametrize("spec", [LOG, QUARTIC])
    def test_symmetric_derivative(self, spec):
        assert psi_d1(spec, 0.0) == 0.0

    def test_quartic_values(self):
        assert_allclose(psi_eval(QUARTIC, 0.0), 0.25)
        assert_allclose(psi_d1(QUARTIC, 1.0), 0.0, atol=1e-15)
        assert_allclose(psi_d2(QUARTIC, 0.0), -1.0)

    def test_log_derivative(self):
        assert_allclose(psi_d1(LOG, 0.5), 0.5 * math.log(3.0) - 1.0, rtol=1e-14)

    def test_log_zero(self):
        assert psi_eval(LOG, 0.0) == 0.0

    def test_finite_differences_quartic(self):
        s = np.linspace(-1.2, 1.2, 241)
        eps = 1e-5
        for f, df in [(psi_eval, psi_d1), (psi_d1, psi_d2), (psi_d2, psi_d3)]:
            fd = (f(QUARTIC, s + eps) - f(QUARTIC, s - eps)) / (2 * eps)
            assert np.abs(fd - df(QUARTIC, s)).max() <= 1e-6

    def test_finite_differences_log(self):
        # third derivatives reach 1e8 near the pure phases, so the two-point
        # truncation term dominates there; the five-point stencil removes it
        # and the comparison is made relative
        s = np.linspace(-1.2, 1.2, 241)
        eps = 1e-5
        for f, df in [(psi_eval, psi_d1), (psi_d1, psi_d2), (psi_d2, psi_d3)]:
            fd = (-f(LOG, s + 2 * eps) + 8 * f(LOG, s + eps) - 8 * f(LOG, s - eps) + f(LOG, s - 2 * eps)) / (12 * eps)
            exact = df(LOG, s)
            assert np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))) <= 1e-6

    def test_continuation_matches_inside(self):
        spec = PotentialSpec(delta_reg=0.05)
        s = np.linspace(-0.95, 0.95, 51)
        fh = 0.5 * ((1 + s) * np.log1p(s) + (1 - s) * np.log1p(-s)) - s ** 2
        assert_allclose(psi_eval(spec, s), fh, atol=1e-14)

    @pytest.mark.parametrize("order", [2, 4])
    def test_continuation_smooth(self, order):
        spec = PotentialSpec(delta_reg=0.05, taylor_order=order)
        edge = 1.0 - spec.delta_reg
        for k in range(order + 1):
            lo = psi_convex(spec, edge - 1e-12, k)
            hi = psi_convex(spec, edge + 1e-12, k)
            assert abs(hi - lo) <= 1e-6 * max(1.0, abs(lo))

    def test_convex_split(self):
        s = np.linspace(-3, 3, 601)
        assert np.all(psi_convex(LOG, s, 2) >= 0)
        assert_allclose(psi_concave(LOG, s), -0.5 * LOG.theta_c * s ** 2)
        assert_allclose(psi_convex(LOG, s) + psi_concave(LOG, s), psi_eval(LOG, s), atol=1e-14)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            PotentialSpec("cubic")
        with pytest.raises(ConfigurationError):
            PotentialSpec(delta_reg=0.2)


class TestMaterial:
    def test_density(self):
        m = MaterialSpec(rho1=1.0, rho2=3.0)
        assert_allclose(density(m, np.array([0.0, 1.0, -1.0])), [2.0, 3.0, 1.0])

    def test_matched_density(self):
        m = MaterialSpec(rho1=2.5, rho2=2.5)
        assert np.all(density(m, np.linspace(-1, 1, 7)) == 2.5)

    def test_constant_viscosity(self):
        nu = viscosity(MaterialSpec(nu1=0.7), np.linspace(-1, 1, 5))
        assert np.all(nu == 0.7)

    def test_viscosity_clamp_counted(self):
        from collections import Counter
        ev = Counter()
        m = MaterialSpec(nu_profile="affine", nu1=1e-3, nu2=1.0)
        nu = viscosity(m, np.array([-1.5, 0.0]), ev)
        assert nu[0] == m.nu_min and ev["viscosity_clamp"] == 1

    def test_nonpositive_density(self):
        with pytest.raises(ConfigurationError):
            MaterialSpec(rho1=0.0)

    @given(st.floats(-1, 1), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_density_affine(self, s, r1, r2):
        m = MaterialSpec(rho1=r1, rho2=r2)
        mid = 0.5 * (density(m, -1.0) + density(m, 1.0))
        assert_allclose(density(m, s), mid + s * (density(m, 1.0) - mid), rtol=1e-12)


class TestFields:
    def test_mu_of_constant(self, s4):
        phi = np.full(s4.n_vertices, 0.3)
        assert_allclose(chemical_potential(s4, phi, LOG), psi_d1(LOG, 0.3), atol=1e-12)

    def test_mu_linearized_quartic(self, s4):
        eps = 1e-4
        z = s4.positions[:, 2]
        mu = chemical_potential(s4, eps * z, QUARTIC)
        err = math.sqrt(s4.integrate((mu - eps * z) ** 2))
        assert err <= 2e-2 * eps

    def test_mu_linear_part(self, s4):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal(s4.n_vertices)
        lin = lambda p: chemical_potential(s4, p, QUARTIC) - psi_d1(QUARTIC, p)
        assert_allclose(lin(2 * phi), 2 * lin(phi), rtol=1e-12, atol=1e-10)

    def test_flux(self, s4):
        z = s4.positions[:, 2]
        assert np.all(flux_Jrho(s4, z, MaterialSpec()) == 0.0)
        m = MaterialSpec(rho1=1.0, rho2=3.0)
        assert np.abs(flux_Jrho(s4, np.full(s4.n_vertices, 2.0), m)).max() <= 1e-12
        exact = np.array([0.0, 0.0, 1.0]) - z[:, None] * s4.positions
        err = math.sqrt(s4.integrate(np.sum((flux_Jrho(s4, z, m) - exact) ** 2, axis=1)))
        assert err <= 2e-2

    def test_korteweg_constant(self, s4):
        assert np.abs(korteweg_rhs(s4, np.full(s4.n_vertices, 0.4))).max() <= 1e-14

    def test_korteweg_even(self, s4):
        rng = np.random.default_rng(1)
        phi = rng.standard_normal(s4.n_vertices)
        assert_allclose(korteweg_rhs(s4, -phi), korteweg_rhs(s4, phi), atol=0)

    def test_korteweg_of_height_is_gradient(self, s4):
        z = s4.positions[:, 2]
        rhs = korteweg_rhs(s4, z)
        force = fem.unflat(rhs / np.tile(s4.dual_area, 3), s4.n_vertices)
        force = np.einsum("nij,nj->ni", s4.projector, force)
        res = helmholtz_project(force, s4)
        norm = lambda v: math.sqrt(s4.integrate(np.sum(v * v, axis=1)))
        assert norm(res.div_free) <= 5e-2 * norm(force)

    def test_separation(self):
        margin, flagged = check_separation(np.array([0.2, -0.95]), 0.1)
        assert_allclose(margin, 0.05)
        assert flagged
