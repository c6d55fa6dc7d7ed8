import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from surfchns import InitialSpec, MaterialSpec, PotentialSpec, SimConfig, make_icosphere
from surfchns.diagnostics import CSV_COLUMNS, DiagRow, div_residual, energy, energy_parts, make_row, residuals
from surfchns.geometry import compute_surface_state
from surfchns.physics import psi_eval
from surfchns.stepper import initial_state

LOG = PotentialSpec("regularized_log")


@pytest.fixture(scope="module")
def s3():
    return compute_surface_state(make_icosphere(3))


def _rotation(p):
    return np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)


class TestEnergy:
    def test_zero_state(self, s3):
        n = s3.n_vertices
        kin, pot, grad = energy_parts(s3, np.zeros(n), np.zeros((n, 3)), LOG, MaterialSpec())
        assert kin == 0.0 and pot == 0.0 and grad == 0.0

    def test_constant_phase(self, s3):
        n = s3.n_vertices
        kin, pot, grad = energy_parts(s3, np.full(n, 0.4), np.zeros((n, 3)), LOG, MaterialSpec())
        assert_allclose(pot, s3.area * psi_eval(LOG, 0.4), rtol=1e-12)
        assert abs(grad) <= 1e-12

    def test_rotation_kinetic(self):
        s = compute_surface_state(make_icosphere(4))
        rho = 2.0
        kin, _, _ = energy_parts(s, np.zeros(s.n_vertices), _rotation(s.positions), LOG,
                                 MaterialSpec(rho1=rho, rho2=rho))
        assert_allclose(kin, 0.5 * rho * 8.0 * math.pi / 3.0, rtol=5e-3)

    def test_gradient_of_height(self):
        s = compute_surface_state(make_icosphere(4))
        _, _, grad = energy_parts(s, s.positions[:, 2], np.zeros((s.n_vertices, 3)), LOG, MaterialSpec())
        # |grad z|^2 integrates to 8 pi / 3 on the unit sphere
        assert_allclose(grad, 0.5 * 8.0 * math.pi / 3.0, rtol=5e-3)

    def test_total_is_sum(self):
        st = initial_state(SimConfig(subdivisions=2, initial=InitialSpec(phi0="0.3*z", v0=("-y", "x", "0"))))
        e, kin, pot, grad = energy(st, LOG, MaterialSpec())
        assert e == kin + pot + grad


class TestResiduals:
    def test_zero_velocity(self, s3):
        assert div_residual(s3, np.zeros((s3.n_vertices, 3))) == 0.0

    def test_constants_removed(self, s3):
        n = s3.n_vertices
        assert div_residual(s3, np.zeros((n, 3)), np.full(n, 3.0), 0.1) <= 1e-12

    def test_stationary_constraint(self):
        st = initial_state(SimConfig(subdivisions=2))
        d, c, t = residuals(st)
        assert d == 0.0 and c == 0.0 and t == 0.0

    def test_row(self):
        st = initial_state(SimConfig(subdivisions=2, initial=InitialSpec(phi0="0.3*z")))
        row = make_row(st, LOG, MaterialSpec(), picard_iters=2, wall_time=0.5)
        assert isinstance(row, DiagRow)
        assert row.separation_margin == 1.0 - row.max_abs_phi
        assert_allclose(row.max_abs_phi, np.abs(st.phi).max())
        assert row.energy == row.kinetic + row.potential + row.gradient
        assert len(row.values()) == len(CSV_COLUMNS)
        assert row.picard_iters == 2 and row.wall_time == 0.5
        assert math.isnan(row.energy_balance)
