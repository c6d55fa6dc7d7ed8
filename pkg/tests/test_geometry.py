import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from surfchns import ConfigurationError, ContractError, GeometryError, GeometryPreset, make_icosphere
from surfchns.geometry import advance_positions, compute_surface_state, enforce_inextensibility
from surfchns.piola import compute_flow_frame, identity_frame, piola_pull, piola_push, tangent_basis


@pytest.fixture(scope="module")
def sphere4():
    return compute_surface_state(make_icosphere(4))


def _rotation(p):
    return np.stack([-p[:, 1], p[:, 0], np.zeros(len(p))], axis=1)


def _evolve(preset, level, steps, dt):
    mesh = preset.initial_mesh(level)
    s = compute_surface_state(mesh, preset=preset)
    for _ in range(steps):
        s = compute_surface_state(mesh, advance_positions(s, preset, dt), s.t + dt, preset)
    return s


class TestIcosphere:
    @pytest.mark.parametrize("s, nv, nf", [(0, 12, 20), (2, 162, 320), (4, 2562, 5120)])
    def test_counts(self, s, nv, nf):
        m = make_icosphere(s)
        assert m.n_vertices == nv == 10 * 4 ** s + 2
        assert m.n_faces == nf

    def test_radius(self):
        m = make_icosphere(3, 2.0)
        assert_allclose(np.linalg.norm(m.vertices, axis=1), 2.0, atol=1e-12)

    def test_subdivision_guard(self):
        with pytest.raises(ConfigurationError):
            make_icosphere(8)

    def test_edges_shared_twice(self):
        m = make_icosphere(2)
        e = np.sort(np.concatenate([m.faces[:, [0, 1]], m.faces[:, [1, 2]], m.faces[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        assert np.all(counts == 2)
        assert len(m.edges) == 3 * m.n_faces // 2

    def test_degenerate_face_rejected(self):
        m = make_icosphere(1)
        pos = m.vertices.copy()
        a, b, _ = m.faces[3]
        pos[b] = pos[a]
        with pytest.raises(GeometryError) as err:
            compute_surface_state(m, pos)
        assert err.value.face is not None


class TestSurfaceState:
    def test_mean_curvature(self, sphere4):
        assert np.abs(sphere4.mean_curv - 2.0).max() <= 2e-2

    def test_gauss_curvature(self, sphere4):
        assert np.abs(sphere4.gauss_curv - 1.0).max() <= 5e-2
        assert abs(sphere4.integrate(sphere4.gauss_curv) - 4 * math.pi) <= 1e-10

    def test_projector_at_pole(self):
        m = make_icosphere(2)
        s = compute_surface_state(m)
        i = int(np.argmax(m.vertices[:, 0]))
        assert_allclose(m.vertices[i], [1.0, 0.0, 0.0], atol=1e-15)
        assert_allclose(s.projector[i], np.eye(3) - np.outer([1, 0, 0], [1, 0, 0]), atol=1e-10)

    def test_normals_and_projector(self, sphere4):
        assert_allclose(np.linalg.norm(sphere4.normal, axis=1), 1.0, atol=1e-12)
        P = sphere4.projector
        assert_allclose(P, np.swapaxes(P, 1, 2), atol=1e-12)
        assert_allclose(P @ P, P, atol=1e-12)
        # outward
        assert np.all(np.einsum("ij,ij->i", sphere4.normal, sphere4.positions) > 0)

    def test_weingarten_is_tangent_projector_on_unit_sphere(self, sphere4):
        fn = sphere4.face_normal
        P = np.eye(3) - np.einsum("fi,fj->fij", fn, fn)
        assert np.abs(sphere4.weingarten - P).max() < 0.1
        assert_allclose(sphere4.weingarten, np.swapaxes(sphere4.weingarten, 1, 2), atol=1e-12)

    def test_gauss_bonnet_on_evolved_surface(self):
        s = _evolve(GeometryPreset("oscillating_harmonic_sphere"), 3, 10, 1e-2)
        assert abs(s.integrate(s.gauss_curv) - 4 * math.pi) <= 1e-10


class TestInextensibility:
    def test_constant_removed(self, sphere4):
        assert_allclose(enforce_inextensibility(sphere4, np.full(sphere4.n_vertices, 0.7)), 0.0, atol=1e-12)

    def test_odd_field_unchanged(self, sphere4):
        z = sphere4.positions[:, 2]
        assert_allclose(enforce_inextensibility(sphere4, z), z, atol=1e-12)

    def test_quadratic_field(self, sphere4):
        z = sphere4.positions[:, 2]
        vn = enforce_inextensibility(sphere4, z ** 2)
        scale = sphere4.integrate(np.abs(sphere4.mean_curv * z ** 2))
        assert abs(sphere4.integrate(sphere4.mean_curv * vn)) <= 1e-12 * scale

    def test_projection_idempotent(self, sphere4):
        rng = np.random.default_rng(3)
        raw = rng.standard_normal(sphere4.n_vertices)
        once = enforce_inextensibility(sphere4, raw)
        assert_allclose(enforce_inextensibility(sphere4, once), once, atol=1e-12)

    def test_flat_surface_rejected(self, sphere4):
        flat = replace(sphere4, mean_curv=np.zeros(sphere4.n_vertices))
        with pytest.raises(GeometryError):
            enforce_inextensibility(flat, np.ones(sphere4.n_vertices))


class TestAdvance:
    def test_stationary(self):
        p = GeometryPreset("stationary_sphere")
        s = compute_surface_state(p.initial_mesh(2), preset=p)
        assert_array_equal(advance_positions(s, p, 0.3), s.positions)

    def test_zero_amplitude(self):
        p = GeometryPreset("oscillating_harmonic_sphere", amplitude=0.0)
        s = compute_surface_state(p.initial_mesh(2), preset=p)
        assert_allclose(advance_positions(s, p, 0.05), s.positions, atol=1e-15)

    def test_rk4_self_convergence(self):
        p = GeometryPreset("oscillating_harmonic_sphere")
        period = 2 * math.pi / p.frequency
        n = 40
        runs = [_evolve(p, 2, n * k, period / (n * k)).positions for k in (1, 2, 10)]
        e1 = np.abs(runs[0] - runs[2]).max()
        e2 = np.abs(runs[1] - runs[2]).max()
        assert e1 <= 1e-6
        assert e1 / e2 >= 12.0

    def test_bad_dt(self):
        p = GeometryPreset("oscillating_harmonic_sphere")
        s = compute_surface_state(p.initial_mesh(1), preset=p)
        with pytest.raises(ConfigurationError):
            advance_positions(s, p, 0.0)


class TestFlowFrame:
    def test_identity(self):
        m = make_icosphere(2)
        fr = identity_frame(m)
        P0 = np.eye(3) - np.einsum("fi,fj->fij", fr.n0, fr.n0)
        assert_allclose(fr.D, P0, atol=1e-12)
        assert_allclose(fr.J, 1.0, atol=1e-12)
        assert_allclose(fr.A, np.broadcast_to(np.eye(3), fr.A.shape), atol=1e-12)

    def test_radial(self):
        m = make_icosphere(3)
        R = 1.7
        fr = compute_flow_frame(m, m.vertices, R * m.vertices)
        assert_allclose(fr.J, R ** 2, rtol=1e-10)
        t = tangent_basis(fr.n0)[:, :, 0]
        assert_allclose(np.einsum("fij,fj->fi", fr.A, t), t / R, atol=1e-10)
        assert_allclose(fr.J * fr.Jinv, 1.0, atol=1e-12)

    def test_inverse_pairs(self):
        s = _evolve(GeometryPreset("oscillating_harmonic_sphere"), 2, 20, 1e-2)
        m = s.mesh
        fr = compute_flow_frame(m, m.vertices, s.positions)
        P0 = np.eye(3) - np.einsum("fi,fj->fij", fr.n0, fr.n0)
        Pt = np.eye(3) - np.einsum("fi,fj->fij", fr.nt, fr.nt)
        assert_allclose(fr.D @ fr.Dminus, Pt, atol=1e-10)
        assert_allclose(fr.Dminus @ fr.D, P0, atol=1e-10)
        assert_allclose(np.linalg.det(fr.A) * fr.J, 1.0, atol=1e-12)
        assert np.all(fr.J > 0)

    def test_connectivity_mismatch(self):
        m = make_icosphere(1)
        with pytest.raises(GeometryError):
            compute_flow_frame(m, m.vertices, m.vertices[:-1])


class TestPiola:
    def test_identity(self):
        m = make_icosphere(3)
        s = compute_surface_state(m)
        fr = identity_frame(m, s)
        v = _rotation(s.positions)
        assert_allclose(piola_push(fr, v), v, atol=1e-12)
        assert_allclose(piola_pull(fr, v), v, atol=1e-12)

    def test_radial(self):
        m = make_icosphere(3)
        s0 = compute_surface_state(m)
        s2 = compute_surface_state(m, 2.0 * m.vertices)
        fr = compute_flow_frame(m, m.vertices, s2.positions, s0, s2)
        v = _rotation(s0.positions)
        assert_allclose(piola_push(fr, v), v / 2.0, atol=1e-10)
        assert_allclose(piola_pull(fr, v), 2.0 * v, atol=1e-10)

    def test_pull_push_roundtrip(self):
        s = _evolve(GeometryPreset("oscillating_harmonic_sphere"), 3, 20, 5e-3)
        m = s.mesh
        s0 = compute_surface_state(m)
        fr = compute_flow_frame(m, m.vertices, s.positions, s0, s)
        rng = np.random.default_rng(1)
        v = np.einsum("nij,nj->ni", s0.projector, rng.standard_normal((m.n_vertices, 3)))
        assert_allclose(piola_pull(fr, piola_push(fr, v)), v, atol=1e-12)

    def test_normal_input_rejected(self):
        m = make_icosphere(2)
        s = compute_surface_state(m)
        with pytest.raises(ContractError):
            piola_push(identity_frame(m, s), s.normal)
