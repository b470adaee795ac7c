import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import killing_z
from esnsch.errors import FormatError, LevelOutOfRange, MeshError, MeshQualityDegraded
from esnsch.forms import Family, FeFunction, FeSpace
from esnsch.geometry import DilatingSphere, mesh_area
from esnsch.mesh import (SurfaceMesh, advect, icosphere, mesh_for_surface, piola_maps, piola_pull,
                         piola_push, read_off, torus_mesh, write_off)


class TestIcosphere:
    @pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
    def test_counts(self, level):
        m = icosphere(level)
        assert m.n_vertices == 10 * 4**level + 2
        assert m.n_triangles == 20 * 4**level
        assert len(m.edges) == 30 * 4**level
        assert m.euler_characteristic == 2
        m.check_topology()

    def test_on_unit_sphere(self, ico3):
        assert_allclose(np.linalg.norm(ico3.vertices, axis=1), 1.0, atol=1e-15)

    def test_outward_orientation(self, ico3):
        x = ico3.vertices[ico3.triangles]
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        assert np.all(np.einsum("ij,ij->i", n, x.mean(axis=1)) > 0)

    @pytest.mark.parametrize("level", [-1, 8])
    def test_level_out_of_range(self, level):
        with pytest.raises(LevelOutOfRange):
            icosphere(level)

    def test_quality(self, ico4):
        assert ico4.min_angle() > 50.0
        assert ico4.mesh_size() < icosphere(3).mesh_size()


class TestSurfaceMesh:
    def test_rejects_bad_shapes(self):
        with pytest.raises(MeshError):
            SurfaceMesh(np.zeros((3, 2)), np.array([[0, 1, 2]]))
        with pytest.raises(MeshError):
            SurfaceMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_open_mesh_fails_topology(self):
        m = SurfaceMesh(np.eye(3), np.array([[0, 1, 2]]))
        with pytest.raises(MeshError):
            m.check_topology()

    def test_immutable_vertices(self, ico2):
        with pytest.raises(ValueError):
            ico2.vertices[0, 0] = 2.0

    def test_torus_mesh(self):
        m = torus_mesh(24, 12)
        m.check_topology()
        assert m.euler_characteristic == 0

    def test_off_round_trip(self, tmp_path, ico2):
        p = tmp_path / "m.off"
        write_off(ico2, p)
        back = read_off(p)
        assert np.array_equal(back.vertices, ico2.vertices)
        assert np.array_equal(back.triangles, ico2.triangles)

    def test_off_errors(self, tmp_path):
        p = tmp_path / "bad.off"
        p.write_text("PLY\n")
        with pytest.raises(FormatError):
            read_off(p)
        p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
        with pytest.raises(FormatError):
            read_off(p)
        p.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n4 0 1 2 3\n")
        with pytest.raises(FormatError):
            read_off(p)


class TestAdvect:
    def test_static_surface_is_unchanged(self, sphere, ico3):
        m = advect(ico3, sphere, 0.4, 4)
        assert m.t == 0.4
        assert np.abs(m.vertices - ico3.vertices).max() <= 1e-14

    def test_area_after_motion(self, moving_ellipsoid, ellipsoid_mesh3):
        m = advect(ellipsoid_mesh3, moving_ellipsoid, 0.1, 10)
        assert np.abs(moving_ellipsoid.level(m.vertices, 0.1)).max() <= 1e-10
        assert_allclose(mesh_area(moving_ellipsoid, m, 0.1), moving_ellipsoid.area0, rtol=1e-4)

    def test_reversibility(self, moving_ellipsoid, ellipsoid_mesh3):
        fwd = advect(ellipsoid_mesh3, moving_ellipsoid, 0.25, 32)
        back = advect(fwd, moving_ellipsoid, 0.0, 32)
        assert np.abs(back.vertices - ellipsoid_mesh3.ref_vertices).max() <= 1e-6
        assert np.array_equal(fwd.ref_vertices, ellipsoid_mesh3.ref_vertices)

    def test_dilating_sphere_is_radial(self):
        s = DilatingSphere(1.0, 2.0, 1.0)
        m0 = mesh_for_surface(s, 2)
        m1 = advect(m0, s, 1.0, 4)
        assert_allclose(m1.vertices, 2.0 * m0.vertices, atol=1e-12)

    def test_rk4_order(self, moving_ellipsoid):
        m0 = mesh_for_surface(moving_ellipsoid, 2)
        ref = advect(m0, moving_ellipsoid, 0.3, 64).vertices
        errs = [np.abs(advect(m0, moving_ellipsoid, 0.3, k).vertices - ref).max() for k in (1, 2, 4)]
        assert all(e1 <= 0.5 * e0 for e0, e1 in zip(errs, errs[1:]))
        assert np.log2(errs[1] / errs[2]) >= 3.5

    def test_quality_guard(self):
        # a sliver triangle already violates the angle floor
        v = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0.01, 0.0], [0, 0, 1.0]])
        v /= np.linalg.norm(v, axis=1)[:, None]
        m = SurfaceMesh(v, np.array([[0, 1, 2], [0, 1, 3]]))
        with pytest.raises(MeshQualityDegraded):
            advect(m, DilatingSphere(1.0, 1.1, 1.0), 0.1, 2)


class TestPiola:
    def test_static_is_identity(self, sphere, ico2):
        m = advect(ico2, sphere, 0.3)
        maps = piola_maps(m, sphere, 0.3)
        assert_allclose(maps.J, 1.0, atol=1e-14)
        assert_allclose(maps.A, np.broadcast_to(np.eye(3), maps.A.shape), atol=1e-12)

    def test_dilating_sphere(self):
        s = DilatingSphere(1.0, 2.0, 1.0)
        m0 = mesh_for_surface(s, 2)
        m1 = advect(m0, s, 1.0, 4)
        maps = piola_maps(m1, s, 1.0)
        assert_allclose(maps.J, 4.0, rtol=1e-12)
        P = np.eye(3) - maps.nu0[:, :, None] * maps.nu0[:, None, :]
        assert_allclose(maps.D, 2.0 * P, atol=1e-10)

    def test_jacobian_is_area_ratio(self, moving_ellipsoid, ellipsoid_mesh3):
        m = advect(ellipsoid_mesh3, moving_ellipsoid, 0.25, 8)
        maps = piola_maps(m, moving_ellipsoid, 0.25)
        assert_allclose(maps.J, m.flat_areas() / ellipsoid_mesh3.flat_areas(), rtol=1e-12)

    def test_killing_field_on_static_sphere(self, sphere, ico3):
        V0 = FeSpace(ico3, sphere, Family.P2_VECTOR)
        mt = advect(ico3, sphere, 0.5)
        Vt = V0.on(mt)
        k = V0.interpolate(killing_z)
        pushed = piola_push(k, Vt, piola_maps(mt, sphere, 0.5))
        assert_allclose(pushed.coeffs, k.coeffs, atol=1e-12)
        zero = piola_push(V0.zero(), Vt, piola_maps(mt, sphere, 0.5))
        assert not np.any(zero.coeffs)

    def test_round_trip(self, moving_ellipsoid, ellipsoid_mesh3):
        V0 = FeSpace(ellipsoid_mesh3, moving_ellipsoid, Family.P2_VECTOR)
        mt = advect(ellipsoid_mesh3, moving_ellipsoid, 0.25, 8)
        Vt = V0.on(mt)
        maps = piola_maps(mt, moving_ellipsoid, 0.25)
        rng = np.random.default_rng(3)
        f = FeFunction(V0, rng.standard_normal(V0.dof_count)).project_tangential()
        back = piola_pull(piola_push(f, Vt, maps), V0, maps)
        assert_allclose(back.coeffs, f.coeffs, atol=1e-12)
        pushed = piola_push(f, Vt, maps)
        assert np.abs(pushed.normal_component()).max() <= 1e-13
