import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import killing_z
from esnsch.checks import INF_SUP_BASELINE
from esnsch.elliptic import (h_minus1_norm, inf_sup_constant, inverse_laplacian, inverse_stokes,
                             killing_kernel_dim, remove_mean, s_norm, solve_correction)
from esnsch.errors import IncompatibleData, NonZeroMean
from esnsch.forms import Family, FeFunction, FeSpace, assemble_m, divergence_matrix
from esnsch.geometry import PrescribedNormalVelocity, StaticLevelSet, legendre_harmonic
from esnsch.mesh import mesh_for_surface


def l2(f):
    return float(np.sqrt(f.coeffs @ assemble_m(f.space).matrix @ f.coeffs))


def y20_surface(sphere):
    return PrescribedNormalVelocity(sphere, lambda x, t: legendre_harmonic(x, 2))


class TestCorrectionField:
    def test_static_surface(self, sphere, ico2):
        cf = solve_correction(ico2, sphere)
        assert not np.any(cf.psi.coeffs)
        assert not np.any(cf.u_tilde.coeffs)
        assert np.abs(cf.body_force.coeffs).max() <= 1e-14

    def test_force_passes_through(self, sphere, ico3):
        # body force is the L2 projection of F_T, the comparison is the nodal interpolant
        cf = solve_correction(ico3, sphere, force=lambda x, t: killing_z(x))
        k = cf.u_tilde.space.interpolate(killing_z)
        assert l2(cf.body_force - k) <= 1e-2 * l2(k)

    def test_psi_for_y20(self, sphere, ico3):
        cf = solve_correction(ico3, y20_surface(sphere), with_time_derivative=False)
        exact = cf.psi.space.interpolate(lambda x: legendre_harmonic(x, 2) / 3)
        assert l2(cf.psi - exact) <= 2e-2 * l2(exact)

    def test_u_tilde_divergence(self, sphere, ico3):
        cf = solve_correction(ico3, y20_surface(sphere), with_time_derivative=False)
        S = cf.psi.space
        B = divergence_matrix(cf.u_tilde.space, S).matrix
        y20 = S.interpolate(lambda x: legendre_harmonic(x, 2)).coeffs
        expect = -2.0 * (assemble_m(S).matrix @ y20)
        assert np.linalg.norm(B @ cf.u_tilde.coeffs - expect) <= 5e-2 * np.linalg.norm(expect)

    def test_incompatible_normal_velocity(self, sphere, ico2):
        s = PrescribedNormalVelocity(sphere, lambda x, t: np.ones(len(x)))
        with pytest.raises(IncompatibleData):
            solve_correction(ico2, s, with_time_derivative=False)

    def test_time_derivative_modes_agree(self, moving_ellipsoid, ellipsoid_mesh3):
        fd = solve_correction(ellipsoid_mesh3, moving_ellipsoid, mode="fd")
        dd = solve_correction(ellipsoid_mesh3, moving_ellipsoid, mode="differentiated")
        assert l2(fd.dpsi_dt - dd.dpsi_dt) <= 1e-6 * l2(fd.dpsi_dt)
        with pytest.raises(ValueError):
            solve_correction(ellipsoid_mesh3, moving_ellipsoid, mode="spectral")


class TestInverseLaplacian:
    def test_y20(self, p2_3):
        z = p2_3.interpolate(lambda x: legendre_harmonic(x, 2))
        G = inverse_laplacian(z)
        assert l2(G - z * (1 / 6)) <= 2e-2 * l2(z * (1 / 6))

    def test_y10_norm(self, p1_3):
        z = p1_3.interpolate(lambda x: legendre_harmonic(x, 1))
        assert_allclose(h_minus1_norm(z), l2(z) / np.sqrt(2), rtol=2e-2)

    def test_zero(self, p1_3):
        assert not np.any(inverse_laplacian(p1_3.zero()).coeffs)
        assert h_minus1_norm(p1_3.zero()) == 0.0

    def test_rejects_mean(self, p1_3):
        with pytest.raises(NonZeroMean):
            inverse_laplacian(p1_3.constant(1.0))

    def test_result_is_mean_zero_and_self_adjoint(self, p1_3):
        rng = np.random.default_rng(0)
        z1 = remove_mean(FeFunction(p1_3, rng.standard_normal(p1_3.dof_count)))
        z2 = remove_mean(FeFunction(p1_3, rng.standard_normal(p1_3.dof_count)))
        M = assemble_m(p1_3).matrix
        g1, g2 = inverse_laplacian(z1), inverse_laplacian(z2)
        assert abs(np.ones(p1_3.dof_count) @ M @ g1.coeffs) <= 1e-12
        lhs, rhs = z1.coeffs @ M @ g2.coeffs, z2.coeffs @ M @ g1.coeffs
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)

    def test_dual_vector_input(self, p1_3):
        z = p1_3.interpolate(lambda x: legendre_harmonic(x, 1))
        dual = assemble_m(p1_3).matrix @ z.coeffs
        assert_allclose(h_minus1_norm(dual, p1_3), h_minus1_norm(z), rtol=1e-10)
        with pytest.raises(ValueError):
            h_minus1_norm(dual)


class TestInverseStokes:
    def test_killing_field_is_fixed(self, v2_3):
        k = v2_3.interpolate(killing_z)
        assert l2(inverse_stokes(k) - k) <= 2e-2 * l2(k)
        assert_allclose(s_norm(k), np.sqrt(8 * np.pi / 3), rtol=2e-2)

    def test_zero(self, v2_3):
        assert not np.any(inverse_stokes(v2_3.zero()).coeffs)

    def test_bounded_by_l2_on_divergence_free_fields(self, sphere, ico2):
        V = FeSpace(ico2, sphere, Family.P2_VECTOR)
        rng = np.random.default_rng(4)
        for _ in range(20):
            raw = FeFunction(V, rng.standard_normal(V.dof_count)).project_tangential()
            phi = inverse_stokes(raw)  # the image is discretely divergence-free
            assert s_norm(phi) <= l2(phi) * (1 + 1e-8)

    def test_self_adjoint(self, v2_3):
        rng = np.random.default_rng(5)
        a = FeFunction(v2_3, rng.standard_normal(v2_3.dof_count)).project_tangential()
        b = FeFunction(v2_3, rng.standard_normal(v2_3.dof_count)).project_tangential()
        M = assemble_m(v2_3).matrix
        lhs = a.coeffs @ M @ inverse_stokes(b).coeffs
        rhs = b.coeffs @ M @ inverse_stokes(a).coeffs
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)

    def test_image_is_divergence_free(self, p1_3, v2_3):
        rng = np.random.default_rng(6)
        a = FeFunction(v2_3, rng.standard_normal(v2_3.dof_count)).project_tangential()
        Sa = inverse_stokes(a)
        B = divergence_matrix(v2_3, p1_3).matrix
        r = B @ Sa.coeffs
        assert np.abs(r - r.mean()).max() <= 1e-8 * np.abs(Sa.coeffs).max()


class TestInfSup:
    def test_taylor_hood_baseline(self, v2_3):
        assert_allclose(inf_sup_constant(v2_3), INF_SUP_BASELINE, rtol=1e-5)

    def test_equal_order_is_unstable(self, v1_3):
        assert inf_sup_constant(v1_3) <= 0.1 * INF_SUP_BASELINE


class TestKilling:
    def test_sphere(self, v2_3):
        assert killing_kernel_dim(v2_3) == 3

    def test_spheroid(self):
        s = StaticLevelSet.ellipsoid(1.2, 1.2, 0.8)
        V = FeSpace(mesh_for_surface(s, 3), s, Family.P2_VECTOR)
        assert killing_kernel_dim(V) == 1

    def test_zero_tolerance(self, sphere, ico2):
        s = StaticLevelSet.ellipsoid(1.3, 1.1, 0.8)
        V = FeSpace(mesh_for_surface(s, 2), s, Family.P2_VECTOR)
        assert killing_kernel_dim(V, tol=0.0) == 0
