import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import killing_z
from esnsch.errors import MeshMismatch, ViscosityNonPositive
from esnsch.forms import (Family, FeFunction, FeSpace, apply_c1, apply_c2, apply_c3, assemble_a,
                          assemble_a_hat, assemble_b, assemble_c1_matrix, assemble_c2_matrix,
                          assemble_d1, assemble_d2, assemble_l, assemble_m, assemble_vec_a,
                          assemble_vec_grad, divergence_matrix, frozen_mass_derivative,
                          integrate_values, lumped_mass, vec_b_finite_difference)
from esnsch.geometry import DilatingSphere, PrescribedNormalVelocity, legendre_harmonic
from esnsch.mesh import icosphere, mesh_for_surface
from esnsch.potentials import ViscositySpec, eta


def y(l):
    return lambda x: legendre_harmonic(x, l)


def random_tangential(space, seed):
    rng = np.random.default_rng(seed)
    return FeFunction(space, rng.standard_normal(space.dof_count)).project_tangential()


class TestBilinear:
    def test_mass_of_one_is_area(self, sphere, ico4):
        S = FeSpace(ico4, sphere, Family.P1_SCALAR)
        one = np.ones(S.dof_count)
        assert_allclose(one @ assemble_m(S).matrix @ one, 4 * np.pi, rtol=1e-3)
        assert_allclose(lumped_mass(S).sum(), 4 * np.pi, rtol=1e-3)

    def test_rayleigh_quotient_y10(self, p1_3):
        u = p1_3.interpolate(y(1)).coeffs
        A, M = assemble_a(p1_3).matrix, assemble_m(p1_3).matrix
        assert_allclose((u @ A @ u) / (u @ M @ u), 2.0, rtol=2e-2)

    def test_killing_field_has_no_strain(self, v2_3):
        k = v2_3.interpolate(killing_z).coeffs
        A, M = assemble_vec_a(v2_3).matrix, assemble_m(v2_3).matrix
        assert k @ A @ k <= 1e-3 * (k @ M @ k)

    def test_strain_energy_bounded_by_gradient_energy(self, v2_3):
        # 2|E|^2 <= 2|grad u|^2 pointwise, so vec_a <= 2 vec_grad
        u = random_tangential(v2_3, 0).coeffs
        assert u @ assemble_vec_a(v2_3).matrix @ u <= 2 * (u @ assemble_vec_grad(v2_3).matrix @ u)

    def test_symmetry(self, p2_3, v2_3):
        for form in (assemble_m(p2_3), assemble_a(p2_3), assemble_m(v2_3), assemble_vec_a(v2_3)):
            assert form.symmetric
            assert form.asymmetry() == 0.0

    def test_mesh_mismatch(self, sphere, ico2, ico3):
        with pytest.raises(MeshMismatch):
            z = FeSpace(ico2, sphere, Family.P1_SCALAR).zero()
            apply_c2(z, z, FeSpace(ico3, sphere, Family.P2_VECTOR).zero())


class TestViscousForm:
    def test_constant_viscosity(self, p1_3, v2_3):
        A = assemble_vec_a(v2_3).matrix
        A1 = assemble_a_hat(p1_3.constant(1.0), v2_3).matrix
        A2 = assemble_a_hat(p1_3.constant(2.0), v2_3).matrix
        assert abs(A1 - A).max() <= 1e-14 * abs(A).max()
        assert abs(A2 - 2 * A).max() <= 1e-14 * abs(A).max()

    def test_blend_against_refined_quadrature(self, sphere, ico3, p1_3, v2_3):
        vis = ViscositySpec(1.0, 3.0)
        phi = p1_3.interpolate(y(1))
        etaf = FeFunction(p1_3, eta(vis, phi.coeffs))
        u, w = random_tangential(v2_3, 1), random_tangential(v2_3, 2)
        val = w.coeffs @ assemble_a_hat(etaf, v2_3).matrix @ u.coeffs
        # oracle: refined composite quadrature of 2 eta E(u):E(w)
        S4 = FeSpace(ico3, sphere, Family.P1_SCALAR, n_sub=4)
        V4 = FeSpace(ico3, sphere, Family.P2_VECTOR, n_sub=4)
        e4 = FeFunction(S4, etaf.coeffs).values()
        Gu, Gw = FeFunction(V4, u.coeffs).gradient(), FeFunction(V4, w.coeffs).gradient()
        Eu, Ew = 0.5 * (Gu + np.swapaxes(Gu, -1, -2)), 0.5 * (Gw + np.swapaxes(Gw, -1, -2))
        oracle = integrate_values(V4, 2 * e4 * np.einsum("eqij,eqij->eq", Eu, Ew))
        assert_allclose(val, oracle, rtol=1e-4)

    def test_rejects_non_positive_viscosity(self, p1_3, v2_3):
        with pytest.raises(ViscosityNonPositive):
            assemble_a_hat(p1_3.constant(0.0), v2_3)


class TestTrilinear:
    def test_c1_zero_slot(self, v2_3):
        assert apply_c1(v2_3.zero(), random_tangential(v2_3, 3), random_tangential(v2_3, 4)) == 0.0

    @pytest.mark.parametrize("slot", [1, 2, 3])
    def test_c1_matrix_matches_direct_evaluation(self, v1_3, slot):
        a, b, c = (random_tangential(v1_3, s) for s in (5, 6, 7))
        args = [a, b, c]
        M = assemble_c1_matrix(slot, args[slot - 1], v1_3).matrix
        free = [f for i, f in enumerate(args) if i != slot - 1]
        # earlier free slot is the trial (column), later free slot the test (row)
        assert_allclose(free[1].coeffs @ M @ free[0].coeffs, apply_c1(a, b, c), rtol=1e-12)

    def test_c1_on_killing_field(self, v2_3):
        k = v2_3.interpolate(killing_z)
        chi = random_tangential(v2_3, 8)
        nk2 = k.coeffs @ assemble_m(v2_3).matrix @ k.coeffs
        assert abs(apply_c1(k, k, k)) <= 1e-3 * nk2
        anti = apply_c1(k, k, chi) + apply_c1(chi, k, k)
        scale = abs(apply_c1(k, k, chi)) + abs(apply_c1(chi, k, k))
        assert abs(anti) <= 1e-2 * scale

    def test_c2_with_constant_and_divergence_free(self, p1_3, v2_3):
        psi = p1_3.interpolate(y(2))
        k = v2_3.interpolate(killing_z)
        # grad y . (e_z x x) = x, so this one integrates x^2 = 4 pi / 3
        full = apply_c2(p1_3.interpolate(lambda x: x[:, 0]), p1_3.interpolate(lambda x: x[:, 1]), k)
        assert abs(apply_c2(p1_3.constant(1.0), psi, k)) <= 1e-3
        assert_allclose(full, 4 * np.pi / 3, rtol=1e-2)

    def test_c2_square_identity(self, sphere, ico3, p1_3, v2_3):
        phi = p1_3.interpolate(lambda x: x[:, 0] + 0.5 * x[:, 2])
        chi = random_tangential(v2_3, 9)
        # phi^2 is exactly quadratic on each flat triangle
        S2 = FeSpace(ico3, sphere, Family.P2_SCALAR)
        e = ico3.edges
        mid = 0.5 * (phi.coeffs[e[:, 0]] + phi.coeffs[e[:, 1]])
        sq = FeFunction(S2, np.concatenate([phi.coeffs**2, mid**2]))
        oracle = 0.5 * integrate_values(v2_3, np.einsum("eqk,eqk->eq", sq.gradient(), chi.values()))
        assert_allclose(apply_c2(phi, phi, chi), oracle, rtol=1e-10)

    def test_c2_matrix(self, p1_3, v2_3):
        phi = p1_3.interpolate(y(1))
        psi = p1_3.interpolate(y(2))
        chi = random_tangential(v2_3, 10)
        K = assemble_c2_matrix(phi.values(), p1_3, v2_3).matrix
        assert_allclose(chi.coeffs @ K @ psi.coeffs, apply_c2(phi, psi, chi), rtol=1e-12)

    def test_c3_constant(self, p1_3, v2_3):
        assert abs(apply_c3(p1_3.constant(0.4), p1_3.constant(0.4), random_tangential(v2_3, 11))) <= 1e-14


class TestMotionForms:
    def test_static_l_and_b_vanish(self, p1_3, v2_3):
        assert abs(assemble_l(v2_3).matrix).max() == 0.0
        assert abs(assemble_b(p1_3).matrix).max() == 0.0

    def test_l_with_synthetic_normal_velocity(self, sphere, ico3):
        s = PrescribedNormalVelocity(sphere, lambda x, t: legendre_harmonic(x, 2))
        V = FeSpace(ico3, s, Family.P2_VECTOR)
        L = assemble_l(V).matrix
        # on the unit sphere the Weingarten map is P, so l(u, v) = int V_N u . v for tangential fields
        u, w = random_tangential(V, 12), random_tangential(V, 13)
        q = V.quad
        uPw = np.einsum("eqi,eqij,eqj->eq", u.values(), q.geom.proj, w.values())
        oracle = integrate_values(V, q.geom.v_n * uPw)
        assert_allclose(w.coeffs @ L @ u.coeffs, oracle, rtol=1e-10)
        assert assemble_l(V).asymmetry() == 0.0

    def test_b_on_sphere_cancels(self, sphere, ico3):
        s = PrescribedNormalVelocity(sphere, lambda x, t: legendre_harmonic(x, 2))
        B = assemble_b(FeSpace(ico3, s, Family.P1_SCALAR)).matrix
        # H I - 2 H_op = 2 nu (x) nu on the unit sphere, orthogonal to tangential gradients
        assert abs(B).max() <= 1e-12

    def test_b_symmetric_on_ellipsoid(self, moving_ellipsoid, ellipsoid_mesh3):
        form = assemble_b(FeSpace(ellipsoid_mesh3, moving_ellipsoid, Family.P1_SCALAR))
        assert abs(form.matrix).max() > 0
        assert form.asymmetry() <= 1e-13

    def test_d1_d2_vanish_without_correction(self, p1_3, v2_3):
        assert abs(assemble_d1(v2_3.zero(), v2_3).matrix).max() == 0.0
        assert not np.any(assemble_d2(p1_3.constant(1.0), v2_3.zero(), v2_3).matrix)

    def test_vec_b_static_and_dilating(self, sphere, ico2):
        V = FeSpace(ico2, sphere, Family.P2_VECTOR)
        u, w = random_tangential(V, 14), random_tangential(V, 15)
        assert vec_b_finite_difference(u, w, ico2, sphere, 1e-3) == 0.0
        # frozen nodal vectors on a dilating sphere: gradients scale as 1/R, area as R^2
        d = DilatingSphere(1.0, 2.0, 1.0)
        m = mesh_for_surface(d, 2, 0.5)
        Vd = FeSpace(m, d, Family.P2_VECTOR)
        u, w = random_tangential(Vd, 14), random_tangential(Vd, 15)
        scale = abs(w.coeffs @ assemble_vec_a(Vd).matrix @ u.coeffs)
        assert abs(vec_b_finite_difference(u, w, m, d, 1e-3)) <= 1e-8 * scale

    def test_vec_b_richardson(self, moving_ellipsoid, ellipsoid_mesh3):
        V = FeSpace(ellipsoid_mesh3, moving_ellipsoid, Family.P1_VECTOR)
        u, w = random_tangential(V, 16), random_tangential(V, 17)
        h = 2e-3
        d1 = vec_b_finite_difference(u, w, ellipsoid_mesh3, moving_ellipsoid, h)
        d2 = vec_b_finite_difference(u, w, ellipsoid_mesh3, moving_ellipsoid, h / 2)
        rich = (4 * d2 - d1) / 3
        assert abs(d2 - rich) <= 1e-3 * abs(rich)

    def test_transport_of_mass(self, moving_ellipsoid, ellipsoid_mesh3):
        S = FeSpace(ellipsoid_mesh3, moving_ellipsoid, Family.P1_SCALAR)
        phi, psi = S.interpolate(lambda x: 1 + x[:, 0]), S.interpolate(lambda x: x[:, 2] ** 2)
        fd = frozen_mass_derivative(phi, psi, ellipsoid_mesh3, moving_ellipsoid, 1e-6)
        g = S.quad.geom
        exact = psi.coeffs @ assemble_m(S, weight=g.H * g.v_n).matrix @ phi.coeffs
        assert_allclose(fd, exact, rtol=1e-4)


class TestDivergence:
    def test_constant_pressure_annihilates_tangential_fields(self, p1_3, v2_3):
        B = divergence_matrix(v2_3, p1_3).matrix
        u = random_tangential(v2_3, 18).coeffs
        assert abs(np.ones(p1_3.dof_count) @ B @ u) <= 1e-3 * np.linalg.norm(u) / np.sqrt(len(u))

    def test_killing_field(self, p1_3, v2_3):
        B = divergence_matrix(v2_3, p1_3).matrix
        k = v2_3.interpolate(killing_z).coeffs
        assert np.abs(B @ k).max() <= 1e-6

    def test_gradient_of_y20(self, p1_3, v2_3):
        g = v2_3.interpolate(lambda x: _grad_y20(x))
        B = divergence_matrix(v2_3, p1_3).matrix
        y20 = p1_3.interpolate(y(2)).coeffs
        expect = -6.0 * (assemble_m(p1_3).matrix @ y20)
        assert np.linalg.norm(B @ g.coeffs - expect) <= 2e-2 * np.linalg.norm(expect)


def _grad_y20(x):
    r = np.linalg.norm(x, axis=1)
    nu = x / r[:, None]
    z = nu[:, 2]
    dz = np.array([0.0, 0.0, 1.0]) - z[:, None] * nu
    return 3 * z[:, None] * dz


def test_refinement_reduces_area_error(sphere):
    errs = []
    for level in (1, 2, 3):
        S = FeSpace(icosphere(level), sphere, Family.P1_SCALAR)
        errs.append(abs(integrate_values(S, np.ones(S.quad.weights.shape)) - 4 * np.pi))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] <= 1e-7
