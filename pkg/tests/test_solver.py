import numpy as np
import pytest
from numpy.testing import assert_allclose

from esnsch.diagnostics import energy_budget
from esnsch.errors import ConfigValidationError, InadmissibleInitialData
from esnsch.forms import assemble_m
from esnsch.mesh import mesh_for_surface
from esnsch.potentials import PotentialSpec, Variant, ViscositySpec, dF
from esnsch.solver import (ForceSpec, InitialPhase, InitialVelocity, PressurePair, SchemeConfig,
                           Splitting, delta_continuation_study, initialize, run, scalar_space,
                           state_divergence_residual, step)

LOG = PotentialSpec(Variant.LOGARITHMIC, theta=0.3)


def mass(f):
    return float(np.ones(f.space.dof_count) @ assemble_m(f.space).matrix @ f.coeffs)


class TestConfig:
    @pytest.mark.parametrize("kw,field", [
        (dict(dt=0.0), "dt"), (dict(t_end=-1.0), "t_end"), (dict(picard_iters=-1), "picard_iters"),
        (dict(pressure_pair="P1P1Stabilized", stab_param=0.0), "stab_param"),
        (dict(lin_tol=0.0), "lin_tol"), (dict(substeps_mesh=0), "substeps_mesh"),
        (dict(max_newton=0), "max_newton")])
    def test_validation(self, kw, field):
        args = dict(dt=1e-3, t_end=1e-2)
        args.update(kw)
        with pytest.raises(ConfigValidationError) as exc:
            SchemeConfig(**args)
        assert exc.value.field == field

    def test_step_count(self):
        assert SchemeConfig(dt=1e-3, t_end=1e-2).n_steps == 10
        assert SchemeConfig(dt=3e-3, t_end=1e-2).n_steps == 4
        assert SchemeConfig(dt=1e-3, t_end=0.0).n_steps == 0

    def test_enum_coercion(self):
        c = SchemeConfig(dt=1e-3, t_end=0.0, splitting="NewtonImplicit", pressure_pair="P1P1Stabilized")
        assert c.splitting is Splitting.NEWTON_IMPLICIT
        assert c.pressure_pair is PressurePair.P1P1_STABILIZED

    def test_unknown_initial_kinds(self):
        with pytest.raises(ConfigValidationError):
            InitialPhase("gaussian")
        with pytest.raises(ConfigValidationError):
            InitialVelocity("shear")
        with pytest.raises(ConfigValidationError):
            ForceSpec("gravity", 1.0)


class TestInitialize:
    def test_log_admissibility(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=0.0, potential=LOG)
        initialize(ico2, sphere, InitialPhase("constant", 0.2), InitialVelocity(), cfg)
        with pytest.raises(InadmissibleInitialData):
            initialize(ico2, sphere, InitialPhase("constant", 1.0), InitialVelocity(), cfg)
        with pytest.raises(InadmissibleInitialData):
            initialize(ico2, sphere, InitialPhase("constant", -1.5), InitialVelocity(), cfg)

    def test_random_start_has_prescribed_mass(self, sphere, ico3):
        cfg = SchemeConfig(dt=1e-3, t_end=0.0)
        st = initialize(ico3, sphere, InitialPhase("random", 0.1, 0.01, seed=7), InitialVelocity(), cfg)
        area = mass(st.phi.space.constant(1.0))
        assert_allclose(mass(st.phi), 0.1 * area, rtol=1e-12)

    def test_rotation_is_kept_by_projection(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=0.0)
        st = initialize(ico2, sphere, InitialPhase(), InitialVelocity("rotation", 0.5), cfg)
        raw = InitialVelocity("rotation", 0.5).build(st.u.space)
        d = st.u.coeffs - raw.coeffs
        M = assemble_m(st.u.space).matrix
        assert d @ M @ d <= 1e-6 * (raw.coeffs @ M @ raw.coeffs)
        assert state_divergence_residual(st) <= 1e-10


class TestStep:
    def test_constant_equilibrium(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=3e-3)
        res = run(cfg, sphere, ico2, InitialPhase("constant", 0.3), InitialVelocity())
        s = res.final
        assert np.abs(s.u.coeffs).max() <= cfg.lin_tol
        assert np.ptp(s.phi.coeffs) <= cfg.lin_tol
        pot = cfg.potential
        assert_allclose(s.mu.coeffs, dF(pot, 0.3) / pot.epsilon, rtol=1e-10)

    def test_rows_and_zero_steps(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=1e-2)
        res = run(cfg, sphere, ico2, InitialPhase("random", 0.0, 0.3, seed=1), InitialVelocity())
        assert len(res.rows) == 11
        assert [r.extra["step"] for r in res.rows] == list(range(11))
        zero = run(SchemeConfig(dt=1e-3, t_end=0.0), sphere, ico2, InitialPhase(), InitialVelocity())
        assert zero.steps == 0 and len(zero.rows) == 1

    def test_deterministic(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=5e-3)
        phi0 = InitialPhase("random", 0.0, 0.4, seed=2)
        a = run(cfg, sphere, ico2, phi0, InitialVelocity("rotation", 0.3)).final
        b = run(cfg, sphere, ico2, phi0, InitialVelocity("rotation", 0.3)).final
        for x, y in [(a.phi, b.phi), (a.mu, b.mu), (a.u, b.u), (a.p, b.p)]:
            assert np.array_equal(x.coeffs, y.coeffs)

    def test_mass_and_area_on_moving_surface(self, moving_ellipsoid):
        mesh = mesh_for_surface(moving_ellipsoid, 2)
        cfg = SchemeConfig(dt=5e-3, t_end=2.5e-2, force=ForceSpec("swirl", 1.0))
        res = run(cfg, moving_ellipsoid, mesh, InitialPhase("constant", 0.4), InitialVelocity())
        masses = np.array([r.mass for r in res.rows])
        areas = np.array([r.area for r in res.rows])
        assert np.abs(masses - masses[0]).max() <= 1e-10 * abs(masses[0])
        assert np.abs(areas - moving_ellipsoid.area0).max() <= 1e-6 * moving_ellipsoid.area0
        assert max(r.div_residual for r in res.rows[1:]) <= 1e-8

    def test_energy_decays_for_both_splittings(self, sphere, ico2):
        for split in Splitting:
            cfg = SchemeConfig(dt=1e-3, t_end=1e-2, splitting=split, viscosity=ViscositySpec(1.0, 2.0))
            res = run(cfg, sphere, ico2, InitialPhase("random", 0.0, 0.5, seed=3),
                      InitialVelocity("rotation", 0.5))
            assert energy_budget(res.rows, cfg.viscosity.eta_star).passed, split

    def test_equal_order_pair(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=3e-3, pressure_pair="P1P1Stabilized")
        res = run(cfg, sphere, ico2, InitialPhase("random", 0.1, 0.3, seed=4),
                  InitialVelocity("rotation", 0.2))
        assert res.final.u.space.family.degree == 1
        assert_allclose(res.rows[-1].mass, res.rows[0].mass, rtol=1e-12)

    def test_picard_sweeps(self, sphere, ico2):
        phi0 = InitialPhase("random", 0.0, 0.4, seed=5)
        u0 = InitialVelocity("rotation", 0.5)
        base = run(SchemeConfig(dt=1e-3, t_end=3e-3), sphere, ico2, phi0, u0).final
        pic = run(SchemeConfig(dt=1e-3, t_end=3e-3, picard_iters=2), sphere, ico2, phi0, u0).final
        d = pic.u.coeffs - base.u.coeffs
        # the sweeps only change the convection velocity, an O(dt) perturbation
        assert np.linalg.norm(d) <= 1e-2 * np.linalg.norm(base.u.coeffs)
        assert pic.info["picard_sweeps"] >= 1

    def test_explicit_dt_argument(self, sphere, ico2):
        cfg = SchemeConfig(dt=1e-3, t_end=1e-2)
        st = initialize(ico2, sphere, InitialPhase("random", 0.0, 0.3, seed=6), InitialVelocity(), cfg)
        s1 = step(st, sphere, cfg, 5e-4)
        assert s1.t == 5e-4 and s1.info["dt"] == 5e-4 and s1.step_index == 1

    @pytest.mark.slow
    def test_first_order_in_time(self, sphere, ico2):
        phi0 = InitialPhase("harmonic", 0.0, 0.5, degree=2)
        # a wider interface keeps the step sizes inside the asymptotic range on a coarse mesh
        pot = PotentialSpec(epsilon=0.3)
        dts = (1.25e-3, 6.25e-4, 3.125e-4, 1.5625e-4)
        finals = [run(SchemeConfig(dt=dt, t_end=1e-2, potential=pot), sphere, ico2, phi0,
                      InitialVelocity("rotation", 0.5)).final for dt in dts]
        M = assemble_m(finals[0].phi.space).matrix
        # successive differences remove the need for a reference solution
        diffs = [finals[i].phi.coeffs - finals[i + 1].phi.coeffs for i in range(3)]
        errs = [np.sqrt(d @ M @ d) for d in diffs]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 0.9)


def test_delta_study_small(sphere, ico2):
    cfg = SchemeConfig(dt=2e-3, t_end=6e-3, potential=PotentialSpec(Variant.REGULARIZED_LOG, theta=0.3))
    study = delta_continuation_study(cfg, [3e-1, 1e-1, 1e-3], ico2, sphere,
                                     InitialPhase("random", 0.0, 0.95, seed=3), InitialVelocity())
    assert study.reference_delta == 1e-3
    assert study.deltas == [3e-1, 1e-1]
    assert study.monotone
    assert len(study.max_abs_phi) == 3
    S = scalar_space(ico2, sphere)
    assert S.dof_count == ico2.n_vertices
