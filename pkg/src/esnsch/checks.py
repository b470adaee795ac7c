"""Oracle-based verification suite shared by ``esnsch verify`` and the tests.

Every check returns a ``CheckResult``; none raises on a failed comparison.
Runs needed by several checks are cached for the life of the process.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diagnostics as dg
from .elliptic import (inf_sup_constant, inverse_laplacian, inverse_stokes, killing_kernel_dim,
                       remove_mean, s_norm, solve_correction)
from .errors import EsnschError, PhaseBoundViolation
from .forms import Family, FeFunction, FeSpace, assemble_m, divergence_matrix, frozen_mass_derivative
from .geometry import (AreaPreservingEllipsoid, PrescribedNormalVelocity, StaticLevelSet,
                       StaticSphere, gauss_bonnet_defect, legendre_harmonic, sample, tube_volume)
from .linalg import Factorized
from .mesh import advect, icosphere, mesh_for_surface, piola_maps, piola_pull, piola_push
from .potentials import (PotentialSpec, Variant, ViscositySpec, c2_continuity_check, f_delta,
                         potential_inequality_checks)
from .solver import (ForceSpec, InitialPhase, InitialVelocity, SchemeConfig, SolverState, initialize, run,
                     scalar_space, step, velocity_space)

logger = logging.getLogger(__name__)

# level-3 Taylor-Hood inf-sup constant on the unit sphere, from the shift-invert eigen-oracle
INF_SUP_BASELINE = 0.947936


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        timing = f" ({self.seconds:.1f} s)" if self.seconds else ""
        return f"[{tag}] {self.number:2d} {self.name}: {self.summary}{timing}"


def observed_orders(h, err) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    e = np.asarray(err, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def _rel_l2(space: FeSpace, vals: np.ndarray, exact: np.ndarray) -> float:
    w = space.quad.weights
    return float(np.sqrt(np.sum(w * (vals - exact) ** 2) / np.sum(w * exact**2)))


def _rotation(x):
    return np.cross(np.broadcast_to([0.0, 0.0, 1.0], x.shape), x)


# 1-3: geometry

def check_geometry_exactness(level: int = 3) -> CheckResult:
    S = StaticSphere()
    g = sample(S, icosphere(level).vertices, 0.0)
    eH = float(np.max(np.abs(g.H - 2.0)))
    eK = float(np.max(np.abs(g.K - 1.0)))
    eHnu = float(np.max(np.abs(np.einsum("nij,nj->ni", g.shape_op, g.nu))))
    ok = eH <= 1e-12 and eK <= 1e-12 and eHnu <= 1e-10
    return CheckResult(1, "geometry exactness", ok,
                       f"max|H-2|={eH:.1e} max|K-1|={eK:.1e} max|Hnu|={eHnu:.1e}",
                       {"H": eH, "K": eK, "Hnu": eHnu})


def check_gauss_bonnet(levels=(3, 4, 5)) -> CheckResult:
    S = StaticSphere()
    meshes = [icosphere(L) for L in levels]
    d = [abs(gauss_bonnet_defect(S, m, 0.0)) for m in meshes]
    h = [m.mesh_size() for m in meshes]
    orders = observed_orders(h, d)
    at4 = d[list(levels).index(4)] if 4 in levels else d[0]
    ok = at4 <= 1e-3 and bool(np.all(orders >= 1.8))
    return CheckResult(2, "Gauss-Bonnet", ok,
                       f"defects={['%.2e' % x for x in d]} orders={np.round(orders, 2).tolist()}",
                       {"defects": d, "orders": orders.tolist()})


def check_tube_volume(level: int = 4, gamma: float = 0.1) -> CheckResult:
    S = StaticSphere()
    exact = 4.0 * np.pi / 3.0 * ((1 + gamma) ** 3 - (1 - gamma) ** 3)
    v = tube_volume(S, icosphere(level), 0.0, gamma)
    rel = abs(v / exact - 1.0)
    return CheckResult(3, "tube volume", rel <= 5e-3, f"relative error {rel:.2e}",
                       {"volume": v, "exact": exact, "rel": rel})


# 4-6: elliptic oracles

def check_inverse_laplacian(levels=(3, 4, 5)) -> CheckResult:
    S = StaticSphere()
    errs, hs = [], []
    for L in levels:
        m = icosphere(L)
        Q = FeSpace(m, S, Family.P1_SCALAR)
        y = Q.interpolate(lambda x: legendre_harmonic(x, 2))
        g = inverse_laplacian(y)
        errs.append(_rel_l2(Q, g.values(), legendre_harmonic(Q.quad.points, 2) / 6.0))
        hs.append(m.mesh_size())
    orders = observed_orders(hs, errs)
    at4 = errs[list(levels).index(4)] if 4 in levels else errs[0]
    ok = at4 <= 2e-2 and bool(np.all(orders >= 1.8))
    return CheckResult(4, "inverse Laplacian oracle", ok,
                       f"errors={['%.2e' % e for e in errs]} orders={np.round(orders, 2).tolist()}",
                       {"errors": errs, "orders": orders.tolist()})


def check_correction_field(levels=(3, 4, 5)) -> CheckResult:
    # unit sphere with V_N = Y_2^0, so H V_N = 2 Y_2^0 and Psi = Y_2^0 / 3
    surf = PrescribedNormalVelocity(StaticSphere(), lambda x, t: legendre_harmonic(x, 2))
    errs, hs = [], []
    for L in levels:
        m = mesh_for_surface(surf, L)
        c = solve_correction(m, surf, with_time_derivative=False)
        sp_ = c.psi.space
        errs.append(_rel_l2(sp_, c.psi.values(), legendre_harmonic(sp_.quad.points, 2) / 3.0))
        hs.append(m.mesh_size())
    orders = observed_orders(hs, errs)
    at4 = errs[list(levels).index(4)] if 4 in levels else errs[0]
    ok = at4 <= 2e-2 and bool(np.all(orders >= 1.8))
    return CheckResult(5, "correction field oracle", ok,
                       f"errors={['%.2e' % e for e in errs]} orders={np.round(orders, 2).tolist()}",
                       {"errors": errs, "orders": orders.tolist()})


def check_inverse_stokes(level: int = 3) -> CheckResult:
    S = StaticSphere()
    V = FeSpace(icosphere(level), S, Family.P2_VECTOR)
    u = V.interpolate(_rotation)
    Mv = assemble_m(V).matrix
    norm_rel = abs(s_norm(u) / math.sqrt(8 * math.pi / 3) - 1.0)
    d = inverse_stokes(u).coeffs - u.coeffs
    fix_rel = math.sqrt(d @ (Mv @ d) / (u.coeffs @ (Mv @ u.coeffs)))
    k_sphere = killing_kernel_dim(V)
    E = StaticLevelSet.ellipsoid(1.2, 1.2, 0.8)
    k_ell = killing_kernel_dim(FeSpace(mesh_for_surface(E, level), E, Family.P2_VECTOR))
    ok = norm_rel <= 0.02 and fix_rel <= 0.02 and k_sphere == 3 and k_ell == 1
    return CheckResult(6, "inverse Stokes oracle", ok,
                       f"|S-norm rel|={norm_rel:.2e} |Su-u|/|u|={fix_rel:.2e} "
                       f"kernel sphere={k_sphere} spheroid={k_ell}",
                       {"norm_rel": norm_rel, "fix_rel": fix_rel, "k_sphere": k_sphere,
                        "k_spheroid": k_ell})


# 7-11: time stepping

@functools.lru_cache(maxsize=None)
def moving_run(level: int = 3, steps: int = 20, dt: float = 1e-3):
    """Seeded run on the area-preserving ellipsoid with a nonzero phase mean."""
    surf = AreaPreservingEllipsoid()
    mesh = mesh_for_surface(surf, level)
    cfg = SchemeConfig(dt=dt, t_end=steps * dt, force=ForceSpec("swirl", 1.0))
    return run(cfg, surf, mesh, InitialPhase("random", 0.1, 0.3, seed=7),
               InitialVelocity("rotation", 0.5))


@functools.lru_cache(maxsize=None)
def energy_run(variant: str = "DoubleWell", level: int = 3, steps: int = 200, dt: float = 1e-3,
               delta: float = 1e-4):
    """Static unit sphere, no force, ConvexConcave, seeded random start.

    Returns (summary or None, rows, error or None); an aborted run keeps the
    rows written up to the abort.
    """
    pot = PotentialSpec(Variant(variant), delta=delta)
    cfg = SchemeConfig(dt=dt, t_end=steps * dt, potential=pot)
    rows: list = []

    class Sink:
        snapshot_stride = 0

        def write_row(self, row):
            rows.append(row)

        def write_snapshot(self, state):
            pass

    try:
        res = run(cfg, StaticSphere(), icosphere(level), InitialPhase("random", 0.0, 0.5, seed=1),
                  InitialVelocity(), outputs=Sink())
    except PhaseBoundViolation as exc:
        return None, rows, exc
    return res, rows, None


def check_mass_conservation(rows=None) -> CheckResult:
    rows = moving_run().rows if rows is None else rows
    m0 = rows[0].mass
    rel = max(abs(r.mass - m0) for r in rows) / abs(m0)
    return CheckResult(7, "mass conservation", rel <= 1e-10,
                       f"max relative drift {rel:.2e} over {len(rows) - 1} steps on a moving surface",
                       {"rel": rel})


def check_divergence_constraint(rows=None, lin_tol: float = 1e-10) -> CheckResult:
    rows = moving_run().rows if rows is None else rows
    worst = max(r.div_residual for r in rows[1:])
    return CheckResult(8, "divergence constraint", worst <= 10 * lin_tol,
                       f"max dual-norm residual {worst:.2e} (bound {10 * lin_tol:.0e})",
                       {"max_residual": worst})


def check_energy_stability(steps: int = 200) -> CheckResult:
    res, rows, err = energy_run("DoubleWell", steps=steps)
    if err is not None:
        return CheckResult(9, "energy stability", False, f"run aborted: {err}")
    E = np.array([r.energy for r in rows])
    inc = float(np.max(np.diff(E)))
    slack = 1e-10 * E[0]
    ok = inc <= slack
    return CheckResult(9, "energy stability", ok,
                       f"{steps} steps, E {E[0]:.4g} -> {E[-1]:.4g}, max increment {inc:.2e}",
                       {"max_increment": inc, "E0": float(E[0])})


def check_log_physicality(steps: int = 200) -> CheckResult:
    res, rows, err = energy_run("RegularizedLog", steps=steps)
    peak = max(r.max_abs_phi for r in rows) if rows else float("nan")
    if err is not None:
        summary = f"aborted with PhaseBoundViolation after {len(rows) - 1} steps ({err})"
        ok = peak < 1.0
    else:
        summary = f"completed, max|phi| = {peak:.6f}"
        ok = peak < 1.0
    return CheckResult(10, "log-potential physicality", ok, summary,
                       {"peak_recorded": peak, "aborted": err is not None})


def check_delta_continuation(level: int = 3, dt: float = 2e-3, steps: int = 20,
                             deltas=(1e-1, 1e-2, 1e-3, 1e-4)) -> CheckResult:
    from .solver import delta_continuation_study

    cfg = SchemeConfig(dt=dt, t_end=steps * dt, potential=PotentialSpec(Variant.REGULARIZED_LOG))
    study = delta_continuation_study(cfg, deltas, icosphere(level), StaticSphere(),
                                     InitialPhase("random", 0.0, 0.6, seed=3), InitialVelocity())
    return CheckResult(11, "delta continuation", study.monotone,
                       "L2 distances to d=1e-4: " + ", ".join(
                           f"d={d:g}: {e:.3e}" for d, e in zip(study.deltas, study.errors)),
                       {"deltas": study.deltas, "errors": study.errors,
                        "max_abs_phi": study.max_abs_phi})


# 12-14: potential algebra, inf-sup, Piola

def check_potential_algebra(delta: float = 1e-4) -> CheckResult:
    spec = PotentialSpec(Variant.REGULARIZED_LOG, delta=delta)
    val = f_delta(1.0 - delta, delta)
    exact = math.log((2.0 - delta) / delta)
    e_val = abs(val - exact)
    cont = c2_continuity_check(spec)
    ineq = potential_inequality_checks(spec, np.linspace(-5.0, 5.0, 10_000))
    worst_jump = max(cont.jumps.values())
    ok = e_val <= 1e-14 and cont.passed and ineq.passed
    return CheckResult(12, "regularized potential algebra", ok,
                       f"|f(1-d)-log((2-d)/d)|={e_val:.1e} max jump={worst_jump:.1e} "
                       f"min r f={ineq.min_r_f:.2e} min margin={ineq.min_margin:.2e}",
                       {"value_error": e_val, "max_jump": worst_jump})


def check_inf_sup(levels=(3, 4, 5), baseline: float = INF_SUP_BASELINE) -> CheckResult:
    S = StaticSphere()
    betas = [inf_sup_constant(FeSpace(icosphere(L), S, Family.P2_VECTOR)) for L in levels]
    dev = [abs(b / baseline - 1.0) for b in betas]
    ok = max(dev) <= 0.25
    return CheckResult(13, "inf-sup stability", ok,
                       f"beta={['%.4f' % b for b in betas]} max deviation {max(dev):.1%}",
                       {"betas": betas})


def _stream_field(space: FeSpace) -> FeFunction:
    # nu x grad_Gamma(xy): tangential and divergence free on any closed surface
    x = space.lifted_nodes
    nu = space.node_normals
    g = np.stack([x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)
    g -= np.sum(g * nu, axis=1)[:, None] * nu
    return FeFunction(space, np.cross(nu, g).ravel())


def _div_residual(f: FeFunction) -> float:
    Q = FeSpace(f.space.mesh, f.space.surface, Family.P1_SCALAR)
    r = divergence_matrix(f.space, Q).matrix @ f.coeffs
    M = assemble_m(Q).matrix
    Mv = assemble_m(f.space).matrix
    return math.sqrt(r @ Factorized(M).solve(r)) / math.sqrt(f.coeffs @ (Mv @ f.coeffs))


def check_piola(levels=(2, 3, 4), t: float = 0.25) -> CheckResult:
    surf = AreaPreservingEllipsoid()
    roundtrip, divs, hs = 0.0, [], []
    for L in levels:
        m0 = mesh_for_surface(surf, L, 0.0)
        V0 = FeSpace(m0, surf, Family.P1_VECTOR)
        psi = _stream_field(V0)
        mt = advect(m0, surf, t, substeps=20)
        maps = piola_maps(mt, surf)
        u = piola_push(psi, FeSpace(mt, surf, Family.P1_VECTOR), maps)
        back = piola_pull(u, V0, maps)
        roundtrip = max(roundtrip, float(np.max(np.abs(back.coeffs - psi.coeffs))))
        divs.append(_div_residual(u))
        hs.append(mt.mesh_size())
    orders = observed_orders(hs, divs)
    ok = roundtrip <= 1e-12 and bool(np.all(orders >= 0.9))
    return CheckResult(14, "Piola properties", ok,
                       f"pull(push) error {roundtrip:.1e}; pushed divergence "
                       f"{['%.2e' % d for d in divs]} orders {np.round(orders, 2).tolist()}",
                       {"roundtrip": roundtrip, "div": divs, "orders": orders.tolist()})


# 15-17: stability, equivalence diagnostics, transport

def check_stability_experiment(level: int = 3, dt: float = 1e-3, t_end: float = 0.1,
                               perturbation: float = 1e-3) -> CheckResult:
    surf = StaticSphere()
    mesh = icosphere(level)
    visc = ViscositySpec(1.0, 1.0)
    cfg = SchemeConfig(dt=dt, t_end=t_end, viscosity=visc)
    S = scalar_space(mesh, surf)
    base = InitialPhase("random", 0.7, 0.1, seed=11).build(S)
    rng = np.random.default_rng(12)
    pert = remove_mean(dg.random_smooth_field(S, rng))
    pert = FeFunction(S, perturbation * pert.coeffs / np.max(np.abs(pert.coeffs)))
    sA = initialize(mesh, surf, base, InitialVelocity(), cfg)
    sB = initialize(mesh, surf, FeFunction(S, base.coeffs + pert.coeffs), InitialVelocity(), cfg)
    metrics, quad_err = [], 0.0
    for k in range(cfg.n_steps + 1):
        if k:
            sA = step(sA, surf, cfg)
            sB = step(sB, surf, cfg)
        m = dg.stability_metric(sA, sB)
        metrics.append(m)
        for s in (0.5, 2.0):
            phi_s = sA.phi.coeffs + s * (sB.phi.coeffs - sA.phi.coeffs)
            u_s = sA.u.coeffs + s * (sB.u.coeffs - sA.u.coeffs)
            sC = SolverState(sB.t, sB.mesh, FeFunction(sB.phi.space, phi_s), sB.mu,
                             FeFunction(sB.u.space, u_s), sB.p)
            quad_err = max(quad_err, abs(dg.stability_metric(sA, sC) / (s * s * m) - 1.0))
    ratio = max(metrics) / metrics[0]
    ok = ratio <= 100.0 and quad_err <= 0.01
    return CheckResult(15, "stability experiment", ok,
                       f"max metric/metric(0) = {ratio:.3g}, quadratic scaling error {quad_err:.1e}",
                       {"metrics": metrics, "ratio": ratio, "quad_err": quad_err})


def _fixture_state(level: int, phi_fn, u_fn=None) -> SolverState:
    surf = StaticSphere()
    mesh = icosphere(level)
    cfg = SchemeConfig(dt=1e-3, t_end=0.0)
    S = scalar_space(mesh, surf)
    V = velocity_space(mesh, surf, cfg)
    phi = S.interpolate(phi_fn)
    u = V.interpolate(u_fn) if u_fn is not None else V.zero()
    return SolverState(0.0, mesh, phi, S.zero(), u, S.zero())


def check_equivalence_diagnostics(level: int = 4) -> CheckResult:
    pot = PotentialSpec()
    # algebraic identity on a converged solver state
    res = moving_run()
    st = res.final
    Fnu = dg.normal_force_recovery(st, st.surface, pot)
    H = dg.nodal_mean_curvature(st.p.space)
    ident = float(np.max(np.abs(dg.p1_lagrange(st, Fnu).coeffs - (Fnu.coeffs + st.p.coeffs * H))))
    surf = StaticSphere()
    errs = {}
    const = _fixture_state(level, lambda x: np.full(len(x), 0.3))
    errs["constant"] = float(np.max(np.abs(dg.normal_force_recovery(const, surf, pot).coeffs)))
    zfield = _fixture_state(level, lambda x: x[:, 2])
    F1 = dg.normal_force_recovery(zfield, surf, pot)
    oracle = pot.epsilon * (1.0 - zfield.phi.space.lifted_nodes[:, 2] ** 2)
    errs["Y10"] = _nodal_rel(F1, oracle)
    rot = _fixture_state(level, lambda x: np.zeros(len(x)), _rotation)
    F2 = dg.normal_force_recovery(rot, surf, pot)
    errs["rotation"] = _nodal_rel(F2, -(1.0 - rot.phi.space.lifted_nodes[:, 2] ** 2))
    ok = ident <= 1e-14 and errs["constant"] <= 1e-12 and errs["Y10"] <= 0.02 and errs["rotation"] <= 0.02
    return CheckResult(16, "equivalence diagnostics", ok,
                       f"identity {ident:.1e}; fixtures "
                       + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()),
                       {"identity": ident, **errs})


def _nodal_rel(f: FeFunction, oracle: np.ndarray) -> float:
    M = assemble_m(f.space).matrix
    d = f.coeffs - oracle
    return math.sqrt(d @ (M @ d) / (oracle @ (M @ oracle)))


def check_transport(level: int = 4, dts=(2e-2, 1e-2, 5e-3)) -> CheckResult:
    surf = AreaPreservingEllipsoid()
    t0 = 0.1
    mesh = mesh_for_surface(surf, level, t0)
    S = FeSpace(mesh, surf, Family.P1_SCALAR)
    phi = S.interpolate(lambda x: 1.0 + x[:, 0] * x[:, 2])
    psi = S.interpolate(lambda x: x[:, 1] + x[:, 2] ** 2)
    q = S.quad
    exact = float(np.sum(q.weights * phi.values() * psi.values() * q.geom.H * q.geom.v_n))
    errs = [abs(frozen_mass_derivative(phi, psi, mesh, surf, dt) - exact) for dt in dts]
    orders = observed_orders(dts, errs)
    ok = bool(np.all(orders >= 0.9))
    return CheckResult(17, "transport-theorem consistency", ok,
                       f"errors={['%.2e' % e for e in errs]} orders={np.round(orders, 2).tolist()}",
                       {"errors": errs, "orders": orders.tolist(), "exact": exact})


ALL_CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_geometry_exactness,
    2: check_gauss_bonnet,
    3: check_tube_volume,
    4: check_inverse_laplacian,
    5: check_correction_field,
    6: check_inverse_stokes,
    7: check_mass_conservation,
    8: check_divergence_constraint,
    9: check_energy_stability,
    10: check_log_physicality,
    11: check_delta_continuation,
    12: check_potential_algebra,
    13: check_inf_sup,
    14: check_piola,
    15: check_stability_experiment,
    16: check_equivalence_diagnostics,
    17: check_transport,
}


def run_check(number: int) -> CheckResult:
    t0 = time.perf_counter()
    try:
        res = ALL_CHECKS[number]()
    except EsnschError as exc:
        res = CheckResult(number, ALL_CHECKS[number].__name__.removeprefix("check_"), False,
                          f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_checks(numbers=None, report: Callable[[str], None] | None = None) -> list[CheckResult]:
    out = []
    for n in sorted(ALL_CHECKS) if numbers is None else numbers:
        res = run_check(n)
        logger.info(res.line())
        if report is not None:
            report(res.line())
        out.append(res)
    return out
