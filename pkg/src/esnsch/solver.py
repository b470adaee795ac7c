"""Coupled Navier-Stokes / Cahn-Hilliard time stepping on the moving mesh.

One step advects the mesh, then solves a single monolithic system for the
tangential velocity U, pressure P (mean zero through a multiplier), phase
field Phi and chemical potential mu on the new mesh:

    [M_v^{n+1} U - M_v^n u^n]/dt + (A_hat + N + L) U - B^T P + K mu = F
    -B U - C P - m lam = m(q, H V_N),            m^T P = 0
    M^{n+1} Phi - M^n phi^n + dt A mu - dt K^T U = 0
    M mu - eps A Phi - (1/eps)[F1'(Phi) + F2'(phi^n)] = 0

K couples the capillary force int phi^n grad mu . v with the conservative
transport -int phi^n u . grad chi, so the two cancel exactly in the energy
balance.  N is the skew-symmetrized convection plus half the area-change
term, C the optional pressure stabilization.  The only nonlinearity is F1',
handled by Newton's method on the full system.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import (ConfigValidationError, DomainViolation, InadmissibleInitialData,
                     LinearSolverFailure, NewtonDivergence, PhaseBoundViolation, SolverFailure)
from .forms import (Family, FeFunction, FeSpace, assemble_a, assemble_a_hat_values,
                    assemble_c1_matrix, assemble_c2_matrix, assemble_l, assemble_load,
                    assemble_m, assemble_vec_a, divergence_matrix, reduce)
from .geometry import legendre_harmonic
from .linalg import Factorized, border_split, saddle
from .mesh import advect
from .potentials import PotentialSpec, Variant, ViscositySpec, d2F, d2F1, dF, dF1, dF2, eta

logger = logging.getLogger(__name__)


class Splitting(enum.Enum):
    CONVEX_CONCAVE = "ConvexConcave"
    NEWTON_IMPLICIT = "NewtonImplicit"


class PressurePair(enum.Enum):
    TAYLOR_HOOD = "TaylorHood"
    P1P1_STABILIZED = "P1P1Stabilized"


@dataclass(frozen=True)
class ForceSpec:
    """External tangential force; "swirl" is amplitude * e_z x x (projected in assembly)."""

    kind: str = "none"
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "swirl"):
            raise ConfigValidationError("force", f"unknown force kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.amplitude == 0.0

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        ez = np.broadcast_to(np.array([0.0, 0.0, 1.0]), x.shape)
        return self.amplitude * np.cross(ez, x)


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    t_end: float
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    viscosity: ViscositySpec = field(default_factory=ViscositySpec)
    force: ForceSpec = field(default_factory=ForceSpec)
    splitting: Splitting = Splitting.CONVEX_CONCAVE
    picard_iters: int = 0
    pressure_pair: PressurePair = PressurePair.TAYLOR_HOOD
    stab_param: float = 0.1
    lin_tol: float = 1e-10
    nonlin_tol: float = 1e-11
    substeps_mesh: int = 4
    max_newton: int = 30
    phase_bound: bool = True

    def __post_init__(self):
        if not isinstance(self.splitting, Splitting):
            object.__setattr__(self, "splitting", Splitting(self.splitting))
        if not isinstance(self.pressure_pair, PressurePair):
            object.__setattr__(self, "pressure_pair", PressurePair(self.pressure_pair))
        if not self.dt > 0:
            raise ConfigValidationError("dt", "time step must be positive")
        if self.t_end < 0:
            raise ConfigValidationError("t_end", "final time must be non-negative")
        if self.picard_iters < 0:
            raise ConfigValidationError("picard_iters", "must be a non-negative integer")
        if self.pressure_pair is PressurePair.P1P1_STABILIZED and not self.stab_param > 0:
            raise ConfigValidationError("stab_param", "must be positive for P1P1Stabilized")
        if not self.lin_tol > 0 or not self.nonlin_tol > 0:
            raise ConfigValidationError("lin_tol", "tolerances must be positive")
        if self.substeps_mesh < 1:
            raise ConfigValidationError("substeps_mesh", "must be at least 1")
        if self.max_newton < 1:
            raise ConfigValidationError("max_newton", "must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))

    @property
    def velocity_family(self) -> Family:
        return Family.P2_VECTOR if self.pressure_pair is PressurePair.TAYLOR_HOOD else Family.P1_VECTOR


@dataclass(frozen=True)
class InitialPhase:
    """Initial phase field: constant, mean + amplitude * P_l(z/|x|), or seeded random."""

    kind: str = "constant"
    mean: float = 0.0
    amplitude: float = 0.0
    degree: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "random"):
            raise ConfigValidationError("phi0", f"unknown initial condition {self.kind!r}")

    def build(self, space: FeSpace) -> FeFunction:
        n = space.dof_count
        if self.kind == "constant":
            return space.constant(self.mean)
        if self.kind == "harmonic":
            vals = self.mean + self.amplitude * legendre_harmonic(space.lifted_nodes, self.degree)
        else:
            rng = np.random.default_rng(self.seed)
            vals = self.mean + self.amplitude * (2.0 * rng.random(n) - 1.0)
        M = assemble_m(space).matrix
        w = np.asarray(M.sum(axis=0)).ravel()
        vals = vals + (self.mean - w @ vals / w.sum())
        return FeFunction(space, vals)

    def with_amplitude(self, amplitude: float) -> "InitialPhase":
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class InitialVelocity:
    """Initial velocity: zero or a rigid rotation amplitude * e_z x x."""

    kind: str = "zero"
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "rotation"):
            raise ConfigValidationError("u0", f"unknown initial velocity {self.kind!r}")

    def build(self, space: FeSpace) -> FeFunction:
        if self.kind == "zero":
            return space.zero()
        return space.interpolate(
            lambda x: self.amplitude * np.cross(np.broadcast_to([0.0, 0.0, 1.0], x.shape), x))


@dataclass
class SolverState:
    t: float
    mesh: object
    phi: FeFunction
    mu: FeFunction
    u: FeFunction
    p: FeFunction
    step_index: int = 0
    info: dict = field(default_factory=dict)

    @property
    def surface(self):
        return self.phi.space.surface


def scalar_space(mesh, surface) -> FeSpace:
    return FeSpace(mesh, surface, Family.P1_SCALAR)


def velocity_space(mesh, surface, config: SchemeConfig) -> FeSpace:
    return FeSpace(mesh, surface, config.velocity_family)


def _mean(f: FeFunction) -> float:
    M = assemble_m(f.space).matrix
    one = np.ones(f.space.dof_count)
    return float(one @ (M @ f.coeffs) / (one @ (M @ one)))


def check_admissible(phi: FeFunction, potential: PotentialSpec, margin: float = 1e-6) -> None:
    """Admissibility of initial data for logarithmic potentials."""
    if not potential.is_log:
        return
    mean = _mean(phi)
    if not abs(mean) < 1.0:
        raise InadmissibleInitialData(f"mean of phi0 is {mean:.6g}; it must lie in (-1, 1)")
    peak = float(np.max(np.abs(phi.coeffs)))
    if peak > 1.0 - margin:
        raise InadmissibleInitialData(f"max |phi0| = {peak:.6g} exceeds 1 - {margin:g}")


# cached operators of one mesh

def _ops(S: FeSpace, V: FeSpace, config: SchemeConfig) -> dict:
    key = ("solver", V.family, config.stab_param, config.viscosity)
    c = S._surface_cache()
    if key in c:
        return c[key]
    T = V.reduction
    Ms = assemble_m(S).matrix.tocsr()
    As = assemble_a(S).matrix.tocsr()
    Mv = assemble_m(V).matrix.tocsr()
    B = (divergence_matrix(V, S).matrix @ T).tocsr()
    m1 = np.asarray(Ms.sum(axis=1)).ravel()
    q = S.quad
    hvn = assemble_load(S, q.geom.H * q.geom.v_n)
    stab = None
    if V.family.degree == 1:
        h = V.mesh.mesh_size()
        stab = (config.stab_param * h * h * As).tocsr()
    qv = V.quad
    Mh = assemble_m(V, weight=qv.geom.H * qv.geom.v_n).matrix
    Lr = reduce(V, assemble_l(V).matrix + 0.5 * Mh)
    ops = dict(T=T, Ms=Ms, As=As, Mv=Mv, B=B, m1=m1, hvn=hvn, stab=stab, Lr=Lr,
               Mvr=reduce(V, Mv), static=V.surface.is_static)
    if config.viscosity.eta1 == config.viscosity.eta2:
        eq = np.full(V.quad.weights.shape, config.viscosity.eta1)
        ops["Ahat"] = reduce(V, assemble_a_hat_values(eq, V).matrix)
    c[key] = ops
    return ops


def _mass(space: FeSpace) -> sp.csr_matrix:
    c = space._surface_cache()
    key = ("solver_mass", space.family)
    if key not in c:
        c[key] = assemble_m(space).matrix.tocsr()
    return c[key]


def _ahat(V: FeSpace, phi_vals: np.ndarray, config: SchemeConfig, ops: dict):
    if "Ahat" in ops:
        return ops["Ahat"]
    return reduce(V, assemble_a_hat_values(eta(config.viscosity, phi_vals), V).matrix)


def _convection(V: FeSpace, w: FeFunction):
    C = assemble_c1_matrix(2, w, V).matrix
    return reduce(V, 0.5 * (C - C.T))


# consistent initial data

def stokes_projection(u0: FeFunction, S: FeSpace, config: SchemeConfig) -> tuple[FeFunction, FeFunction]:
    """(M + a)-projection onto fields with B u = -m(q, H V_N); returns (u, p)."""
    V = u0.space
    ops = _ops(S, V, config)
    T = ops["T"]
    K = reduce(V, ops["Mv"] + assemble_vec_a(V).matrix)
    n_u, n_p = K.shape[0], S.dof_count
    fac = Factorized(saddle(K, ops["B"], ops["m1"], ops["stab"]), rtol=config.lin_tol,
                     error=LinearSolverFailure, split=border_split(n_u + n_p, pin=n_u))
    rhs = np.concatenate([K @ (T.T @ u0.coeffs), ops["hvn"], [0.0]])
    sol = fac.solve(rhs)
    return FeFunction(V, T @ sol[:n_u]), FeFunction(S, sol[n_u:n_u + n_p])


def chemical_potential(phi: FeFunction, potential: PotentialSpec) -> FeFunction:
    """mu with m(mu, chi) = eps a(phi, chi) + (1/eps) m(F'(phi), chi)."""
    S = phi.space
    eps = potential.epsilon
    rhs = eps * (assemble_a(S).matrix @ phi.coeffs) + assemble_load(S, dF(potential, phi.values())) / eps
    fac = Factorized(assemble_m(S).matrix, error=LinearSolverFailure)
    return FeFunction(S, fac.solve(rhs))


def initialize(mesh, surface, phi0, u0, config: SchemeConfig) -> SolverState:
    """Build a consistent initial state.

    phi0 / u0 may be FeFunctions or InitialPhase / InitialVelocity specs.
    """
    S = scalar_space(mesh, surface)
    V = velocity_space(mesh, surface, config)
    phi = phi0.build(S) if hasattr(phi0, "build") else FeFunction(S, np.asarray(phi0.coeffs))
    check_admissible(phi, config.potential)
    u_raw = u0.build(V) if hasattr(u0, "build") else FeFunction(V, np.asarray(u0.coeffs))
    u, p = stokes_projection(u_raw.project_tangential(), S, config)
    mu = chemical_potential(phi, config.potential)
    return SolverState(mesh.t, mesh, phi, mu, u, p, 0, {})


# one time step

def _check_phase(phi: np.ndarray, potential: PotentialSpec, enforce: bool = True) -> None:
    # the regularized potential is defined on all of R; its bound can be waived for delta studies
    if potential.variant is Variant.LOGARITHMIC or (potential.is_log and enforce):
        peak = float(np.max(np.abs(phi)))
        if not peak < 1.0:
            raise PhaseBoundViolation(f"max |phi| = {peak:.6g} >= 1; reduce the time step")


def _potential_terms(config: SchemeConfig, S: FeSpace, phi_new: np.ndarray,
                     phi_old_vals: np.ndarray):
    """Load vector of the potential derivative and its Jacobian weight at quadrature points."""
    pot = config.potential
    vals = FeFunction(S, phi_new).values()
    if config.splitting is Splitting.CONVEX_CONCAVE:
        load = assemble_load(S, dF1(pot, vals) + dF2(pot, phi_old_vals))
        jac = d2F1(pot, vals)
    else:
        load = assemble_load(S, dF(pot, vals))
        jac = d2F(pot, vals)
    return load, jac


def _newton(state_vec: np.ndarray, lin_blocks: dict, config: SchemeConfig, S: FeSpace,
            phi_old_vals: np.ndarray, sizes: tuple[int, int, int]) -> tuple[np.ndarray, int]:
    """Newton iteration for the monolithic system; only the potential term is nonlinear.

    The Jacobian factorization is reused while the increments contract by at
    least a factor of four, and refreshed otherwise.
    """
    n_u, n_p, n_s = sizes
    eps = config.potential.epsilon
    i_phi = n_u + n_p + 1
    i_mu = i_phi + n_s
    Alin = lin_blocks["A"]
    b = lin_blocks["b"]
    split = border_split(n_u + n_p, pin=n_u)
    X = state_vec.copy()
    fac = None
    prev_inc = np.inf
    for it in range(1, config.max_newton + 1):
        phi = X[i_phi:i_mu]
        try:
            load, jac = _potential_terms(config, S, phi, phi_old_vals)
        except DomainViolation as exc:
            raise PhaseBoundViolation(str(exc)) from exc
        R = Alin @ X - b
        R[i_mu:] -= load / eps
        if fac is None:
            Jpot = assemble_m(S, weight=jac).matrix / eps
            pad = sp.csr_matrix((i_mu, i_mu + n_s))
            Jrow = sp.hstack([sp.csr_matrix((n_s, i_phi)), -Jpot, sp.csr_matrix((n_s, n_s))])
            J = (Alin + sp.vstack([pad, Jrow])).tocsc()
            try:
                fac = Factorized(J, rtol=config.lin_tol, error=LinearSolverFailure, split=split)
            except SolverFailure as exc:
                raise LinearSolverFailure(str(exc)) from exc
        dX = fac.solve(-R)
        alpha = 1.0
        if config.potential.variant is Variant.LOGARITHMIC:
            # damp so every nodal value stays inside (-1, 1)
            for _ in range(30):
                if np.max(np.abs(phi + alpha * dX[i_phi:i_mu])) < 1.0:
                    break
                alpha *= 0.5
            else:
                raise PhaseBoundViolation("Newton update leaves (-1, 1) at every damping level")
        X = X + alpha * dX
        if not np.all(np.isfinite(X)):
            raise NewtonDivergence("non-finite Newton iterate")
        inc = float(np.max(np.abs(alpha * dX[i_phi:])))
        scale = max(1.0, float(np.max(np.abs(X[i_phi:]))))
        if inc <= config.nonlin_tol * scale and alpha == 1.0:
            return X, it
        if inc > 0.25 * prev_inc or alpha < 1.0:
            fac = None
        prev_inc = inc
    raise NewtonDivergence(f"no convergence in {config.max_newton} Newton iterations")


def step(state: SolverState, surface, config: SchemeConfig, dt: float | None = None) -> SolverState:
    dt = config.dt if dt is None else float(dt)
    t1 = state.t + dt
    mesh1 = advect(state.mesh, surface, t1, config.substeps_mesh)
    S = scalar_space(mesh1, surface)
    V = velocity_space(mesh1, surface, config)
    ops = _ops(S, V, config)
    T = ops["T"]
    n_u, n_p, n_s = T.shape[1], S.dof_count, S.dof_count

    # data from the previous mesh (coefficients identified through the node numbering)
    Ms_old = _mass(state.phi.space)
    Mv_old = _mass(state.u.space)
    rhs_ch = Ms_old @ state.phi.coeffs
    rhs_ns = T.T @ (Mv_old @ state.u.coeffs) / dt
    if not config.force.is_zero:
        qv = V.quad
        rhs_ns = rhs_ns + T.T @ assemble_load(V, config.force(qv.points, t1))
    phi_old = FeFunction(S, state.phi.coeffs)
    phi_old_vals = phi_old.values()
    K = (T.T @ assemble_c2_matrix(phi_old_vals, S, V).matrix).tocsr()

    eps = config.potential.epsilon
    As, Ms = ops["As"], ops["Ms"]
    m1 = ops["m1"]
    stab = ops["stab"] if ops["stab"] is not None else sp.csr_matrix((n_p, n_p))
    X = np.concatenate([T.T @ state.u.coeffs, state.p.coeffs, [0.0], state.phi.coeffs,
                        state.mu.coeffs])
    u_frozen = FeFunction(V, state.u.coeffs).project_tangential()
    phi_visc = phi_old_vals
    total_newton = 0
    sweeps = 0
    for sweep in range(config.picard_iters + 1):
        Kns = ops["Mvr"] / dt + _ahat(V, phi_visc, config, ops) + _convection(V, u_frozen) + ops["Lr"]
        col_m = sp.csr_matrix(m1.reshape(-1, 1))
        Z = None
        Alin = sp.bmat([
            [Kns, -ops["B"].T, Z, Z, K],
            [-ops["B"], -stab, -col_m, Z, Z],
            [Z, -col_m.T, sp.csr_matrix((1, 1)), Z, Z],
            [-dt * K.T, Z, Z, Ms, dt * As],
            [Z, Z, Z, -eps * As, Ms],
        ], format="csr")
        b = np.concatenate([rhs_ns, ops["hvn"], [0.0], rhs_ch, np.zeros(n_s)])
        X_new, its = _newton(X, {"A": Alin, "b": b, "Ms": Ms}, config, S, phi_old_vals,
                             (n_u, n_p, n_s))
        total_newton += its
        sweeps = sweep
        change = float(np.max(np.abs(X_new - X))) if sweep > 0 else np.inf
        X = X_new
        if sweep < config.picard_iters:
            if change <= config.nonlin_tol * max(1.0, float(np.max(np.abs(X)))):
                break
            u_frozen = FeFunction(V, T @ X[:n_u])
            phi_visc = FeFunction(S, X[n_u + n_p + 1:n_u + n_p + 1 + n_s]).values()

    U = T @ X[:n_u]
    P = X[n_u:n_u + n_p]
    lam = float(X[n_u + n_p])
    phi = X[n_u + n_p + 1:n_u + n_p + 1 + n_s]
    mu = X[n_u + n_p + 1 + n_s:]
    _check_phase(phi, config.potential, config.phase_bound)
    div_res = divergence_residual(ops["B"] @ X[:n_u], ops["hvn"], Ms, m1)
    info = {"newton_iters": total_newton, "picard_sweeps": sweeps, "multiplier": lam,
            "div_residual": div_res, "dt": dt}
    return SolverState(t1, mesh1, FeFunction(S, phi), FeFunction(S, mu), FeFunction(V, U),
                       FeFunction(S, P), state.step_index + 1, info)


def divergence_residual(BU: np.ndarray, hvn: np.ndarray, Ms, m1: np.ndarray) -> float:
    """Dual norm of q -> m(q, div u) + m(q, H V_N) over mean-zero q."""
    r = BU + hvn
    r = r - m1 * (r.sum() / m1.sum())
    fac = Factorized(Ms, error=LinearSolverFailure)
    return float(np.sqrt(max(r @ fac.solve(r), 0.0)))


def state_divergence_residual(state: SolverState) -> float:
    S = state.phi.space
    V = state.u.space
    B = divergence_matrix(V, S).matrix
    q = S.quad
    hvn = assemble_load(S, q.geom.H * q.geom.v_n)
    Ms = _mass(S)
    return divergence_residual(B @ state.u.coeffs, hvn, Ms, np.asarray(Ms.sum(axis=1)).ravel())


# driving loops

@dataclass
class RunSummary:
    status: int
    steps: int
    final: SolverState
    rows: list
    message: str = ""


def run(config: SchemeConfig, surface, mesh, phi0, u0, outputs=None,
        callback: Callable[[SolverState], None] | None = None) -> RunSummary:
    """Integrate to t_end.

    `outputs`, when given, receives ``write_row(row)`` for every state
    (initial included) and ``write_snapshot(state)`` every
    ``outputs.snapshot_stride`` steps and at the end.
    """
    from .diagnostics import energy_row

    state = initialize(mesh, surface, phi0, u0, config)
    rows = []

    def emit(s: SolverState, final: bool = False):
        row = energy_row(s, config.potential, config.viscosity)
        rows.append(row)
        if outputs is not None:
            outputs.write_row(row)
            stride = getattr(outputs, "snapshot_stride", 0)
            if s.step_index == 0 or final or (stride and s.step_index % stride == 0):
                outputs.write_snapshot(s)
        if callback is not None:
            callback(s)

    n = config.n_steps
    emit(state, final=(n == 0))
    for k in range(n):
        dt = min(config.dt, config.t_end - state.t) if k == n - 1 else config.dt
        state = step(state, surface, config, dt)
        logger.debug("step %d t=%.6g newton=%d", state.step_index, state.t, state.info["newton_iters"])
        emit(state, final=(k == n - 1))
    return RunSummary(0, n, state, rows)


@dataclass
class DeltaStudy:
    deltas: list
    errors: list
    reference_delta: float
    monotone: bool
    max_abs_phi: list = field(default_factory=list)


def delta_continuation_study(config: SchemeConfig, delta_list, mesh, surface, phi0, u0) -> DeltaStudy:
    """Final-time L2 distance of regularized-log runs to the smallest-delta run."""
    deltas = sorted(set(float(d) for d in delta_list), reverse=True)
    ref = deltas[-1]
    finals, peaks = {}, {}
    for d in deltas:
        # wells of the regularized potential leave [-1, 1] for large delta, so no bound here
        cfg = replace(config, potential=config.potential.with_delta(d), phase_bound=False)
        res = run(cfg, surface, mesh, phi0, u0)
        finals[d] = res.final
        peaks[d] = max(r.max_abs_phi for r in res.rows)
    ref_state = finals[ref]
    M = _mass(ref_state.phi.space)
    errs = []
    for d in deltas[:-1]:
        diff = finals[d].phi.coeffs - ref_state.phi.coeffs
        errs.append(float(np.sqrt(max(diff @ (M @ diff), 0.0))))
    monotone = all(errs[i] > errs[i + 1] for i in range(len(errs) - 1))
    return DeltaStudy(deltas[:-1], errs, ref, monotone, [peaks[d] for d in deltas])
