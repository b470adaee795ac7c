"""Scalar monitors, post-processed fields and inequality probes for solver states."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .elliptic import h_minus1_norm, remove_mean, s_norm
from .errors import MeanMismatch, OutOfDomain, ZeroDenominator
from .forms import FeFunction, FeSpace, assemble_a, assemble_m, l2_project
from .geometry import sample
from .mesh import advect
from .potentials import F, PotentialSpec, ViscositySpec, eta

logger = logging.getLogger(__name__)

RHO = 1.0

CSV_COLUMNS = ("step", "t", "area", "mass", "E_ch", "E_kin", "E_total", "grad_mu_norm",
               "strain_norm", "div_residual", "max_abs_phi", "p_mean", "newton_iters")


@dataclass
class DiagnosticsRow:
    t: float
    area: float
    mass: float
    E_ch: float
    E_kin: float
    grad_mu_norm: float
    strain_norm: float
    div_residual: float
    max_abs_phi: float
    p_mean: float
    extra: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.E_kin + self.E_ch

    def as_record(self) -> dict:
        rec = {"step": self.extra.get("step", 0), "t": self.t, "area": self.area,
               "mass": self.mass, "E_ch": self.E_ch, "E_kin": self.E_kin, "E_total": self.energy,
               "grad_mu_norm": self.grad_mu_norm, "strain_norm": self.strain_norm,
               "div_residual": self.div_residual, "max_abs_phi": self.max_abs_phi,
               "p_mean": self.p_mean, "newton_iters": self.extra.get("newton_iters", 0)}
        return {k: rec[k] for k in CSV_COLUMNS}


def _respace(f: FeFunction, n_sub: int) -> FeFunction:
    if n_sub == f.space.n_sub:
        return f
    s = FeSpace(f.space.mesh, f.space.surface, f.space.family, n_sub)
    return FeFunction(s, f.coeffs)


def ginzburg_landau_energy(phi: FeFunction, potential: PotentialSpec) -> float:
    w = phi.space.quad.weights
    g = phi.gradient()
    grad2 = np.einsum("eqk,eqk->eq", g, g)
    dens = 0.5 * potential.epsilon * grad2 + F(potential, phi.values()) / potential.epsilon
    return float(np.sum(w * dens))


def energy_row(state, potential: PotentialSpec, viscosity: ViscositySpec | None = None,
               n_sub: int = 1) -> DiagnosticsRow:
    """All monitored scalars of a state; n_sub > 1 refines the quadrature."""
    phi = _respace(state.phi, n_sub)
    mu = _respace(state.mu, n_sub)
    u = _respace(state.u, n_sub)
    p = _respace(state.p, n_sub)
    w = phi.space.quad.weights
    area = float(np.sum(w))
    mass = float(np.sum(w * phi.values()))
    E_ch = ginzburg_landau_energy(phi, potential)
    uv = u.values()
    E_kin = 0.5 * RHO * float(np.sum(u.space.quad.weights * np.einsum("eqi,eqi->eq", uv, uv)))
    gm = mu.gradient()
    grad_mu = float(np.sqrt(np.sum(w * np.einsum("eqk,eqk->eq", gm, gm))))
    G = u.gradient()
    E = 0.5 * (G + np.swapaxes(G, -1, -2))
    strain = float(np.sqrt(np.sum(u.space.quad.weights * np.einsum("eqij,eqij->eq", E, E))))
    div_res = state.info.get("div_residual")
    if div_res is None:
        from .solver import state_divergence_residual

        div_res = state_divergence_residual(state)
    p_mean = float(np.sum(w * p.values())) / area
    extra = {"step": state.step_index, "newton_iters": state.info.get("newton_iters", 0)}
    return DiagnosticsRow(state.t, area, mass, E_ch, E_kin, grad_mu, strain, float(div_res),
                          float(np.max(np.abs(state.phi.coeffs))), p_mean, extra)


@dataclass
class EnergyBudget:
    sup_energy: float
    dissipation: float
    bounded: bool
    violations: list
    max_increase: float
    passed: bool


def energy_budget(rows, eta_star: float, check_monotone: bool = True,
                  slack: float = 1e-10) -> EnergyBudget:
    """sup of E_kin + E_ch plus the accumulated dissipation of a run.

    The dissipation integral uses the end-of-step values, matching the
    implicit treatment in the scheme.  With check_monotone the energy must
    not grow by more than slack * E_0 in any step.
    """
    E = np.array([r.energy for r in rows])
    t = np.array([r.t for r in rows])
    diss_rate = np.array([eta_star * r.strain_norm**2 + r.grad_mu_norm**2 for r in rows])
    dissipation = float(np.sum(np.diff(t) * diss_rate[1:])) if len(rows) > 1 else 0.0
    scale = max(abs(E[0]), 1.0)
    bounded = bool(np.all(np.isfinite(E)) and np.max(np.abs(E)) <= 1e6 * scale)
    inc = np.diff(E)
    violations = []
    if check_monotone and inc.size:
        violations = [int(k) + 1 for k in np.nonzero(inc > slack * abs(E[0]))[0]]
    max_inc = float(inc.max()) if inc.size else 0.0
    return EnergyBudget(float(E.max()) if E.size else 0.0, dissipation, bounded, violations,
                        max_inc, bounded and not violations)


# normal force balance and pressures

def _nodal_project(space: FeSpace, values_q: np.ndarray) -> FeFunction:
    return l2_project(space, values_q)


def normal_velocity_rate(mesh, surface, dt_fd: float | None = None, substeps: int = 8) -> np.ndarray:
    """Central difference of V_N along the normal vertex trajectories."""
    if surface.is_static:
        return np.zeros(mesh.n_vertices)
    dt_fd = 1e-4 * getattr(surface, "T", 1.0) if dt_fd is None else dt_fd
    vals = []
    for s in (1.0, -1.0):
        m = advect(mesh, surface, mesh.t + s * dt_fd, substeps, check_quality=False)
        vals.append(surface.normal_velocity(m.vertices, m.t))
    return (vals[0] - vals[1]) / (2 * dt_fd)


def normal_force_recovery(state, surface, potential: PotentialSpec,
                          viscosity: ViscositySpec | None = None,
                          dt_fd: float | None = None) -> FeFunction:
    """Normal force F_nu implied by a state, L2-projected to the P1 scalar space."""
    viscosity = ViscositySpec() if viscosity is None else viscosity
    S = state.phi.space
    q = S.quad
    geom = q.geom
    Hs = geom.shape_op
    vn = geom.v_n
    dvn_nodes = normal_velocity_rate(state.mesh, surface, dt_fd)
    dvn = FeFunction(S, dvn_nodes).values()
    u = FeFunction(state.u.space, state.u.coeffs)
    uq = u.values()
    G = u.gradient()
    # V_N is smooth; its tangential gradient comes from the interpolant
    vn_f = FeFunction(S, surface.normal_velocity(S.lifted_nodes, S.t))
    gvn = vn_f.gradient()
    gphi = state.phi.gradient()
    etaq = eta(viscosity, state.phi.values())
    trHG = np.einsum("eqij,eqji->eq", Hs, G)
    trH2 = np.einsum("eqij,eqji->eq", Hs, Hs)
    val = (RHO * dvn
           + 2.0 * etaq * (trHG - vn * trH2)
           - RHO * np.einsum("eqi,eqij,eqj->eq", uq, Hs, uq)
           + RHO * np.einsum("eqi,eqi->eq", uq, gvn)
           - state.p.values() * geom.H
           + potential.epsilon * np.einsum("eqi,eqij,eqj->eq", gphi, Hs, gphi))
    return _nodal_project(S, val)


def nodal_mean_curvature(space: FeSpace) -> np.ndarray:
    return sample(space.surface, space.lifted_nodes, space.t).H


def p1_lagrange(state, Fnu: FeFunction) -> FeFunction:
    """p^1 = F_nu + p H, nodewise."""
    H = nodal_mean_curvature(state.p.space)
    return FeFunction(Fnu.space, Fnu.coeffs + state.p.coeffs * H)


def pressure_correction(state, potential: PotentialSpec) -> FeFunction:
    """(eps/2)|grad phi|^2 + F(phi)/eps, L2-projected."""
    g = state.phi.gradient()
    grad2 = np.einsum("eqk,eqk->eq", g, g)
    val = 0.5 * potential.epsilon * grad2 + F(potential, state.phi.values()) / potential.epsilon
    return _nodal_project(state.phi.space, val)


def modified_pressure(state, potential: PotentialSpec) -> FeFunction:
    corr = pressure_correction(state, potential)
    return FeFunction(state.p.space, state.p.coeffs + corr.coeffs)


@dataclass
class StressField:
    T: np.ndarray          # (nE, 3, 3) element averages
    asymmetry: float


def cauchy_stress(state, potential: PotentialSpec, viscosity: ViscositySpec) -> StressField:
    """T = -p P + 2 eta(phi) E(u) - eps grad phi (x) grad phi, averaged per element."""
    S = state.phi.space
    q = S.quad
    P = q.geom.proj
    pq = state.p.values()
    G = FeFunction(state.u.space, state.u.coeffs).gradient()
    E = 0.5 * (G + np.swapaxes(G, -1, -2))
    g = state.phi.gradient()
    etaq = eta(viscosity, state.phi.values())
    Tq = (-pq[..., None, None] * P + 2.0 * etaq[..., None, None] * E
          - potential.epsilon * g[..., :, None] * g[..., None, :])
    w = q.weights
    T = np.einsum("eq,eqij->eij", w, Tq) / w.sum(axis=1)[:, None, None]
    asym = float(np.max(np.abs(T - np.swapaxes(T, 1, 2)))) if T.size else 0.0
    return StressField(T, asym)


# stability metric

def _common(fB: FeFunction, spaceA: FeSpace) -> FeFunction:
    if fB.space is spaceA:
        return fB
    same = fB.space.dof_count == spaceA.dof_count
    if not same or not np.allclose(fB.space.mesh.vertices, spaceA.mesh.vertices):
        raise MeanMismatch("states live on different meshes")
    return FeFunction(spaceA, fB.coeffs)


def stability_metric(stateA, stateB, mean_tol: float = 1e-8) -> float:
    """||u_A - u_B||_S^2 + ||phi_A - phi_B||_{-1}^2."""
    S = stateA.phi.space
    dphi = FeFunction(S, stateA.phi.coeffs - _common(stateB.phi, S).coeffs)
    M = assemble_m(S).matrix
    area = float(M.sum())
    gap = float(np.ones(S.dof_count) @ (M @ dphi.coeffs)) / area
    if abs(gap) > mean_tol:
        raise MeanMismatch(f"phase means differ by {gap:.3e}")
    V = stateA.u.space
    du = FeFunction(V, stateA.u.coeffs - _common(stateB.u, V).coeffs)
    su = s_norm(du) if np.any(du.coeffs) else 0.0
    hp = h_minus1_norm(remove_mean(dphi)) if np.any(dphi.coeffs) else 0.0
    return su**2 + hp**2


# Bihari-LaSalle bound

def bihari_bound(k: float, K_integral: float, gamma: float, q: float) -> float:
    """Bound on X with X <= k + int K (X + gamma X^{(q+1)/2}).

    Inverts Omega(y) = (2/(q-1)) log((gamma + y0^{(1-q)/2}) / (gamma + y^{(1-q)/2})) in closed form.
    """
    if not q > 1:
        raise OutOfDomain("q must exceed 1")
    if k < 0 or K_integral < 0 or gamma < 0:
        raise OutOfDomain("k, K_integral and gamma must be non-negative")
    if k == 0:
        return 0.0
    r = 0.5 * (q - 1.0)
    base = (gamma + k ** (-r)) * np.exp(-r * K_integral) - gamma
    if not base > 0:
        raise OutOfDomain("Omega(k) + K_integral lies outside the range of Omega")
    return float(base ** (-1.0 / r))


# inequality probes

class InequalityKind(enum.Enum):
    POINCARE = "Poincare"
    KORN = "Korn"
    LADYZHENSKAYA = "Ladyzhenskaya"
    BREZIS_GALLOUET = "BrezisGallouet"


def _l2(space: FeSpace, vals: np.ndarray) -> float:
    w = space.quad.weights
    if vals.ndim == 2:
        return float(np.sqrt(np.sum(w * vals**2)))
    return float(np.sqrt(np.sum(w * np.sum(vals.reshape(vals.shape[:2] + (-1,)) ** 2, axis=-1))))


def _discrete_laplacian_norm(f: FeFunction) -> float:
    S = f.space
    A = assemble_a(S).matrix
    lumped = np.asarray(assemble_m(S).matrix.sum(axis=1)).ravel()
    lap = -(A @ f.coeffs) / lumped
    return float(np.sqrt(np.sum(lumped * lap**2)))


def inequality_probe(kind: InequalityKind | str, f: FeFunction) -> float:
    """LHS/RHS of an inequality with the constant stripped.

    Poincare:      ||f - mean||       / ||grad f||
    Korn:          ||grad u||         / (||u|| + ||E(u)||)
    Ladyzhenskaya: ||f||_4            / (||f||^{1/2} ||f||_{H1}^{1/2})
    BrezisGallouet: ||f||_inf         / (||f||_{H1} (1 + log(1 + ||f||_{H2}/||f||_{H1}))^{1/2})
    The H2 norm is a surrogate built from the mass-lumped discrete Laplacian.
    """
    kind = InequalityKind(kind) if not isinstance(kind, InequalityKind) else kind
    S = f.space
    w = S.quad.weights
    vals = f.values()
    grad = f.gradient()
    gnorm = _l2(S, grad)
    l2 = _l2(S, vals)
    if kind is InequalityKind.POINCARE:
        if S.family.is_vector:
            raise ValueError("Poincare probe takes a scalar field")
        mean = float(np.sum(w * vals) / np.sum(w))
        # gradients of constants carry round-off from the curved element maps
        if gnorm <= 1e-12 * l2:
            raise ZeroDenominator("constant field has no gradient")
        return _l2(S, vals - mean) / gnorm
    if kind is InequalityKind.KORN:
        if not S.family.is_vector:
            raise ValueError("Korn probe takes a vector field")
        E = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        den = l2 + _l2(S, E)
        if den == 0:
            raise ZeroDenominator("zero field")
        return gnorm / den
    h1 = np.sqrt(l2**2 + gnorm**2)
    if kind is InequalityKind.LADYZHENSKAYA:
        mag2 = vals**2 if vals.ndim == 2 else np.einsum("eqi,eqi->eq", vals, vals)
        l4 = float(np.sum(w * mag2**2)) ** 0.25
        den = np.sqrt(l2 * h1)
        if den == 0:
            raise ZeroDenominator("zero field")
        return l4 / den
    if S.family.is_vector:
        raise ValueError("Brezis-Gallouet probe takes a scalar field")
    if h1 == 0:
        raise ZeroDenominator("zero field")
    h2 = np.sqrt(h1**2 + _discrete_laplacian_norm(f) ** 2)
    linf = float(np.max(np.abs(f.coeffs)))
    return linf / (h1 * np.sqrt(1.0 + np.log(1.0 + h2 / h1)))


def random_smooth_field(space: FeSpace, rng: np.random.Generator, degree: int = 3) -> FeFunction:
    """Random polynomial of the ambient coordinates up to `degree`, interpolated."""
    from itertools import combinations_with_replacement

    monomials = [()]
    for d in range(1, degree + 1):
        monomials += list(combinations_with_replacement(range(3), d))
    ncomp = 3 if space.family.is_vector else 1
    coef = rng.standard_normal((len(monomials), ncomp))

    def fn(x):
        out = np.zeros((len(x), ncomp))
        for c, mono in zip(coef, monomials):
            term = np.ones(len(x))
            for i in mono:
                term = term * x[:, i]
            out += term[:, None] * c
        return out if ncomp == 3 else out[:, 0]

    return space.interpolate(fn)
