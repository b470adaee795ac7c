"""Auxiliary elliptic solves on the current surface mesh.

* tangential correction: -Laplace Psi = H V_N, u_tilde = grad Psi, and the body force B;
* inverse Laplacian G on mean-zero data and the H^{-1} norm;
* inverse Stokes-type operator S and the S-norm;
* inf-sup constant of a velocity/pressure pair and the Killing kernel dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy import linalg
import scipy.sparse.linalg as spla

from .errors import EigenSolverFailure, IncompatibleData, NonZeroMean
from .forms import (Family, FeFunction, FeSpace, assemble_a, assemble_load, assemble_m,
                    assemble_vec_a, assemble_vec_grad, divergence_matrix, l2_project, reduce)
from .linalg import Factorized, border_split, bordered, saddle
from .mesh import advect

logger = logging.getLogger(__name__)


def _space_cache(space: FeSpace) -> dict:
    return space._surface_cache().setdefault(("elliptic", space.family, space.n_sub), {})


def _laplace_factor(space: FeSpace):
    c = _space_cache(space)
    if "lap" not in c:
        M = assemble_m(space).matrix
        A = assemble_a(space).matrix
        m1 = np.asarray(M.sum(axis=1)).ravel()
        c["lap"] = (Factorized(bordered(A, m1), split=border_split(A.shape[0])), M, A, m1)
    return c["lap"]


def solve_mean_zero_poisson(space: FeSpace, rhs: np.ndarray) -> np.ndarray:
    """a(x, v) = rhs(v) with int x = 0; the multiplier absorbs any mean of rhs."""
    fac, _, _, _ = _laplace_factor(space)
    sol = fac.solve(np.concatenate([rhs, [0.0]]))
    return sol[:-1]


# inverse Laplacian

def _dual(z, space: FeSpace | None):
    if isinstance(z, FeFunction):
        M = _laplace_factor(z.space)[1]
        return z.space, M @ z.coeffs, float(np.sqrt(max(z.coeffs @ (M @ z.coeffs), 0.0)))
    if space is None:
        raise ValueError("a dual vector needs its space")
    rhs = np.asarray(z, dtype=float)
    M = _laplace_factor(space)[1]
    # norm of the Riesz representative
    x = spla.spsolve(M.tocsc(), rhs)
    return space, rhs, float(np.sqrt(max(x @ rhs, 0.0)))


def inverse_laplacian(z, space: FeSpace | None = None, mean_tol: float = 1e-10) -> FeFunction:
    """Mean-zero G z with a(G z, v) = m(z, v) for mean-zero z."""
    space, rhs, nrm = _dual(z, space)
    mean = rhs.sum()
    if abs(mean) > mean_tol * max(nrm, 1e-300) and abs(mean) > 1e-300:
        raise NonZeroMean(f"m(z, 1) = {mean:.3e} exceeds {mean_tol:g} * |z|")
    return FeFunction(space, solve_mean_zero_poisson(space, rhs))


def h_minus1_norm(z, space: FeSpace | None = None, mean_tol: float = 1e-10) -> float:
    space, rhs, _ = _dual(z, space)
    G = inverse_laplacian(z, space, mean_tol)
    return float(np.sqrt(max(rhs @ G.coeffs, 0.0)))


def remove_mean(z: FeFunction) -> FeFunction:
    M = _laplace_factor(z.space)[1]
    m1 = np.asarray(M.sum(axis=1)).ravel()
    return FeFunction(z.space, z.coeffs - (m1 @ z.coeffs) / m1.sum())


# correction field

@dataclass
class CorrectionField:
    psi: FeFunction
    u_tilde: FeFunction
    dpsi_dt: FeFunction | None
    du_tilde_dt: FeFunction | None
    body_force: FeFunction | None


def _hvn_load(space: FeSpace, area_tol: float) -> np.ndarray:
    q = space.quad
    hv = q.geom.H * q.geom.v_n
    total = float(np.sum(q.weights * hv))
    area = float(np.sum(q.weights))
    if abs(total) > area_tol * area:
        raise IncompatibleData(f"int H V_N = {total:.3e} exceeds {area_tol:g} * area")
    return assemble_load(space, hv)


def _psi_and_utilde(mesh, surface, degree: int, area_tol: float):
    sfam = Family.P2_SCALAR if degree == 2 else Family.P1_SCALAR
    vfam = Family.P2_VECTOR if degree == 2 else Family.P1_VECTOR
    S = FeSpace(mesh, surface, sfam)
    V = FeSpace(mesh, surface, vfam)
    psi = FeFunction(S, solve_mean_zero_poisson(S, _hvn_load(S, area_tol)))
    ut = l2_project(V, psi.gradient())
    return psi, ut


def solve_correction(mesh, surface, t: float | None = None, *, degree: int = 1,
                     dt_fd: float | None = None, mode: str = "fd",
                     force: Callable | None = None, with_time_derivative: bool = True,
                     area_tol: float = 1e-6, substeps: int = 4) -> CorrectionField:
    """Solve for Psi, u_tilde = grad Psi and (optionally) d/dt Psi and the body force.

    mode "fd" differences Psi-solves on meshes advected to t +- dt_fd; mode
    "differentiated" differentiates the discrete system, A Psi' = b' - A' Psi,
    with A', b' obtained from frozen-coefficient differences of the assembled
    operators.
    """
    if t is not None and abs(t - mesh.t) > 1e-14:
        mesh = advect(mesh, surface, t, substeps)
    psi, ut = _psi_and_utilde(mesh, surface, degree, area_tol)
    if not with_time_derivative:
        return CorrectionField(psi, ut, None, None, None)
    dt_fd = 1e-4 * getattr(surface, "T", 1.0) if dt_fd is None else dt_fd
    meshes = [advect(mesh, surface, mesh.t + s * dt_fd, substeps, check_quality=False)
              for s in (1.0, -1.0)]
    if mode == "fd":
        pair = [_psi_and_utilde(m, surface, degree, 10 * area_tol) for m in meshes]
        dpsi = (pair[0][0].coeffs - pair[1][0].coeffs) / (2 * dt_fd)
        dut = (pair[0][1].coeffs - pair[1][1].coeffs) / (2 * dt_fd)
    elif mode == "differentiated":
        S = psi.space
        ops = []
        for m in meshes:
            Sm = S.on(m)
            Mm = assemble_m(Sm).matrix
            ops.append((assemble_a(Sm).matrix, _hvn_load(Sm, 10 * area_tol),
                        np.asarray(Mm.sum(axis=1)).ravel()))
        dA = (ops[0][0] - ops[1][0]) / (2 * dt_fd)
        db = (ops[0][1] - ops[1][1]) / (2 * dt_fd)
        dm = (ops[0][2] - ops[1][2]) / (2 * dt_fd)
        fac, _, _, m1 = _laplace_factor(S)
        # multiplier of the undifferentiated system
        lam = fac.solve(np.concatenate([_hvn_load(S, area_tol), [0.0]]))[-1]
        rhs = np.concatenate([db - dA @ psi.coeffs - dm * lam, [-(dm @ psi.coeffs)]])
        dpsi = fac.solve(rhs)[:-1]
        # du/dt from the gradient of dPsi and the frozen-coefficient change of the projection
        V = ut.space
        g_plus = l2_project(V.on(meshes[0]), FeFunction(S.on(meshes[0]), psi.coeffs).gradient())
        g_minus = l2_project(V.on(meshes[1]), FeFunction(S.on(meshes[1]), psi.coeffs).gradient())
        dut = l2_project(V, FeFunction(S, dpsi).gradient()).coeffs + (
            g_plus.coeffs - g_minus.coeffs) / (2 * dt_fd)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    dpsi_f = FeFunction(psi.space, dpsi)
    dut_f = FeFunction(ut.space, dut)
    body = body_force(ut, dut_f, force)
    return CorrectionField(psi, ut, dpsi_f, dut_f, body)


def body_force(ut: FeFunction, dut: FeFunction, force: Callable | None = None) -> FeFunction:
    """B = F_T - (grad u_tilde) u_tilde - P d/dt u_tilde - V_N H u_tilde, L2-projected."""
    V = ut.space
    q = V.quad
    val = np.zeros(q.points.shape)
    if force is not None:
        f = np.asarray(force(q.points, V.t))
        val += np.einsum("eqij,eqj->eqi", q.geom.proj, f)
    u = ut.values()
    val -= np.einsum("eqij,eqj->eqi", ut.gradient(), u)
    val -= np.einsum("eqij,eqj->eqi", q.geom.proj, dut.values())
    val -= q.geom.v_n[..., None] * np.einsum("eqij,eqj->eqi", q.geom.shape_op, u)
    return l2_project(V, val)


# inverse Stokes operator

def _pressure_space(u_space: FeSpace) -> FeSpace:
    return FeSpace(u_space.mesh, u_space.surface, Family.P1_SCALAR, u_space.n_sub)


def _stokes_factor(u_space: FeSpace, stab: float = 0.1):
    c = _space_cache(u_space)
    if "stokes" not in c:
        Q = _pressure_space(u_space)
        Mv = assemble_m(u_space).matrix
        Av = assemble_vec_a(u_space).matrix
        B = divergence_matrix(u_space, Q).matrix
        T = u_space.reduction
        Mp = assemble_m(Q).matrix
        mp = np.asarray(Mp.sum(axis=1)).ravel()
        C = None
        if u_space.family.degree == 1:
            h = u_space.mesh.mesh_size()
            C = stab * h * h * assemble_a(Q).matrix
        K = reduce(u_space, Mv + Av)
        n_u = K.shape[0]
        fac = Factorized(saddle(K, (B @ T).tocsr(), mp, C),
                         split=border_split(n_u + mp.size, pin=n_u))
        c["stokes"] = (fac, Mv, T)
    return c["stokes"]


def inverse_stokes(phi: FeFunction) -> FeFunction:
    """S phi: m(S phi, v) + a(S phi, v) = m(phi, v) for discretely div-free v."""
    V = phi.space
    fac, Mv, T = _stokes_factor(V)
    n = T.shape[1]
    rhs = np.zeros(fac.shape[0])
    rhs[:n] = T.T @ (Mv @ phi.coeffs)
    sol = fac.solve(rhs)
    return FeFunction(V, T @ sol[:n])


def s_norm(phi: FeFunction) -> float:
    Mv = _stokes_factor(phi.space)[1]
    Sphi = inverse_stokes(phi)
    return float(np.sqrt(max(phi.coeffs @ (Mv @ Sphi.coeffs), 0.0)))


def stokes_pressure_dofs(u_space: FeSpace) -> int:
    return _pressure_space(u_space).dof_count


# inf-sup constant

def inf_sup_constant(u_space: FeSpace, q_space: FeSpace | None = None,
                     dense_limit: int | None = None) -> float:
    """sqrt of the smallest eigenvalue of B A^{-1} B^T q = lam M_p q on mean-zero q.

    A is the H^1 Gram matrix of the velocity space.  Pressure spaces with at
    most ``dense_limit`` dofs are handled densely, which also copes with pairs
    whose Schur complement is singular; larger ones use shift-invert Lanczos
    through the bordered saddle system.  By default only equal-order P1
    velocities (the unstable pair) take the dense route.
    """
    Q = _pressure_space(u_space) if q_space is None else q_space
    T = u_space.reduction
    A = reduce(u_space, assemble_m(u_space).matrix + assemble_vec_grad(u_space).matrix)
    B = (divergence_matrix(u_space, Q).matrix @ T).tocsr()
    Mp = assemble_m(Q).matrix.tocsc()
    mp = np.asarray(Mp.sum(axis=1)).ravel()
    n_u, n_p = A.shape[0], B.shape[0]
    if dense_limit is None:
        dense_limit = 3000 if u_space.family.degree == 1 else 0
    if n_p <= dense_limit:
        a_fac = Factorized(A, error=EigenSolverFailure)
        X = a_fac.solve(B.T.toarray())
        S = B @ X
        S = 0.5 * (S + S.T)
        # orthonormal basis of the mean-zero subspace
        Z = np.linalg.qr(np.column_stack([mp, np.eye(n_p)[:, :-1]]))[0][:, 1:]
        Sr = Z.T @ S @ Z
        Mr = Z.T @ (Mp @ Z)
        lam = float(linalg.eigh(Sr, Mr, eigvals_only=True, subset_by_index=[0, 0])[0])
        return float(np.sqrt(max(lam, 0.0)))
    msp = sp.csc_matrix(mp.reshape(-1, 1))
    K = sp.bmat([[A, -B.T, None], [B, None, msp], [None, msp.T, None]], format="csc")
    fac = Factorized(K, error=EigenSolverFailure, split=border_split(n_u + n_p, pin=n_u))

    def op_inv(b):
        rhs = np.zeros(K.shape[0])
        rhs[n_u:n_u + n_p] = b
        return fac.solve(rhs)[n_u:n_u + n_p]

    a_fac_l: list = []

    def schur(x):
        if not a_fac_l:
            a_fac_l.append(Factorized(A, error=EigenSolverFailure))
        return B @ a_fac_l[0].solve(B.T @ x)

    OPinv = spla.LinearOperator((n_p, n_p), matvec=op_inv, dtype=float)
    Sop = spla.LinearOperator((n_p, n_p), matvec=schur, dtype=float)
    rng = np.random.default_rng(0)
    v0 = op_inv(Mp @ rng.standard_normal(n_p))
    try:
        vals = spla.eigsh(Sop, k=1, M=Mp, sigma=0.0, OPinv=OPinv, which="LM", v0=v0,
                          return_eigenvectors=False, tol=1e-10)
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    lam = float(np.min(vals))
    if lam <= 0:
        raise EigenSolverFailure(f"non-positive eigenvalue {lam:.3e}")
    return float(np.sqrt(lam))


# Killing kernel

def divergence_free_spectrum(u_space: FeSpace, k: int = 6) -> np.ndarray:
    """Smallest eigenvalues of vec_a against vec_m on discretely div-free fields."""
    T = u_space.reduction
    Mv = reduce(u_space, assemble_m(u_space).matrix)
    Av = reduce(u_space, assemble_vec_a(u_space).matrix)
    fac = _stokes_factor(u_space)[0]
    n = T.shape[1]

    def op_inv(b):
        rhs = np.zeros(fac.shape[0])
        rhs[:n] = b
        return fac.solve(rhs)[:n]

    OPinv = spla.LinearOperator((n, n), matvec=op_inv, dtype=float)
    rng = np.random.default_rng(1)
    v0 = op_inv(Mv @ rng.standard_normal(n))
    try:
        nu = spla.eigsh(Av, k=k, M=Mv, sigma=-1.0, OPinv=OPinv, which="LM", v0=v0,
                        return_eigenvectors=False, tol=1e-10)
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    return np.sort(nu)


def killing_kernel_dim(u_space: FeSpace, tol: float = 1e-3, k: int = 6) -> int:
    """Number of div-free eigenvalues of vec_a below tol times the largest computed one."""
    lam = divergence_free_spectrum(u_space, k)
    scale = lam[-1]
    return int(np.sum(lam < tol * scale))
