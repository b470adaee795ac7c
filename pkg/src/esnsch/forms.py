"""Finite element spaces on a surface mesh and assembly of bilinear and trilinear forms.

Scalar spaces are P1 or P2 Lagrange.  Tangential vector spaces carry three
Cartesian components per node; the tangency constraint is imposed strongly at
the nodes through a per-node tangent frame (the matrix ``reduction``), which
maps two tangential coordinates per node to the three Cartesian ones.

Functions on the flat triangulation are identified with their closest-point
lifts; integrals use the lifted area element and lifted gradients, so the
discrete forms are integrals over the smooth surface up to quadrature error.
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MeshMismatch, ViscosityNonPositive
from .geometry import closest_point, sample
from .quadrature import LiftedQuadrature, lifted_quadrature

logger = logging.getLogger(__name__)

_es = functools.partial(np.einsum, optimize=True)


class Family(enum.Enum):
    P1_SCALAR = "P1Scalar"
    P2_SCALAR = "P2Scalar"
    P1_VECTOR = "P1VectorTangential"
    P2_VECTOR = "P2VectorTangential"

    @property
    def degree(self) -> int:
        return 2 if self in (Family.P2_SCALAR, Family.P2_VECTOR) else 1

    @property
    def is_vector(self) -> bool:
        return self in (Family.P1_VECTOR, Family.P2_VECTOR)


def _basis_values(bary: np.ndarray, degree: int) -> np.ndarray:
    l0, l1, l2 = bary.T
    if degree == 1:
        return bary.copy()
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)


def _flat_basis_gradients(bary: np.ndarray, grad_bary: np.ndarray, degree: int) -> np.ndarray:
    """Flat gradients, shape (nE, nq, nb, 3)."""
    nE, nq = len(grad_bary), len(bary)
    if degree == 1:
        return np.broadcast_to(grad_bary[:, None], (nE, nq, 3, 3))
    g = grad_bary[:, None]  # (nE, 1, 3, 3)
    lam = bary[None, :, :, None]  # (1, nq, 3, 1)
    out = np.empty((nE, nq, 6, 3))
    out[:, :, :3] = (4 * lam - 1) * g
    for k, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        out[:, :, 3 + k] = 4 * (lam[:, :, j] * g[:, :, i] + lam[:, :, i] * g[:, :, j])
    return out


@dataclass
class _ElementData:
    quad: LiftedQuadrature
    phi: np.ndarray  # (nq, nb)
    grad: np.ndarray  # lifted tangential gradients (nE, nq, nb, 3)


def _tangent_frames(nu: np.ndarray) -> np.ndarray:
    a = np.where(np.abs(nu[:, [0]]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = a - _es("ij,ij->i", a, nu)[:, None] * nu
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(nu, t1)
    return np.stack([t1, t2], axis=2)


class FeSpace:
    """Lagrange space of a given family on `mesh`, lifted to `surface` at mesh.t."""

    def __init__(self, mesh, surface, family: Family | str, n_sub: int = 1):
        self.mesh = mesh
        self.surface = surface
        self.family = Family(family) if not isinstance(family, Family) else family
        self.n_sub = int(n_sub)
        self.t = float(mesh.t)
        nv = mesh.n_vertices
        if self.family.degree == 1:
            self.element_nodes = np.asarray(mesh.triangles)
            self.n_nodes = nv
        else:
            self.element_nodes = np.concatenate([mesh.triangles, nv + mesh.tri_edges], axis=1)
            self.n_nodes = nv + len(mesh.edges)
        self.dof_count = 3 * self.n_nodes if self.family.is_vector else self.n_nodes

    # geometry of the nodes
    @property
    def node_points(self) -> np.ndarray:
        """Flat node positions: vertices, then edge midpoints for P2."""
        key = ("node_points", self.family.degree)
        if key not in self.mesh.cache:
            v = self.mesh.vertices
            if self.family.degree == 2:
                e = self.mesh.edges
                v = np.vstack([v, 0.5 * (v[e[:, 0]] + v[e[:, 1]])])
            self.mesh.cache[key] = v
        return self.mesh.cache[key]

    def _surface_cache(self) -> dict:
        store = self.mesh.cache.setdefault("surfaces", [])
        for surf, data in store:
            if surf is self.surface:
                return data
        data: dict = {}
        store.append((self.surface, data))
        return data

    @property
    def lifted_nodes(self) -> np.ndarray:
        c = self._surface_cache()
        key = ("lifted_nodes", self.family.degree)
        if key not in c:
            c[key] = closest_point(self.surface, self.node_points, self.t)
        return c[key]

    @property
    def node_normals(self) -> np.ndarray:
        c = self._surface_cache()
        key = ("node_normals", self.family.degree)
        if key not in c:
            c[key] = sample(self.surface, self.lifted_nodes, self.t).nu
        return c[key]

    @property
    def tangent_frames(self) -> np.ndarray:
        c = self._surface_cache()
        key = ("frames", self.family.degree)
        if key not in c:
            c[key] = _tangent_frames(self.node_normals)
        return c[key]

    @property
    def reduction(self) -> sp.csr_matrix:
        """Sparse (3N, 2N) map from tangential coordinates to nodal vectors."""
        c = self._surface_cache()
        key = ("reduction", self.family.degree)
        if key not in c:
            n = self.n_nodes
            fr = self.tangent_frames
            rows = (3 * np.arange(n)[:, None, None] + np.arange(3)[None, :, None]).repeat(2, 2)
            cols = (2 * np.arange(n)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, 1)
            c[key] = sp.csr_matrix((fr.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 2 * n))
        return c[key]

    @property
    def elements(self) -> _ElementData:
        c = self._surface_cache()
        key = ("elements", self.family.degree, self.n_sub)
        if key not in c:
            qkey = ("quad", self.n_sub)
            if qkey not in c:
                c[qkey] = lifted_quadrature(self.mesh.vertices, self.mesh.triangles, self.surface,
                                            self.t, self.n_sub)
            q = c[qkey]
            deg = self.family.degree
            phi = _basis_values(q.bary, deg)
            gflat = _flat_basis_gradients(q.bary, q.grad_bary, deg)
            grad = _es("eqkl,eqbl->eqbk", q.lift, gflat)
            c[key] = _ElementData(q, phi, grad)
        return c[key]

    @property
    def quad(self) -> LiftedQuadrature:
        return self.elements.quad

    def scalar_space(self) -> "FeSpace":
        fam = Family.P2_SCALAR if self.family.degree == 2 else Family.P1_SCALAR
        return FeSpace(self.mesh, self.surface, fam, self.n_sub)

    def vector_space(self) -> "FeSpace":
        fam = Family.P2_VECTOR if self.family.degree == 2 else Family.P1_VECTOR
        return FeSpace(self.mesh, self.surface, fam, self.n_sub)

    def on(self, mesh, surface=None) -> "FeSpace":
        """Same family on another mesh with identical connectivity."""
        return FeSpace(mesh, self.surface if surface is None else surface, self.family, self.n_sub)

    # global dof numbering for local vector dofs, ordered (node, component)
    def _local_dofs(self) -> np.ndarray:
        nodes = self.element_nodes
        if not self.family.is_vector:
            return nodes
        return (3 * nodes[:, :, None] + np.arange(3)).reshape(len(nodes), -1)

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> "FeFunction":
        """Nodal interpolation of fn evaluated at lifted node positions."""
        vals = np.asarray(fn(self.lifted_nodes), dtype=float)
        f = FeFunction(self, vals.reshape(-1))
        return f.project_tangential() if self.family.is_vector else f

    def constant(self, value: float) -> "FeFunction":
        return FeFunction(self, np.full(self.dof_count, float(value)))

    def zero(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.dof_count))

    def tangential_projector(self) -> sp.csr_matrix:
        """Block-diagonal nodal projector I - nu nu^T, shape (3N, 3N)."""
        T = self.reduction
        return (T @ T.T).tocsr()

    def __repr__(self):
        return f"FeSpace({self.family.value}, dofs={self.dof_count}, t={self.t:g})"


@dataclass
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dof_count,):
            raise ValueError(f"expected {self.space.dof_count} coefficients, got {self.coeffs.shape}")

    def nodal_vectors(self) -> np.ndarray:
        return self.coeffs.reshape(-1, 3)

    def project_tangential(self) -> "FeFunction":
        if not self.space.family.is_vector:
            return self
        u = self.nodal_vectors()
        nu = self.space.node_normals
        out = u - _es("ij,ij->i", u, nu)[:, None] * nu
        return FeFunction(self.space, out.ravel())

    def normal_component(self) -> np.ndarray:
        return _es("ij,ij->i", self.nodal_vectors(), self.space.node_normals)

    def tangential_coords(self) -> np.ndarray:
        return self.space.reduction.T @ self.coeffs

    def values(self) -> np.ndarray:
        """Values at quadrature points, (nE, nq) or (nE, nq, 3)."""
        el = self.space.elements
        if self.space.family.is_vector:
            c = self.nodal_vectors()[self.space.element_nodes]
            return _es("qb,ebk->eqk", el.phi, c)
        return _es("qb,eb->eq", el.phi, self.coeffs[self.space.element_nodes])

    def gradient(self) -> np.ndarray:
        """Tangential gradient at quadrature points.

        Scalars give (nE, nq, 3); vectors give the covariant gradient P (grad u) P
        with shape (nE, nq, 3, 3), row index = component.
        """
        el = self.space.elements
        if self.space.family.is_vector:
            c = self.nodal_vectors()[self.space.element_nodes]
            U = _es("ebi,eqbk->eqik", c, el.grad)
            return _es("eqij,eqjk->eqik", el.quad.geom.proj, U)
        return _es("eb,eqbk->eqk", self.coeffs[self.space.element_nodes], el.grad)

    def __add__(self, other: "FeFunction") -> "FeFunction":
        return FeFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "FeFunction") -> "FeFunction":
        return FeFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "FeFunction":
        return FeFunction(self.space, self.coeffs * s)

    __rmul__ = __mul__


@dataclass
class AssembledForm:
    matrix: object  # scipy sparse matrix or dense vector
    tag: str
    t: float
    symmetric: bool = False

    def asymmetry(self) -> float:
        M = self.matrix
        d = (M - M.T).tocoo()
        return float(np.abs(d.data).max()) if d.nnz else 0.0


def _check_same_mesh(*spaces: FeSpace) -> None:
    m0 = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not m0 or s.surface is not spaces[0].surface:
            raise MeshMismatch("spaces live on different meshes or surfaces")


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    nE, nr, nc = local.shape
    R = np.broadcast_to(rows[:, :, None], (nE, nr, nc))
    C = np.broadcast_to(cols[:, None, :], (nE, nr, nc))
    M = sp.coo_matrix((local.ravel(), (R.ravel(), C.ravel())), shape=shape).tocsr()
    M.sum_duplicates()
    return M


def _scatter_vec(local: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    np.add.at(out, rows.ravel(), local.ravel())
    return out


def _sym(M: sp.csr_matrix) -> sp.csr_matrix:
    return (0.5 * (M + M.T)).tocsr()


def _form(M, tag, space, symmetric=False) -> AssembledForm:
    return AssembledForm(M, tag, space.t, symmetric)


def _weights(space: FeSpace, weight=None) -> np.ndarray:
    w = space.quad.weights
    if weight is None:
        return w
    return w * np.asarray(weight)


def _vec_local(scalar_local: np.ndarray) -> np.ndarray:
    """Expand (nE, nb, nb) scalar blocks to (nE, 3nb, 3nb) with identity coupling."""
    nE, nb, _ = scalar_local.shape
    out = _es("ebc,ij->ebicj", scalar_local, np.eye(3))
    return out.reshape(nE, 3 * nb, 3 * nb)


def assemble_m(space: FeSpace, weight=None) -> AssembledForm:
    """Mass matrix; a vector space gives the tangential (vector) mass."""
    el = space.elements
    w = _weights(space, weight)
    local = _es("eq,qb,qc->ebc", w, el.phi, el.phi)
    if space.family.is_vector:
        local = _vec_local(local)
    dofs = space._local_dofs()
    M = _sym(_scatter(local, dofs, dofs, (space.dof_count,) * 2))
    return _form(M, "vec_m" if space.family.is_vector else "m", space, True)


def assemble_a(space: FeSpace, weight=None) -> AssembledForm:
    """Scalar stiffness int grad u . grad v."""
    el = space.elements
    w = _weights(space, weight)
    local = _es("eq,eqbk,eqck->ebc", w, el.grad, el.grad)
    dofs = space._local_dofs()
    return _form(_sym(_scatter(local, dofs, dofs, (space.dof_count,) * 2)), "a", space, True)


def assemble_vec_m(space: FeSpace) -> AssembledForm:
    if not space.family.is_vector:
        raise MeshMismatch("vector mass needs a vector space")
    return assemble_m(space)


def _strain_local(space: FeSpace, weight=None) -> np.ndarray:
    el = space.elements
    w = _weights(space, weight)
    P = el.quad.geom.proj
    g = el.grad
    t1 = _es("eq,eqij,eqbk,eqck->ebicj", w, P, g, g)
    t2 = _es("eq,eqci,eqbj->ebicj", w, g, g)
    nE, nb = g.shape[0], g.shape[2]
    return (t1 + t2).reshape(nE, 3 * nb, 3 * nb)


def assemble_vec_a(space: FeSpace, weight=None) -> AssembledForm:
    """2 int E(u):E(v) with E the symmetric covariant gradient."""
    if not space.family.is_vector:
        raise MeshMismatch("vector stiffness needs a vector space")
    dofs = space._local_dofs()
    M = _scatter(_strain_local(space, weight), dofs, dofs, (space.dof_count,) * 2)
    return _form(_sym(M), "vec_a", space, True)


def assemble_vec_grad(space: FeSpace) -> AssembledForm:
    """int grad u : grad v for the covariant gradient (H1 seminorm Gram)."""
    el = space.elements
    w = space.quad.weights
    P = el.quad.geom.proj
    nE, nq, nb, _ = el.grad.shape
    local = _es("eq,eqij,eqbk,eqck->ebicj", w, P, el.grad, el.grad).reshape(nE, 3 * nb, 3 * nb)
    dofs = space._local_dofs()
    return _form(_sym(_scatter(local, dofs, dofs, (space.dof_count,) * 2)), "vec_grad", space, True)


def assemble_a_hat(eta_field: FeFunction, space: FeSpace) -> AssembledForm:
    """2 int eta E(u):E(v) with eta a scalar field frozen."""
    if np.any(eta_field.coeffs <= 0):
        raise ViscosityNonPositive(f"viscosity field has minimum {eta_field.coeffs.min():.3g}")
    _check_same_mesh(eta_field.space, space)
    form = assemble_vec_a(space, weight=eta_field.values())
    form.tag = "a_hat"
    return form


def assemble_a_hat_values(eta_q: np.ndarray, space: FeSpace) -> AssembledForm:
    """Same as assemble_a_hat with eta given at quadrature points."""
    if np.any(eta_q <= 0):
        raise ViscosityNonPositive(f"viscosity has minimum {eta_q.min():.3g}")
    form = assemble_vec_a(space, weight=eta_q)
    form.tag = "a_hat"
    return form


def _vec_field_q(field) -> np.ndarray:
    return field.values() if isinstance(field, FeFunction) else np.asarray(field)


def assemble_c1_matrix(frozen_slot: int, field: FeFunction, space: FeSpace) -> AssembledForm:
    """Matrix of c1(a, b, c) = int (grad a) b . c with one slot frozen.

    The two free slots keep their order: the earlier one is the trial
    (column) argument, the later one the test (row) argument.
    """
    _check_same_mesh(field.space, space)
    el = space.elements
    w = space.quad.weights
    P = el.quad.geom.proj
    phi, g = el.phi, el.grad
    nE, nq, nb, _ = g.shape
    if frozen_slot == 2:
        wq = field.values()
        s = _es("eqbk,eqk->eqb", g, wq)
        local = _es("eq,qc,eqji,eqb->ecjbi", w, phi, P, s)
    elif frozen_slot == 1:
        G = field.gradient()
        local = _es("eq,qb,qc,eqji->ecjbi", w, phi, phi, G)
    elif frozen_slot == 3:
        wq = field.values()
        Pw = _es("eqki,eqk->eqi", P, wq)
        local = _es("eq,eqi,eqbj,qc->ecjbi", w, Pw, g, phi)
    else:
        raise ValueError("frozen_slot must be 1, 2 or 3")
    local = local.reshape(nE, 3 * nb, 3 * nb)
    dofs = space._local_dofs()
    M = _scatter(local, dofs, dofs, (space.dof_count,) * 2)
    return _form(M, f"c1_frozen{frozen_slot}", space)


def apply_c1(a: FeFunction, b: FeFunction, c: FeFunction) -> float:
    _check_same_mesh(a.space, b.space, c.space)
    Ga = a.gradient()
    return float(np.sum(a.space.quad.weights * _es("eqij,eqj,eqi->eq", Ga, b.values(), c.values())))


def apply_c2(phi: FeFunction, psi: FeFunction, chi: FeFunction) -> float:
    _check_same_mesh(phi.space, psi.space, chi.space)
    v = _es("eqk,eqk->eq", psi.gradient(), chi.values())
    return float(np.sum(phi.space.quad.weights * phi.values() * v))


def apply_c3(phi: FeFunction, psi: FeFunction, chi: FeFunction) -> float:
    _check_same_mesh(phi.space, psi.space, chi.space)
    G = chi.gradient()
    v = _es("eqi,eqj,eqij->eq", phi.gradient(), psi.gradient(), G)
    return float(np.sum(phi.space.quad.weights * v))


def assemble_c2_matrix(phi_q, scalar_space: FeSpace, vec_space: FeSpace) -> AssembledForm:
    """Matrix K with v^T K psi = int phi grad psi . v (v vector test, psi scalar trial).

    phi_q holds the frozen scalar at quadrature points.
    """
    _check_same_mesh(scalar_space, vec_space)
    ev, es = vec_space.elements, scalar_space.elements
    w = vec_space.quad.weights * np.asarray(phi_q)
    local = _es("eq,qb,eqai->ebia", w, ev.phi, es.grad)
    nE, nb = local.shape[:2]
    local = local.reshape(nE, 3 * nb, -1)
    M = _scatter(local, vec_space._local_dofs(), scalar_space._local_dofs(),
                 (vec_space.dof_count, scalar_space.dof_count))
    return _form(M, "c2", vec_space)


def assemble_l(space: FeSpace) -> AssembledForm:
    """l(u, v) = m(V_N H u, v); rows are test functions."""
    el = space.elements
    geom = el.quad.geom
    w = space.quad.weights * geom.v_n
    local = _es("eq,qb,qc,eqji->ecjbi", w, el.phi, el.phi, geom.shape_op)
    nE, nb = local.shape[:2]
    dofs = space._local_dofs()
    M = _scatter(local.reshape(nE, 3 * nb, 3 * nb), dofs, dofs, (space.dof_count,) * 2)
    return _form(_sym(M), "l", space, True)


def assemble_d1(utilde: FeFunction, space: FeSpace) -> AssembledForm:
    """d1(u, v) = c1(u, utilde, v) + c1(utilde, u, v)."""
    M = assemble_c1_matrix(2, utilde, space).matrix + assemble_c1_matrix(1, utilde, space).matrix
    return _form(M.tocsr(), "d1", space)


def assemble_d2(eta_field: FeFunction, utilde: FeFunction, space: FeSpace) -> AssembledForm:
    """Load vector v -> a_hat(eta; utilde, v)."""
    A = assemble_a_hat(eta_field, space).matrix
    return AssembledForm(A @ utilde.coeffs, "d2", space.t)


def assemble_b(space: FeSpace) -> AssembledForm:
    """b(u, v) = int V_N (H I - 2 H_op) grad u . grad v (scalar space)."""
    el = space.elements
    geom = el.quad.geom
    Bm = geom.H[..., None, None] * np.eye(3) - 2.0 * geom.shape_op
    w = space.quad.weights * geom.v_n
    local = _es("eq,eqbk,eqkl,eqcl->ebc", w, el.grad, Bm, el.grad)
    dofs = space._local_dofs()
    return _form(_sym(_scatter(local, dofs, dofs, (space.dof_count,) * 2)), "b", space, True)


def divergence_matrix(u_space: FeSpace, q_space: FeSpace) -> AssembledForm:
    """B with (B u)_a = int q_a div_Gamma u."""
    _check_same_mesh(u_space, q_space)
    eu, eq = u_space.elements, q_space.elements
    w = u_space.quad.weights
    local = _es("eq,qa,eqbi->eabi", w, eq.phi, eu.grad)
    nE, na, nb = local.shape[:3]
    M = _scatter(local.reshape(nE, na, 3 * nb), q_space._local_dofs(), u_space._local_dofs(),
                 (q_space.dof_count, u_space.dof_count))
    return _form(M, "div", u_space)


def assemble_load(space: FeSpace, values_q: np.ndarray) -> np.ndarray:
    """Load vector int f v for f given at quadrature points."""
    el = space.elements
    w = space.quad.weights
    if space.family.is_vector:
        local = _es("eq,qb,eqi->ebi", w, el.phi, values_q).reshape(len(w), -1)
    else:
        local = _es("eq,qb,eq->eb", w, el.phi, values_q)
    return _scatter_vec(local, space._local_dofs(), space.dof_count)


def load_from_function(space: FeSpace, fn: Callable) -> np.ndarray:
    """Load vector for fn(points, geom) evaluated at lifted quadrature points."""
    q = space.quad
    return assemble_load(space, fn(q.points, q.geom))


def reduce(space: FeSpace, M):
    """Restrict a vector-space operator to tangential coordinates."""
    T = space.reduction
    return (T.T @ M @ T).tocsr() if sp.issparse(M) else T.T @ M


def l2_project(space: FeSpace, values_q: np.ndarray) -> FeFunction:
    """L2 projection of a field given at quadrature points."""
    rhs = assemble_load(space, values_q)
    M = assemble_m(space).matrix
    if space.family.is_vector:
        T = space.reduction
        x = spla.spsolve((T.T @ M @ T).tocsc(), T.T @ rhs)
        return FeFunction(space, T @ x)
    return FeFunction(space, spla.spsolve(M.tocsc(), rhs))


def integrate_values(space: FeSpace, values_q: np.ndarray) -> float:
    return float(np.sum(space.quad.weights * values_q))


def lumped_mass(space: FeSpace) -> np.ndarray:
    return np.asarray(assemble_m(space).matrix.sum(axis=1)).ravel()


def vec_b_finite_difference(u: FeFunction, v: FeFunction, mesh, surface, dt_fd: float,
                            substeps: int = 8) -> float:
    """Central difference in time of vec_a(u, v) with frozen nodal coefficients."""
    from .mesh import advect

    vals = []
    for sgn in (1.0, -1.0):
        m = advect(mesh, surface, mesh.t + sgn * dt_fd, substeps, check_quality=False)
        s = u.space.on(m, surface)
        uu = FeFunction(s, u.coeffs.copy()).project_tangential()
        vv = FeFunction(s, v.coeffs.copy()).project_tangential()
        A = assemble_vec_a(s).matrix
        vals.append(vv.coeffs @ (A @ uu.coeffs))
    return (vals[0] - vals[1]) / (2.0 * dt_fd)


def frozen_mass_derivative(phi: FeFunction, psi: FeFunction, mesh, surface, dt: float,
                           substeps: int = 8) -> float:
    """Forward difference [m_{t+dt}(phi, psi) - m_t(phi, psi)] / dt with frozen coefficients."""
    from .mesh import advect

    m1 = advect(mesh, surface, mesh.t + dt, substeps, check_quality=False)
    s1 = phi.space.on(m1, surface)
    M0 = assemble_m(phi.space).matrix
    M1 = assemble_m(s1).matrix
    return float(psi.coeffs @ (M1 @ phi.coeffs) - psi.coeffs @ (M0 @ phi.coeffs)) / dt
