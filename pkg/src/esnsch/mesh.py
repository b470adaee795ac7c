"""Triangulated surface meshes, motion along the normal flow, Piola maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (DegenerateElement, FormatError, LevelOutOfRange, MeshError,
                     MeshQualityDegraded, ProjectionFailed)
from .geometry import (AreaPreservingEllipsoid, DilatingSphere, EvolvingSurface,
                       PrescribedNormalVelocity, StaticLevelSet, StaticSphere, closest_point,
                       sample)

logger = logging.getLogger(__name__)

MIN_ANGLE_DEG = 5.0
LEVEL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    t: float = 0.0
    ref_vertices: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("vertices must be (V, 3) and triangles (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        ref = v if self.ref_vertices is None else np.array(self.ref_vertices, dtype=float)
        ref.setflags(write=False)
        object.__setattr__(self, "ref_vertices", ref)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        f = self.triangles
        half = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        key = np.sort(half, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        nf = len(f)
        tri_edges = np.stack([inv[:nf], inv[nf:2 * nf], inv[2 * nf:]], axis=1)
        return edges, tri_edges, half, inv

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """Global edge index of local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[1]

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    def check_topology(self) -> None:
        """Raise MeshError unless every edge has two oppositely oriented triangles."""
        edges, _, half, inv = self._edge_data
        counts = np.bincount(inv, minlength=len(edges))
        if np.any(counts != 2):
            raise MeshError(f"{np.sum(counts != 2)} edges are not shared by exactly 2 triangles")
        directed = half[:, 0] * self.n_vertices + half[:, 1]
        if len(np.unique(directed)) != len(directed):
            raise MeshError("inconsistent triangle orientation")

    def angles(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            a = x[:, (k + 1) % 3] - x[:, k]
            b = x[:, (k + 2) % 3] - x[:, k]
            c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(c, -1, 1)))
        return out

    def min_angle(self) -> float:
        return float(self.angles().min())

    def flat_areas(self) -> np.ndarray:
        x = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    def mesh_size(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).max())

    def with_vertices(self, vertices: np.ndarray, t: float) -> "SurfaceMesh":
        return SurfaceMesh(vertices, self.triangles, t, self.ref_vertices)


_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
    [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
    [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])


def icosphere(level: int) -> SurfaceMesh:
    """Subdivided icosahedron on the unit sphere, V = 10 * 4**level + 2."""
    if not 0 <= int(level) <= 7:
        raise LevelOutOfRange(f"icosphere level {level} outside [0, 7]")
    s = (1 + 5**0.5) / 2
    v = np.array([[-1, s, 0], [1, s, 0], [-1, -s, 0], [1, -s, 0], [0, -1, s], [0, 1, s],
                  [0, -1, -s], [0, 1, -s], [s, 0, -1], [s, 0, 1], [-s, 0, -1], [-s, 0, 1]],
                 dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = _ICO_FACES.copy()
    for _ in range(int(level)):
        half = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges, inv = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[edges].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1)[:, None]
        n, nv = len(f), len(v)
        a, b, c = inv[:n] + nv, inv[n:2 * n] + nv, inv[2 * n:] + nv
        v = np.vstack([v, mid])
        f = np.vstack([np.c_[f[:, 0], a, c], np.c_[a, f[:, 1], b],
                       np.c_[c, b, f[:, 2]], np.c_[a, b, c]])
    return SurfaceMesh(v, f)


def torus_mesh(n_major: int, n_minor: int, R: float = 1.0, r: float = 0.4) -> SurfaceMesh:
    """Structured triangulation of the torus of radii (R, r), outward oriented."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    rho = R + r * np.cos(W)
    v = np.stack([rho * np.cos(U), rho * np.sin(U), r * np.sin(W)], axis=-1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i0 = idx
    i1 = np.roll(idx, -1, axis=0)
    i2 = np.roll(idx, -1, axis=1)
    i3 = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    f = np.concatenate([np.stack([i0, i1, i3], -1).reshape(-1, 3),
                        np.stack([i0, i3, i2], -1).reshape(-1, 3)])
    return SurfaceMesh(v, f)


def mesh_for_surface(surface: EvolvingSurface, level: int, t: float = 0.0) -> SurfaceMesh:
    """Initial mesh conforming to the surface at time t."""
    if isinstance(surface, PrescribedNormalVelocity):
        return mesh_for_surface(surface.base, level, t)
    if isinstance(surface, StaticLevelSet) and surface.genus == 1:
        n = 8 * 2 ** level
        R, r = surface.params["R"], surface.params["r"]
        return torus_mesh(int(round(n * R / r)), n, R, r)
    base = icosphere(level)
    if isinstance(surface, StaticSphere):
        scale = np.full(3, surface.radius)
    elif isinstance(surface, DilatingSphere):
        scale = np.full(3, surface.radius(t))
    elif isinstance(surface, AreaPreservingEllipsoid):
        a, c, _, _ = surface.axes(t)
        scale = np.array([a, a, c])
    elif isinstance(surface, StaticLevelSet) and {"a", "b", "c"} <= set(surface.params):
        scale = np.array([surface.params[k] for k in "abc"])
    else:
        scale = np.ones(3)
    v = closest_point(surface, base.vertices * scale, t)
    return SurfaceMesh(v, base.triangles, t)


def _velocity(surface: EvolvingSurface, x: np.ndarray, t: float) -> np.ndarray:
    g = surface.grad(x, t)
    return -surface.dlevel_dt(x, t)[:, None] * g / np.einsum("ij,ij->i", g, g)[:, None]


def advect(mesh: SurfaceMesh, surface: EvolvingSurface, t_new: float, substeps: int = 4,
           check_quality: bool = True) -> SurfaceMesh:
    """Move vertices along dx/dt = V_N nu with classical RK4, then project.

    Backward motion (t_new < mesh.t) integrates the same ODE in reverse.
    """
    t0 = float(mesh.t)
    if t_new == t0 or surface.is_static:
        return mesh.with_vertices(mesh.vertices.copy(), float(t_new))
    n = max(int(substeps), 1)
    h = (t_new - t0) / n
    x = mesh.vertices.copy()
    t = t0
    for _ in range(n):
        k1 = _velocity(surface, x, t)
        k2 = _velocity(surface, x + 0.5 * h * k1, t + 0.5 * h)
        k3 = _velocity(surface, x + 0.5 * h * k2, t + 0.5 * h)
        k4 = _velocity(surface, x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (_ + 1) * h
    try:
        x = closest_point(surface, x, t_new)
    except Exception as exc:  # noqa: BLE001
        raise ProjectionFailed(str(exc)) from exc
    res = np.abs(surface.level(x, t_new)).max()
    if res > LEVEL_TOL:
        raise ProjectionFailed(f"vertex level residual {res:.3e}")
    out = mesh.with_vertices(x, float(t_new))
    if check_quality:
        amin = out.min_angle()
        if amin < MIN_ANGLE_DEG:
            raise MeshQualityDegraded(f"minimum angle {amin:.2f} deg below {MIN_ANGLE_DEG}")
    return out


@dataclass(frozen=True)
class PiolaMapData:
    D: np.ndarray
    D_inv: np.ndarray
    J: np.ndarray
    A: np.ndarray
    A_inv: np.ndarray
    nu0: np.ndarray
    nu_t: np.ndarray
    linear: np.ndarray
    areas: np.ndarray


def _edge_matrix(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    p = x[f]
    return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def piola_maps(mesh: SurfaceMesh, surface: EvolvingSurface, t: float | None = None) -> PiolaMapData:
    t = mesh.t if t is None else t
    f = mesh.triangles
    E0 = _edge_matrix(mesh.ref_vertices, f)
    Et = _edge_matrix(mesh.vertices, f)
    a0 = 0.5 * np.linalg.norm(np.cross(E0[:, :, 0], E0[:, :, 1]), axis=1)
    if np.any(a0 < 1e-14):
        raise DegenerateElement("reference triangle with vanishing area")
    at = 0.5 * np.linalg.norm(np.cross(Et[:, :, 0], Et[:, :, 1]), axis=1)
    c0 = closest_point(surface, mesh.ref_vertices[f].mean(axis=1), 0.0)
    ct = closest_point(surface, mesh.vertices[f].mean(axis=1), t)
    nu0 = sample(surface, c0, 0.0).nu
    nut = sample(surface, ct, t).nu
    P0 = np.eye(3) - _outer(nu0, nu0)
    Pt = np.eye(3) - _outer(nut, nut)
    # affine edge map between the tangent planes at the element centroids
    D = np.einsum("eij,ejk->eik", Pt @ Et, np.linalg.pinv(P0 @ E0, rcond=1e-12))
    D_inv = np.linalg.pinv(D, rcond=1e-12)
    J = at / a0
    A = D / J[:, None, None] + _outer(nut, nu0)
    A_inv = D_inv * J[:, None, None] + _outer(nu0, nut)
    # full 3x3 extension for nodal averaging: normal direction stretched by sqrt(J),
    # so rigid and uniformly dilating motions average exactly
    L = D + np.sqrt(J)[:, None, None] * _outer(nut, nu0)
    return PiolaMapData(D=D, D_inv=D_inv, J=J, A=A, A_inv=A_inv, nu0=nu0, nu_t=nut,
                        linear=L, areas=a0)


def nodal_piola(space_ref, space_t, maps: PiolaMapData) -> tuple[np.ndarray, np.ndarray]:
    """Per-node A and its inverse, from area-weighted element linear maps."""
    dofs = space_ref.element_nodes
    n = space_ref.n_nodes
    w = maps.areas
    Lsum = np.zeros((n, 3, 3))
    Jsum = np.zeros(n)
    wsum = np.zeros(n)
    for k in range(dofs.shape[1]):
        np.add.at(Lsum, dofs[:, k], w[:, None, None] * maps.linear)
        np.add.at(Jsum, dofs[:, k], w * maps.J)
        np.add.at(wsum, dofs[:, k], w)
    Lbar = Lsum / wsum[:, None, None]
    Jbar = Jsum / wsum
    nu0 = space_ref.node_normals
    nut = space_t.node_normals
    P0 = np.eye(3) - _outer(nu0, nu0)
    Pt = np.eye(3) - _outer(nut, nut)
    D = Pt @ Lbar @ P0
    A = D / Jbar[:, None, None] + _outer(nut, nu0)
    return A, np.linalg.inv(A)


def piola_push(field, space_t, maps: PiolaMapData):
    """Push a tangential field on Gamma_0 to Gamma(t) (same node numbering)."""
    from .forms import FeFunction

    A, _ = nodal_piola(field.space, space_t, maps)
    u = field.nodal_vectors()
    out = np.einsum("nij,nj->ni", A, u)
    return FeFunction(space_t, out.ravel()).project_tangential()


def piola_pull(field, space_ref, maps: PiolaMapData):
    from .forms import FeFunction

    _, A_inv = nodal_piola(space_ref, field.space, maps)
    u = field.nodal_vectors()
    out = np.einsum("nij,nj->ni", A_inv, u)
    return FeFunction(space_ref, out.ravel()).project_tangential()


def read_off(path: str | Path) -> SurfaceMesh:
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                tokens.append(line)
    if not tokens or not tokens[0].startswith("OFF"):
        raise FormatError(f"{path}: missing OFF header")
    head = tokens[0][3:].split()
    body = tokens[1:]
    if not head:
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        v = np.array([[float(s) for s in body[i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nf):
            parts = [int(s) for s in body[nv + i].split()]
            if parts[0] != 3:
                raise FormatError(f"{path}: only triangles supported")
            faces.append(parts[1:4])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed OFF body ({exc})") from exc
    return SurfaceMesh(v, np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_off(mesh: SurfaceMesh, path: str | Path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges)}"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
