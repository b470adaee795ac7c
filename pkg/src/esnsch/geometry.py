"""Analytic evolving surfaces given by level sets, and pointwise geometry.

Every surface is described by a level function L(x, t) that vanishes on
Gamma(t).  All geometric quantities are derived from L and its first two
spatial derivatives, vectorized over arrays of points of shape (N, 3).
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import DegenerateGradient, GammaTooLarge, NoConvergence

logger = logging.getLogger(__name__)

GRAD_FLOOR = 1e-8
CLOSEST_POINT_MAXITER = 50


class SurfaceKind(enum.Enum):
    STATIC_LEVEL_SET = "static_level_set"
    AREA_PRESERVING_ELLIPSOID = "area_preserving_ellipsoid"
    STATIC_SPHERE = "static_sphere"
    # test fixtures that are not area preserving
    DILATING_SPHERE = "dilating_sphere"
    PRESCRIBED_NORMAL_VELOCITY = "prescribed_normal_velocity"


@dataclass(frozen=True)
class GeomSample:
    """Geometry at a batch of points; leading axes follow the input points."""

    nu: np.ndarray
    H: np.ndarray
    shape_op: np.ndarray
    K: np.ndarray
    v_n: np.ndarray
    proj: np.ndarray


def _as_points(x) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    return x.reshape(-1, 3), lead


class EvolvingSurface:
    """Base class.  Subclasses provide the level function and derivatives."""

    kind: SurfaceKind
    genus: int = 0
    T: float = 1.0

    def __init__(self, params: dict, area0: float):
        self.params = dict(params)
        self.area0 = float(area0)

    # level function and derivatives, x has shape (N, 3)
    def level(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def dlevel_dt(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.zeros(len(x))

    def level_fn(self, x, t: float):
        pts, lead = _as_points(x)
        return self.level(pts, t).reshape(lead)

    def normal_velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        g = self.grad(x, t)
        return -self.dlevel_dt(x, t) / np.linalg.norm(g, axis=1)

    def area(self, t: float) -> float | None:
        """Exact area when known in closed form or by 1D quadrature."""
        return None

    def min_curvature_radius(self, t: float) -> float:
        raise NotImplementedError

    def tube_radius(self) -> float:
        """Admissible tube: 0.4 times the smallest curvature radius at t = 0."""
        return 0.4 * self.min_curvature_radius(0.0)

    @property
    def is_static(self) -> bool:
        return False

    def describe(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind.value}({inner})"


class StaticSphere(EvolvingSurface):
    kind = SurfaceKind.STATIC_SPHERE

    def __init__(self, radius: float = 1.0):
        super().__init__({"radius": radius}, 4.0 * np.pi * radius**2)
        self.radius = float(radius)

    def level(self, x, t):
        return (np.einsum("ij,ij->i", x, x) - self.radius**2) / (2.0 * self.radius)

    def grad(self, x, t):
        return x / self.radius

    def hess(self, x, t):
        return np.broadcast_to(np.eye(3) / self.radius, (len(x), 3, 3)).copy()

    def area(self, t):
        return self.area0

    def min_curvature_radius(self, t):
        return self.radius

    @property
    def is_static(self):
        return True


class StaticLevelSet(EvolvingSurface):
    """Time independent surface given by user supplied callables."""

    kind = SurfaceKind.STATIC_LEVEL_SET

    def __init__(self, level: Callable, grad: Callable, hess: Callable, *, params: dict,
                 area0: float, min_radius: float, genus: int = 0):
        super().__init__(params, area0)
        self._level, self._grad, self._hess = level, grad, hess
        self._min_radius = float(min_radius)
        self.genus = genus

    def level(self, x, t):
        return self._level(x)

    def grad(self, x, t):
        return self._grad(x)

    def hess(self, x, t):
        return self._hess(x)

    def area(self, t):
        return self.area0

    def min_curvature_radius(self, t):
        return self._min_radius

    @property
    def is_static(self):
        return True

    @classmethod
    def ellipsoid(cls, a: float, b: float, c: float) -> "StaticLevelSet":
        r = np.array([a, b, c], dtype=float)
        inv2 = 1.0 / r**2

        def level(x):
            return 0.5 * (x**2 @ inv2 - 1.0)

        def grad(x):
            return x * inv2

        def hess(x):
            return np.broadcast_to(np.diag(inv2), (len(x), 3, 3)).copy()

        return cls(level, grad, hess, params={"a": a, "b": b, "c": c},
                   area0=ellipsoid_area(a, b, c), min_radius=r.min() ** 2 / r.max())

    @classmethod
    def torus(cls, R: float = 1.0, r: float = 0.4) -> "StaticLevelSet":
        if not 0 < r < R:
            raise ValueError("torus needs 0 < r < R")

        def level(x):
            rho = np.hypot(x[:, 0], x[:, 1])
            return 0.5 * ((rho - R) ** 2 + x[:, 2] ** 2 - r**2)

        def grad(x):
            rho = np.hypot(x[:, 0], x[:, 1])
            s = (rho - R) / rho
            return np.stack([s * x[:, 0], s * x[:, 1], x[:, 2]], axis=1)

        def hess(x):
            rho = np.hypot(x[:, 0], x[:, 1])
            out = np.zeros((len(x), 3, 3))
            xy = x[:, :2]
            s = (rho - R) / rho
            # d/dx_j [(1 - R/rho) x_i] = (1 - R/rho) delta_ij + R x_i x_j / rho^3
            out[:, :2, :2] = s[:, None, None] * np.eye(2) + (R / rho**3)[:, None, None] * (
                xy[:, :, None] * xy[:, None, :])
            out[:, 2, 2] = 1.0
            return out

        return cls(level, grad, hess, params={"R": R, "r": r}, area0=4 * np.pi**2 * R * r,
                   min_radius=min(r, R - r), genus=1)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)
_GL_U = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


def spheroid_area(a: float, c: float) -> float:
    """Area of the spheroid with semi-axes (a, a, c).

    Uses 4 pi a int_0^1 sqrt(c^2 + (a^2 - c^2) u^2) du with a Gauss-Legendre
    rule; the integrand is analytic on [0, 1] for c > 0.
    """
    root = np.sqrt(c * c + (a * a - c * c) * _GL_U**2)
    return float(4.0 * np.pi * a * (_GL_W @ root))


def _spheroid_area_partials(a: float, c: float) -> tuple[float, float]:
    u2 = _GL_U**2
    root = np.sqrt(c * c + (a * a - c * c) * u2)
    dA_da = 4.0 * np.pi * (_GL_W @ root + a * a * (_GL_W @ (u2 / root)))
    dA_dc = 4.0 * np.pi * a * c * (_GL_W @ ((1.0 - u2) / root))
    return float(dA_da), float(dA_dc)


def ellipsoid_area(a: float, b: float, c: float) -> float:
    """Area of a triaxial ellipsoid by 2D quadrature of the parametric element."""
    if np.isclose(a, b):
        return spheroid_area(a, c)

    def element(th, ph):
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        n = np.array([b * c * st * st * cp, a * c * st * st * sp, a * b * st * ct])
        return np.linalg.norm(n)

    val, _ = integrate.dblquad(lambda th, ph: element(th, ph), 0, 2 * np.pi, 0, np.pi,
                               epsabs=1e-12, epsrel=1e-11)
    return val


class AreaPreservingEllipsoid(EvolvingSurface):
    """Spheroid (a(t), a(t), c(t)) with a(t) = 1 + amp sin(2 pi t / T).

    c(t) is recovered at each query time by root finding on the area, so the
    surface area is constant to the root-finder tolerance.
    """

    kind = SurfaceKind.AREA_PRESERVING_ELLIPSOID

    def __init__(self, amplitude: float = 0.2, c0: float = 1.0, T: float = 1.0):
        if not 0 <= amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1)")
        area0 = spheroid_area(1.0, c0)
        super().__init__({"amplitude": amplitude, "c0": c0, "T": T}, area0)
        self.amplitude, self.c0, self.T = float(amplitude), float(c0), float(T)
        self._axes = functools.lru_cache(maxsize=256)(self._axes_uncached)

    def a_of_t(self, t: float) -> tuple[float, float]:
        w = 2.0 * np.pi / self.T
        return 1.0 + self.amplitude * np.sin(w * t), self.amplitude * w * np.cos(w * t)

    def _axes_uncached(self, t: float) -> tuple[float, float, float, float]:
        a, da = self.a_of_t(t)
        target = self.area0
        # area grows monotonically in c, so a bracket is easy to find
        lo, hi = 1e-3, max(2.0, self.c0)
        while spheroid_area(a, hi) < target:
            hi *= 2.0
        c = optimize.brentq(lambda c: spheroid_area(a, c) - target, lo, hi, xtol=1e-15)
        # one Newton polish step on the same equation
        dA_da, dA_dc = _spheroid_area_partials(a, c)
        c -= (spheroid_area(a, c) - target) / dA_dc
        dc = -dA_da * da / dA_dc
        return a, c, da, dc

    def axes(self, t: float) -> tuple[float, float, float, float]:
        """Return (a, c, a', c') at time t."""
        return self._axes(float(t))

    def level(self, x, t):
        a, c, _, _ = self.axes(t)
        return 0.5 * ((x[:, 0] ** 2 + x[:, 1] ** 2) / a**2 + x[:, 2] ** 2 / c**2 - 1.0)

    def grad(self, x, t):
        a, c, _, _ = self.axes(t)
        return x * np.array([1 / a**2, 1 / a**2, 1 / c**2])

    def hess(self, x, t):
        a, c, _, _ = self.axes(t)
        return np.broadcast_to(np.diag([1 / a**2, 1 / a**2, 1 / c**2]), (len(x), 3, 3)).copy()

    def dlevel_dt(self, x, t):
        a, c, da, dc = self.axes(t)
        return -(x[:, 0] ** 2 + x[:, 1] ** 2) * da / a**3 - x[:, 2] ** 2 * dc / c**3

    def area(self, t):
        a, c, _, _ = self.axes(t)
        return spheroid_area(a, c)

    def min_curvature_radius(self, t):
        a, c, _, _ = self.axes(t)
        return min(a, c) ** 2 / max(a, c)

    def tube_radius(self) -> float:
        ts = np.linspace(0.0, self.T, 33)
        return 0.4 * min(self.min_curvature_radius(t) for t in ts)


class DilatingSphere(EvolvingSurface):
    """Sphere with radius growing linearly from r0 to r1 over [0, T]."""

    kind = SurfaceKind.DILATING_SPHERE

    def __init__(self, r0: float = 1.0, r1: float = 2.0, T: float = 1.0):
        super().__init__({"r0": r0, "r1": r1, "T": T}, 4 * np.pi * r0**2)
        self.r0, self.r1, self.T = float(r0), float(r1), float(T)

    def radius(self, t: float) -> float:
        return self.r0 + (self.r1 - self.r0) * t / self.T

    def level(self, x, t):
        R = self.radius(t)
        return (np.einsum("ij,ij->i", x, x) - R * R) / (2.0 * R)

    def grad(self, x, t):
        return x / self.radius(t)

    def hess(self, x, t):
        return np.broadcast_to(np.eye(3) / self.radius(t), (len(x), 3, 3)).copy()

    def dlevel_dt(self, x, t):
        R = self.radius(t)
        dR = (self.r1 - self.r0) / self.T
        return -dR * (np.einsum("ij,ij->i", x, x) + R * R) / (2.0 * R * R)

    def area(self, t):
        return 4 * np.pi * self.radius(t) ** 2

    def min_curvature_radius(self, t):
        return self.radius(t)


class PrescribedNormalVelocity(EvolvingSurface):
    """Freeze the geometry of `base` at its time and attach a synthetic V_N.

    Meant for instantaneous evaluations (forms, correction field); the
    geometry itself does not move.
    """

    kind = SurfaceKind.PRESCRIBED_NORMAL_VELOCITY

    def __init__(self, base: EvolvingSurface, v_n: Callable[[np.ndarray, float], np.ndarray]):
        super().__init__(dict(base.params), base.area0)
        self.base = base
        self._vn = v_n
        self.genus = base.genus
        self.T = base.T

    def level(self, x, t):
        return self.base.level(x, t)

    def grad(self, x, t):
        return self.base.grad(x, t)

    def hess(self, x, t):
        return self.base.hess(x, t)

    def normal_velocity(self, x, t):
        return np.asarray(self._vn(x, t), dtype=float)

    def area(self, t):
        return self.base.area(t)

    def min_curvature_radius(self, t):
        return self.base.min_curvature_radius(t)


def legendre_harmonic(x: np.ndarray, l: int) -> np.ndarray:
    """Zonal harmonic P_l(z/|x|); an eigenfunction of -Laplace-Beltrami on the unit sphere."""
    x = np.asarray(x, dtype=float)
    z = x[..., 2] / np.linalg.norm(x, axis=-1)
    if l == 0:
        return np.ones_like(z)
    if l == 1:
        return z
    if l == 2:
        return 0.5 * (3 * z * z - 1)
    if l == 3:
        return 0.5 * (5 * z**3 - 3 * z)
    raise ValueError("only l <= 3 implemented")


def sample(surface: EvolvingSurface, x, t: float) -> GeomSample:
    pts, lead = _as_points(x)
    g = surface.grad(pts, t)
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < GRAD_FLOOR):
        raise DegenerateGradient(f"|grad level| = {gn.min():.3e} below {GRAD_FLOOR}")
    nu = g / gn[:, None]
    P = np.eye(3) - nu[:, :, None] * nu[:, None, :]
    Hs = np.einsum("nij,njk,nkl->nil", P, surface.hess(pts, t), P) / gn[:, None, None]
    Hs = 0.5 * (Hs + Hs.transpose(0, 2, 1))
    H = np.trace(Hs, axis1=1, axis2=2)
    # product of the two tangential eigenvalues: e1 e2 = ((tr)^2 - tr(A^2)) / 2
    K = 0.5 * (H * H - np.einsum("nij,nji->n", Hs, Hs))
    vn = surface.normal_velocity(pts, t)
    return GeomSample(
        nu=nu.reshape(lead + (3,)),
        H=H.reshape(lead),
        shape_op=Hs.reshape(lead + (3, 3)),
        K=K.reshape(lead),
        v_n=np.asarray(vn).reshape(lead),
        proj=P.reshape(lead + (3, 3)),
    )


def closest_point(surface: EvolvingSurface, x, t: float, tol: float = 1e-13) -> np.ndarray:
    """Closest point on Gamma(t) via Newton on the Lagrange system.

    Solves y + lam grad L(y) = x, L(y) = 0 for (y, lam).
    """
    pts, lead = _as_points(x)
    if isinstance(surface, StaticSphere) or (
            isinstance(surface, PrescribedNormalVelocity) and isinstance(surface.base, StaticSphere)):
        R = surface.params["radius"]
        r = np.linalg.norm(pts, axis=1)
        if np.any(r < GRAD_FLOOR):
            raise DegenerateGradient("point at sphere center")
        return (pts * (R / r)[:, None]).reshape(lead + (3,))
    y = pts.copy()
    lam = np.zeros(len(pts))
    active = np.ones(len(pts), dtype=bool)
    for _ in range(CLOSEST_POINT_MAXITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ya, la, xa = y[idx], lam[idx], pts[idx]
        g = surface.grad(ya, t)
        Hm = surface.hess(ya, t)
        r1 = ya + la[:, None] * g - xa
        r2 = surface.level(ya, t)
        J = np.zeros((idx.size, 4, 4))
        J[:, :3, :3] = np.eye(3) + la[:, None, None] * Hm
        J[:, :3, 3] = g
        J[:, 3, :3] = g
        rhs = -np.concatenate([r1, r2[:, None]], axis=1)
        step = np.linalg.solve(J, rhs[..., None])[..., 0]
        y[idx] += step[:, :3]
        lam[idx] += step[:, 3]
        done = (np.abs(step[:, :3]).max(axis=1) <= tol * (1 + np.abs(ya).max(axis=1))) & (
            np.abs(r2) <= 1e-14)
        active[idx[done]] = False
    if active.any():
        # tolerate points whose residual is already at round-off
        res = np.abs(surface.level(y[active], t))
        if np.all(res <= 1e-12):
            return y.reshape(lead + (3,))
        raise NoConvergence(f"closest point failed for {active.sum()} points")
    return y.reshape(lead + (3,))


# global functionals on meshes; imported lazily to avoid a cycle with quadrature

def surface_integral(surface: EvolvingSurface, mesh, t: float, integrand: Callable) -> float:
    """Integrate integrand(points, GeomSample) over Gamma(t) via the lifted mesh."""
    from .quadrature import lifted_quadrature

    q = lifted_quadrature(mesh.vertices, mesh.triangles, surface, t)
    vals = integrand(q.points, q.geom)
    return float(np.sum(q.weights * vals))


def mesh_area(surface: EvolvingSurface, mesh, t: float) -> float:
    return surface_integral(surface, mesh, t, lambda p, g: np.ones(p.shape[:-1]))


def area_conservation_residual(surface: EvolvingSurface, mesh, t: float) -> float:
    return surface_integral(surface, mesh, t, lambda p, g: g.H * g.v_n)


def gauss_bonnet_defect(surface: EvolvingSurface, mesh, t: float) -> float:
    total_k = surface_integral(surface, mesh, t, lambda p, g: g.K)
    return total_k - 2.0 * np.pi * mesh.euler_characteristic


def tube_volume(surface: EvolvingSurface, mesh, t: float, gamma: float) -> float:
    if gamma < 0:
        raise GammaTooLarge("gamma must be non-negative")
    if gamma > surface.tube_radius():
        raise GammaTooLarge(f"gamma = {gamma} exceeds tube radius {surface.tube_radius():.4g}")
    area = mesh_area(surface, mesh, t)
    total_k = surface_integral(surface, mesh, t, lambda p, g: g.K)
    return 2.0 * gamma * area + (2.0 * gamma**3 / 3.0) * total_k
