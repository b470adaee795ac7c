"""Triangle quadrature rules and the closest-point lift of flat elements.

Integrals over the smooth surface are evaluated on the flat triangulation,
with quadrature points mapped to the surface by closest-point projection and
the exact area element of that map.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

_A = 0.44594849091596488632
_B = 0.09157621350977074346
_WA = 0.22338158967801146570
_WB = 0.10995174365532186764

#: degree-4 Dunavant rule, barycentric points and weights summing to 1
DUNAVANT4_POINTS = np.array([
    [1 - 2 * _A, _A, _A],
    [_A, 1 - 2 * _A, _A],
    [_A, _A, 1 - 2 * _A],
    [1 - 2 * _B, _B, _B],
    [_B, 1 - 2 * _B, _B],
    [_B, _B, 1 - 2 * _B],
])
DUNAVANT4_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


@functools.lru_cache(maxsize=8)
def composite_rule(n_sub: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Degree-4 rule applied on each of the n_sub**2 uniform subtriangles."""
    if n_sub == 1:
        return DUNAVANT4_POINTS.copy(), DUNAVANT4_WEIGHTS.copy()
    pts, wts = [], []
    h = 1.0 / n_sub
    for i in range(n_sub):
        for j in range(n_sub - i):
            # (xi, eta) corners of the upward and (if any) downward subtriangle
            tris = [[(i, j), (i + 1, j), (i, j + 1)]]
            if i + j < n_sub - 1:
                tris.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
            for tri in tris:
                corners = np.array([[1 - h * (a + b), h * a, h * b] for a, b in tri])
                pts.append(DUNAVANT4_POINTS @ corners)
                wts.append(DUNAVANT4_WEIGHTS / n_sub**2)
    return np.vstack(pts), np.concatenate(wts)


@dataclass
class LiftedQuadrature:
    """Per-element quadrature data on Gamma(t).  Shapes use (nE, nq, ...)."""

    bary: np.ndarray
    ref_weights: np.ndarray
    flat_points: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    geom: object
    area_h: np.ndarray
    normal_h: np.ndarray
    dist: np.ndarray
    lift: np.ndarray
    grad_bary: np.ndarray


def flat_element_data(vertices: np.ndarray, triangles: np.ndarray):
    """Flat areas, unit normals and barycentric gradients of each triangle."""
    x = vertices[triangles]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    area = 0.5 * nn
    normal = n / nn[:, None]
    E = np.stack([e1, e2], axis=2)  # (nE, 3, 2)
    G = np.einsum("eki,ekj->eij", E, E)
    Ginv = np.linalg.inv(G)
    g12 = np.einsum("eki,eij->ejk", E, Ginv)  # rows: grad lambda_1, grad lambda_2
    grad = np.empty((len(triangles), 3, 3))
    grad[:, 1:] = g12
    grad[:, 0] = -g12.sum(axis=1)
    return area, normal, grad


def lifted_quadrature(vertices: np.ndarray, triangles: np.ndarray, surface, t: float,
                      n_sub: int = 1) -> LiftedQuadrature:
    from .geometry import closest_point, sample

    bary, w = composite_rule(n_sub)
    area, normal, grad = flat_element_data(vertices, triangles)
    x = np.einsum("qi,eik->eqk", bary, vertices[triangles])
    nE, nq = x.shape[:2]
    p = closest_point(surface, x.reshape(-1, 3), t).reshape(nE, nq, 3)
    geom = sample(surface, p, t)
    nu = geom.nu
    d = np.einsum("eqk,eqk->eq", x - p, nu)
    nu_dot = np.einsum("eqk,ek->eq", nu, normal)
    jac = 1.0 + d * geom.H + d * d * geom.K
    weights = area[:, None] * w[None, :] * nu_dot / jac
    # gradient of a lifted function: (P + d H)(I - nu_h nu^T / (nu . nu_h)) grad_h
    Pd = geom.proj + d[..., None, None] * geom.shape_op
    corr = np.eye(3) - normal[:, None, :, None] * nu[:, :, None, :] / nu_dot[..., None, None]
    lift = np.einsum("eqij,eqjk->eqik", Pd, corr)
    return LiftedQuadrature(bary=bary, ref_weights=w, flat_points=x, points=p, weights=weights,
                            geom=geom, area_h=area, normal_h=normal, dist=d, lift=lift,
                            grad_bary=grad)
