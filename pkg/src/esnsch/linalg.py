"""Sparse direct solves for bordered and saddle-point systems."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure

logger = logging.getLogger(__name__)


class Factorized:
    """LU factorization of a sparse square matrix with a residual guard.

    ``split`` lists indices whose rows and columns are kept out of the sparse
    factorization and restored by a Woodbury correction.  Dense border rows
    (mean-value constraints) wreck the fill-reducing ordering, so the border
    index and one pinned dof of the constrained block go here.
    """

    def __init__(self, matrix, rtol: float = 1e-8, error=SolverFailure, split=()):
        self.matrix = sp.csc_matrix(matrix)
        self.rtol = rtol
        self.error = error
        self._split = np.unique(np.asarray(split, dtype=int))
        self._factor(robust=False)

    def _factor(self, robust: bool) -> None:
        """Symmetric-pattern minimum degree first; COLAMD with partial pivoting as fallback."""
        self.robust = robust
        J = self._split
        core = self.matrix
        n = self.matrix.shape[0]
        if J.size:
            keep = np.ones(n)
            keep[J] = 0.0
            Dk = sp.diags(keep)
            core = (Dk @ self.matrix @ Dk + sp.diags(1.0 - keep)).tocsc()
        try:
            if robust:
                self._lu = spla.splu(core, permc_spec="COLAMD")
            else:
                self._lu = spla.splu(core, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                                     options={"SymmetricMode": True})
        except RuntimeError as exc:
            if not robust:
                return self._factor(robust=True)
            raise self.error(f"sparse LU failed: {exc}") from exc
        self._woodbury = None
        if J.size:
            diff = (self.matrix - core).tocsc()
            R = diff[J, :].toarray()                 # rows J of the difference
            Cc = diff[:, J].toarray()
            Cc[J, :] = 0.0                           # entries already counted in R
            E = np.zeros((n, J.size))
            E[J, np.arange(J.size)] = 1.0
            U = np.hstack([E, Cc])
            Vt = np.vstack([R, E.T])
            SU = self._lu.solve(U)
            cap = np.eye(U.shape[1]) + Vt @ SU
            bad = not np.all(np.isfinite(cap))
            if not bad:
                try:
                    cap_inv = np.linalg.inv(cap)
                    bad = not np.all(np.isfinite(cap_inv)) or np.linalg.cond(cap) > 1e14
                except np.linalg.LinAlgError:
                    bad = True
            if bad:
                if not robust:
                    return self._factor(robust=True)
                raise self.error("singular bordered system")
            self._woodbury = (SU, Vt, cap_inv)

    @property
    def shape(self):
        return self.matrix.shape

    def _raw_solve(self, rhs):
        y = self._lu.solve(rhs)
        if self._woodbury is not None:
            SU, Vt, cap_inv = self._woodbury
            y = y - SU @ (cap_inv @ (Vt @ y))
        return y

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._raw_solve(rhs)
        scale = np.linalg.norm(rhs) + np.linalg.norm(self.matrix @ x) if np.all(np.isfinite(x)) else 0.0
        if np.all(np.isfinite(x)):
            r = self.matrix @ x - rhs
            if scale > 0 and np.linalg.norm(r) > self.rtol * scale:
                # one step of iterative refinement before giving up
                x = x - self._raw_solve(r)
                r = self.matrix @ x - rhs
            if scale == 0 or np.linalg.norm(r) <= self.rtol * scale:
                return x
            msg = f"relative residual {np.linalg.norm(r) / scale:.2e}"
        else:
            msg = "non-finite solution"
        if not self.robust:
            logger.debug("fast factorization rejected (%s); refactoring with COLAMD", msg)
            self._factor(robust=True)
            return self.solve(rhs)
        raise self.error(msg)


def bordered(K, c: np.ndarray):
    """[[K, c], [c^T, 0]] for a single mean-value constraint.

    Factor it with ``Factorized(M, split=border_split(K.shape[0]))``.
    """
    c = sp.csc_matrix(np.asarray(c, dtype=float).reshape(-1, 1))
    return sp.bmat([[K, c], [c.T, None]], format="csc")


def border_split(n_core: int, pin: int = 0) -> tuple[int, int]:
    """Split indices for a matrix with one trailing border row: the border and a pin."""
    return (pin, n_core)


def saddle(K, B, m: np.ndarray, C=None):
    """[[K, -B^T, 0], [-B, -C, -m], [0, -m^T, 0]] with m the pressure mean row.

    Pair it with ``split=border_split(n_u + n_p, pin=n_u)``.
    """
    m = sp.csc_matrix(np.asarray(m, dtype=float).reshape(-1, 1))
    n_p = B.shape[0]
    C = sp.csc_matrix((n_p, n_p)) if C is None else C
    return sp.bmat([[K, -B.T, None], [-B, -C, -m], [None, -m.T, None]], format="csc")
