"""Bulk free energies of the phase field and the viscosity blend.

Three variants are provided:

* double well ``F(r) = (r^2 - 1)^2 / 4``, split as ``r^4/4`` (convex) plus ``1/4 - r^2/2``;
* logarithmic ``F(r) = theta/2 F_log(r) + (1 - r^2)/2`` with
  ``F_log(r) = (1+r) log(1+r) + (1-r) log(1-r)`` and ``F_log' = f = log((1+r)/(1-r))``;
* the same with ``F_log`` replaced by a C^2 quadratic continuation outside
  ``(-1+delta, 1-delta)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainViolation


class Variant(enum.Enum):
    DOUBLE_WELL = "DoubleWell"
    LOGARITHMIC = "Logarithmic"
    REGULARIZED_LOG = "RegularizedLog"


@dataclass(frozen=True)
class PotentialSpec:
    variant: Variant = Variant.DOUBLE_WELL
    epsilon: float = 0.1
    theta: float = 0.3
    delta: float = 1e-4

    def __post_init__(self):
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.variant is not Variant.DOUBLE_WELL and not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.variant is Variant.REGULARIZED_LOG and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def is_log(self) -> bool:
        return self.variant is not Variant.DOUBLE_WELL

    def with_delta(self, delta: float) -> "PotentialSpec":
        return PotentialSpec(Variant.REGULARIZED_LOG, self.epsilon, self.theta, delta)


# logarithmic building blocks

def f_log(r):
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise DomainViolation("logarithmic potential needs |r| < 1")
    return np.log1p(r) - np.log1p(-r)


def F_log(r):
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise DomainViolation("logarithmic potential needs |r| < 1")
    return (1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r)


def df_log(r):
    r = np.asarray(r, dtype=float)
    return 2.0 / (1.0 - r * r)


def _outer_F(s, delta):
    """Quadratic continuation for s >= 1 - delta, shifted so F is continuous."""
    return ((1 - s) * np.log(delta) + (1 + s) * np.log(2 - delta) + (1 - s) ** 2 / (2 * delta)
            + (1 + s) ** 2 / (2 * (2 - delta)) - 1.0)


def _outer_f(s, delta):
    # -(1-s)/delta + (1+s)/(2-delta) regrouped around the branch point so s = 1-delta is exact
    return np.log((2 - delta) / delta) + (s - (1 - delta)) * (1 / delta + 1 / (2 - delta))


def F_log_delta(r, delta: float):
    r = np.asarray(r, dtype=float)
    s = np.abs(r)
    inner = s < 1 - delta
    out = np.empty_like(r)
    ri = r[inner]
    out[inner] = (1 + ri) * np.log1p(ri) + (1 - ri) * np.log1p(-ri)
    out[~inner] = _outer_F(s[~inner], delta)
    return out if out.ndim else float(out)


def f_delta(r, delta: float):
    r = np.asarray(r, dtype=float)
    s = np.abs(r)
    inner = s < 1 - delta
    out = np.empty_like(r)
    out[inner] = np.log1p(r[inner]) - np.log1p(-r[inner])
    out[~inner] = np.sign(r[~inner]) * _outer_f(s[~inner], delta)
    return out if out.ndim else float(out)


def df_delta(r, delta: float):
    r = np.asarray(r, dtype=float)
    s = np.abs(r)
    inner = s < 1 - delta
    out = np.empty_like(r)
    out[inner] = 2.0 / (1.0 - r[inner] ** 2)
    out[~inner] = 1.0 / delta + 1.0 / (2.0 - delta)
    return out if out.ndim else float(out)


# convex (implicit) and concave (explicit) parts

def F1(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.variant is Variant.DOUBLE_WELL:
        return 0.25 * r**4
    if spec.variant is Variant.LOGARITHMIC:
        return 0.5 * spec.theta * F_log(r)
    return 0.5 * spec.theta * F_log_delta(r, spec.delta)


def dF1(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.variant is Variant.DOUBLE_WELL:
        return r**3
    if spec.variant is Variant.LOGARITHMIC:
        return 0.5 * spec.theta * f_log(r)
    return 0.5 * spec.theta * f_delta(r, spec.delta)


def d2F1(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.variant is Variant.DOUBLE_WELL:
        return 3 * r**2
    if spec.variant is Variant.LOGARITHMIC:
        if np.any(np.abs(r) >= 1):
            raise DomainViolation("logarithmic potential needs |r| < 1")
        return 0.5 * spec.theta * df_log(r)
    return 0.5 * spec.theta * df_delta(r, spec.delta)


def F2(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    if spec.variant is Variant.DOUBLE_WELL:
        return 0.25 - 0.5 * r**2
    return 0.5 * (1.0 - r**2)


def dF2(spec: PotentialSpec, r):
    return -np.asarray(r, dtype=float)


def d2F2(spec: PotentialSpec, r):
    return -np.ones_like(np.asarray(r, dtype=float))


def F(spec: PotentialSpec, r):
    return F1(spec, r) + F2(spec, r)


def dF(spec: PotentialSpec, r):
    return dF1(spec, r) + dF2(spec, r)


def d2F(spec: PotentialSpec, r):
    return d2F1(spec, r) + d2F2(spec, r)


def lower_bound(spec: PotentialSpec) -> float:
    """min F over the admissible range (the constant beta with F >= beta).

    For theta < 1 the minimum sits at the symmetric pair of wells.
    """
    if spec.variant is Variant.DOUBLE_WELL:
        return 0.0
    return float(min(F(spec, well_location(spec)), F(spec, 0.0)))


def well_location(spec: PotentialSpec) -> float:
    """Positive root of F' (the binodal value), for log variants."""
    if spec.variant is Variant.DOUBLE_WELL:
        return 1.0
    hi = 1 - 1e-15
    if spec.variant is Variant.REGULARIZED_LOG:
        # the quadratic continuation can push the well beyond 1 for large delta
        hi = 1.0
        while dF(spec, hi) <= 0:
            hi *= 2.0
    return float(optimize.brentq(lambda r: float(dF(spec, r)), 1e-6, hi, xtol=1e-15))


@dataclass(frozen=True)
class InequalityReport:
    passed: bool
    min_r_f: float
    min_margin: float
    min_slope: float
    n_samples: int


def potential_inequality_checks(spec: PotentialSpec, samples) -> InequalityReport:
    """Check r f(r) >= 0, f(r) <= r f(r) + 1 and f' >= 0 for the regularized f."""
    r = np.asarray(samples, dtype=float)
    fd = f_delta(r, spec.delta)
    rf = r * fd
    margin = rf + 1.0 - fd
    slope = df_delta(r, spec.delta)
    tol = 1e-12
    ok = bool(rf.min() >= -tol and margin.min() >= -tol and slope.min() >= 0)
    return InequalityReport(ok, float(rf.min()), float(margin.min()), float(slope.min()), r.size)


@dataclass(frozen=True)
class ContinuityReport:
    passed: bool
    jumps: dict
    branch_mismatch: dict


def c2_continuity_check(spec: PotentialSpec, h: float | None = None,
                        tol: float = 1e-6) -> ContinuityReport:
    """Jumps of F, F', F'' across r = +-(1 - delta).

    Each one-sided limit is extrapolated linearly from the two nearest samples
    on that side at spacing h, so smooth variation cancels to O(h^2).  The
    default spacing is min(1e-5, 1e-4 delta) so the stencil stays well inside
    each branch.
    """
    d = spec.delta
    if h is None:
        h = min(1e-5, 1e-4 * d)
    funcs = [lambda r: F_log_delta(r, d), lambda r: f_delta(r, d), lambda r: df_delta(r, d)]
    inner = [F_log, f_log, df_log]
    outer = [lambda s: _outer_F(s, d), lambda s: _outer_f(s, d),
             lambda s: 1.0 / d + 1.0 / (2.0 - d)]
    jumps, mismatch = {}, {}
    for sign in (1.0, -1.0):
        r0 = sign * (1.0 - d)
        for k, fn in enumerate(funcs):
            lo = 2 * fn(r0 - sign * h) - fn(r0 - sign * 2 * h)
            hi = 2 * fn(r0 + sign * h) - fn(r0 + sign * 2 * h)
            jumps[(sign, k)] = float(abs(hi - lo) / max(1.0, abs(lo)))
            # F and F'' are even, F' is odd
            par = sign if k == 1 else 1.0
            mismatch[(sign, k)] = float(abs(inner[k](np.array(r0)) - par * np.asarray(outer[k](abs(r0)))))
    ok = all(v <= tol for v in jumps.values())
    return ContinuityReport(ok, jumps, mismatch)


@dataclass(frozen=True)
class ViscositySpec:
    eta1: float = 1.0
    eta2: float = 2.0

    def __post_init__(self):
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("viscosities must be positive")

    @property
    def eta_star(self) -> float:
        return min(self.eta1, self.eta2)

    @property
    def eta_star_upper(self) -> float:
        return max(self.eta1, self.eta2)

    @property
    def lipschitz(self) -> float:
        return abs(self.eta1 - self.eta2) / 2.0


def eta(spec: ViscositySpec, r):
    """Linear blend between the phase viscosities, clamped outside [-1, 1]."""
    rc = np.clip(np.asarray(r, dtype=float), -1.0, 1.0)
    return spec.eta1 * (1 + rc) / 2 + spec.eta2 * (1 - rc) / 2
