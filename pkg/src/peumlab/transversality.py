"""The transversality series J_t(c) = Σ_k v_t(c_k) / Df_t^k(c_1) and its truncations.

Two sign conventions are exposed: :func:`j_truncated` sums the series as is,
while :func:`j_shadow` carries a leading minus and is evaluated at an
arbitrary point; at y = c the two differ only in sign.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .family import LEFT, NEAR_CRITICAL, RIGHT, NearCriticalError, PeumFamily, PeumMap


def sup_abs_velocity(m: PeumMap) -> float:
    """max |v_t| on [0, 1], over the roots of v' and the branch endpoints."""
    best = 0.0
    for side in (LEFT, RIGHT):
        lo, hi = m.branch_domain(side)
        coefs = m._v[side]
        pts = [lo, hi]
        if coefs.size > 2:
            for r in npoly.polyroots(npoly.polyder(coefs)):
                if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                    pts.append(float(r.real))
        best = max(best, float(np.max(np.abs(npoly.polyval(np.array(pts), coefs)))))
    return best


def _orbit_terms(m: PeumMap, y: float, K: int, side_policy: str | None):
    """Terms v(y_k) / Df^k(f(y)) for k < K along the orbit y_0 = y."""
    pts = np.empty(K + 1)
    pts[0] = y
    step = m.fast_step()
    for k in range(K):
        pts[k + 1] = step(pts[k])
    terms = np.empty(K)
    deriv = 1.0
    for k in range(K):
        x = pts[k]
        if k >= 1 and abs(x - m.c) <= NEAR_CRITICAL:
            if side_policy is None:
                raise NearCriticalError(f"orbit point {k} is within {NEAR_CRITICAL} of c; "
                                        "pass side_policy='left' or 'right'")
            side = side_policy
        else:
            side = LEFT if x <= m.c else RIGHT
        if k >= 1:
            deriv *= float(m.df(x, side))
        terms[k] = float(m.v(x, side)) / deriv
    return pts, terms


@dataclass(frozen=True)
class TransversalitySeries:
    t: float
    terms: np.ndarray          # v(c_k) / Df^k(c_1), k = 0..K-1
    partial: np.ndarray        # J_k for k = 0..K (J_0 = 0)
    sup_v: float
    lam: float

    def tail_bound(self, k) -> np.ndarray | float:
        k = np.asarray(k, dtype=float)
        if self.sup_v == 0.0:
            return np.zeros_like(k) if k.ndim else 0.0
        out = self.sup_v * self.lam ** (-k) / (1.0 - 1.0 / self.lam)
        return out if out.ndim else float(out)

    @property
    def K(self) -> int:
        return self.terms.size

    @property
    def J(self) -> float:
        return float(self.partial[-1])

    @property
    def accuracy(self) -> float:
        return float(self.tail_bound(self.K))


def j_series(family: PeumFamily, t: float, K: int, side_policy: str | None = None
             ) -> TransversalitySeries:
    if K < 0:
        raise ValueError("K must be >= 0")
    if side_policy not in (None, LEFT, RIGHT):
        raise ValueError(f"side_policy must be None, 'left' or 'right', got {side_policy!r}")
    m = family.at(t)
    _, terms = _orbit_terms(m, m.c, K, side_policy)
    partial = np.concatenate([[0.0], np.cumsum(terms)])
    return TransversalitySeries(t=float(t), terms=terms, partial=partial,
                                sup_v=sup_abs_velocity(m), lam=m.expansion_bound())


def j_truncated(family: PeumFamily, t: float, k: int, side_policy: str | None = None) -> float:
    """J_k(c) = Σ_{j<k} v(c_j) / Df^j(c_1)."""
    return j_series(family, t, k, side_policy).J


def j_shadow(family: PeumFamily, t: float, y: float, k: int,
             side_policy: str | None = None) -> float:
    """-Σ_{j<k} v(f^j y) / Df^j(f y); equals -j_truncated at y = c."""
    if k < 0:
        raise ValueError("k must be >= 0")
    m = family.at(t)
    _, terms = _orbit_terms(m, float(y), k, side_policy)
    return -float(terms.sum())


def j_limit(family: PeumFamily, t: float, tol: float = 1e-12,
            side_policy: str | None = None) -> tuple[float, int]:
    """J_k for the smallest k whose tail bound is below tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    m = family.at(t)
    sup_v, lam = sup_abs_velocity(m), m.expansion_bound()
    if sup_v == 0.0:
        return 0.0, 0
    head = sup_v / (1.0 - 1.0 / lam)
    k = 0 if head <= tol else int(math.ceil(math.log(head / tol) / math.log(lam)))
    return j_truncated(family, t, k, side_policy), k


@dataclass(frozen=True)
class PositivityScan:
    t: np.ndarray
    J: np.ndarray
    k_used: np.ndarray
    min_abs: float
    argmin: float
    flagged: np.ndarray        # |J| <= eps1


def j_positivity_scan(family: PeumFamily, t_grid, tol: float = 1e-12,
                      eps1: float | None = None,
                      side_policy: str | None = None) -> PositivityScan:
    ts = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if ts.size == 0:
        raise ValueError("empty parameter grid")
    eps1 = tol if eps1 is None else eps1
    vals, ks = zip(*(j_limit(family, t, tol, side_policy) for t in ts))
    J = np.array(vals)
    i = int(np.argmin(np.abs(J)))
    return PositivityScan(t=ts, J=J, k_used=np.array(ks), min_abs=float(abs(J[i])),
                          argmin=float(ts[i]), flagged=np.abs(J) <= eps1)
