"""Shadowing decomposition for a parameter step t -> t + h.

Points x whose f_{t+h}-orbit is matched (same itinerary, same endpoint after n
steps) by some f_t-orbit are shadowable.  The non-shadowable set is a union of
pullbacks of short intervals I_k attached to c.  Interval formulas keep only
the first order in h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import intervals as iv
from .family import (LEFT, NEAR_CRITICAL, RIGHT, DomainError, NearCriticalError,
                     PeumFamily, PeumMap, itinerary_array, orbit_ensemble)
from .observables import Observable
from .srb import critical_preimages, piecewise_quadrature
from .transversality import j_limit, j_shadow

DEFAULT_BUDGET = 2_000_000


def _check_step(family: PeumFamily, t: float, h: float) -> None:
    family.check_t(t)
    family.check_t(t + h)


# ---------------------------------------------------------------------------
# intervals attached to c


@dataclass(frozen=True)
class BarInterval:
    lo: float
    hi: float
    J: float
    flagged: bool      # J <= 0: orientation swapped or degenerate

    @property
    def length(self) -> float:
        return self.hi - self.lo


def bar_interval(family: PeumFamily, t: float, h: float, tol: float = 1e-14) -> BarInterval:
    """[c - hJ, c + hJ] with J = J_t(c)."""
    if h < 0:
        raise DomainError("h must be >= 0")
    _check_step(family, t, h)
    J, _ = j_limit(family, t, tol)
    c = family.c
    a, b = c - h * J, c + h * J
    return BarInterval(min(a, b), max(a, b), J, flagged=not J > 0)


def interval_I_k(family: PeumFamily, t: float, h: float, k: int, tilde: bool = False
                 ) -> tuple[float, float]:
    """First-order I_k (or Ĩ_k) with the shadow-convention J_k(c), one-sided.

    I_k  = [c + hJ_k/Df_L(c), c]  if J_k <= 0,  [c, c - hJ_k/Df_R(c)] otherwise;
    Ĩ_k  = [c, c + hJ_k/Df_R(c)]  if J_k <= 0,  [c - hJ_k/Df_L(c), c] otherwise.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    m = family.at(t)
    c = m.c
    Jk = j_shadow(family, t, c, k) if k > 0 else 0.0
    dL, dR = float(m.df(c, LEFT)), float(m.df(c, RIGHT))
    if not tilde:
        ends = (c + h * Jk / dL, c) if Jk <= 0 else (c, c - h * Jk / dR)
    else:
        ends = (c, c + h * Jk / dR) if Jk <= 0 else (c - h * Jk / dL, c)
    return (min(ends), max(ends))


def mismatch_interval(family: PeumFamily, t: float, h: float, k: int, tilde: bool = False
                      ) -> tuple[float, float] | None:
    """Two-sided first-order set near c where itineraries split after k remaining steps.

    The partner sits at f_t^j(y) = f_{t+h}^j(x) - h J_k / Df_t, and Df_t changes
    sign across c, so when the shift points towards c on one side it does so on
    both.  For x (``tilde=False``) this happens when J_k < 0, for y when J_k > 0;
    otherwise the set is empty to first order (None).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    m = family.at(t)
    c = m.c
    Jk = j_shadow(family, t, c, k) if k > 0 else 0.0
    if Jk == 0.0:
        return (c, c)
    if (Jk < 0) == tilde:
        return None
    dL, dR = abs(float(m.df(c, LEFT))), abs(float(m.df(c, RIGHT)))
    a = h * abs(Jk)
    return (c - a / dL, c + a / dR)


# ---------------------------------------------------------------------------
# pullbacks


@dataclass
class Pullback:
    lo: np.ndarray
    hi: np.ndarray
    generation: np.ndarray
    complete: bool = True

    @property
    def measure(self) -> float:
        return iv.measure(self.lo, self.hi)

    def merged(self):
        return iv.merge(self.lo, self.hi)


def pullback(m: PeumMap, lo: float, hi: float, k: int, budget: int | None = None):
    """Components of f^{-k}[lo, hi]; returns (lo, hi, complete)."""
    a, b = np.array([lo]), np.array([hi])
    for _ in range(k):
        a, b, _ = m.preimage_intervals(a, b)
        if budget is not None and a.size > budget:
            return a[:budget], b[:budget], False
        if a.size == 0:
            break
    return a, b, True


def _complement(family, t_map, t, h, n, tilde, budget, convention="printed"):
    if n < 0:
        raise ValueError("n must be >= 0")
    if convention not in ("printed", "exact"):
        raise ValueError(f"unknown convention {convention!r}")
    m = family.at(t_map)
    los, his, gens = [], [], []
    complete = True
    used = 0
    for k in range(n + 1):
        if h == 0.0:
            break
        if convention == "printed":
            a, b = interval_I_k(family, t, h, n - k, tilde)
        else:
            ab = mismatch_interval(family, t, h, n - k, tilde)
            if ab is None:
                continue
            a, b = ab
        left = None if budget is None else max(budget - used, 0)
        lo, hi, ok = pullback(m, a, b, k, left)
        complete &= ok
        used += lo.size
        los.append(lo)
        his.append(hi)
        gens.append(np.full(lo.size, k))
        if not ok:
            break
    if not los:
        return Pullback(np.empty(0), np.empty(0), np.empty(0, dtype=int), True)
    return Pullback(np.concatenate(los), np.concatenate(his), np.concatenate(gens), complete)


@dataclass
class ShadowReport:
    t: float
    h: float
    n: int
    I: list
    I_tilde: list
    bar: BarInterval
    complement_A: Pullback
    complement_B: Pullback

    @property
    def measure_A(self) -> float:
        return self.complement_A.measure

    @property
    def measure_B(self) -> float:
        return self.complement_B.measure

    def to_json(self) -> dict:
        def comps(p: Pullback):
            return [{"lo": float(a), "hi": float(b), "generation": int(g)}
                    for a, b, g in zip(p.lo, p.hi, p.generation)]
        return {"t": self.t, "h": self.h, "n": self.n,
                "I": [list(map(float, x)) for x in self.I],
                "I_tilde": [list(map(float, x)) for x in self.I_tilde],
                "bar_interval": [self.bar.lo, self.bar.hi],
                "complement_A": {"measure": self.measure_A, "complete": self.complement_A.complete,
                                 "components": comps(self.complement_A)},
                "complement_B": {"measure": self.measure_B, "complete": self.complement_B.complete,
                                 "components": comps(self.complement_B)}}


def complement_A(family: PeumFamily, t: float, h: float, n: int,
                 budget: int | None = DEFAULT_BUDGET, convention: str = "printed") -> Pullback:
    """[0,1] \\ A_{h,n} = ∪_k f_{t+h}^{-k} I_{n-k}.

    ``convention="exact"`` uses :func:`mismatch_interval` instead of I_k.
    """
    _check_step(family, t, h)
    return _complement(family, t + h, t, h, n, False, budget, convention)


def complement_B(family: PeumFamily, t: float, h: float, n: int,
                 budget: int | None = DEFAULT_BUDGET, convention: str = "printed") -> Pullback:
    """[0,1] \\ B_{h,n} = ∪_k f_t^{-k} Ĩ_{n-k}."""
    _check_step(family, t, h)
    return _complement(family, t, t, h, n, True, budget, convention)


def shadow_report(family: PeumFamily, t: float, h: float, n: int,
                  budget: int | None = DEFAULT_BUDGET) -> ShadowReport:
    return ShadowReport(
        t=float(t), h=float(h), n=int(n),
        I=[interval_I_k(family, t, h, k) for k in range(n + 1)],
        I_tilde=[interval_I_k(family, t, h, k, tilde=True) for k in range(n + 1)],
        bar=bar_interval(family, t, h),
        complement_A=complement_A(family, t, h, n, budget),
        complement_B=complement_B(family, t, h, n, budget))


# ---------------------------------------------------------------------------
# shadow partners and the change of variables


@dataclass(frozen=True)
class ShadowPair:
    x: float
    y: float
    endpoint_gap: float
    dxdy: float


def shadow_partners(family: PeumFamily, t: float, h: float, x, n: int):
    """Vectorized partners y_n(x); NaN where x is not shadowable.

    Returns (y, endpoint_gap, dx/dy) with dx/dy = Df_t^n(y) / Df_{t+h}^n(x).
    """
    _check_step(family, t, h)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mh, m = family.at(t + h), family.at(t)
    orb = np.empty((n + 1,) + x.shape)
    orb[0] = x
    for k in range(n):
        orb[k + 1] = np.clip(mh(orb[k]), 0.0, 1.0)
    sym = orb <= family.c
    z = orb[n].copy()
    for k in range(n - 1, -1, -1):
        z = np.where(sym[k], m.inverse(z, LEFT), m.inverse(z, RIGHT))
    y = z
    ok = ~np.isnan(y)
    yy = np.where(ok, y, 0.5)
    fwd = np.empty_like(orb)
    fwd[0] = yy
    for k in range(n):
        fwd[k + 1] = np.clip(m(fwd[k]), 0.0, 1.0)
    ok &= np.all((fwd[:n + 1] <= family.c) == sym, axis=0)
    gap = np.abs(fwd[n] - orb[n])
    dfx = np.prod(np.where(sym[:n], mh.df(orb[:n], LEFT), mh.df(orb[:n], RIGHT)), axis=0)
    dfy = np.prod(np.where(sym[:n], m.df(fwd[:n], LEFT), m.df(fwd[:n], RIGHT)), axis=0)
    dxdy = dfy / dfx
    nan = np.full(x.shape, np.nan)
    return np.where(ok, y, nan), np.where(ok, gap, nan), np.where(ok, dxdy, nan)


def shadow_partner(family: PeumFamily, t: float, h: float, x: float, n: int):
    """y_n(x), or None if x is not shadowable."""
    y, _, _ = shadow_partners(family, t, h, [x], n)
    return None if np.isnan(y[0]) else float(y[0])


@dataclass(frozen=True)
class MatchedPairs:
    x: np.ndarray
    y: np.ndarray
    endpoint_gap: np.ndarray
    dxdy: np.ndarray
    R: np.ndarray                   # R_{t,n}(y)
    itinerary_match: np.ndarray
    drawn: int

    def predicted(self, h: float) -> np.ndarray:
        return 1.0 - h * self.R

    def error(self, h: float) -> np.ndarray:
        return np.abs(self.dxdy - self.predicted(h))


def matched_pairs(family: PeumFamily, t: float, h: float, n: int, count: int,
                  rng=None, max_rounds: int = 100) -> MatchedPairs:
    """``count`` shadowable x drawn uniformly, with partners, dx/dy and R_{t,n}(y)."""
    rng = np.random.default_rng(rng)
    m, mh = family.at(t), family.at(t + h)
    xs, drawn = [], 0
    for _ in range(max_rounds):
        need = count - sum(a.size for a in xs)
        if need <= 0:
            break
        x = rng.random(2 * need + 16)
        drawn += x.size
        y, _, _ = shadow_partners(family, t, h, x, n)
        xs.append(x[~np.isnan(y)])
    else:
        raise RuntimeError(f"fewer than {count} shadowable points after {drawn} draws")
    x = np.concatenate(xs)[:count]
    y, gap, dxdy = shadow_partners(family, t, h, x, n)
    R, valid = _r_along(m, y, n)
    match = np.all(itinerary_array(mh, x, n) == itinerary_array(m, y, n), axis=0) & valid
    return MatchedPairs(x=x, y=y, endpoint_gap=gap, dxdy=dxdy, R=R[n], itinerary_match=match,
                        drawn=drawn)


def _r_along(m: PeumMap, y: np.ndarray, n: int, reject: float = NEAR_CRITICAL):
    """R_{t,k}(y) for k = 0..n (rows) and the orbit; invalid where the orbit meets c.

    Uses Q_k = Σ_{j<=k} ξ(y_j)/Df^{k-j}(y_j) = Q_{k-1}/Df(y_{k-1}) + ξ(y_k).
    """
    y = np.asarray(y, dtype=float)
    R = np.zeros((n + 1,) + y.shape)
    valid = np.ones(y.shape, dtype=bool)
    Q = np.zeros(y.shape)
    prev_df = None
    z = y
    for k in range(n):
        valid &= np.abs(z - m.c) > reject
        df = m.df(z)
        Q = (Q / prev_df if prev_df is not None else 0.0) + m.d2f(z) / df
        R[k + 1] = R[k] + m.dv(z) / df - (m.v(z) / df) * Q
        prev_df = df
        z = np.clip(m(z), 0.0, 1.0)
    return R, valid


def r_function(family: PeumFamily, t: float, y: float, n: int) -> float:
    """R_{t,n}(y) = Σ_{k<n} [v'/Df - (v/Df) Σ_{j<=k} ξ(y_j)/Df^{k-j}(y_j)] at y_k."""
    if n < 0:
        raise ValueError("n must be >= 0")
    m = family.at(t)
    R, valid = _r_along(m, np.array([float(y)]), n)
    if not valid[0]:
        raise NearCriticalError("orbit of y passes within tolerance of c")
    return float(R[n, 0])


@dataclass(frozen=True)
class RIntegral:
    n: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    rejected_fraction: float
    samples: int


def r_integral(family: PeumFamily, t: float, phi: Observable, n_max: int,
               samples: int = 100_000, seed: int = 0, reject: float = 1e-9,
               chunk: int = 50_000) -> RIntegral:
    """Monte Carlo ∫ φ(f^n y) R_{t,n}(y) dy for n = 0..n_max, orbits near c rejected."""
    m = family.at(t)
    rng = np.random.default_rng(seed)
    s1 = np.zeros(n_max + 1)
    s2 = np.zeros(n_max + 1)
    rejected = 0
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        valid = np.ones(size, dtype=bool)
        Q = np.zeros(size)
        R = np.zeros(size)
        prev_df = None
        for k, z in enumerate(orbit_ensemble(m, rng.random(size), n_max, rng)):
            # R holds R_{t,k}(y) here: terms 0..k-1
            contrib = np.where(valid, phi(z) * R, 0.0)
            s1[k] += contrib.sum()
            s2[k] += np.dot(contrib, contrib)
            if k == n_max:
                break
            valid &= np.abs(z - m.c) > reject
            df = m.df(z)
            Q = (Q / prev_df if prev_df is not None else 0.0) + m.d2f(z) / df
            R = R + m.dv(z) / df - (m.v(z) / df) * Q
            prev_df = df
        rejected += int((~valid).sum())
        done += size
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean ** 2, 0.0)
    return RIntegral(n=np.arange(n_max + 1), value=mean, stderr=np.sqrt(var / samples),
                     rejected_fraction=rejected / samples, samples=samples)


def r_integral_quadrature(family: PeumFamily, t: float, phi: Observable, n: int,
                          budget: int = 1_000_000) -> float:
    """∫ φ(f^n y) R_{t,n}(y) dy by Gauss-Legendre between the corners of f^n."""
    m = family.at(t)
    breaks = critical_preimages(m, n, budget)
    if breaks is None:
        raise RuntimeError(f"corner budget {budget} exceeded at n={n}")

    def integrand(y):
        R, _ = _r_along(m, y, n, reject=0.0)
        z = y
        for _ in range(n):
            z = np.clip(m(z), 0.0, 1.0)
        return phi(z) * R[n]
    return piecewise_quadrature(breaks, integrand)


# ---------------------------------------------------------------------------
# return times and the bar interval dynamics


@dataclass(frozen=True)
class ReturnTimes:
    n1: int
    n2: int
    s1: float
    hat_interval: tuple[float, float]
    bar: BarInterval
    s_grid_size: int
    approximate: bool = True     # the s-quantifier is sampled on a grid


def forward_images(m: PeumMap, lo: float, hi: float, n: int) -> np.ndarray:
    """Rows (lo_k, hi_k) of f^k[lo, hi] for k = 0..n."""
    out = np.empty((n + 1, 2))
    a, b = np.array(lo), np.array(hi)
    out[0] = lo, hi
    for k in range(1, n + 1):
        a, b = m.image_interval(a, b)
        out[k] = float(a), float(b)
    return out


def return_times(family: PeumFamily, t: float, h: float, s_grid_size: int = 33) -> ReturnTimes:
    if not h > 0:
        raise DomainError("h must be positive")
    bar = bar_interval(family, t, h)
    if bar.lo <= 0.0 or bar.hi >= 1.0:
        raise DomainError("bar interval leaves (0, 1); h too large")
    cap = int(math.ceil(10 * abs(math.log(h))))
    n1, s1 = None, None
    for s in np.linspace(t, t + h, s_grid_size):
        imgs = forward_images(family.at(s), bar.lo, bar.hi, cap)
        hit = np.flatnonzero((imgs[1:, 0] <= bar.hi) & (imgs[1:, 1] >= bar.lo))
        if hit.size and (n1 is None or hit[0] + 1 < n1):
            n1, s1 = int(hit[0] + 1), float(s)
    if n1 is None:
        raise RuntimeError(f"no return of the bar interval within {cap} steps")
    mh = family.at(t + h)
    dmin = min(abs(float(mh.df(mh.c, LEFT))), abs(float(mh.df(mh.c, RIGHT))))
    step = mh.fast_step()
    x, deriv, n2 = mh.critical_value, dmin, 1
    while deriv * bar.length < 1.0:
        if abs(x - mh.c) <= NEAR_CRITICAL:
            raise NearCriticalError("critical orbit returns to c before n2")
        deriv *= abs(float(mh.df(x)))
        x = step(x)
        n2 += 1
    hat = forward_images(mh, bar.lo, bar.hi, n1 - 1)[-1]
    return ReturnTimes(n1=n1, n2=n2, s1=s1, hat_interval=(float(hat[0]), float(hat[1])),
                       bar=bar, s_grid_size=s_grid_size)


@dataclass(frozen=True)
class DistortionTable:
    n: np.ndarray
    pair_ratio_max: np.ndarray       # max over sampled (s1, s2) of |f_{s1}^n Ī| / |f_{s2}^n Ī|
    pair_ratio_min: np.ndarray
    orbit_ratio_max: np.ndarray      # max over s1 of |f_{s1}^n Ī| / |c_n(t+h) - c_n(s1)|
    orbit_ratio_min: np.ndarray


def distortion_ratios(family: PeumFamily, t: float, h: float, n_max: int,
                      s_pairs: int = 9) -> DistortionTable:
    """Bounded-distortion ratios for n = 1..n_max on an s-grid of [t, t+h].

    The orbit ratio is sampled on the lower half of the grid: at s1 = t + h its
    denominator vanishes identically.
    """
    bar = bar_interval(family, t, h)
    if bar.length <= 0:
        raise ValueError("degenerate bar interval")
    ss = np.linspace(t, t + h, s_pairs)
    lengths = np.empty((s_pairs, n_max + 1))
    crit = np.empty((s_pairs, n_max + 1))
    for i, s in enumerate(ss):
        m = family.at(s)
        imgs = forward_images(m, bar.lo, bar.hi, n_max)
        lengths[i] = imgs[:, 1] - imgs[:, 0]
        pts = np.empty(n_max + 1)
        pts[0] = m.c
        step = m.fast_step()
        for k in range(n_max):
            pts[k + 1] = step(pts[k])
        crit[i] = pts
    if np.any(lengths[:, 1:] <= 0):
        raise ValueError("degenerate image interval")
    L = lengths[:, 1:]
    ratio = L[:, None, :] / L[None, :, :]
    lower = ss <= t + 0.5 * h
    denom = np.abs(crit[-1, 1:][None, :] - crit[lower, 1:])
    with np.errstate(divide="ignore"):
        orbit = L[lower] / denom
    return DistortionTable(n=np.arange(1, n_max + 1), pair_ratio_max=ratio.max(axis=(0, 1)),
                           pair_ratio_min=ratio.min(axis=(0, 1)),
                           orbit_ratio_max=orbit.max(axis=0), orbit_ratio_min=orbit.min(axis=0))


@dataclass(frozen=True)
class OverlapResult:
    n: int
    overlap: float                  # Σ_{k1<k2} |L_k1 ∩ L_k2|
    measures: np.ndarray            # |L_k|, k = 1..n
    union_measure: float
    defect: float | None = None     # |Σ_k ∫_{L_k} ψ - ∫_{∪ L_k} ψ|
    defect_bound: float | None = None
    complete: bool = True


def overlap_sum(family: PeumFamily, t: float, h: float, n: int, psi: Observable | None = None,
                budget: int | None = DEFAULT_BUDGET) -> OverlapResult:
    """Pairwise overlaps of L_k = f_{t+h}^{-k}(Ī_h), k = 1..n."""
    bar = bar_interval(family, t, h)
    mh = family.at(t + h)
    comps = []
    a, b = np.array([bar.lo]), np.array([bar.hi])
    complete = True
    for _ in range(n):
        a, b, _ = mh.preimage_intervals(a, b)
        if budget is not None and a.size > budget:
            complete = False
            break
        comps.append(iv.merge(a, b))
    meas = np.array([float(np.sum(hi - lo)) for lo, hi in comps])
    total = 0.0
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            total += iv.intersection_measure(*comps[i], *comps[j])
    all_lo = np.concatenate([c[0] for c in comps]) if comps else np.empty(0)
    all_hi = np.concatenate([c[1] for c in comps]) if comps else np.empty(0)
    ulo, uhi = iv.merge(all_lo, all_hi)
    defect = bound = None
    if psi is not None:
        summed = sum(float(np.sum(psi.integral(lo, hi))) for lo, hi in comps)
        union = float(np.sum(psi.integral(ulo, uhi)))
        defect = abs(summed - union)
        bound = psi.sup_abs * total
    return OverlapResult(n=n, overlap=total, measures=meas, union_measure=float(np.sum(uhi - ulo)),
                         defect=defect, defect_bound=bound, complete=complete)


@dataclass(frozen=True)
class LIntegral:
    value: float
    length: float
    ratio: float        # value / (|L| |log |L||)
    m: int


def integral_over_L(family: PeumFamily, t: float, h: float, L: tuple[float, float],
                    phi: Observable, psi: Observable, m: int,
                    budget: int = 1_000_000) -> LIntegral:
    """Σ_{k=0}^{m} ∫_L φ(f_{t+h}^k x) ψ(x) dx, Gauss-Legendre between corners of f^m."""
    lo, hi = float(L[0]), float(L[1])
    if not hi > lo:
        raise ValueError("L must have positive length")
    mh = family.at(t + h)
    corners = critical_preimages(mh, m, budget)
    if corners is None:
        raise RuntimeError(f"corner budget {budget} exceeded at m={m}")
    breaks = np.concatenate([[lo, hi], corners[(corners > lo) & (corners < hi)]])
    pts = np.unique(breaks)
    a, b = pts[:-1], pts[1:]
    xg, wg = np.polynomial.legendre.leggauss(8)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
    w = half[:, None] * wg[None, :] * psi(x)
    total = 0.0
    z = x
    for k in range(m + 1):
        total += float(np.sum(w * phi(z)))
        z = np.clip(mh(z), 0.0, 1.0)
    length = hi - lo
    return LIntegral(value=total, length=length,
                     ratio=total / (length * abs(math.log(length))), m=m)
