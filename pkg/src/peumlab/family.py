"""Piecewise expanding unimodal map families.

A family is a pair of polynomial branches in ``(t, x)`` glued at a fixed
critical point ``c``.  Coefficient tables are indexed ``table[i][j]`` for the
monomial ``t**i * x**j``, so every x- and t-derivative used downstream is exact.
The tent family is the table pair ``t*x`` / ``t - t*x``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

NEAR_CRITICAL = 1e-12
# sub-ulp noise injected per step in Lebesgue-random ensembles, see orbit_ensemble
DITHER = 2.0 ** -40
_DOMAIN_SLACK = 1e-12
_BISECT_STEPS = 64

LEFT, RIGHT = "left", "right"


class DomainError(ValueError):
    """Parameter or coordinate outside the family's domain."""


class NearCriticalError(ArithmeticError):
    """An orbit point sits within NEAR_CRITICAL of c where a derivative is needed."""


def _x_coefs(table: np.ndarray, t: float) -> np.ndarray:
    # collapse the t axis: coefficient vector in x at this parameter
    return npoly.polyval(t, table)


def _trim(coefs: np.ndarray) -> np.ndarray:
    coefs = np.asarray(coefs, dtype=float)
    nz = np.flatnonzero(coefs)
    if nz.size == 0:
        return np.zeros(1)
    return coefs[: nz[-1] + 1]


class PeumMap:
    """A single member ``f_t`` of a family, with exact branch calculus."""

    def __init__(self, family: "PeumFamily", t: float):
        self.family = family
        self.t = float(t)
        self.c = family.c
        L, R = family.left_table, family.right_table
        self._f = {LEFT: _trim(_x_coefs(L, t)), RIGHT: _trim(_x_coefs(R, t))}
        dL, dR = npoly.polyder(L, axis=0), npoly.polyder(R, axis=0)
        self._v = {LEFT: _trim(_x_coefs(dL, t)) if dL.size else np.zeros(1),
                   RIGHT: _trim(_x_coefs(dR, t)) if dR.size else np.zeros(1)}
        self._df = {s: _trim(npoly.polyder(p)) if p.size > 1 else np.zeros(1)
                    for s, p in self._f.items()}
        self._d2f = {s: _trim(npoly.polyder(p)) if p.size > 1 else np.zeros(1)
                     for s, p in self._df.items()}
        self._dv = {s: _trim(npoly.polyder(p)) if p.size > 1 else np.zeros(1)
                    for s, p in self._v.items()}
        self.is_affine = all(p.size <= 2 for p in self._f.values())
        self.critical_value = float(npoly.polyval(self.c, self._f[LEFT]))

    # -- evaluation ---------------------------------------------------------
    @staticmethod
    def _side_mask(x, c):
        return np.asarray(x) <= c

    def _eval(self, table: dict, x, side):
        x = np.asarray(x, dtype=float)
        if side == LEFT:
            return npoly.polyval(x, table[LEFT])
        if side == RIGHT:
            return npoly.polyval(x, table[RIGHT])
        # itinerary rule: x <= c belongs to the left branch
        return np.where(x <= self.c, npoly.polyval(x, table[LEFT]),
                        npoly.polyval(x, table[RIGHT]))

    def __call__(self, x):
        return self._eval(self._f, x, None)

    def branch(self, x, side):
        return self._eval(self._f, x, side)

    def df(self, x, side=None):
        return self._eval(self._df, x, side)

    def d2f(self, x, side=None):
        return self._eval(self._d2f, x, side)

    def v(self, x, side=None):
        return self._eval(self._v, x, side)

    def dv(self, x, side=None):
        return self._eval(self._dv, x, side)

    def xi(self, x, side=None):
        return self.d2f(x, side) / self.df(x, side)

    def coefficients(self, side: str) -> np.ndarray:
        return self._f[side].copy()

    @property
    def is_tent_like(self) -> bool:
        """Affine branches with f(0) = f(1) = 0, increasing then decreasing."""
        if not self.is_affine:
            return False
        aL = np.pad(self._f[LEFT], (0, 2 - self._f[LEFT].size))
        aR = np.pad(self._f[RIGHT], (0, 2 - self._f[RIGHT].size))
        return (abs(aL[0]) < 1e-14 and abs(aR[0] + aR[1]) < 1e-14
                and aL[1] > 0 > aR[1])

    def slopes(self) -> tuple[float, float]:
        """Signed (left, right) slopes of an affine map."""
        if not self.is_affine:
            raise ValueError("slopes() needs affine branches")
        return float(self.df(0.0, LEFT)), float(self.df(1.0, RIGHT))

    def expansion_bound(self) -> float:
        """min |Df| on [0,1]; exact for affine maps, family bound otherwise."""
        if self.is_affine:
            sL, sR = self.slopes()
            return min(abs(sL), abs(sR))
        return self.family.lam

    def fast_step(self):
        """Scalar closure for long sequential orbits."""
        c = self.c
        L = tuple(float(a) for a in self._f[LEFT][::-1])
        R = tuple(float(a) for a in self._f[RIGHT][::-1])
        if self.is_affine:
            aL = np.pad(self._f[LEFT], (0, 2 - self._f[LEFT].size))
            aR = np.pad(self._f[RIGHT], (0, 2 - self._f[RIGHT].size))
            a0, a1, b0, b1 = float(aL[0]), float(aL[1]), float(aR[0]), float(aR[1])

            def step(x):
                y = a0 + a1 * x if x <= c else b0 + b1 * x
                return 0.0 if y < 0.0 else (1.0 if y > 1.0 else y)
            return step

        def step(x):
            coefs = L if x <= c else R
            y = 0.0
            for a in coefs:
                y = y * x + a
            return 0.0 if y < 0.0 else (1.0 if y > 1.0 else y)
        return step

    # -- images and preimages ----------------------------------------------
    def branch_domain(self, side):
        return (0.0, self.c) if side == LEFT else (self.c, 1.0)

    def branch_range(self, side):
        lo, hi = self.branch_domain(side)
        a, b = float(self.branch(lo, side)), float(self.branch(hi, side))
        return (min(a, b), max(a, b))

    def inverse(self, y, side):
        """Inverse of one monotone branch; NaN where y is outside its range."""
        y = np.asarray(y, dtype=float)
        lo, hi = self.branch_domain(side)
        rlo, rhi = self.branch_range(side)
        ok = (y >= rlo - 1e-15) & (y <= rhi + 1e-15)
        coefs = self._f[side]
        if coefs.size <= 2:
            a0 = coefs[0]
            a1 = coefs[1] if coefs.size > 1 else 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                x = (y - a0) / a1
        else:
            x = self._bisect(coefs, y, lo, hi)
        x = np.clip(x, lo, hi)
        return np.where(ok, x, np.nan)

    @staticmethod
    def _bisect(coefs, y, lo, hi):
        increasing = npoly.polyval(hi, coefs) >= npoly.polyval(lo, coefs)
        a = np.full(y.shape, lo, dtype=float)
        b = np.full(y.shape, hi, dtype=float)
        for _ in range(_BISECT_STEPS):
            m = 0.5 * (a + b)
            below = npoly.polyval(m, coefs) < y
            if not increasing:
                below = ~below
            a = np.where(below, m, a)
            b = np.where(below, b, m)
        return 0.5 * (a + b)

    def preimage_points(self, y) -> np.ndarray:
        """All preimages of the points y (at most two each), sorted."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xs = np.concatenate([self.inverse(y, LEFT), self.inverse(y, RIGHT)])
        return np.sort(xs[~np.isnan(xs)])

    def preimage_intervals(self, lo, hi):
        """Preimage components of the intervals [lo_i, hi_i]; returns (lo, hi, parent)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        idx = np.arange(lo.size)
        out_lo, out_hi, out_idx = [], [], []
        for side in (LEFT, RIGHT):
            rlo, rhi = self.branch_range(side)
            a, b = np.maximum(lo, rlo), np.minimum(hi, rhi)
            keep = a <= b
            if not keep.any():
                continue
            xa, xb = self.inverse(a[keep], side), self.inverse(b[keep], side)
            out_lo.append(np.minimum(xa, xb))
            out_hi.append(np.maximum(xa, xb))
            out_idx.append(idx[keep])
        if not out_lo:
            return np.empty(0), np.empty(0), np.empty(0, dtype=int)
        return np.concatenate(out_lo), np.concatenate(out_hi), np.concatenate(out_idx)

    def image_interval(self, lo, hi):
        """Image of [lo, hi] (vectorized): the hull of f(lo), f(hi) and f(c) if c is inside."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        fa, fb = self(lo), self(hi)
        a, b = np.minimum(fa, fb), np.maximum(fa, fb)
        inside = (lo < self.c) & (hi > self.c)
        fc = self.critical_value
        return np.where(inside, np.minimum(a, fc), a), np.where(inside, np.maximum(b, fc), b)


@dataclass(frozen=True, eq=False)
class PeumFamily:
    c: float
    left_table: np.ndarray
    right_table: np.ndarray
    lam: float
    t_range: tuple[float, float]
    name: str = "piecewise_poly"
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "left_table", np.atleast_2d(np.asarray(self.left_table, float)))
        object.__setattr__(self, "right_table", np.atleast_2d(np.asarray(self.right_table, float)))
        if not 0.0 < self.c < 1.0:
            raise DomainError(f"critical point {self.c} not in (0,1)")
        if not self.lam > 1.0:
            raise DomainError(f"expansion bound must exceed 1, got {self.lam}")
        a, b = self.t_range
        if not a <= b:
            raise DomainError(f"bad parameter interval {self.t_range}")

    @property
    def hash(self) -> str:
        payload = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_config(self) -> dict:
        if self.spec:
            return dict(self.spec)
        return {"kind": "piecewise_poly", "c": self.c, "left": self.left_table.tolist(),
                "right": self.right_table.tolist(), "lambda": self.lam,
                "t_range": list(self.t_range)}

    def check_t(self, t: float) -> float:
        a, b = self.t_range
        if not (a - _DOMAIN_SLACK <= t <= b + _DOMAIN_SLACK):
            raise DomainError(f"parameter t={t} outside [{a}, {b}]")
        return float(t)

    def at(self, t: float) -> PeumMap:
        return PeumMap(self, self.check_t(t))

    @property
    def is_frozen(self) -> bool:
        return (not self.left_table[1:].any()) and (not self.right_table[1:].any())

    def validate(self, n_t: int = 9, n_x: int = 257) -> None:
        """Check continuity at c, expansion and range containment on sample grids."""
        a, b = self.t_range
        for t in np.linspace(a, b, n_t):
            m = self.at(t)
            gap = abs(float(m.branch(self.c, LEFT) - m.branch(self.c, RIGHT)))
            if gap > 1e-12:
                raise DomainError(f"branches disagree at c by {gap:.3g} (t={t})")
            xl = np.linspace(0.0, self.c, n_x)
            xr = np.linspace(self.c, 1.0, n_x)
            dmin = min(np.abs(m.df(xl, LEFT)).min(), np.abs(m.df(xr, RIGHT)).min())
            if dmin < self.lam - 1e-12:
                raise DomainError(f"|Df| = {dmin:.4g} below lambda={self.lam} at t={t}")
            y = np.concatenate([m.branch(xl, LEFT), m.branch(xr, RIGHT)])
            if y.min() < -1e-12 or y.max() > 1 + 1e-12:
                raise DomainError(f"f_t([0,1]) leaves [0,1] at t={t}")


def tent(t_range=(math.sqrt(2.0), 2.0)) -> PeumFamily:
    """The tent family t*min(x, 1-x)."""
    return PeumFamily(c=0.5, left_table=[[0.0, 0.0], [0.0, 1.0]],
                      right_table=[[0.0, 0.0], [1.0, -1.0]],
                      lam=float(min(t_range)), t_range=tuple(float(s) for s in t_range),
                      name="tent", spec={"kind": "tent"})


def family_from_config(cfg: dict) -> PeumFamily:
    """Build a family from ``{"kind": "tent"}`` or a piecewise_poly table spec."""
    kind = cfg.get("kind")
    if kind == "tent":
        fam = tent(tuple(cfg["t_range"])) if "t_range" in cfg else tent()
        if "t_range" in cfg:
            object.__setattr__(fam, "spec", dict(cfg))
        return fam
    if kind == "piecewise_poly":
        fam = PeumFamily(c=float(cfg["c"]), left_table=cfg["left"], right_table=cfg["right"],
                         lam=float(cfg["lambda"]), t_range=tuple(cfg["t_range"]),
                         spec=dict(cfg))
        fam.validate()
        return fam
    raise DomainError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------------------
# operations on families


def _check_x(x):
    xa = np.asarray(x, dtype=float)
    if np.any(xa < -_DOMAIN_SLACK) or np.any(xa > 1 + _DOMAIN_SLACK):
        raise DomainError(f"coordinate outside [0,1]: {x}")
    return xa


def eval_map(family: PeumFamily, t: float, x):
    y = family.at(t)(_check_x(x))
    return float(y) if np.ndim(y) == 0 else y


def eval_orbit(family: PeumFamily, t: float, x: float, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be >= 0")
    _check_x(x)
    step = family.at(t).fast_step()
    out = np.empty(n + 1)
    out[0] = x
    for k in range(n):
        x = step(x)
        out[k + 1] = x
    return out


def _resolve_side(x, c, side):
    if side in (LEFT, RIGHT):
        return side
    if side != "auto":
        raise ValueError(f"side must be left, right or auto, got {side!r}")
    if x == c:
        raise DomainError("side='auto' is ambiguous at the critical point")
    return LEFT if x < c else RIGHT


def eval_derivative(family: PeumFamily, t: float, x: float, side: str = "auto") -> float:
    _check_x(x)
    m = family.at(t)
    return float(m.df(x, _resolve_side(x, m.c, side)))


def eval_second_derivative(family: PeumFamily, t: float, x: float, side: str = "auto") -> float:
    _check_x(x)
    m = family.at(t)
    return float(m.d2f(x, _resolve_side(x, m.c, side)))


def eval_velocity(family: PeumFamily, t: float, x: float, side: str = "auto") -> float:
    _check_x(x)
    m = family.at(t)
    return float(m.v(x, _resolve_side(x, m.c, side)))


def eval_velocity_derivative(family: PeumFamily, t: float, x: float, side: str = "auto") -> float:
    _check_x(x)
    m = family.at(t)
    return float(m.dv(x, _resolve_side(x, m.c, side)))


@dataclass(frozen=True)
class Itinerary:
    symbols: str

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __str__(self):
        return self.symbols


def itinerary(family: PeumFamily, t: float, x: float, n: int) -> Itinerary:
    orbit = eval_orbit(family, t, x, n)
    return Itinerary("".join("L" if p <= family.c else "R" for p in orbit))


def itinerary_array(m: PeumMap, x: np.ndarray, n: int) -> np.ndarray:
    """Boolean (n+1, len(x)) array, True for symbol L."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n + 1,) + x.shape, dtype=bool)
    for k in range(n + 1):
        out[k] = x <= m.c
        if k < n:
            x = np.clip(m(x), 0.0, 1.0)
    return out


@dataclass(frozen=True)
class CriticalOrbit:
    """c_j = f^j(c) with cumulative derivatives Df^k(f(c)) (Df^0 = 1)."""
    t: float
    points: np.ndarray
    derivatives: np.ndarray
    near_critical: np.ndarray

    @property
    def hits_critical(self) -> bool:
        return bool(self.near_critical.any())

    def first_hit(self):
        idx = np.flatnonzero(self.near_critical)
        return int(idx[0]) if idx.size else None


def critical_orbit(family: PeumFamily, t: float, n: int) -> CriticalOrbit:
    m = family.at(t)
    pts = eval_orbit(family, t, family.c, n)
    # Df(c_i) for i = 1..n with the itinerary tie rule; flagged below when ambiguous
    dfs = m.df(pts[1:]) if n > 0 else np.empty(0)
    derivs = np.ones(n + 1)
    if n > 0:
        derivs[1:] = np.cumprod(dfs)[: n]
    near = np.zeros(n + 1, dtype=bool)
    near[1:] = np.abs(pts[1:] - family.c) <= NEAR_CRITICAL
    return CriticalOrbit(t=float(t), points=pts, derivatives=derivs, near_critical=near)


@dataclass(frozen=True)
class RecurrenceResult:
    t: float
    m: float
    value: float
    argmin: int
    threshold: int | None  # first j after which j^m |c_j - c| stays >= 1


def critical_recurrence(family: PeumFamily, t: float, N: int, m: float) -> RecurrenceResult:
    """min over 2 <= j <= N of j^m |c_j(t) - c|."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if not m > 1:
        raise ValueError("m must exceed 1")
    pts = eval_orbit(family, t, family.c, N)
    j = np.arange(2, N + 1, dtype=float)
    scaled = j ** m * np.abs(pts[2:] - family.c)
    k = int(np.argmin(scaled))
    below = np.flatnonzero(scaled < 1.0)
    threshold = int(j[below[-1]]) + 1 if below.size else 2
    return RecurrenceResult(t=float(t), m=float(m), value=float(scaled[k]),
                            argmin=int(j[k]), threshold=threshold if threshold <= N else None)


@dataclass(frozen=True)
class AssumptionReport:
    t: float
    min_abs_derivative: float
    expansion_ok: bool
    critical_periodic: bool
    critical_preperiodic: bool
    min_return_distance: float
    mixing_heuristic: bool
    mixing_steps: int | None
    orbit_density: float

    @property
    def exceptional(self) -> bool:
        return self.critical_periodic or self.critical_preperiodic

    @property
    def ok(self) -> bool:
        return self.expansion_ok and not self.exceptional and self.mixing_heuristic


def _min_abs_derivative(m: PeumMap, n_x: int = 1025) -> float:
    if m.is_affine:
        return m.expansion_bound()
    xl = np.linspace(0.0, m.c, n_x)
    xr = np.linspace(m.c, 1.0, n_x)
    return float(min(np.abs(m.df(xl, LEFT)).min(), np.abs(m.df(xr, RIGHT)).min()))


def _covers_core(m: PeumMap, max_steps: int = 200, width: float = 1e-3):
    """Heuristic mixing check: does a small interval around c grow to cover [c_2, c_1]?"""
    c1 = m.critical_value
    c2 = float(m(c1))
    core_lo, core_hi = min(c1, c2), max(c1, c2)
    lo, hi = np.array(m.c - width), np.array(m.c + width)
    for k in range(1, max_steps + 1):
        lo, hi = m.image_interval(lo, hi)
        if lo <= core_lo + 1e-12 and hi >= core_hi - 1e-12:
            return True, k
    return False, None


def check_assumptions(family: PeumFamily, t_grid, n_orbit: int = 1000,
                      density_cells: int = 256) -> list[AssumptionReport]:
    reports = []
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        m = family.at(t)
        dmin = _min_abs_derivative(m)
        pts = eval_orbit(family, t, family.c, n_orbit)
        tail = pts[1:]
        dist = np.abs(tail - family.c)
        periodic = bool(tail.size and dist.min() <= NEAR_CRITICAL)
        s = np.sort(tail)
        preperiodic = bool(s.size > 1 and np.diff(s).min() <= NEAR_CRITICAL)
        mixing, steps = _covers_core(m)
        c1 = m.critical_value
        c2 = float(m(c1))
        lo, hi = min(c1, c2), max(c1, c2)
        if hi > lo:
            cells = np.floor((tail - lo) / (hi - lo) * density_cells).astype(int)
            cells = cells[(cells >= 0) & (cells < density_cells)]
            density = np.unique(cells).size / density_cells
        else:
            density = 0.0
        reports.append(AssumptionReport(
            t=float(t), min_abs_derivative=float(dmin),
            expansion_ok=bool(dmin >= family.lam - 1e-12 and dmin > 1.0),
            critical_periodic=periodic, critical_preperiodic=preperiodic,
            min_return_distance=float(dist.min()) if dist.size else math.inf,
            mixing_heuristic=mixing, mixing_steps=steps, orbit_density=float(density)))
    return reports


def orbit_ensemble(m: PeumMap, x0: np.ndarray, n: int, rng: np.random.Generator | None = None,
                   dither: float = DITHER):
    """Yield x_0, ..., x_n for an ensemble of starting points.

    With an rng, uniform noise of width ``dither`` is added after every step
    (reflected back into [0,1]).  Doubles lose ~log2|Df| bits of the initial
    condition per step; the noise stands in for those bits so that e.g. the
    slope-2 tent map does not collapse onto 0 after 53 steps.
    """
    x = np.array(x0, dtype=float)
    yield x
    for _ in range(n):
        x = m(x)
        if rng is not None:
            x = x + dither * (rng.random(x.shape) - 0.5)
            x = np.abs(x)
            x = 1.0 - np.abs(1.0 - x)
        else:
            x = np.clip(x, 0.0, 1.0)
        yield x
