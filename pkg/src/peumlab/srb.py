"""Integrals against the SRB measure, iterated pushforwards and parameter sweeps."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .family import LEFT, RIGHT, PeumFamily, PeumMap, orbit_ensemble
from .observables import Observable
from .transfer import (DensityCache, ConvergenceError, build_ulam, cached_density,
                       iterate_one, l1_residual, stationary_density, step_density)

log = logging.getLogger(__name__)

_GL_NODES = 8
DEFAULT_BUDGET = 1_000_000


def gamma(family: PeumFamily, t: float, phi: Observable, N: int = 4096, tol: float = 1e-10,
          method: str = "ulam", cache: DensityCache | None = None) -> float:
    """∫ φ ρ_t dx.

    ``ulam``: midpoint quadrature against the power-iteration density.
    ``exact``: closed-form step density (affine maps with f(0) = f(1) = 0).
    """
    if method == "exact":
        return step_density(family, t).integrate(phi.antiderivative)
    if method != "ulam":
        raise ValueError(f"unknown method {method!r}")
    return cached_density(family, t, N, tol, cache).integrate(phi)


def critical_preimages(m: PeumMap, n: int, budget: int | None = None):
    """Sorted ∪_{k<n} f^{-k}(c); None if the count would exceed the budget."""
    level = np.array([m.c])
    out = [level]
    total = 1
    for _ in range(1, n):
        level = m.preimage_points(level)
        total += level.size
        if budget is not None and total > budget:
            return None
        out.append(level)
    return np.unique(np.concatenate(out)) if n > 0 else np.empty(0)


def _iterate(m: PeumMap, x: np.ndarray, n: int) -> np.ndarray:
    for _ in range(n):
        x = np.clip(m(x), 0.0, 1.0)
    return x


def piecewise_quadrature(breaks: np.ndarray, fn, nodes: int = _GL_NODES) -> float:
    """Composite Gauss-Legendre over the intervals between sorted breakpoints of [0, 1]."""
    pts = np.unique(np.concatenate([[0.0, 1.0], breaks]))
    a, b = pts[:-1], pts[1:]
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
    vals = fn(x.ravel()).reshape(x.shape)
    return float(np.sum(half * (vals @ wg)))


@dataclass(frozen=True)
class IteratedResult:
    value: float
    stderr: float
    method: str
    n: int
    fallback: bool = False
    pieces: int = 0


def gamma_iterated(family: PeumFamily, t: float, phi: Observable, n: int,
                   method: str = "quadrature", budget: int = DEFAULT_BUDGET,
                   samples: int = 200_000, seed: int = 0) -> IteratedResult:
    """∫ φ(f_t^n x) dx by corner-aware quadrature, Monte Carlo or exact L^n(1) atoms."""
    if n < 0:
        raise ValueError("n must be >= 0")
    m = family.at(t)
    if method == "exact":
        atoms, w = iterate_one(family, t, n)
        val = float(np.dot(w, phi.antiderivative(atoms) - phi.antiderivative(0.0)))
        return IteratedResult(val, 0.0, "exact", n)
    fallback = False
    if method == "quadrature":
        breaks = critical_preimages(m, n, budget)
        if breaks is not None:
            val = piecewise_quadrature(breaks, lambda x: phi(_iterate(m, x, n)))
            return IteratedResult(val, 0.0, "quadrature", n, pieces=breaks.size + 1)
        log.info("quadrature budget %d exceeded at n=%d, using Monte Carlo", budget, n)
        fallback = True
    elif method != "mc":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    x = None
    for x in orbit_ensemble(m, rng.random(samples), n, rng):
        pass
    vals = phi(x)
    return IteratedResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)),
                          "mc", n, fallback=fallback)


def lyapunov(family: PeumFamily, t: float, N: int = 4096, tol: float = 1e-10,
             cache: DensityCache | None = None) -> float:
    """∫ log|Df_t| dμ_t, with the cell containing c split at c."""
    m = family.at(t)
    dens = cached_density(family, t, N, tol, cache)
    edges = np.arange(N + 1) / N
    xg, wg = np.polynomial.legendre.leggauss(4)
    total = 0.0
    for side in (LEFT, RIGHT):
        lo, hi = m.branch_domain(side)
        a = np.clip(edges[:-1], lo, hi)
        b = np.clip(edges[1:], lo, hi)
        half = 0.5 * (b - a)
        x = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
        g = np.log(np.abs(m.df(x, side)))
        total += float(np.sum(dens.values * half * (g @ wg)))
    return total


@dataclass(frozen=True)
class GammaCurve:
    t: np.ndarray
    gamma: np.ndarray
    N: int
    tol_achieved: np.ndarray
    wall_ms: np.ndarray
    status: list

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status])


def _sweep_point(family, t, phi, N, tol, method, cache):
    t0 = time.perf_counter()
    try:
        if method == "exact":
            g, res = gamma(family, t, phi, method="exact"), 0.0
        else:
            op = build_ulam(family, t, N)
            dens = cache.get(family.hash, t, N) if cache is not None else None
            if dens is None:
                dens = stationary_density(op, tol=tol)
                if cache is not None:
                    cache.put(family.hash, t, N, dens, tol)
            # recomputed so cache hits report the same value as fresh solves
            res = l1_residual(op, dens.values)
            g = dens.integrate(phi)
        status = "ok"
    except (ConvergenceError, ValueError, ArithmeticError) as exc:
        g, res, status = float("nan"), float("nan"), f"error: {exc}"
    return g, res, (time.perf_counter() - t0) * 1e3, status


def gamma_sweep(family: PeumFamily, t_grid, phi: Observable, N: int = 4096, tol: float = 1e-10,
                threads: int = 1, method: str = "ulam",
                cache: DensityCache | None = None) -> GammaCurve:
    """Γ over a parameter grid; per-point failures are recorded in ``status``."""
    ts = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda t: _sweep_point(family, t, phi, N, tol, method, cache), ts))
    else:
        rows = [_sweep_point(family, t, phi, N, tol, method, cache) for t in ts]
    g, res, ms, status = zip(*rows) if rows else ((), (), (), ())
    return GammaCurve(t=ts, gamma=np.array(g, dtype=float), N=N,
                      tol_achieved=np.array(res, dtype=float),
                      wall_ms=np.array(ms, dtype=float), status=list(status))
