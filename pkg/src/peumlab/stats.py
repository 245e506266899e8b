"""Diffusion coefficients, CLT Monte Carlo and LIL-scaled Birkhoff sums."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .family import LEFT, NEAR_CRITICAL, RIGHT, PeumFamily, orbit_ensemble
from .observables import Observable
from .transfer import (DensityCache, NoSpectralGapError, build_ulam, cached_density,
                       spectral_gap_estimate)


class NegativeVarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DiffusionEstimate:
    t: float
    sigma: float
    sigma2_raw: float
    a: np.ndarray           # a_k, k = 0..K
    K: int
    theta: float
    tail: float             # 2 |a_K| θ / (1 - θ)
    N: int
    clamped: bool = False


def green_kubo_sigma(family: PeumFamily, t: float, phi: Observable, K: int = 30,
                     N: int = 4096, tol: float = 1e-10, cache: DensityCache | None = None,
                     seed: int = 0) -> DiffusionEstimate:
    """σ = sqrt(a_0 + 2 Σ_{k=1}^K a_k), a_k = ∫ φ̄ L^k(φ̄ ρ) on the Ulam grid."""
    if K < 1:
        raise ValueError("K must be >= 1")
    op = build_ulam(family, t, N)
    rho = cached_density(family, t, N, tol, cache)
    x = rho.midpoints
    f = phi(x)
    fbar = f - np.dot(f, rho.values) / N
    g = fbar * rho.values
    a = np.empty(K + 1)
    for k in range(K + 1):
        a[k] = np.dot(fbar, g) / N
        g = op.matrix @ g
    try:
        theta = spectral_gap_estimate(op, trials=4, rng=seed).theta
    except NoSpectralGapError:
        theta = 0.99
    tail = 2.0 * abs(a[K]) * theta / (1.0 - theta)
    s2 = float(a[0] + 2.0 * a[1:].sum())
    clamped = False
    if s2 < 0:
        if s2 < -max(tail, 1e-12):
            raise NegativeVarianceError(f"truncated σ² = {s2:.3g} below tail tolerance {tail:.3g}")
        warnings.warn(f"truncated σ² = {s2:.3g} clamped to 0", RuntimeWarning, stacklevel=2)
        clamped = True
    return DiffusionEstimate(t=float(t), sigma=math.sqrt(max(s2, 0.0)), sigma2_raw=s2, a=a, K=K,
                             theta=float(theta), tail=float(tail), N=N, clamped=clamped)


@dataclass(frozen=True)
class CltEstimate:
    variance: float
    stderr: float
    n: int
    samples: int


def clt_monte_carlo(family: PeumFamily, t: float, phi: Observable, n: int, samples: int,
                    seed: int = 0, shards: int = 8) -> CltEstimate:
    """Sample variance of S_n/√n, S_n = Σ_{k<n} φ(f^k x), x Lebesgue-uniform."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if samples < 2:
        raise ValueError("need at least 2 samples for a variance")
    m = family.at(t)
    shards = max(1, min(shards, samples))
    sizes = np.full(shards, samples // shards)
    sizes[: samples % shards] += 1
    sums = []
    for ss, size in zip(np.random.SeedSequence(seed).spawn(shards), sizes):
        rng = np.random.default_rng(ss)
        S = np.zeros(size)
        for k, x in enumerate(orbit_ensemble(m, rng.random(size), n - 1, rng)):
            S += phi(x)
        sums.append(S / math.sqrt(n))
    z = np.concatenate(sums)
    dev2 = (z - z.mean()) ** 2
    var = float(dev2.sum() / (samples - 1))
    se = float(dev2.std(ddof=1) / math.sqrt(samples))
    return CltEstimate(variance=var, stderr=se, n=n, samples=samples)


@dataclass(frozen=True)
class LilTrace:
    t: float
    n: np.ndarray
    S: np.ndarray
    scaled: np.ndarray
    running_max: np.ndarray
    sigma: float


def critical_orbit_values(family: PeumFamily, t: float, n: int) -> np.ndarray:
    """c_0..c_n via the scalar step (fast for long orbits)."""
    step = family.at(t).fast_step()
    out = np.empty(n + 1)
    x = family.c
    out[0] = x
    for k in range(1, n + 1):
        x = step(x)
        out[k] = x
    return out


def lil_trace(family: PeumFamily, t: float, phi: Observable, n_max: int, sigma: float,
              stride: int = 1) -> LilTrace:
    """S_n = Σ_{k=1}^n φ(f^k c) and |S_n| / sqrt(2σ² n log log n) for n >= 16."""
    if n_max < 16:
        raise ValueError("n_max must be >= 16")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    orbit = critical_orbit_values(family, t, n_max)
    S = np.cumsum(phi(orbit[1:]))
    n = np.arange(1, n_max + 1)
    keep = n >= 16
    n, S = n[keep], S[keep]
    scaled = S / np.sqrt(2.0 * sigma ** 2 * n * np.log(np.log(n)))
    sel = slice(None, None, stride)
    return LilTrace(t=float(t), n=n[sel], S=S[sel], scaled=scaled[sel],
                    running_max=np.maximum.accumulate(np.abs(scaled))[sel], sigma=float(sigma))


@dataclass(frozen=True)
class BirkhoffLyapunov:
    value: float
    n: int
    near_critical: int       # orbit points j >= 1 within tolerance of c


def lyapunov_birkhoff(family: PeumFamily, t: float, n: int, side_policy: str = LEFT
                      ) -> BirkhoffLyapunov:
    """(1/n) Σ_{j<n} log|Df(c_j)|, the j = 0 term taken on ``side_policy``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if side_policy not in (LEFT, RIGHT):
        raise ValueError("side_policy must be 'left' or 'right'")
    m = family.at(t)
    orbit = critical_orbit_values(family, t, n - 1)
    logs = np.log(np.abs(m.df(orbit)))
    logs[0] = math.log(abs(float(m.df(m.c, side_policy))))
    near = int(np.sum(np.abs(orbit[1:] - m.c) <= NEAR_CRITICAL))
    return BirkhoffLyapunov(value=float(logs.sum() / n), n=n, near_critical=near)
