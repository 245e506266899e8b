"""Finite differences of Γ under the h sqrt(|log h| log log |log h|) scaling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import intervals as iv
from .family import PeumFamily, PeumMap
from .observables import Observable
from .shadowing import complement_A, complement_B, r_integral_quadrature
from .srb import critical_preimages, gamma, gamma_iterated, lyapunov
from .stats import green_kubo_sigma
from .transfer import (DensityCache, build_ulam, density_at_c, stationary_density,
                       step_density)
from .transversality import j_limit

H_MAX = math.exp(-math.e)
EXACT_NOISE_FLOOR = 1e-12


def scaling_denominator(h: float) -> float:
    """h sqrt(|log h| log log |log h|), defined for 0 < h < e^{-e}."""
    if not 0.0 < h < H_MAX:
        raise ValueError(f"h={h} outside (0, e^-e)")
    L = abs(math.log(h))
    return h * math.sqrt(L * math.log(math.log(L)))


def _method(family: PeumFamily, t: float, method: str) -> str:
    if method == "auto":
        return "exact" if family.at(t).is_tent_like else "ulam"
    return method


@dataclass(frozen=True)
class ConstantReport:
    t: float
    value: float
    rho_c: float
    J: float
    sigma: float
    lyapunov: float
    errors: dict            # per-factor absolute error estimates
    relative_error: float
    in_hypothesis: bool     # σ > 0 and J != 0


def theoretical_constant(family: PeumFamily, t: float, phi: Observable, N: int = 8192,
                         K: int = 40, method: str = "auto",
                         cache: DensityCache | None = None) -> ConstantReport:
    """2 sqrt(2) ρ_t(c) J_t(c) σ_t(φ) (∫ log|Df_t| dμ_t)^{-1/2} with per-factor error budget."""
    method = _method(family, t, method)
    if method == "exact":
        rho_c, err_rho = step_density(family, t).at_c, 1e-14
    else:
        rho_c = density_at_c(stationary_density(build_ulam(family, t, N)), family.c)
        coarse = density_at_c(stationary_density(build_ulam(family, t, N // 2)), family.c)
        err_rho = abs(rho_c - coarse)
    J, k_used = j_limit(family, t, 1e-13)
    err_J = 1e-13
    gk = green_kubo_sigma(family, t, phi, K=K, N=N, cache=cache)
    gk2 = green_kubo_sigma(family, t, phi, K=K, N=N // 2, cache=cache)
    err_sigma = abs(gk.sigma - gk2.sigma) + math.sqrt(abs(gk.tail))
    lyap = lyapunov(family, t, N, cache=cache)
    err_lyap = abs(lyap - lyapunov(family, t, N // 2, cache=cache))
    value = 2.0 * math.sqrt(2.0) * rho_c * J * gk.sigma / math.sqrt(lyap)
    rel = 0.0
    for v, e in ((rho_c, err_rho), (J, err_J), (gk.sigma, err_sigma)):
        rel += e / abs(v) if v else 0.0
    rel += 0.5 * err_lyap / lyap
    return ConstantReport(t=float(t), value=float(value), rho_c=float(rho_c), J=float(J),
                          sigma=float(gk.sigma), lyapunov=float(lyap),
                          errors={"rho_c": err_rho, "J": err_J, "sigma": err_sigma,
                                  "lyapunov": err_lyap},
                          relative_error=float(rel),
                          in_hypothesis=bool(gk.sigma > 0 and J != 0))


def compose_constant(rho_c: float, J: float, sigma: float, lyap: float) -> float:
    return 2.0 * math.sqrt(2.0) * rho_c * J * sigma / math.sqrt(lyap)


@dataclass
class ModulusScan:
    t: float
    h: np.ndarray
    delta_gamma: np.ndarray
    lipschitz_ratio: np.ndarray
    scaled_ratio: np.ndarray
    running_max_lip: np.ndarray
    running_max_scaled: np.ndarray
    trusted: np.ndarray
    N: np.ndarray
    noise_floor: float
    method: str
    K: float | None = None
    negative: "ModulusScan | None" = None

    def rows(self):
        for i in range(self.h.size):
            yield (self.h[i], self.delta_gamma[i], self.lipschitz_ratio[i], self.scaled_ratio[i],
                   self.running_max_lip[i], self.running_max_scaled[i], self.K,
                   bool(self.trusted[i]))


def _gamma_at(family, t, phi, method, N, tol, cache):
    if method == "exact":
        return gamma(family, t, phi, method="exact")
    return gamma(family, t, phi, N=N, tol=tol, cache=cache)


def modulus_scan(family: PeumFamily, t: float, phi: Observable, h0: float = 1e-2,
                 r: float = 0.5, steps: int = 14, method: str = "auto",
                 N_min: int = 4096, N_cap: int = 1 << 20, tol: float = 1e-12,
                 negative: bool = False, K: float | None = None,
                 cache: DensityCache | None = None) -> ModulusScan:
    """ΔΓ = Γ(t+h) - Γ(t) over h_j = h0 r^j with running maxima of |ratios|.

    φ is centered by its μ_t-mean first, which leaves ΔΓ unchanged.  On the
    Ulam path t and t+h share the resolution N(h) = clip(100/h, N_min, N_cap).
    """
    if not (0 < r < 1) or steps < 1:
        raise ValueError("need 0 < r < 1 and steps >= 1")
    method = _method(family, t, method)
    sign = -1.0 if negative else 1.0
    hs = h0 * r ** np.arange(steps)
    if hs[0] >= H_MAX:
        raise ValueError(f"h0={h0} must be below e^-e")
    Ns = np.full(steps, 0, dtype=int)
    if method == "ulam":
        need = np.ceil(100.0 / hs).astype(np.int64)
        if need.max() > N_cap:
            raise ValueError(f"resolution schedule exhausted: need N={need.max()} > cap {N_cap}")
        Ns = np.maximum(need, N_min)
    base = _gamma_at(family, t, phi, method, int(Ns[0]) or N_min, tol, cache)
    phib = phi.centered(base)
    g0_cache: dict[int, float] = {}
    dg = np.empty(steps)
    for i, h in enumerate(hs):
        if phi.is_constant:
            # Γ is then the same constant at every parameter
            dg[i] = 0.0
            continue
        N = int(Ns[i])
        if N not in g0_cache:
            g0_cache[N] = _gamma_at(family, t, phib, method, N, tol, cache)
        dg[i] = _gamma_at(family, t + sign * h, phib, method, N, tol, cache) - g0_cache[N]
    hh = sign * hs
    lip = dg / hh
    scaled = dg / (hh * np.array([scaling_denominator(h) / h for h in hs]))
    floor = EXACT_NOISE_FLOOR if method == "exact" else 2.0 * tol
    scan = ModulusScan(t=float(t), h=hh, delta_gamma=dg, lipschitz_ratio=lip, scaled_ratio=scaled,
                       running_max_lip=np.maximum.accumulate(np.abs(lip)),
                       running_max_scaled=np.maximum.accumulate(np.abs(scaled)),
                       trusted=np.abs(dg) > floor, N=Ns, noise_floor=floor, method=method, K=K)
    return scan


def modulus_scan_both(family, t, phi, **kw) -> ModulusScan:
    """Right-sided scan with the left-sided (h < 0) scan attached, when in range."""
    scan = modulus_scan(family, t, phi, **kw)
    try:
        family.check_t(t - kw.get("h0", 1e-2))
        scan.negative = modulus_scan(family, t, phi, negative=True, **kw)
    except ValueError:
        scan.negative = None
    return scan


# ---------------------------------------------------------------------------
# decomposition of ΔΓ through the shadowing sets


def integrate_over_union(m: PeumMap, lo, hi, fn, n: int, nodes: int = 8,
                         budget: int = 1_000_000) -> float:
    """∫ over a finite union of intervals, splitting at corners of f^n."""
    ulo, uhi = iv.merge(lo, hi)
    keep = uhi > ulo
    ulo, uhi = ulo[keep], uhi[keep]
    if ulo.size == 0:
        return 0.0
    corners = critical_preimages(m, n, budget)
    pts_lo, pts_hi = [], []
    for a, b in zip(ulo, uhi):
        inner = corners[(corners > a) & (corners < b)] if corners is not None else np.empty(0)
        p = np.concatenate([[a], inner, [b]])
        pts_lo.append(p[:-1])
        pts_hi.append(p[1:])
    a, b = np.concatenate(pts_lo), np.concatenate(pts_hi)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
    return float(np.sum(half * (fn(x) @ wg)))


@dataclass(frozen=True)
class DecompositionAudit:
    t: float
    h: float
    n: int
    delta_gamma: float
    delta_gamma_iterated: float
    r_term: float
    complement_A_term: float
    complement_B_term: float
    second_order_bound: float    # h² n²
    measure_A: float
    measure_B: float

    @property
    def terms_sum(self) -> float:
        return self.r_term + self.complement_A_term - self.complement_B_term

    @property
    def residual(self) -> float:
        """ΔΓ_n - (terms), with ΔΓ_n the difference of n-fold iterated integrals."""
        return self.delta_gamma_iterated - self.terms_sum

    @property
    def residual_full(self) -> float:
        return self.delta_gamma - self.terms_sum


def decomposition_audit(family: PeumFamily, t: float, h: float, phi: Observable,
                        n: int | None = None, method: str = "auto",
                        N: int = 8192, convention: str = "exact") -> DecompositionAudit:
    """Evaluate -h ∫φ(f_t^n)R_{t,n} + ∫_{A^c} φ(f_{t+h}^n) - ∫_{B^c} φ(f_t^n) next to ΔΓ."""
    if not h > 0:
        raise ValueError("h must be positive")
    n = int(math.floor(abs(math.log(h)))) if n is None else int(n)
    method = _method(family, t, method)
    base = _gamma_at(family, t, phi, method, N, 1e-12, None)
    phib = phi.centered(base)
    dG = _gamma_at(family, t + h, phib, method, N, 1e-12, None) - \
        _gamma_at(family, t, phib, method, N, 1e-12, None)
    it_method = "exact" if method == "exact" else "quadrature"
    dGn = (gamma_iterated(family, t + h, phib, n, method=it_method).value
           - gamma_iterated(family, t, phib, n, method=it_method).value)
    r_term = -h * r_integral_quadrature(family, t, phib, n)
    m, mh = family.at(t), family.at(t + h)

    def pushed(mm):
        def fn(x):
            z = x
            for _ in range(n):
                z = np.clip(mm(z), 0.0, 1.0)
            return phib(z)
        return fn

    A = complement_A(family, t, h, n, convention=convention)
    B = complement_B(family, t, h, n, convention=convention)
    a_term = integrate_over_union(mh, A.lo, A.hi, pushed(mh), n)
    b_term = integrate_over_union(m, B.lo, B.hi, pushed(m), n)
    return DecompositionAudit(t=float(t), h=float(h), n=n, delta_gamma=float(dG),
                              delta_gamma_iterated=float(dGn), r_term=float(r_term),
                              complement_A_term=a_term, complement_B_term=b_term,
                              second_order_bound=h * h * n * n,
                              measure_A=A.measure, measure_B=B.measure)
