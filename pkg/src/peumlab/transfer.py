"""Ulam discretization of the transfer operator and stationary densities.

For maps with two affine branches vanishing at 0 and 1 (the tent family and
its asymmetric relatives) the invariant density is also available in closed
form as a weighted sum of indicators ``1[0, c_n]`` over the critical orbit;
see :class:`StepDensity`.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .family import LEFT, RIGHT, PeumFamily, PeumMap

log = logging.getLogger(__name__)

PLAIN = "plain"
SIGNED = "signed_extra_weight"
STEP_TRUNCATION = 1e-17


class ConvergenceError(RuntimeError):
    pass


class NoSpectralGapError(RuntimeError):
    pass


@dataclass(frozen=True)
class DensityGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("density needs a non-empty 1-d value array")
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def mass(self) -> float:
        return float(self.values.sum() / self.N)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    def normalized(self) -> "DensityGrid":
        return DensityGrid(self.values / self.mass)

    def integrate(self, fn) -> float:
        """Midpoint rule for ∫ fn ρ dx."""
        return float(np.dot(fn(self.midpoints), self.values) / self.N)

    def bv_norm(self) -> float:
        """Grid total variation plus sup."""
        return float(np.abs(np.diff(self.values)).sum() + np.abs(self.values).max())

    @classmethod
    def uniform(cls, N: int) -> "DensityGrid":
        return cls(np.ones(N))


@dataclass(frozen=True)
class UlamOperator:
    matrix: sp.csr_matrix
    N: int
    t: float
    family_hash: str
    mode: str = PLAIN

    def __matmul__(self, values):
        return self.matrix @ values


def _branch_pieces(m: PeumMap, side: str, N: int):
    """Breakpoints of the partition of one branch domain refined by f^{-1}(grid)."""
    lo, hi = m.branch_domain(side)
    grid = np.arange(N + 1) / N
    inner = grid[(grid > lo) & (grid < hi)]
    rlo, rhi = m.branch_range(side)
    targets = grid[(grid > rlo) & (grid < rhi)]
    pre = m.inverse(targets, side)
    pts = np.unique(np.concatenate([[lo, hi], inner, pre[~np.isnan(pre)]]))
    a, b = pts[:-1], pts[1:]
    keep = b > a
    return a[keep], b[keep]


def build_ulam(family: PeumFamily, t: float, N: int, mode: str = PLAIN) -> UlamOperator:
    """Sparse Ulam matrix with M[j, i] = N |cell_i ∩ f^{-1} cell_j|, so ρ' = M ρ."""
    if N < 4:
        raise ValueError(f"resolution N={N} too small to separate the branches (need >= 4)")
    if mode not in (PLAIN, SIGNED):
        raise ValueError(f"unknown weight mode {mode!r}")
    m = family.at(t)
    rows, cols, vals = [], [], []
    for side in (LEFT, RIGHT):
        a, b = _branch_pieces(m, side, N)
        mid = 0.5 * (a + b)
        i = np.minimum((mid * N).astype(np.int64), N - 1)
        y = m.branch(mid, side)
        if np.any(~np.isfinite(y)):
            raise ArithmeticError("branch evaluation failed during assembly")
        j = np.clip((y * N).astype(np.int64), 0, N - 1)
        w = (b - a) * N
        if mode == SIGNED:
            w = w / m.df(mid, side)
        rows.append(j)
        cols.append(i)
        vals.append(w)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    M.sum_duplicates()
    return UlamOperator(matrix=M, N=N, t=float(t), family_hash=family.hash, mode=mode)


def apply_operator(op: UlamOperator, density: DensityGrid) -> DensityGrid:
    if density.N != op.N:
        raise ValueError(f"resolution mismatch: operator {op.N}, density {density.N}")
    out = op.matrix @ density.values
    if op.mode == PLAIN:
        out = np.maximum(out, 0.0)
    return DensityGrid(out)


def l1_residual(op: UlamOperator, values: np.ndarray) -> float:
    return float(np.abs(op.matrix @ values - values).sum() / op.N)


@dataclass(frozen=True)
class StationaryResult:
    density: DensityGrid
    residual: float
    iterations: int


def stationary_density(op: UlamOperator, tol: float = 1e-10, max_iter: int = 20000,
                       full: bool = False, lazy_after: int = 200):
    """Power iteration from the uniform density, L1 stopping rule.

    If plain iteration has not converged after ``lazy_after`` steps it
    continues with the lazy operator (I + L)/2, which has the same fixed point
    but damps the eigenvalues near -1 of renormalizable parameters.
    """
    if op.mode != PLAIN:
        raise ValueError("stationary density needs a plain-mode operator")
    if not tol > 0:
        raise ValueError("tol must be positive")
    M, N = op.matrix, op.N
    rho = np.ones(N)
    res = np.inf
    for it in range(1, max_iter + 1):
        nxt = M @ rho
        res = np.abs(nxt - rho).sum() / N
        if res <= tol:
            rho = nxt
            break
        rho = nxt if it <= lazy_after else 0.5 * (rho + nxt)
        rho *= N / rho.sum()
    else:
        raise ConvergenceError(f"power iteration stalled at residual {res:.3g} after {max_iter} steps")
    out = DensityGrid(np.maximum(rho, 0.0)).normalized()
    if full:
        return StationaryResult(out, float(res), it)
    return out


@dataclass(frozen=True)
class GapEstimate:
    theta: float
    residual: float
    trials: int
    per_trial: np.ndarray


def spectral_gap_estimate(op: UlamOperator, trials: int = 8, rng=None,
                          n_fit=(5, 30), floor: float = 1e-13) -> GapEstimate:
    """Geometric decay rate of ||L^n g||_1 for random zero-mean indicator differences."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    N = op.N
    x = (np.arange(N) + 0.5) / N
    lo_n, hi_n = n_fit
    rates, resids = [], []
    for _ in range(trials):
        g = np.zeros(N)
        for sign in (1.0, -1.0):
            a, b = np.sort(rng.uniform(0, 1, 2))
            ind = ((x >= a) & (x < b)).astype(float)
            if ind.sum() == 0:
                ind[min(int(a * N), N - 1)] = 1.0
            g += sign * ind / ind.sum()
        norms = []
        for _n in range(hi_n + 1):
            norms.append(np.abs(g).sum() / N)
            g = op.matrix @ g
        norms = np.array(norms)
        n = np.arange(hi_n + 1)
        sel = (n >= lo_n) & (norms > floor)
        if sel.sum() < 3:
            # decayed to the floor before the fit window: use the visible head
            sel = (n >= 1) & (norms > floor)
        if sel.sum() < 2:
            rates.append(0.0)
            resids.append(0.0)
            continue
        coef, res, *_ = np.polyfit(n[sel], np.log(norms[sel]), 1, full=True)
        rates.append(float(np.exp(coef[0])))
        resids.append(float(np.sqrt(res[0] / sel.sum())) if res.size else 0.0)
    rates = np.array(rates)
    theta = float(np.mean(rates))
    if not theta < 1.0:
        raise NoSpectralGapError(f"no spectral gap detected (theta={theta:.4f})")
    return GapEstimate(theta=theta, residual=float(np.mean(resids)), trials=trials, per_trial=rates)


def density_at_c(density: DensityGrid, c: float) -> float:
    """Mean of the two cells whose midpoints bracket c."""
    N = density.N
    k = int(np.clip(np.floor(c * N - 0.5), 0, N - 2)) if N >= 2 else 0
    if N == 1:
        return float(density.values[0])
    return float(0.5 * (density.values[k] + density.values[k + 1]))


# ---------------------------------------------------------------------------
# closed forms for affine families with f(0) = f(1) = 0


def _affine_data(m: PeumMap):
    if not m.is_tent_like:
        raise ValueError("closed-form density needs affine branches with f(0)=f(1)=0")
    sL, sR = m.slopes()
    return sL, sR, 1.0 / sL + 1.0 / abs(sR)


@dataclass(frozen=True)
class StepDensity:
    """ρ = (1/Z) Σ_n w_n 1[0, c_n] with w_1 = 1, w_{n+1} = w_n / Df(c_n)."""
    t: float
    c: float
    atoms: np.ndarray
    weights: np.ndarray
    Z: float = field(default=1.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        below = x[..., None] <= self.atoms
        return (below * self.weights).sum(axis=-1) / self.Z

    @property
    def at_c(self) -> float:
        return float(self.weights[self.atoms > self.c].sum() / self.Z)

    def integrate(self, antiderivative) -> float:
        """∫ φ ρ given Φ with Φ' = φ."""
        return float(np.dot(self.weights, antiderivative(self.atoms) - antiderivative(0.0)) / self.Z)

    def cell_averages(self, N: int) -> DensityGrid:
        i = np.arange(N)[:, None]
        frac = np.clip(self.atoms[None, :] * N - i, 0.0, 1.0)
        return DensityGrid(frac @ self.weights / self.Z)

    @property
    def support(self) -> tuple[float, float]:
        c1 = float(self.atoms[0])
        c2 = float(self.atoms[1]) if self.atoms.size > 1 else 0.0
        return c2, c1


def step_density(family: PeumFamily, t: float, max_terms: int = 4000) -> StepDensity:
    m = family.at(t)
    sL, sR, _ = _affine_data(m)
    step = m.fast_step()
    x = m.critical_value
    atoms, weights = [], []
    w = 1.0
    for _ in range(max_terms):
        atoms.append(x)
        weights.append(w)
        w = w / (sL if x <= m.c else sR)
        if abs(w) < STEP_TRUNCATION:
            break
        x = step(x)
    atoms, weights = np.array(atoms), np.array(weights)
    Z = float(np.dot(weights, atoms))
    return StepDensity(t=float(t), c=m.c, atoms=atoms, weights=weights, Z=Z)


def iterate_one(family: PeumFamily, t: float, n: int, prune: float = STEP_TRUNCATION):
    """L^n(1) as atoms {a: w} meaning Σ w 1[0, a]; exact for tent-like maps."""
    m = family.at(t)
    sL, sR, jump = _affine_data(m)
    c1 = m.critical_value
    state = {1.0: 1.0}
    for _ in range(n):
        nxt: dict[float, float] = {}
        for a, w in state.items():
            if a <= m.c:
                fa, d = sL * a, sL
            else:
                fa, d = float(m.branch(a, RIGHT)), sR
                nxt[c1] = nxt.get(c1, 0.0) + w * jump
            if fa > 0.0:
                nxt[fa] = nxt.get(fa, 0.0) + w / d
        state = {a: w for a, w in nxt.items() if abs(w) > prune}
    atoms = np.array(sorted(state))
    return atoms, np.array([state[a] for a in atoms])


# ---------------------------------------------------------------------------
# density cache


class DensityCache:
    """In-memory and optional on-disk store keyed by (family hash, t to 12 digits, N)."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict[tuple, DensityGrid] = {}

    @staticmethod
    def key(family_hash: str, t: float, N: int) -> tuple:
        return (family_hash, f"{t:.12f}", int(N))

    def _path(self, key) -> Path:
        h, t, N = key
        return self.directory / f"density_{h}_{t}_{N}.csv"

    def get(self, family_hash: str, t: float, N: int) -> DensityGrid | None:
        key = self.key(family_hash, t, N)
        if key in self._mem:
            return self._mem[key]
        if self.directory is None:
            return None
        p = self._path(key)
        if not p.exists():
            return None
        rows = [r for r in p.read_text().splitlines() if r and not r.startswith("#")]
        dens = DensityGrid(np.array([float(r) for r in rows[1:]]))
        self._mem[key] = dens
        return dens

    def put(self, family_hash: str, t: float, N: int, density: DensityGrid, tol: float) -> None:
        key = self.key(family_hash, t, N)
        self._mem[key] = density
        if self.directory is None:
            return
        from filelock import FileLock

        self.directory.mkdir(parents=True, exist_ok=True)
        p = self._path(key)
        buf = io.StringIO()
        buf.write(f"# family_hash={family_hash}\n# t={key[1]}\n# N={N}\n# tol={tol:.3e}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho"])
        for v in density.values:
            w.writerow([repr(float(v))])
        with FileLock(str(self.directory / ".lock")):
            tmp = p.with_suffix(".tmp")
            tmp.write_text(buf.getvalue())
            os.replace(tmp, p)


_default_cache = DensityCache()


def cached_density(family: PeumFamily, t: float, N: int, tol: float = 1e-10,
                   cache: DensityCache | None = None) -> DensityGrid:
    cache = cache if cache is not None else _default_cache
    hit = cache.get(family.hash, t, N)
    if hit is not None:
        return hit
    dens = stationary_density(build_ulam(family, t, N), tol=tol)
    cache.put(family.hash, t, N, dens, tol)
    return dens
