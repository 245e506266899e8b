"""Lipschitz observables on [0, 1] with exact antiderivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

KINDS = ("x", "x-1/2", "constant", "poly", "table")


@dataclass(frozen=True, eq=False)
class Observable:
    """Polynomial (ascending coefficients) or piecewise-linear table, plus a shift."""
    kind: str
    coefs: np.ndarray | None = None
    breakpoints: np.ndarray | None = None
    values: np.ndarray | None = None
    shift: float = 0.0
    zero_mean_adjusted: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "table":
            return np.interp(x, self.breakpoints, self.values) - self.shift
        return npoly.polyval(x, self.coefs) - self.shift

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "table":
            bp, v = self.breakpoints, self.values
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(bp))])
            k = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, bp.size - 2)
            dx = x - bp[k]
            slope = (v[k + 1] - v[k]) / (bp[k + 1] - bp[k])
            return cum[k] + v[k] * dx + 0.5 * slope * dx * dx - self.shift * x
        return npoly.polyval(x, npoly.polyint(self.coefs)) - self.shift * x

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)

    @property
    def mean_shift(self) -> float:
        return self.shift

    @property
    def is_constant(self) -> bool:
        if self.kind == "table":
            return bool(np.all(self.values == self.values[0]))
        return bool(np.all(self.coefs[1:] == 0))

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "table":
            return float(np.max(np.abs(np.diff(self.values) / np.diff(self.breakpoints))))
        d = npoly.polyder(self.coefs) if self.coefs.size > 1 else np.zeros(1)
        return _sup_abs_poly(d)

    @property
    def sup_abs(self) -> float:
        if self.kind == "table":
            return float(np.max(np.abs(self.values - self.shift)))
        c = self.coefs.copy()
        c[0] -= self.shift
        return _sup_abs_poly(c)

    def shifted(self, const: float) -> "Observable":
        """φ + const."""
        return Observable(self.kind, self.coefs, self.breakpoints, self.values,
                          self.shift - const, self.zero_mean_adjusted)

    def centered(self, mean: float) -> "Observable":
        """φ - mean, flagged as zero-mean adjusted."""
        return Observable(self.kind, self.coefs, self.breakpoints, self.values,
                          self.shift + mean, True)

    def to_config(self) -> dict:
        if self.kind == "table":
            cfg = {"kind": "table", "breakpoints": self.breakpoints.tolist(),
                   "values": self.values.tolist()}
        elif self.kind == "constant":
            cfg = {"kind": "constant", "value": float(self.coefs[0])}
        elif self.kind == "poly":
            cfg = {"kind": "poly", "coefficients": self.coefs.tolist()}
        else:
            cfg = {"kind": self.kind}
        if self.shift:
            cfg["shift"] = self.shift
        return cfg


def _sup_abs_poly(c: np.ndarray) -> float:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    pts = [0.0, 1.0]
    if c.size > 2:
        r = npoly.polyroots(npoly.polyder(c))
        pts += [float(z.real) for z in r if abs(z.imag) < 1e-12 and 0 <= z.real <= 1]
    return float(np.max(np.abs(npoly.polyval(np.array(pts), c))))


def identity() -> Observable:
    return Observable("x", coefs=np.array([0.0, 1.0]))


def centered_identity() -> Observable:
    return Observable("x-1/2", coefs=np.array([-0.5, 1.0]))


def constant(k: float) -> Observable:
    return Observable("constant", coefs=np.array([float(k)]))


def poly(coefficients) -> Observable:
    c = np.atleast_1d(np.asarray(coefficients, dtype=float))
    if c.size == 0:
        raise ValueError("empty polynomial")
    return Observable("poly", coefs=c)


def table(breakpoints, values) -> Observable:
    bp = np.asarray(breakpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if bp.size < 2 or bp.size != v.size:
        raise ValueError("table needs matching breakpoints and values (>= 2)")
    if np.any(np.diff(bp) <= 0) or bp[0] > 0 or bp[-1] < 1:
        raise ValueError("breakpoints must increase and cover [0, 1]")
    return Observable("table", breakpoints=bp, values=v)


def observable_from_config(cfg: dict | str) -> Observable:
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind")
    if kind == "x":
        obs = identity()
    elif kind == "x-1/2":
        obs = centered_identity()
    elif kind == "constant":
        obs = constant(cfg.get("value", 1.0))
    elif kind == "poly":
        obs = poly(cfg["coefficients"])
    elif kind == "table":
        obs = table(cfg["breakpoints"], cfg["values"])
    else:
        raise ValueError(f"unknown observable kind {kind!r}")
    if cfg.get("shift"):
        obs = obs.shifted(-float(cfg["shift"]))
    return obs
