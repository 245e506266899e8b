"""peumlab <command> --config <path> [--out <dir>] [--threads <n>] [--seed <u64>] [--timestamp]"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as pio
from .family import DomainError, PeumFamily, critical_recurrence, family_from_config
from .modulus import H_MAX, decomposition_audit, modulus_scan, theoretical_constant
from .observables import observable_from_config
from .shadowing import (matched_pairs, overlap_sum, r_integral, return_times,
                        shadow_report)
from .srb import gamma, gamma_sweep
from .stats import clt_monte_carlo, green_kubo_sigma, lil_trace
from .transfer import DensityCache, build_ulam, l1_residual, stationary_density
from .transversality import j_limit, j_series

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "density": {"N": 4096, "tol": 1e-10},
    "sweep": {"observable": "x", "N": 4096, "tol": 1e-10, "method": "ulam"},
    "j": {"tol": 1e-12},
    "sigma": {"observable": "x", "K": 30, "N": 4096, "tol": 1e-10},
    "shadow": {"observable": "x", "budget": 1_000_000, "s_grid_size": 33, "pairs": 0},
    "modulus": {"observable": "x", "h0": 1e-2, "r": 0.5, "steps": 14, "method": "auto",
                "N": 8192, "K": 40, "tol": 1e-12, "constant": True, "negative": False,
                "audit_h": []},
    "recurrence": {"N": 1000, "m": 2.0},
}
NEEDS_T = {"density": "t", "sigma": "t", "sweep": "grid", "j": "grid", "shadow": "grid",
           "modulus": "grid", "recurrence": "grid"}


class RunFailure(RuntimeError):
    pass


class Run:
    """Resolved configuration plus output bookkeeping for one command."""

    def __init__(self, command: str, cfg: dict, family: PeumFamily, out: Path,
                 threads: int, timestamp: bool, cache: DensityCache):
        self.command, self.cfg, self.family = command, cfg, family
        self.out, self.threads, self.timestamp, self.cache = out, threads, timestamp, cache
        self.hash = pio.config_hash(cfg)
        self.written: list[str] = []

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def csv(self, name: str, header, rows, footer=()) -> None:
        text = pio.render_csv(list(header), rows,
                              pio.provenance(self.command, self.hash, self.timestamp), footer)
        pio.atomic_write(self.out / name, text)
        self.written.append(name)

    def json(self, name: str, obj) -> None:
        pio.atomic_write(self.out / name, pio.render_json(obj))
        self.written.append(name)

    def map(self, fn, items):
        items = list(items)
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]


def _status(exc: BaseException) -> str:
    return f"error: {type(exc).__name__}: {exc}".replace("\n", " ")


def _grid(cfg: dict) -> np.ndarray:
    if "t_grid" in cfg:
        return pio.expand_grid(cfg["t_grid"])
    return np.array([float(cfg["t"])])


def _h_list(cfg: dict) -> list[float]:
    h = cfg["h"]
    return [float(v) for v in (h if isinstance(h, list) else [h])]


def _default_n(h: float) -> int:
    return int(math.floor(abs(math.log(h))))


# ---------------------------------------------------------------------------
# configuration resolution


def resolve(command: str, cfg: dict, seed: int | None) -> dict:
    if cfg.get("command", command) != command:
        raise pio.ConfigError(f"config is for command {cfg['command']!r}, not {command!r}", "command")
    out = dict(DEFAULTS[command])
    out.update(cfg)
    out["command"] = command
    if seed is not None:
        if not 0 <= seed <= pio.U64_MAX:
            raise pio.ConfigError(f"seed {seed} is not an unsigned 64-bit integer", "seed")
        out["seed"] = seed
    out.setdefault("seed", 0)
    if command == "j":
        out.setdefault("eps1", out["tol"])
    need = NEEDS_T[command]
    if need == "t" and "t" not in out:
        raise pio.ConfigError(f"command {command!r} needs 't'", "t")
    if need == "grid" and "t" not in out and "t_grid" not in out:
        raise pio.ConfigError(f"command {command!r} needs 't' or 't_grid'", "t_grid")
    if command == "shadow" and "h" not in out:
        raise pio.ConfigError("command 'shadow' needs 'h'", "h")
    pio.validate_config(out)
    return out


def check_ranges(command: str, cfg: dict, family: PeumFamily) -> None:
    """Module preconditions that the schema cannot express."""
    ts = _grid(cfg)
    if ts.size == 0:
        raise pio.ConfigError("empty parameter grid", "t_grid")
    for t in ts:
        try:
            family.check_t(float(t))
        except DomainError as exc:
            raise pio.ConfigError(str(exc), "t") from None
    a, b = family.t_range
    if command == "shadow":
        for h in _h_list(cfg):
            if not h > 0:
                raise pio.ConfigError(f"h={h} must be positive", "h")
            if ts.max() + h > b:
                raise pio.ConfigError(f"t+h={ts.max() + h} leaves the parameter interval", "h")
    if command == "modulus":
        h0 = cfg["h0"]
        if not h0 < H_MAX:
            raise pio.ConfigError(f"h0={h0} must be below e^-e", "h0")
        if ts.max() + h0 > b:
            raise pio.ConfigError(f"t+h0={ts.max() + h0} leaves the parameter interval", "h0")
        if cfg["negative"] and ts.min() - h0 < a:
            raise pio.ConfigError(f"t-h0={ts.min() - h0} leaves the parameter interval", "h0")
        for h in cfg["audit_h"]:
            if not h < H_MAX or ts.max() + h > b:
                raise pio.ConfigError(f"audit h={h} out of range", "audit_h")
    if "observable" in cfg:
        try:
            observable_from_config(cfg["observable"])
        except (ValueError, KeyError) as exc:
            raise pio.ConfigError(f"observable: {exc}", "observable") from None


# ---------------------------------------------------------------------------
# commands


def cmd_density(run: Run) -> None:
    cfg = run.cfg
    t, N, tol = float(cfg["t"]), int(cfg["N"]), float(cfg["tol"])
    t0 = time.perf_counter()
    op = build_ulam(run.family, t, N)
    dens = run.cache.get(run.family.hash, t, N)
    hit = dens is not None
    iterations = None
    if not hit:
        res = stationary_density(op, tol=tol, full=True)
        dens, iterations = res.density, res.iterations
        run.cache.put(run.family.hash, t, N, dens, tol)
    residual = l1_residual(op, dens.values)
    wall = (time.perf_counter() - t0) * 1e3
    x = dens.midpoints
    run.csv("density.csv", ["cell", "x", "rho"], zip(range(N), x, dens.values))
    c = run.family.c
    run.json("density_summary.json", {
        "t": t, "N": N, "tol": tol, "residual": residual, "iterations": iterations,
        "mass": dens.mass, "sup_deviation_from_uniform": float(np.max(np.abs(dens.values - 1.0))),
        "rho_at_c": float(dens.values[min(int(c * N), N - 1)]), "cache_hit": hit,
        "wall_ms": wall})


def cmd_sweep(run: Run) -> None:
    cfg = run.cfg
    phi = observable_from_config(cfg["observable"])
    curve = gamma_sweep(run.family, _grid(cfg), phi, N=int(cfg["N"]), tol=float(cfg["tol"]),
                        threads=run.threads, method=cfg["method"], cache=run.cache)
    wall = curve.wall_ms if run.timestamp else [None] * curve.t.size
    run.csv("sweep.csv", ["t", "gamma", "N", "tol_achieved", "wall_ms", "status"],
            zip(curve.t, curve.gamma, [curve.N] * curve.t.size, curve.tol_achieved, wall,
                curve.status))
    if not curve.ok.any():
        raise RunFailure("every sweep point failed")


def cmd_j(run: Run) -> None:
    cfg = run.cfg
    tol, eps1 = float(cfg["tol"]), float(cfg["eps1"])

    def point(t):
        try:
            J, k = j_limit(run.family, t, tol)
            return t, J, k, j_series(run.family, t, k).accuracy, abs(J) <= eps1, "ok"
        except (ValueError, ArithmeticError) as exc:
            return t, float("nan"), None, None, None, _status(exc)

    rows = run.map(point, _grid(cfg))
    good = [r for r in rows if r[-1] == "ok"]
    if not good:
        run.csv("j.csv", ["t", "J", "k_used", "tail_bound", "flagged", "status"], rows)
        raise RunFailure("every J evaluation failed")
    best = min(good, key=lambda r: abs(r[1]))
    footer = [f"# min_abs_J={pio.fmt(abs(best[1]))}", f"# argmin_t={pio.fmt(best[0])}",
              f"# flagged={sum(1 for r in good if r[4])}"]
    run.csv("j.csv", ["t", "J", "k_used", "tail_bound", "flagged", "status"], rows, footer)


def cmd_sigma(run: Run) -> None:
    cfg = run.cfg
    t = float(cfg["t"])
    phi = observable_from_config(cfg["observable"])
    gk = green_kubo_sigma(run.family, t, phi, K=int(cfg["K"]), N=int(cfg["N"]),
                          tol=float(cfg["tol"]), cache=run.cache, seed=run.seed)
    run.csv("sigma.csv", ["k", "a_k"], zip(range(gk.K + 1), gk.a))
    summary = {"t": t, "sigma": gk.sigma, "sigma2": gk.sigma ** 2, "sigma2_raw": gk.sigma2_raw,
               "K": gk.K, "N": gk.N, "theta": gk.theta, "tail": gk.tail, "clamped": gk.clamped}
    if "clt" in cfg:
        c = cfg["clt"]
        est = clt_monte_carlo(run.family, t, phi, int(c["n"]), int(c["samples"]), seed=run.seed,
                              shards=int(c.get("shards", 8)))
        run.csv("clt.csv", ["n", "samples", "variance", "stderr", "green_kubo_sigma2"],
                [(est.n, est.samples, est.variance, est.stderr, gk.sigma ** 2)])
        summary["clt"] = {"n": est.n, "samples": est.samples, "variance": est.variance,
                          "stderr": est.stderr}
    if "lil" in cfg:
        if not gk.sigma > 0:
            summary["lil"] = "skipped: sigma is zero"
        else:
            lc = cfg["lil"]
            tr = lil_trace(run.family, t, phi, int(lc["n_max"]), gk.sigma,
                           stride=int(lc.get("stride", 1)))
            run.csv("lil.csv", ["n", "S_n", "scaled", "running_max"],
                    zip(tr.n, tr.S, tr.scaled, tr.running_max))
    run.json("sigma_summary.json", summary)


def cmd_shadow(run: Run) -> None:
    cfg = run.cfg
    fam, budget = run.family, int(cfg["budget"])
    tasks = [(float(t), h) for t in _grid(cfg) for h in _h_list(cfg)]
    seeds = np.random.SeedSequence(run.seed).spawn(len(tasks))

    def point(arg):
        (t, h), ss = arg
        n = int(cfg["n"]) if "n" in cfg else _default_n(h)
        row = {"t": t, "h": h, "n": n}
        out = {"row": row, "report": None, "pairs": None, "status": "ok"}
        try:
            rep = shadow_report(fam, t, h, n, budget)
            out["report"] = rep
            row.update(measure_A=rep.measure_A, measure_B=rep.measure_B,
                       scaled_measure_A=rep.measure_A / (h * n) if n else None,
                       complete=rep.complement_A.complete and rep.complement_B.complete)
            try:
                rt = return_times(fam, t, h, int(cfg["s_grid_size"]))
                ov = overlap_sum(fam, t, h, rt.n2, budget=budget)
                row.update(n1=rt.n1, n2=rt.n2, overlap=ov.overlap)
            except (ValueError, ArithmeticError, RuntimeError) as exc:
                out["status"] = _status(exc)
            if cfg["pairs"]:
                out["pairs"] = matched_pairs(fam, t, h, n, int(cfg["pairs"]), rng=ss)
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            out["status"] = _status(exc)
        return out

    results = run.map(point, zip(tasks, seeds))
    cols = ["t", "h", "n", "measure_A", "measure_B", "scaled_measure_A", "complete", "n1", "n2",
            "overlap"]
    run.csv("shadow.csv", cols + ["status"],
            [[r["row"].get(c) for c in cols] + [r["status"]] for r in results])
    comp_rows, reports = [], []
    for r in results:
        rep = r["report"]
        if rep is None:
            continue
        reports.append(rep.to_json())
        for name, p in (("A", rep.complement_A), ("B", rep.complement_B)):
            comp_rows += [(rep.t, rep.h, name, a, b, g) for a, b, g in zip(p.lo, p.hi, p.generation)]
    run.csv("complements.csv", ["t", "h", "set", "lo", "hi", "generation"], comp_rows)
    run.json("shadow.json", reports)
    if cfg["pairs"]:
        rows = []
        for r in results:
            p, h = r["pairs"], r["row"]["h"]
            if p is None:
                continue
            rows += zip([r["row"]["t"]] * p.x.size, [h] * p.x.size, p.x, p.y, p.dxdy,
                        p.predicted(h), p.error(h), p.endpoint_gap, p.itinerary_match)
        run.csv("pairs.csv", ["t", "h", "x", "y", "dxdy", "predicted", "abs_error", "endpoint_gap",
                              "itinerary_match"], rows)
    if "r_integral" in cfg:
        ri = cfg["r_integral"]
        t = float(_grid(cfg)[0])
        phi = observable_from_config(cfg["observable"])
        phi = phi.centered(gamma(fam, t, phi, method="exact" if fam.at(t).is_tent_like else "ulam"))
        res = r_integral(fam, t, phi, int(ri["n_max"]), samples=int(ri.get("samples", 100_000)),
                         seed=np.random.SeedSequence([run.seed, 1]))
        run.csv("r_integral.csv", ["n", "value", "stderr"], zip(res.n, res.value, res.stderr),
                [f"# rejected_fraction={pio.fmt(res.rejected_fraction)}"])
    if all(r["report"] is None for r in results):
        raise RunFailure("every shadow point failed")


def cmd_modulus(run: Run) -> None:
    cfg = run.cfg
    fam = run.family
    phi = observable_from_config(cfg["observable"])
    kw = dict(h0=float(cfg["h0"]), r=float(cfg["r"]), steps=int(cfg["steps"]),
              method=cfg["method"], tol=float(cfg["tol"]), cache=run.cache)

    def point(t):
        res = {"t": t, "status": "ok", "scans": [], "constant": None, "audits": []}
        try:
            K = None
            if cfg["constant"]:
                rep = theoretical_constant(fam, t, phi, N=int(cfg["N"]), K=int(cfg["K"]),
                                           method=cfg["method"], cache=run.cache)
                res["constant"] = rep
                K = rep.value
            res["scans"].append(("+", modulus_scan(fam, t, phi, K=K, **kw)))
            if cfg["negative"]:
                res["scans"].append(("-", modulus_scan(fam, t, phi, K=K, negative=True, **kw)))
            for h in cfg["audit_h"]:
                res["audits"].append(decomposition_audit(fam, t, float(h), phi,
                                                         method=cfg["method"], N=int(cfg["N"])))
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            res["status"] = _status(exc)
        return res

    results = run.map(point, [float(t) for t in _grid(cfg)])
    rows = []
    for r in results:
        if not r["scans"]:
            rows.append([r["t"], None] + [None] * 8 + [r["status"]])
        for side, scan in r["scans"]:
            rows += [[r["t"], side, *row, r["status"]] for row in scan.rows()]
    run.csv("modulus.csv", ["t", "side", "h", "delta_gamma", "lipschitz_ratio", "scaled_ratio",
                            "running_max_lip", "running_max_scaled", "K_theoretical",
                            "trusted_flag", "status"], rows)
    summary = []
    for r in results:
        entry = {"t": r["t"], "status": r["status"]}
        c = r["constant"]
        if c is not None:
            entry["constant"] = {"value": c.value, "rho_c": c.rho_c, "J": c.J, "sigma": c.sigma,
                                 "lyapunov": c.lyapunov, "errors": c.errors,
                                 "relative_error": c.relative_error,
                                 "in_hypothesis": c.in_hypothesis}
        entry["audits"] = [{"h": a.h, "n": a.n, "delta_gamma": a.delta_gamma,
                            "delta_gamma_iterated": a.delta_gamma_iterated, "r_term": a.r_term,
                            "complement_A_term": a.complement_A_term,
                            "complement_B_term": a.complement_B_term, "residual": a.residual,
                            "second_order_bound": a.second_order_bound} for a in r["audits"]]
        summary.append(entry)
    run.json("modulus_summary.json", summary)
    if not any(r["scans"] for r in results):
        raise RunFailure("every modulus point failed")


def cmd_recurrence(run: Run) -> None:
    cfg = run.cfg
    N, mexp = int(cfg["N"]), float(cfg["m"])
    if N < 2:
        raise pio.ConfigError("N must be >= 2", "N")

    def point(t):
        try:
            r = critical_recurrence(run.family, t, N, mexp)
            return t, mexp, N, r.value, r.argmin, r.threshold, "ok"
        except (ValueError, ArithmeticError) as exc:
            return t, mexp, N, None, None, None, _status(exc)

    rows = run.map(point, [float(t) for t in _grid(cfg)])
    run.csv("recurrence.csv", ["t", "m", "N", "value", "argmin", "threshold", "status"], rows)
    if all(r[-1] != "ok" for r in rows):
        raise RunFailure("every recurrence point failed")


COMMAND_FUNCS = {"density": cmd_density, "sweep": cmd_sweep, "j": cmd_j, "sigma": cmd_sigma,
                 "shadow": cmd_shadow, "modulus": cmd_modulus, "recurrence": cmd_recurrence}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peumlab",
                                description="Numerical laboratory for piecewise expanding "
                                            "unimodal map families.")
    p.add_argument("command", choices=pio.COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or .)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
    p.add_argument("--timestamp", action="store_true",
                   help="add a timestamp line and wall times to CSV output")
    return p


def _fail(code: int, kind: str, message: str, out: Path | None, command: str, path: str = "") -> int:
    err = {"status": "error", "kind": kind, "command": command, "message": message,
           "path": path, "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            pio.atomic_write(out / "error.json", pio.render_json(err))
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    out = Path(args.out) if args.out else None
    try:
        raw = pio.load_config(args.config)
        out = out or Path(raw.get("out", "."))
        cfg = resolve(command, raw, args.seed)
        try:
            family = family_from_config(cfg["family"])
        except (ValueError, KeyError) as exc:
            raise pio.ConfigError(f"family: {exc}", "family") from None
        check_ranges(command, cfg, family)
        threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
        if threads < 1:
            raise pio.ConfigError("--threads must be >= 1", "threads")
    except pio.ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), out, command, exc.path)
    cache_dir = os.environ.get("PEUMLAB_CACHE") or cfg.get("cache_dir")
    run = Run(command, cfg, family, out, threads, args.timestamp, DensityCache(cache_dir))
    try:
        out.mkdir(parents=True, exist_ok=True)
        run.json("resolved_config.json", {k: v for k, v in cfg.items() if k != "out"})
        COMMAND_FUNCS[command](run)
    except pio.ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), out, command, exc.path)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        return _fail(EXIT_RUNTIME, "runtime", _status(exc), out, command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
