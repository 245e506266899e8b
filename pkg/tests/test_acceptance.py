"""Acceptance criteria 1-12; each test records and prints one PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from peumlab import io as pio
from peumlab.cli import main
from peumlab.family import check_assumptions, tent
from peumlab.modulus import compose_constant, modulus_scan, theoretical_constant
from peumlab.observables import centered_identity, identity
from peumlab.shadowing import (complement_A, matched_pairs, overlap_sum, r_integral,
                               return_times)
from peumlab.srb import gamma, gamma_iterated, lyapunov
from peumlab.stats import clt_monte_carlo, green_kubo_sigma
from peumlab.transfer import build_ulam, stationary_density
from peumlab.transversality import j_limit, j_series

RESULTS: dict[int, str] = {}
TENT = tent()


def record(k: int, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    in_time = elapsed <= budget
    line = (f"CRITERION {k:2d}: {'PASS' if ok and in_time else 'FAIL'}  {detail}  "
            f"[{elapsed:.2f}s / {budget:g}s]")
    RESULTS[k] = line
    print(line)
    assert ok, line
    assert in_time, line


def test_c01_exact_density():
    t0 = time.perf_counter()
    dens = stationary_density(build_ulam(TENT, 2.0, 4096), tol=1e-10)
    dev = float(np.max(np.abs(dens.values - 1.0)))
    record(1, dev <= 1e-8, f"sup|rho-1| = {dev:.2e} (<= 1e-8)", time.perf_counter() - t0, 5)


def test_c02_lyapunov():
    worst, slowest = 0.0, 0.0
    for t in (1.5, 1.7, 1.9, 2.0):
        t0 = time.perf_counter()
        worst = max(worst, abs(lyapunov(TENT, t) - math.log(t)))
        slowest = max(slowest, time.perf_counter() - t0)
    record(2, worst <= 1e-6, f"max |lyap - log t| = {worst:.2e} (<= 1e-6), slowest point",
           slowest, 1)


def test_c03_lasota_yorke():
    t0 = time.perf_counter()
    g = gamma(TENT, 1.9, identity(), method="exact")
    phi = identity().centered(g)
    n = np.arange(1, 26)
    err = np.array([abs(gamma_iterated(TENT, 1.9, phi, int(k), method="exact").value) for k in n])
    y = np.log(err)
    slope, icpt = np.polyfit(n, y, 1)
    r2 = 1.0 - np.sum((y - (slope * n + icpt)) ** 2) / np.sum((y - y.mean()) ** 2)
    delta = math.exp(slope)
    record(3, r2 >= 0.9 and delta < 1, f"R^2 = {r2:.3f} (>= 0.9), delta = {delta:.3f} (< 1)",
           time.perf_counter() - t0, 60)


def test_c04_transversality_tail():
    t0 = time.perf_counter()
    ok = True
    for t in (1.7, 1.9):
        s = j_series(TENT, t, 40)
        k = np.arange(41)
        ok &= bool(np.all(np.abs(s.partial[40] - s.partial[k]) <= s.tail_bound(k)))
    J2, _ = j_limit(TENT, 2.0, 1e-12)
    ok &= abs(J2 - 0.5) <= 1e-12
    record(4, ok, f"tail bound holds for k <= 40; J(t=2) - 1/2 = {J2 - 0.5:.1e}",
           time.perf_counter() - t0, 1)


def test_c05_diffusion():
    t0 = time.perf_counter()
    phi = centered_identity()
    sigma = green_kubo_sigma(TENT, 2.0, phi, K=30, N=4096).sigma
    mc = clt_monte_carlo(TENT, 2.0, phi, 1000, 100_000, seed=0)
    d_gk = abs(sigma - 1 / math.sqrt(12))
    d_mc = abs(mc.variance - 1 / 12) * 12
    record(5, d_gk <= 1e-3 and d_mc <= 0.05,
           f"|sigma_GK - 1/sqrt12| = {d_gk:.1e} (<= 1e-3), MC rel. error = {d_mc:.2%} (<= 5%)",
           time.perf_counter() - t0, 120)


def test_c06_complement_measure():
    t0 = time.perf_counter()
    ratios = []
    for h in (1e-2, 1e-3, 1e-4, 1e-5):
        n = int(math.floor(abs(math.log(h))))
        ratios.append(complement_A(TENT, 1.9, h, n).measure / (h * n))
    spread = max(ratios) / min(ratios)
    record(6, spread <= 20, f"measure/(h n) in [{min(ratios):.3f}, {max(ratios):.3f}], "
           f"max/min = {spread:.2f} (<= 20)", time.perf_counter() - t0, 120)


def test_c07_bounded_r_integral():
    # independent batches give the slope's sampling error without assuming
    # independence across n (every n shares the same sample points)
    t0 = time.perf_counter()
    g = gamma(TENT, 1.9, identity(), method="exact")
    phi = identity().centered(g)
    batches, n_max = 10, 200
    slopes, values = [], []
    for b in range(batches):
        ri = r_integral(TENT, 1.9, phi, n_max, samples=20_000, seed=b)
        slopes.append(np.polyfit(ri.n, ri.value, 1)[0])
        values.append(ri.value)
    slopes = np.array(slopes)
    mean_slope = slopes.mean()
    se = slopes.std(ddof=1) / math.sqrt(batches)
    value = np.mean(values, axis=0)
    sup = float(np.max(np.abs(value)))
    ok = np.isfinite(sup) and abs(mean_slope) <= 3 * se
    record(7, ok, f"sup_n |I_n| = {sup:.3f}, slope = {mean_slope:.2e} +- {se:.1e} (|slope| <= 3 SE)",
           time.perf_counter() - t0, 300)


def test_c08_shadowing_consistency():
    t0 = time.perf_counter()
    hs = np.array([1e-4, 1e-5, 1e-6])
    errs, ok = [], True
    for i, h in enumerate(hs):
        mp = matched_pairs(TENT, 1.9, h, 10, 1000, rng=i)
        errs.append(float(np.max(mp.error(h))))
        ok &= bool(mp.itinerary_match.all()) and float(np.max(mp.endpoint_gap)) <= 1e-12
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    record(8, ok and order >= 1.8,
           f"max errors {', '.join(f'{e:.1e}' for e in errs)}, order = {order:.2f} (>= 1.8), "
           f"itineraries and endpoints match", time.perf_counter() - t0, 60)


def test_c09_return_times():
    t0 = time.perf_counter()
    hs = np.logspace(-3, -6, 13)
    n1_ratio, n2_gap, rows = [], [], []
    for h in hs:
        rt = return_times(TENT, 1.9, h)
        n1_ratio.append(rt.n1 / abs(math.log(h)))
        closed = math.ceil(math.log(1 / (2 * h * rt.bar.J)) / math.log(1.9))
        n2_gap.append(abs(rt.n2 - closed))
        rows.append((h, rt.n2, overlap_sum(TENT, 1.9, h, rt.n2).overlap))
    h, n, ov = map(np.array, zip(*rows))
    pos = ov > 0
    eta = np.polyfit(np.log(h[pos]), np.log(ov[pos] / n[pos] ** 2), 1)[0] - 1
    ratio = ov[pos] / (n[pos] ** 2 * h[pos] ** (1 + eta))
    half = ratio.size // 2
    bounded = ratio[half:].max() <= 2 * ratio[:half].max()
    R = min(n1_ratio)
    ok = R > 0 and max(n2_gap) <= 1 and eta > 0 and bounded
    record(9, ok, f"R = {R:.3f} (> 0), max |n2 - closed form| = {max(n2_gap)} (<= 1), "
           f"eta = {eta:.2f} (> 0), overlap ratio not growing", time.perf_counter() - t0, 300)


@pytest.fixture(scope="module")
def modulus_samples():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    ts = []
    while len(ts) < 10:
        t = float(rng.uniform(1.5, 1.95))
        if check_assumptions(TENT, [t])[0].ok:
            ts.append(t)
    scans = [modulus_scan(TENT, t, identity(), h0=1e-2, r=0.5, steps=14) for t in ts]
    consts = [theoretical_constant(TENT, t, identity(), N=8192, K=40).value for t in ts]
    return ts, scans, consts, time.perf_counter() - t0


def test_c10_non_lipschitz(modulus_samples):
    ts, scans, _, setup = modulus_samples
    t0 = time.perf_counter()
    grows = sum(s.running_max_lip[-1] > s.running_max_lip[0] for s in scans)
    record(10, grows >= 8, f"running max of |dGamma|/h grows over h = 1e-2..{scans[0].h[-1]:.1e} "
           f"for {grows}/10 samples (>= 8)", setup + time.perf_counter() - t0, 1800)


def test_c11_scaling(modulus_samples):
    ts, scans, consts, setup = modulus_samples
    t0 = time.perf_counter()
    stable, bracketed = 0, 0
    for s, K in zip(scans, consts):
        rm = s.running_max_scaled
        stable += abs(rm[-1] - rm[-4]) < 0.5 * rm[-4]
        bracketed += 0.1 * abs(K) <= rm[-1] <= 10 * abs(K)
    comp = compose_constant(1.0, 0.5, 1 / math.sqrt(12), math.log(2))
    comp_err = abs(comp - math.sqrt(1 / (6 * math.log(2))))
    ok = stable == 10 and bracketed == 10 and comp_err <= 1e-6
    record(11, ok, f"stabilized {stable}/10, within [0.1, 10] x K {bracketed}/10, "
           f"t=2 composition error {comp_err:.1e}", setup + time.perf_counter() - t0, 1800)


def test_c12_determinism(tmp_path):
    t0 = time.perf_counter()
    tent_cfg = {"kind": "tent"}
    configs = {
        "sigma": {"family": tent_cfg, "t": 2.0, "observable": "x-1/2", "N": 4096, "K": 30,
                  "clt": {"n": 1000, "samples": 10_000}},
        "shadow": {"family": tent_cfg, "t_grid": [1.9], "h": [1e-3, 1e-4], "pairs": 200,
                   "r_integral": {"n_max": 50, "samples": 5000}},
        "modulus": {"family": tent_cfg, "t_grid": [1.6, 1.9], "steps": 14,
                    "audit_h": [1e-3]},
    }
    same, total = 0, 0
    for command, cfg in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for rep in range(2):
            out = tmp_path / f"{command}-{rep}"
            assert main([command, "--config", str(path), "--out", str(out), "--seed", "12345"]) == 0
            outs.append(out)
        for csv in sorted(outs[0].glob("*.csv")):
            total += 1
            same += pio.csv_body(csv.read_text()) == pio.csv_body((outs[1] / csv.name).read_text())
    record(12, total > 0 and same == total, f"{same}/{total} CSV bodies byte-identical",
           time.perf_counter() - t0, 600)
