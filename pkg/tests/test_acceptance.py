"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Run with ``pytest -v tests/test_acceptance.py``; the lines are repeated in an
"acceptance criteria" section at the end of the session.
"""
from __future__ import annotations

import json
import math
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from bicond.bridge import BridgeSampler, RejectionSampler, batch_stats, check_brownian_marginals, condensation_report
from bicond.bridge import sum_sq_limit
from bicond.errors import BicondError, IncompatibleEndpoint
from bicond.exactdist import bridge_table, llt_discrepancy, marginal_from_table
from bicond.genfun import (
    Geometric,
    MapInduced,
    StableExample,
    Tabulated,
    UniformMapStep,
    classify_regime,
    eval_derivatives,
    from_descriptor,
    moments_from_derivatives,
)
from bicond.harness import ExperimentConfig, fit_exponent, run
from bicond.lukas import TreeSampler, luka_scale, sample_subset_counts
from bicond.mapbij import distance_scale, map_report, sample_labelled_map, scaling_S, verify_correspondence
from bicond.oracles import chi_square_tree_sampler, combined_pvalue, tree_law, verify_bridges_exhaustive

DATA = Path(__file__).parent / "data"


def _sum_sq(inc: np.ndarray) -> np.ndarray:
    f = inc.astype(float)
    return np.einsum("ij,ij->i", f, f)


# ----------------------------------------------------------------------
# 1. tilt invariance of bridge marginals
# ----------------------------------------------------------------------
def test_criterion_01_tilt_invariance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst, compared, incompatible = 0.0, 0, 0
    for _ in range(20):
        size = int(rng.integers(2, 10))
        p = rng.uniform(0.05, 3.0, size=size)
        a, b = rng.uniform(0.1, 5.0), rng.uniform(0.2, 4.0)
        nu = a * b ** np.arange(size) * p
        wp, wn = Tabulated(tuple(p)), Tabulated(tuple(nu))
        for n in range(1, 13):
            for x in range(0, 9):
                if x > (size - 1) * n:
                    # no bridge exists under either law; both must say so
                    for w in (wp, wn):
                        with pytest.raises(IncompatibleEndpoint):
                            bridge_table(w, n, x)
                    incompatible += 1
                    continue
                tp, tn = bridge_table(wp, n, x), bridge_table(wn, n, x)
                compared += 1
                for k in range(n + 1):
                    diff = np.abs(marginal_from_table(tp, n, x, k) - marginal_from_table(tn, n, x, k))
                    worst = max(worst, float(diff.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    report("1", ok, f"max entrywise gap {worst:.2e} (tol 1e-10) over {compared} (p, n, x) bridges, "
                    f"{incompatible} incompatible endpoints rejected by both laws; {elapsed:.1f} s (limit 10 s)")
    assert ok


# ----------------------------------------------------------------------
# 2. exact sampler oracle and rejection agreement
# ----------------------------------------------------------------------
def _joint_codes(inc: np.ndarray) -> np.ndarray:
    half = inc[:, : inc.shape[1] // 2].sum(axis=1)
    return half * 1000 + inc.max(axis=1)


def test_criterion_02_exact_sampler_oracle(report):
    t0 = time.perf_counter()
    suites = [verify_bridges_exhaustive(w, 10, 6, tol=1e-12)
              for w in (Geometric(0.5, 0.5), Tabulated((1.0, 0.4, 2.5, 0.0, 1.0)))]
    exact_ok = all(s.ok for s in suites)

    w = Geometric(0.5, 0.5)
    n, x, draws = 20, 10, 100_000
    rng = np.random.default_rng(7)
    a = _joint_codes(BridgeSampler(w, n, x, "dp").sample_increments(draws, rng))
    b = _joint_codes(RejectionSampler(w, n, x).sample_increments(draws, rng)[0])
    ca, cb = Counter(a.tolist()), Counter(b.tolist())
    keys = sorted(set(ca) | set(cb))
    table = np.array([[ca.get(k, 0) for k in keys], [cb.get(k, 0) for k in keys]], dtype=float)
    # pool sparse categories so every expected count is at least 5
    small = table.sum(axis=0) < 10
    table = np.column_stack([table[:, ~small], table[:, small].sum(axis=1)]) if small.any() else table
    pvalue = float(stats.chi2_contingency(table)[1])
    elapsed = time.perf_counter() - t0
    ok = exact_ok and pvalue > 0.01 and elapsed < 60
    gaps = ", ".join(s.detail for s in suites)
    report("2", ok, f"product-form {gaps} over {sum(s.cases for s in suites)} cases; "
                    f"rejection vs exact chi-square p = {pvalue:.3f}; {elapsed:.1f} s")
    assert ok


# ----------------------------------------------------------------------
# 3. local limit theorem discrepancies
# ----------------------------------------------------------------------
def test_criterion_03_llt_convergence(report):
    t0 = time.perf_counter()
    base = json.loads((DATA / "llt_baseline.json").read_text())["cases"]
    cases = {
        "bulk": (Geometric(0.5, 0.5), lambda n: n // 2, "Bulk"),
        "small": (Geometric(0.5, 0.5), lambda n: math.isqrt(n), "SmallEndpoint"),
        "large": (UniformMapStep(), lambda n: math.ceil(n**1.5), "LargeEndpoint"),
    }
    ok = True
    parts = []
    for name, (w, rule, kind) in cases.items():
        errs = [llt_discrepancy(w, n, rule(n), kind=kind).sup_error for n in (50, 100, 200)]
        dec = errs[0] > errs[1] > errs[2]
        below = errs[2] <= base[name]["sup_error"]
        ok &= dec and below
        parts.append(f"{name} " + "/".join(f"{e:.5f}" for e in errs) + f" (baseline {base[name]['sup_error']})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    report("3", ok, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert ok


# ----------------------------------------------------------------------
# 4. sum of squares constants for bridges
# ----------------------------------------------------------------------
N4, REPS4 = 2000, 10_000


def _bridge_sum_sq_mean(w, n, x, kind, seed):
    inc = BridgeSampler(w, n, x).sample_increments(REPS4, np.random.default_rng(seed))
    regime = classify_regime(w, n, x, kind=kind)
    norm, _ = sum_sq_limit(w, regime)
    r = _sum_sq(inc) / norm
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size)), regime


def test_criterion_04_sum_sq_constants(report):
    t0 = time.perf_counter()
    n = N4
    geo = Geometric(0.5, 0.5)
    mean_i, se_i, reg = _bridge_sum_sq_mean(geo, n, n // 2, "Bulk", 41)
    d = eval_derivatives(geo, reg.b_n, 2) + [math.nan] * 2
    m1, m2, _, _ = moments_from_derivatives(d, reg.b_n)
    var = m2 - m1 * m1
    stated_i = m1 / var
    mean_ii, se_ii, _ = _bridge_sum_sq_mean(geo, n, math.isqrt(n), "SmallEndpoint", 42)
    mean_iii, se_iii, _ = _bridge_sum_sq_mean(UniformMapStep(), n, math.ceil(n**1.8), "LargeEndpoint", 43)
    checks = [
        ("(i)", mean_i, stated_i),
        ("(ii)", mean_ii, 1.0),
        ("(iii)", mean_iii, 1.5),
    ]
    elapsed = time.perf_counter() - t0
    ok = all(abs(m / c - 1) <= 0.05 for _, m, c in checks) and elapsed < 600
    detail = "; ".join(f"{k} MC {m:.4f} vs {c:.4f} ({100 * (m / c - 1):+.1f}%)" for k, m, c in checks)
    report("4", ok, detail + f"; {elapsed:.0f} s")
    assert ok


def test_criterion_04_bulk_constant_corrected(report):
    """Bulk regime with the constant 1 + m^2/sigma^2 that the sum of squares actually approaches."""
    n = N4
    geo = Geometric(0.5, 0.5)
    mean, se, reg = _bridge_sum_sq_mean(geo, n, n // 2, "Bulk", 41)
    _, const = sum_sq_limit(geo, reg)
    ok = abs(mean / const - 1) <= 0.05
    report("4(i) corrected", ok, f"MC {mean:.4f} +- {se:.4f} vs 1 + m^2/sigma^2 = {const:.4f}")
    assert ok


# ----------------------------------------------------------------------
# 5. Brownian bridge marginals
# ----------------------------------------------------------------------
def test_criterion_05_brownian_marginals(report):
    t0 = time.perf_counter()
    w, n = Geometric(0.5, 0.5), 2000
    x = n // 2
    inc = BridgeSampler(w, n, x).sample_increments(10_000, np.random.default_rng(5))
    v = classify_regime(w, n, x).v_n ** 2
    rep = check_brownian_marginals(batch_stats(inc, x)["marginal_devs"], v)
    elapsed = time.perf_counter() - t0
    ok = rep.max_rel_error <= 0.10 and elapsed < 600
    ratios = " ".join(f"{r:.4f}" for r in rep.var_ratio)
    report("5", ok, f"variance ratios {ratios}; max relative error {rep.max_rel_error:.3f}; {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 6. condensation
# ----------------------------------------------------------------------
def test_criterion_06_condensation(report):
    t0 = time.perf_counter()
    w = StableExample(1.5)
    n = 10_000
    x = int(round(w.stable.m * n)) + math.ceil(n**0.9)
    inc = BridgeSampler(w, n, x).sample_increments(1000, np.random.default_rng(6))
    st = batch_stats(inc, x, t_grid=(0.5,))
    rep = condensation_report(st["max_inc"], st["sum_sq"], st["argmax"], n)
    elapsed = time.perf_counter() - t0
    ok = rep.mean_ratio >= 0.9 and rep.chi2_pvalue > 0.01 and elapsed < 300
    report("6", ok, f"x_n = {x}, mean max^2/sum = {rep.mean_ratio:.4f}, argmax chi-square p = {rep.chi2_pvalue:.3f}; "
                    f"{elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 7. tree sampler against enumeration
# ----------------------------------------------------------------------
def test_criterion_07_tree_sampler_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    parts = []
    ok = True
    for name in ("binary", "uniform-tree", "map-induced"):
        theta = from_descriptor(name)
        stat, dof, cases = 0.0, 0, 0
        for n in range(1, 8):
            for K in range(1, n + 1):
                if len(tree_law(theta, n, K)) < 2:
                    continue
                s, d, _ = chi_square_tree_sampler(theta, n, K, 1_000_000, rng)
                stat, dof, cases = stat + s, dof + d, cases + 1
        p = combined_pvalue(stat, dof)
        ok &= p > 0.01
        parts.append(f"{name} chi2 {stat:.1f} on {dof} dof over {cases} (n, K), p = {p:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    report("7", ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 8. sum of squares constants for Lukasiewicz paths
# ----------------------------------------------------------------------
def test_criterion_08_lukasiewicz_constants(report):
    t0 = time.perf_counter()
    n, reps = 2000, 10_000
    rng = np.random.default_rng(8)
    theta_i, K_i = Geometric(1.0, 1.0), n // 2
    r_i = _sum_sq(TreeSampler(theta_i, n, K_i).sample_increments(reps, rng)) / luka_scale(theta_i, n, K_i, "bulk")
    theta_iii = MapInduced(None)
    K_iii = n - math.ceil(n**0.6)
    r_iii = _sum_sq(TreeSampler(theta_iii, n, K_iii).sample_increments(reps, rng)) / luka_scale(
        theta_iii, n, K_iii, "large")
    m_i, m_iii = float(r_i.mean()), float(r_iii.mean())
    elapsed = time.perf_counter() - t0
    ok = abs(m_i - 1) <= 0.10 and abs(m_iii - 1) <= 0.10 and elapsed < 600
    report("8", ok, f"(i) uniform-tree K = n/2: {m_i:.4f}; (iii) map-induced n - K = {n - K_iii}: {m_iii:.4f} "
                    f"(target 1 within 10%); {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 9. map bijection
# ----------------------------------------------------------------------
def test_criterion_09_map_bijection(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    sizes = [(int(n), int(rng.integers(1, n))) for n in rng.integers(2, 300, size=150)]
    big = 10_001
    sizes += [(big, big // 3), (big, big // 2), (big, 2 * big // 3), (big, 100), (big, big - 100)]
    sizes += [(big, int(rng.integers(1, big))) for _ in range(5)]
    failures = []
    for n, K in sizes:
        lt, m = sample_labelled_map(None, n, K, rng)
        res = verify_correspondence(lt, m)
        rep = map_report(lt, m)
        if not res.ok or rep.sigma2 != rep.sum_sq - 1:
            failures.append((n, K, res.first_failure, res.detail, rep.sigma2, rep.sum_sq))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    report("9", ok, f"{len(sizes)} maps (largest {big - 1} edges), failures {failures[:3]}; {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 10. S(x) values and limits
# ----------------------------------------------------------------------
def test_criterion_10_scaling_function(report):
    t0 = time.perf_counter()
    exact = scaling_S(Fraction(2, 3)) == Fraction(2, 9)
    x = 1e-6
    small = scaling_S(x) * 2 * x
    large = scaling_S(1 - x) / x
    err_small = abs(small - 1.0)
    err_large = abs(large * 3 - 1.0)
    elapsed = time.perf_counter() - t0
    ok = exact and err_small <= 1e-4 and err_large <= 1e-4 and elapsed < 1
    report("10", ok, f"S(2/3) = {scaling_S(Fraction(2, 3))}; at x = 1e-6: S(x)2x rel err {err_small:.2e}, "
                     f"S(1-x)/x rel err {err_large:.2e} (tol 1e-4)")
    assert ok


# ----------------------------------------------------------------------
# 11. distance scaling of uniform maps
# ----------------------------------------------------------------------
def _mean_distance(grid, rule, reps, seed):
    cfg = ExperimentConfig(name="fg", kind="map", family="uniform", rule=rule, n_grid=grid, replicas=reps,
                           seed=seed, statistics=["mean_distance", "rescaled_distance"])
    res = run(cfg)
    if res.failures:
        raise BicondError(str(res.failures))
    return res


def test_criterion_11_distance_scaling(report):
    t0 = time.perf_counter()
    n = 4000
    a = _mean_distance([n], "floor(n/3)", 500, 111).lookup(n, "mean_distance").estimate
    b = _mean_distance([n], "floor(2n/3)", 500, 112).lookup(n, "mean_distance").estimate
    ra, rb = a * distance_scale(n, n // 3), b * distance_scale(n, 2 * n // 3)
    gap = abs(ra - rb) / min(ra, rb)
    grid = [1000, 2000, 4000, 8000]
    res = _mean_distance(grid, "floor(n/3)", 500, 113)
    slope, r2 = fit_exponent([(m, res.lookup(m, "mean_distance").estimate) for m in grid])
    elapsed = time.perf_counter() - t0
    ok = gap <= 0.15 and abs(slope - 0.25) <= 0.04 and elapsed < 1800
    report("11", ok, f"rescaled mean distance {ra:.4f} (K = n/3) vs {rb:.4f} (K = 2n/3), gap {100 * gap:.1f}%; "
                     f"slope {slope:.4f} (r^2 {r2:.4f}); {elapsed:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 12. urn process
# ----------------------------------------------------------------------
def test_criterion_12_urn_variance(report):
    t0 = time.perf_counter()
    n = 10_000
    K, t, reps = n // 3, n // 2, 100_000
    L = sample_subset_counts(n, K, t, reps, np.random.default_rng(12)).astype(float)
    target = t * K * (n - K) * (n - t) / (n * n * (n - 1))
    var = float(L.var(ddof=1))
    dev = L - L.mean()
    m4 = float(np.mean(dev**4))
    se = math.sqrt((m4 - var**2 * (reps - 3) / (reps - 1)) / reps)
    z = abs(var - target) / se
    elapsed = time.perf_counter() - t0
    ok = z <= 3 and elapsed < 60
    report("12", ok, f"Var L_(n/2) = {var:.3f} vs hypergeometric {target:.3f}, {z:.2f} stderr; {elapsed:.1f} s")
    assert ok
