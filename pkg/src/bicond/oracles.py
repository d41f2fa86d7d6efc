"""Brute-force enumeration oracles for small instances.

Everything here enumerates exhaustively and is only meant for n up to about
10; the results are exact laws to compare the samplers against.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bridge import BridgeSampler
from .errors import BicondError
from .genfun import WeightSequence
from .labels import LabelledTree
from .lukas import PlaneTree, TreeSampler, compose_bridge, vervaat
from .mapbij import build_map, verify_correspondence


def enumerate_compositions(n: int, x: int):
    """All (d_1, ..., d_n) of nonnegative integers summing to x."""
    if n == 0:
        if x == 0:
            yield ()
        return
    for bars in itertools.combinations(range(x + n - 1), n - 1):
        edges = (-1,) + bars + (x + n - 1,)
        yield tuple(edges[i + 1] - edges[i] - 1 for i in range(n))


def bridge_law(w: WeightSequence, n: int, x: int) -> dict:
    """Exact law of the bridge: path -> prod w(d_i) / Z_n(x)."""
    lw = w.log_weights(x)
    weights = {}
    for path in enumerate_compositions(n, x):
        lp = float(sum(lw[d] for d in path))
        if lp > -math.inf:
            weights[path] = lp
    if not weights:
        return {}
    top = max(weights.values())
    tot = sum(math.exp(v - top) for v in weights.values())
    return {p: math.exp(v - top) / tot for p, v in weights.items()}


def check_bridge_sampler(w: WeightSequence, n: int, x: int, method: str = "dp") -> float:
    """Largest gap between the sampler's product-form path probabilities and the exact law."""
    law = bridge_law(w, n, x)
    if not law:
        return 0.0
    sampler = BridgeSampler(w, n, x, method)
    return max(abs(sampler.path_probability(p) - q) for p, q in law.items())


def enumerate_trees(n: int, K: int | None = None):
    """Children sequences (DFS order) of all plane trees with n vertices (and K leaves)."""
    def rec(prefix, height, leaves):
        left = n - len(prefix)
        if left == 0:
            if height == -1:
                yield tuple(prefix)
            return
        if height < 0 or height + 1 > left:
            return
        for c in range(0, left):
            nl = leaves + (c == 0)
            if K is not None and nl > K:
                continue
            prefix.append(c)
            yield from rec(prefix, height + c - 1, nl)
            prefix.pop()

    for t in rec([], 0, 0):
        if K is None or t.count(0) == K:
            yield t


def tree_law(theta: WeightSequence, n: int, K: int) -> dict:
    """Exact law P^theta_{n,K}: tree -> prod theta(k_u) / normaliser."""
    lw = theta.log_weights(n)
    weights = {}
    for t in enumerate_trees(n, K):
        lp = float(sum(lw[c] for c in t))
        if lp > -math.inf:
            weights[t] = lp
    if not weights:
        return {}
    top = max(weights.values())
    tot = sum(math.exp(v - top) for v in weights.values())
    return {t: math.exp(v - top) / tot for t, v in weights.items()}


def composed_tree_law(theta: WeightSequence, n: int, K: int) -> dict:
    """Exact law produced by bridge + uniform subset + cyclic shift, by enumeration."""
    m = n - K
    bl = bridge_law(theta.shifted(), m, K - 1) if m > 0 else {(): 1.0}
    subsets = list(itertools.combinations(range(n), K))
    out: dict = defaultdict(float)
    for path, p in bl.items():
        for sub in subsets:
            flags = np.zeros(n, dtype=np.int64)
            flags[list(sub)] = 1
            w = compose_bridge(np.array(path, dtype=np.int64), flags)
            t = tuple(int(v) + 1 for v in vervaat(w).increments)
            out[t] += p / len(subsets)
    return dict(out)


def chi_square_tree_sampler(theta: WeightSequence, n: int, K: int, draws: int, rng: np.random.Generator):
    """(statistic, dof, observed counts) of sampled trees against the exact law."""
    law = tree_law(theta, n, K)
    keys = list(law)
    index = {k: i for i, k in enumerate(keys)}
    paths = TreeSampler(theta, n, K).sample_increments(draws, rng)
    codes = paths + 1
    counts = np.zeros(len(keys), dtype=np.int64)
    uniq, cnt = np.unique(codes, axis=0, return_counts=True)
    for row, c in zip(uniq, cnt):
        t = tuple(int(v) for v in row)
        if t not in index:
            raise AssertionError(f"sampler produced tree {t} outside the support")
        counts[index[t]] += c
    expected = draws * np.array([law[k] for k in keys])
    if len(keys) == 1:
        return 0.0, 0, counts
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return stat, len(keys) - 1, counts


def combined_pvalue(stat: float, dof: int) -> float:
    return float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0


def enumerate_labellings(tree: PlaneTree):
    """All well-labellings of ``tree`` (one label bridge per internal vertex)."""
    internal = [u for u in range(tree.n) if tree.children[u] > 0]
    per_vertex = []
    for u in internal:
        k = int(tree.children[u])
        per_vertex.append(list(enumerate_compositions(k, k)))
    for choice in itertools.product(*per_vertex):
        labels = np.zeros(tree.n, dtype=np.int64)
        parts = dict(zip(internal, choice))
        for u in internal:  # DFS order: parents are labelled before children
            lab = labels[u]
            for c, y in zip(tree.child_list(u), parts[u]):
                lab += y - 1
                labels[c] = lab
        yield labels


@dataclass(frozen=True)
class SuiteResult:
    name: str
    cases: int
    ok: bool
    detail: str = ""


def verify_maps_exhaustive(theta: WeightSequence, max_n: int) -> SuiteResult:
    """Build every labelled tree with 2 <= n <= max_n and positive weight; check all properties."""
    lw = theta.log_weights(max_n)
    cases = 0
    for n in range(2, max_n + 1):
        for t in enumerate_trees(n):
            if any(lw[c] == -math.inf for c in t):
                continue
            tree = PlaneTree(np.array(t))
            for labels in enumerate_labellings(tree):
                lt = LabelledTree(tree, labels)
                res = verify_correspondence(lt, build_map(lt))
                cases += 1
                if not res:
                    return SuiteResult("maps", cases, False, f"tree {t} labels {labels.tolist()}: {res.first_failure}")
    return SuiteResult("maps", cases, True)


def verify_bridges_exhaustive(w: WeightSequence, max_n: int, max_x: int = 6, tol: float = 1e-12) -> SuiteResult:
    cases, worst = 0, 0.0
    for n in range(1, max_n + 1):
        for x in range(0, max_x + 1):
            try:
                gap = check_bridge_sampler(w, n, x)
            except BicondError:
                continue
            cases += 1
            worst = max(worst, gap)
    return SuiteResult("bridges", cases, bool(worst <= tol), f"max gap {worst:.3e}")


def verify_trees_exhaustive(theta: WeightSequence, max_n: int, tol: float = 1e-12) -> SuiteResult:
    cases, worst = 0, 0.0
    for n in range(1, max_n + 1):
        for K in range(1, n + 1):
            law = tree_law(theta, n, K)
            if not law:
                continue
            got = composed_tree_law(theta, n, K)
            keys = set(law) | set(got)
            worst = max(worst, max(abs(law.get(k, 0.0) - got.get(k, 0.0)) for k in keys))
            cases += 1
    return SuiteResult("trees", cases, bool(worst <= tol), f"max gap {worst:.3e}")
