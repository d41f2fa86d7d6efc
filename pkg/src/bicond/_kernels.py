"""Compiled sampling kernels.

All kernels draw randomness from a ``numpy.random.Generator`` passed in by the
caller, so the caller controls substreams and reproducibility.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def dp_step_weight(logZ, logp, k_left, rem, d, tot):
    """P(next step = d | rem still to climb in k_left + 1 steps)."""
    lw = logp[d] + logZ[k_left, rem - d] - tot
    if lw == NEG_INF:
        return 0.0
    return math.exp(lw)


@njit(cache=True)
def dp_sample_into(logZ, logp, n, x, rng, out):
    """Backward sampling from a full table of log partition values.

    Step d at time i is drawn with probability p(d) Z_{n-i}(rem-d)/Z_{n-i+1}(rem),
    scanning d upward from 0; the expected work per step is O(1 + d).
    """
    rem = x
    for i in range(n):
        k = n - i - 1
        tot = logZ[k + 1, rem]
        u = rng.random()
        acc = 0.0
        chosen = -1
        last = -1
        for d in range(rem + 1):
            pd = dp_step_weight(logZ, logp, k, rem, d, tot)
            if pd > 0.0:
                acc += pd
                last = d
                if acc >= u:
                    chosen = d
                    break
        if chosen < 0:
            chosen = last
        out[i] = chosen
        rem -= chosen


@njit(cache=True)
def dp_sample_batch(logZ, logp, n, x, reps, rng):
    out = np.empty((reps, n), dtype=np.int64)
    for r in range(reps):
        dp_sample_into(logZ, logp, n, x, rng, out[r])
    return out


@njit(cache=True)
def _split_two_pass(t1, t2, y, jlo, jhi, u):
    total = 0.0
    for j in range(jlo, jhi + 1):
        total += t1[j] * t2[y - j]
    target = u * total
    acc = 0.0
    last = jlo
    for j in range(jlo, jhi + 1):
        wj = t1[j] * t2[y - j]
        if wj > 0.0:
            acc += wj
            last = j
            if acc >= target:
                return j
    return last


@njit(cache=True)
def split_sample_into(tabs, scale, lo, hi, size, child1, child2, root, x, rng, out):
    """Divide-and-conquer bridge sampling.

    ``tabs[s]`` holds the law of the sum of size[s] steps up to the factor
    ``scale[s]``, and tabs[s] * scale[s] is the convolution of the two child
    tables.  A block of m steps with total y is split into halves m1 + m2,
    the first half's total j being drawn with probability proportional to
    tabs[c1][j] * tabs[c2][y - j]; the normaliser is tabs[s][y] * scale[s].
    Candidates are visited outward from the proportional split y m1/m, so the
    work per node is of the order of the spread of j.  If rounding in the
    stored normaliser leaves the target unreached, a fresh uniform is drawn
    and the split is resampled with an explicitly summed normaliser.
    """
    stack_s = np.empty(256, dtype=np.int64)
    stack_y = np.empty(256, dtype=np.int64)
    stack_o = np.empty(256, dtype=np.int64)
    stack_s[0] = root
    stack_y[0] = x
    stack_o[0] = 0
    top = 1
    while top > 0:
        top -= 1
        s = stack_s[top]
        y = stack_y[top]
        off = stack_o[top]
        if size[s] == 1:
            out[off] = y
            continue
        s1 = child1[s]
        s2 = child2[s]
        jlo = max(lo[s1], y - hi[s2])
        jhi = min(hi[s1], y - lo[s2])
        t1 = tabs[s1]
        t2 = tabs[s2]
        target = rng.random() * tabs[s, y] * scale[s]
        j0 = (y * size[s1]) // size[s]
        if j0 < jlo:
            j0 = jlo
        if j0 > jhi:
            j0 = jhi
        acc = 0.0
        chosen = -1
        a = j0
        b = j0 + 1
        while a >= jlo or b <= jhi:
            if a >= jlo:
                acc += t1[a] * t2[y - a]
                if acc >= target and t1[a] * t2[y - a] > 0.0:
                    chosen = a
                    break
                a -= 1
            if b <= jhi:
                acc += t1[b] * t2[y - b]
                if acc >= target and t1[b] * t2[y - b] > 0.0:
                    chosen = b
                    break
                b += 1
        if chosen < 0:
            chosen = _split_two_pass(t1, t2, y, jlo, jhi, rng.random())
        stack_s[top] = s1
        stack_y[top] = chosen
        stack_o[top] = off
        top += 1
        stack_s[top] = s2
        stack_y[top] = y - chosen
        stack_o[top] = off + size[s1]
        top += 1


@njit(cache=True)
def split_sample_batch(tabs, scale, lo, hi, size, child1, child2, root, n, x, reps, rng):
    out = np.empty((reps, n), dtype=np.int64)
    for r in range(reps):
        split_sample_into(tabs, scale, lo, hi, size, child1, child2, root, x, rng, out[r])
    return out


@njit(cache=True)
def subset_flags_into(perm, k, rng, flags):
    """Partial Fisher-Yates on ``perm`` (any permutation of 0..n-1).

    The first k entries of ``perm`` become a uniform k-subset; ``flags`` is
    filled with the 0/1 indicator of that subset.  ``perm`` stays a permutation,
    so it can be reused for the next draw without reinitialisation.
    """
    n = perm.size
    for i in range(k):
        j = i + int(rng.random() * (n - i))
        if j >= n:
            j = n - 1
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    flags[:] = 0
    for i in range(k):
        flags[perm[i]] = 1


@njit(cache=True)
def subset_prefix_counts(n, k, t, reps, rng):
    """L_t = number of chosen positions among the first t, for reps uniform k-subsets."""
    perm = np.arange(n)
    out = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        for i in range(k):
            j = i + int(rng.random() * (n - i))
            if j >= n:
                j = n - 1
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        c = 0
        for i in range(k):
            if perm[i] < t:
                c += 1
        out[r] = c
    return out


@njit(cache=True)
def compose_into(s_inc, flags, out):
    """W increments: -1 at flagged times, the next bridge increment otherwise."""
    j = 0
    for i in range(flags.size):
        if flags[i] == 1:
            out[i] = -1
        else:
            out[i] = s_inc[j]
            j += 1


@njit(cache=True)
def first_min_shift(inc):
    """1-based index of the first time the partial sums reach their minimum."""
    s = 0
    best = 1
    mn = 1 << 62
    for i in range(inc.size):
        s += inc[i]
        if s < mn:
            mn = s
            best = i + 1
    return best


@njit(cache=True)
def vervaat_into(inc, out):
    n = inc.size
    shift = first_min_shift(inc) % n
    for i in range(n):
        out[i] = inc[(i + shift) % n]
    return shift


@njit(cache=True)
def luka_batch_dp(logZ, logp, n, K, reps, rng):
    """Excursion-form Lukasiewicz paths, drawn via bridge + uniform subset + Vervaat."""
    m = n - K
    out = np.empty((reps, n), dtype=np.int64)
    s_inc = np.empty(m, dtype=np.int64)
    flags = np.empty(n, dtype=np.int64)
    perm = np.arange(n)
    w = np.empty(n, dtype=np.int64)
    for r in range(reps):
        if m > 0:
            dp_sample_into(logZ, logp, m, K - 1, rng, s_inc)
        subset_flags_into(perm, K, rng, flags)
        compose_into(s_inc, flags, w)
        vervaat_into(w, out[r])
    return out


@njit(cache=True)
def luka_batch_split(tabs, scale, lo, hi, size, child1, child2, root, n, K, reps, rng):
    m = n - K
    out = np.empty((reps, n), dtype=np.int64)
    s_inc = np.empty(m, dtype=np.int64)
    flags = np.empty(n, dtype=np.int64)
    perm = np.arange(n)
    w = np.empty(n, dtype=np.int64)
    for r in range(reps):
        if m > 0:
            split_sample_into(tabs, scale, lo, hi, size, child1, child2, root, K - 1, rng, s_inc)
        subset_flags_into(perm, K, rng, flags)
        compose_into(s_inc, flags, w)
        vervaat_into(w, out[r])
    return out


@njit(cache=True)
def tree_links(children):
    """Parent, first child and subtree size from children counts in DFS order."""
    n = children.size
    parent = np.empty(n, dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    left = np.empty(n + 1, dtype=np.int64)
    top = 0
    parent[0] = -1
    if children[0] > 0:
        stack[0] = 0
        left[0] = children[0]
        top = 1
    for v in range(1, n):
        p = stack[top - 1]
        parent[v] = p
        left[top - 1] -= 1
        if left[top - 1] == 0:
            top -= 1
        if children[v] > 0:
            stack[top] = v
            left[top] = children[v]
            top += 1
    first_child = np.full(n, -1, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    for v in range(n - 1, 0, -1):
        first_child[parent[v]] = v
        size[parent[v]] += size[v]
    return parent, first_child, size


@njit(cache=True)
def label_tree_into(children, first_child, size, rng, labels):
    """Uniform well-labelling: one independent label bridge per internal vertex.

    For a vertex u with k children, a uniform (k-1)-subset of 2k-1 slots marks
    the bars of a composition of k into k nonnegative parts y_1..y_k.  Child i
    gets label l(u) + (y_1 - 1) + ... + (y_i - 1), so the last child carries
    l(u) and every step along (u, c_1, ..., c_k) is at least -1.
    """
    n = children.size
    slots = np.empty(2 * n + 2, dtype=np.int64)
    bars = np.zeros(2 * n + 2, dtype=np.int64)
    labels[0] = 0
    for u in range(n):
        k = children[u]
        if k == 0:
            continue
        m = 2 * k - 1
        for i in range(m):
            slots[i] = i
        for i in range(k - 1):
            j = i + int(rng.random() * (m - i))
            if j >= m:
                j = m - 1
            t = slots[i]
            slots[i] = slots[j]
            slots[j] = t
        for i in range(m):
            bars[i] = 0
        for i in range(k - 1):
            bars[slots[i]] = 1
        c = first_child[u]
        lab = labels[u]
        run = 0
        for i in range(m):
            if bars[i] == 1:
                lab += run - 1
                labels[c] = lab
                c += size[c]
                run = 0
            else:
                run += 1
        labels[c] = lab + run - 1
