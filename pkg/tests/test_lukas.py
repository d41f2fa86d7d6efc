from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bicond.errors import InvalidExcursion, LengthMismatch, ValidationError
from bicond.genfun import Geometric, MapInduced, from_descriptor
from bicond.lukas import (
    LukasPath,
    PlaneTree,
    TreeSampler,
    compose_bridge,
    decode_tree,
    encode_tree,
    luka_scale,
    luka_stats,
    sample_subset_counts,
    sample_subset_path,
    sample_tree,
    vervaat,
)
from bicond.oracles import enumerate_trees


def test_subset_path_extremes():
    rng = np.random.default_rng(0)
    assert sample_subset_path(7, 7, rng).tolist() == [1] * 7
    assert sample_subset_path(7, 0, rng).tolist() == [0] * 7
    assert sample_subset_path(50, 17, rng).sum() == 17


def test_subset_counts_hypergeometric_moments():
    n, K, t = 600, 200, 300
    L = sample_subset_counts(n, K, t, 50_000, np.random.default_rng(1))
    var = t * (K / n) * (1 - K / n) * (n - t) / (n - 1)
    assert abs(L.mean() - K / 2) < 4 * np.sqrt(var / L.size)
    assert L.var(ddof=1) == pytest.approx(var, rel=0.03)


def test_compose_by_hand():
    w = compose_bridge(np.array([1]), np.array([0, 1, 1]))
    assert w.values.tolist() == [0, 1, 0, -1]
    assert w.increments.tolist() == [1, -1, -1]


def test_compose_length_checks():
    with pytest.raises(LengthMismatch):
        compose_bridge(np.array([1, 0]), np.array([0, 1, 1]))
    with pytest.raises(LengthMismatch):
        compose_bridge(np.array([2]), np.array([0, 1, 1]))
    with pytest.raises(LengthMismatch):
        compose_bridge(np.array([], dtype=np.int64), np.array([1, 1, 1]))
    assert compose_bridge(np.array([], dtype=np.int64), np.array([1])).increments.tolist() == [-1]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.data())
def test_compose_increment_multiset(n, data):
    K = data.draw(st.integers(1, n))
    if K == n and n > 1:
        K = n - 1
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    parts = rng.multinomial(K - 1, np.ones(n - K) / (n - K)) if n > K else np.array([], dtype=np.int64)
    flags = sample_subset_path(n, K, rng)
    w = compose_bridge(parts, flags)
    assert sorted(w.increments.tolist()) == sorted([-1] * K + parts.tolist())
    assert w.values[-1] == -1


def test_vervaat_examples():
    assert vervaat(LukasPath(np.array([-1, 1, -1]))).increments.tolist() == [1, -1, -1]
    assert vervaat(np.array([1, -1, -1])).increments.tolist() == [1, -1, -1]
    with pytest.raises(ValidationError):
        vervaat(np.array([-1, 1]))


def test_vervaat_moves_payload():
    out = vervaat(LukasPath(np.array([-1, 1, -1]), payload=np.array([10, 20, 30])))
    assert out.payload.tolist() == [20, 30, 10]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1, 4), min_size=1, max_size=40))
def test_vervaat_gives_excursion(steps):
    total = sum(steps)
    steps = steps + [-1] * (total + 1) if total >= 0 else steps
    if sum(steps) != -1:
        return
    out = vervaat(np.array(steps))
    assert out.is_excursion()
    assert sorted(out.increments.tolist()) == sorted(steps)


def test_decode_examples():
    t = decode_tree(np.array([1, -1, -1]))
    assert t.children.tolist() == [2, 0, 0]
    assert decode_tree(np.array([-1])).n == 1
    with pytest.raises(InvalidExcursion):
        decode_tree(np.array([-1, 1, -1]))


def test_plane_tree_links():
    t = PlaneTree(np.array([3, 0, 2, 0, 0, 0]))
    assert t.parent.tolist()[1:] == [0, 0, 2, 2, 0]
    assert t.child_list(0) == [1, 2, 5]
    assert t.child_list(2) == [3, 4]
    assert t.last_child[0] == 5 and t.last_child[2] == 4
    assert t.subtree_size.tolist() == [6, 1, 3, 1, 1, 1]
    assert t.K == 4
    assert PlaneTree.from_json(t.to_json()).children.tolist() == t.children.tolist()


def test_round_trip_on_samples():
    rng = np.random.default_rng(2)
    theta = Geometric(1.0, 1.0)
    for _ in range(50):
        t = sample_tree(theta, 40, 15, rng)
        assert t.K == 15 and t.n == 40
        assert decode_tree(encode_tree(t)).children.tolist() == t.children.tolist()


def test_binary_five_vertices_uniform():
    theta = from_descriptor("binary")
    keys = [t for t in enumerate_trees(5, 3) if set(t) <= {0, 2}]
    assert len(keys) == 2
    inc = TreeSampler(theta, 5, 3).sample_increments(20_000, np.random.default_rng(3))
    counts = Counter(tuple((row + 1).tolist()) for row in inc)
    assert set(counts) == set(keys)
    assert stats.chisquare([counts[k] for k in keys]).pvalue > 0.001


@pytest.mark.parametrize("method", ["dp", "split"])
def test_leaf_count_exact(method):
    theta = MapInduced(None)
    s = TreeSampler(theta, 300, 120, method)
    inc = s.sample_increments(200, np.random.default_rng(4))
    assert np.all((inc == -1).sum(axis=1) == 120)
    vals = np.cumsum(inc, axis=1)
    assert np.all(vals[:, -1] == -1) and np.all(vals[:, :-1] >= 0)


def test_bad_sizes():
    with pytest.raises(ValidationError):
        TreeSampler(Geometric(1.0, 1.0), 5, 5)
    with pytest.raises(ValidationError):
        TreeSampler(Geometric(1.0, 1.0), 5, 0)
    assert TreeSampler(Geometric(1.0, 1.0), 1, 1).sample(np.random.default_rng(0)).n == 1


def test_luka_stats():
    p = LukasPath(np.array([2, -1, 1, -1, -1, -1]))
    s = luka_stats(p, v_n=4.0)
    assert s.max_inc == 2 and s.sum_sq == 4 + 1 + 1 + 1 + 1 + 1
    assert s.sup == 2 and s.rescaled_sup == 1.0
    assert s.Lambda.tolist() == [0, 0, 1, 1, 2, 3, 4]
    assert s.max_ratio == pytest.approx(4 / 9)


def test_luka_scale_kinds():
    theta = Geometric(1.0, 1.0)
    assert luka_scale(theta, 100, 10, "small") == 20.0
    assert luka_scale(MapInduced(None), 100, 90, "large") == pytest.approx(3 * 100**2 / 10)
    # uniform plane trees at K = n/2: b F'' / F' = 2b/(1-b) with b = 1/2
    assert luka_scale(theta, 100, 50, "bulk") == pytest.approx(200.0)
    with pytest.raises(ValidationError):
        luka_scale(theta, 100, 50, "medium")
