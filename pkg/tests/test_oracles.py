from __future__ import annotations

import math

import numpy as np
import pytest

from bicond.genfun import Geometric, MapInduced, Tabulated, from_descriptor
from bicond.lukas import PlaneTree
from bicond.oracles import (
    bridge_law,
    chi_square_tree_sampler,
    combined_pvalue,
    composed_tree_law,
    enumerate_compositions,
    enumerate_labellings,
    enumerate_trees,
    tree_law,
    verify_bridges_exhaustive,
    verify_trees_exhaustive,
)


def test_composition_counts():
    for n in range(1, 7):
        for x in range(0, 7):
            assert sum(1 for _ in enumerate_compositions(n, x)) == math.comb(x + n - 1, n - 1)
    assert list(enumerate_compositions(0, 0)) == [()]
    assert list(enumerate_compositions(0, 2)) == []


def test_catalan_counts():
    for n in range(1, 9):
        assert sum(1 for _ in enumerate_trees(n)) == math.comb(2 * n - 2, n - 1) // n


def test_narayana_counts():
    n = 7
    for K in range(1, n):
        narayana = math.comb(n - 1, K) * math.comb(n - 1, K - 1) // (n - 1)
        assert sum(1 for _ in enumerate_trees(n, K)) == narayana


def test_bridge_law_normalised():
    law = bridge_law(Tabulated((1.0, 2.0, 3.0)), 4, 5)
    assert sum(law.values()) == pytest.approx(1.0)


@pytest.mark.parametrize("theta", [from_descriptor("binary"), Geometric(1.0, 1.0), MapInduced(None)],
                         ids=["binary", "uniform-tree", "map-induced"])
def test_composed_law_equals_tree_law(theta):
    assert verify_trees_exhaustive(theta, 6).ok


def test_bridges_exhaustive():
    res = verify_bridges_exhaustive(Geometric(0.5, 0.5), 6)
    assert res.ok, res.detail


def test_labelling_counts():
    tree = PlaneTree(np.array([3, 0, 2, 0, 0, 0]))
    assert sum(1 for _ in enumerate_labellings(tree)) == math.comb(5, 2) * math.comb(3, 1)


def test_chi_square_small():
    theta = Geometric(1.0, 1.0)
    stat, dof, counts = chi_square_tree_sampler(theta, 6, 3, 20_000, np.random.default_rng(0))
    assert dof == len(tree_law(theta, 6, 3)) - 1
    assert counts.sum() == 20_000
    assert combined_pvalue(stat, dof) > 0.001
    assert combined_pvalue(0.0, 0) == 1.0


def test_law_matches_composition_single_case():
    theta = MapInduced(None)
    a, b = tree_law(theta, 5, 3), composed_tree_law(theta, 5, 3)
    assert set(a) == set(b)
    assert max(abs(a[k] - b[k]) for k in a) < 1e-14
