from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from bicond.bridge import (
    BridgePath,
    BridgeSampler,
    RejectionSampler,
    batch_stats,
    bridge_stats,
    check_brownian_marginals,
    condensation_report,
    sample_exact,
    sample_rejection,
    sum_sq_limit,
)
from bicond.errors import IncompatibleEndpoint, MaxTriesExceeded, ValidationError
from bicond.genfun import BernoulliStep, Geometric, StableExample, Tabulated, UniformMapStep, classify_regime
from bicond.oracles import bridge_law, check_bridge_sampler


def test_single_one_step_is_uniform():
    rng = np.random.default_rng(1)
    inc = BridgeSampler(BernoulliStep(), 3, 1).sample_increments(30_000, rng)
    pos = np.argmax(inc, axis=1)
    counts = np.bincount(pos, minlength=3)
    assert stats.chisquare(counts).pvalue > 0.001


def test_one_step_bridge():
    rng = np.random.default_rng(2)
    for method in ("dp", "split"):
        assert sample_exact(Geometric(0.5, 0.5), 1, 7, rng, method).increments.tolist() == [7]


def test_two_point_law_uniform_over_six_paths():
    rng = np.random.default_rng(3)
    inc = BridgeSampler(Tabulated((0.5, 0.5)), 4, 2).sample_increments(60_000, rng)
    counts = Counter(map(tuple, inc.tolist()))
    assert len(counts) == 6
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


@pytest.mark.parametrize("method", ["dp", "split"])
def test_samplers_match_enumeration(method):
    w = Tabulated((1.0, 0.3, 2.0, 0.7))
    n, x = 5, 7
    law = bridge_law(w, n, x)
    draws = 200_000
    inc = BridgeSampler(w, n, x, method).sample_increments(draws, np.random.default_rng(4))
    counts = Counter(map(tuple, inc.tolist()))
    keys = list(law)
    obs = np.array([counts.get(k, 0) for k in keys])
    exp = draws * np.array([law[k] for k in keys])
    assert obs.sum() == draws
    assert stats.chisquare(obs, exp).pvalue > 0.001


def test_product_form_is_exact():
    for w in (Geometric(0.5, 0.5), Tabulated((1.0, 0.0, 3.0, 1.0)), UniformMapStep()):
        for n, x in ((3, 4), (6, 5), (8, 6)):
            assert check_bridge_sampler(w, n, x) <= 1e-12


def test_incompatible_endpoint():
    with pytest.raises(IncompatibleEndpoint):
        BridgeSampler(BernoulliStep(), 3, 4)
    with pytest.raises(IncompatibleEndpoint):
        BridgeSampler(BernoulliStep(), 3, 4, "split")


def test_split_matches_dp_on_large_case():
    w = UniformMapStep()
    n, x = 200, 3000
    rng = np.random.default_rng(5)
    a = BridgeSampler(w, n, x, "dp").sample_increments(4000, rng).max(axis=1)
    b = BridgeSampler(w, n, x, "split").sample_increments(4000, rng).max(axis=1)
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_rejection_deterministic_endpoint():
    w = Tabulated((0.0, 1.0, 1.0))
    path, tries = sample_rejection(w, 6, 6, np.random.default_rng(0), return_tries=True)
    assert path.increments.tolist() == [1] * 6
    assert tries == 1


def test_rejection_max_tries():
    with pytest.raises(MaxTriesExceeded):
        sample_rejection(Geometric(0.5, 0.5), 400, 200, np.random.default_rng(0), max_tries=3)


def test_rejection_acceptance_rate():
    w = Geometric(0.5, 0.5)
    n, x = 400, 200
    inc, tries = RejectionSampler(w, n, x).sample_increments(400, np.random.default_rng(6))
    assert np.all(inc.sum(axis=1) == x)
    rate = 400 / tries
    peak = 1 / (classify_regime(w, n, x).v_n * math.sqrt(2 * math.pi))
    assert peak / 1.5 < rate < 1.5 * peak


def test_bridge_stats_examples():
    p = BridgePath(np.full(5, 3), 15)
    s = bridge_stats(p)
    assert s.sum_sq == 15**2 // 5
    p = BridgePath(np.array([0, 0, 0, 9]), 9)
    s = bridge_stats(p, t_grid=(0.5, 1.0))
    assert s.max_inc == 9 and s.sum_sq == 81 and s.argmax == 3
    assert s.marginal_devs[-1] == 0


def test_bridge_path_validation():
    with pytest.raises(ValidationError):
        BridgePath(np.array([1, -1]), 0)
    with pytest.raises(ValidationError):
        BridgePath(np.array([1, 1]), 3)


def test_marginal_report():
    rng = np.random.default_rng(7)
    inc = BridgeSampler(Geometric(0.5, 0.5), 200, 100).sample_increments(4000, rng)
    st = batch_stats(inc, 100, t_grid=(0.0, 0.5, 1.0))
    assert np.all(st["marginal_devs"][:, [0, 2]] == 0)
    v = classify_regime(Geometric(0.5, 0.5), 200, 100).v_n ** 2
    rep = check_brownian_marginals(st["marginal_devs"][:, [1]], v, t_grid=(0.5,))
    assert rep.target[0] == 0.25
    assert rep.max_rel_error < 0.1
    with pytest.raises(ValidationError):
        check_brownian_marginals(st["marginal_devs"][:10], v)


def test_condensation_ratio_at_most_one():
    rng = np.random.default_rng(8)
    w = StableExample(1.5)
    n = 500
    x = int(w.stable.m * n + n**0.9)
    inc = BridgeSampler(w, n, x).sample_increments(300, rng)
    st = batch_stats(inc, x)
    rep = condensation_report(st["max_inc"], st["sum_sq"], st["argmax"], n)
    assert np.all(rep.ratios <= 1.0)
    assert rep.histogram.sum() == 300


def test_sum_sq_limit_constants():
    r = classify_regime(Tabulated((0.5, 0.5)), 400, 19)
    assert sum_sq_limit(Tabulated((0.5, 0.5)), r) == (19.0, 1.0)
    r = classify_regime(UniformMapStep(), 100, 100**2)
    norm, c = sum_sq_limit(UniformMapStep(), r)
    assert c == 1.5 and norm == pytest.approx(100**4 / 50)
    r = classify_regime(Geometric(0.5, 0.5), 1000, 500)
    norm, c = sum_sq_limit(Geometric(0.5, 0.5), r)
    # geometric law tilted to mean 1/2: variance 3/4, so 1 + m^2/sigma^2 = 4/3
    assert c == pytest.approx(4 / 3)
    assert norm == pytest.approx(750.0)
