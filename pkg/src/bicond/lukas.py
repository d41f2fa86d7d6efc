"""Lukasiewicz paths of plane trees conditioned on vertices and leaves.

A tree with n vertices and K leaves is drawn by composing a nondecreasing
bridge of n - K steps ending at K - 1 (step weights theta(k + 1)) with a
uniform placement of K down-steps, then applying the cyclic shift at the
first minimum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import _kernels as K_
from .bridge import BridgePath, BridgeSampler
from .errors import IncompatibleEndpoint, InvalidExcursion, LengthMismatch, ValidationError
from .genfun import WeightSequence, eval_derivatives, solve_leaf_fraction


@dataclass(frozen=True)
class LukasPath:
    """Increments >= -1; ``payload`` (optional) travels with the increments."""

    increments: np.ndarray
    payload: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.int64)
        if inc.size and inc.min() < -1:
            raise ValidationError("Lukasiewicz increments must be >= -1")
        object.__setattr__(self, "increments", inc)

    @property
    def n(self) -> int:
        return self.increments.size

    @property
    def leaf_marks(self) -> np.ndarray:
        return self.increments == -1

    @property
    def Lambda(self) -> np.ndarray:
        """Lambda_k = number of -1 steps among the first k, k = 0..n."""
        return np.concatenate([[0], np.cumsum(self.leaf_marks)])

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.increments)])

    @property
    def K(self) -> int:
        return int(self.leaf_marks.sum())

    def is_excursion(self) -> bool:
        v = self.values
        return v[-1] == -1 and bool(np.all(v[:-1] >= 0))


@dataclass(frozen=True, eq=False)
class PlaneTree:
    """Rooted plane tree given by children counts in depth-first order."""

    children: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.children, dtype=np.int64)
        object.__setattr__(self, "children", c)
        if not LukasPath(c - 1).is_excursion():
            raise InvalidExcursion("children counts do not code a single plane tree")

    @property
    def n(self) -> int:
        return self.children.size

    @property
    def K(self) -> int:
        return int(np.sum(self.children == 0))

    @property
    def leaves(self) -> np.ndarray:
        return self.children == 0

    @cached_property
    def _links(self):
        return K_.tree_links(self.children)

    @property
    def parent(self) -> np.ndarray:
        return self._links[0]

    @property
    def first_child(self) -> np.ndarray:
        return self._links[1]

    @property
    def subtree_size(self) -> np.ndarray:
        return self._links[2]

    def child_list(self, u: int) -> list[int]:
        out = []
        c = u + 1
        size = self.subtree_size
        for _ in range(int(self.children[u])):
            out.append(c)
            c += int(size[c])
        return out

    @cached_property
    def last_child(self) -> np.ndarray:
        last = np.full(self.n, -1, dtype=np.int64)
        np.maximum.at(last, self.parent[1:], np.arange(1, self.n))
        return last

    def encode(self) -> LukasPath:
        return LukasPath(self.children - 1)

    def to_json(self) -> list[int]:
        return [int(v) for v in self.children]

    @classmethod
    def from_json(cls, data) -> "PlaneTree":
        return cls(np.asarray(data, dtype=np.int64))


def _check_nk(n: int, K: int):
    if n < 1 or not 1 <= K <= n:
        raise ValidationError(f"need n >= 1 and 1 <= K <= n, got n={n}, K={K}")
    if K == n and n > 1:
        raise ValidationError("K = n is impossible for a tree with more than one vertex")


def sample_subset_path(n: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 increments with exactly K ones at a uniform K-subset of positions."""
    if not 0 <= K <= n:
        raise ValidationError("need 0 <= K <= n")
    flags = np.empty(n, dtype=np.int64)
    K_.subset_flags_into(np.arange(n), K, rng, flags)
    return flags


def sample_subset_counts(n: int, K: int, t: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """L_t (ones among the first t positions) for ``reps`` independent subset paths."""
    if not 0 <= K <= n or not 0 <= t <= n:
        raise ValidationError("need 0 <= K <= n and 0 <= t <= n")
    return K_.subset_prefix_counts(n, K, t, reps, rng)


def compose_bridge(S, L) -> LukasPath:
    """W_k = S_{k - L_k} - L_k: down-steps where L jumps, bridge steps elsewhere."""
    s_inc = S.increments if isinstance(S, BridgePath) else np.asarray(S, dtype=np.int64)
    flags = np.asarray(L, dtype=np.int64)
    n, K = flags.size, int(flags.sum())
    if np.any((flags != 0) & (flags != 1)):
        raise LengthMismatch("subset path must have 0/1 increments")
    if s_inc.size != n - K:
        raise LengthMismatch(f"bridge has {s_inc.size} steps, expected n - K = {n - K}")
    if int(s_inc.sum()) != K - 1:
        raise LengthMismatch(f"bridge ends at {int(s_inc.sum())}, expected K - 1 = {K - 1}")
    out = np.empty(n, dtype=np.int64)
    K_.compose_into(np.ascontiguousarray(s_inc, dtype=np.int64), flags, out)
    return LukasPath(out)


def first_min_index(increments) -> int:
    """1-based first time at which the partial sums attain their minimum."""
    return int(np.argmin(np.cumsum(increments))) + 1


def vervaat(path, payload=None) -> LukasPath:
    """Cyclic shift starting right after the first minimum of the partial sums."""
    inc = path.increments if isinstance(path, LukasPath) else np.asarray(path, dtype=np.int64)
    if payload is None and isinstance(path, LukasPath):
        payload = path.payload
    if int(inc.sum()) != -1:
        raise ValidationError("Vervaat transform needs total increment -1")
    shift = first_min_index(inc) % inc.size
    out = np.roll(inc, -shift)
    pay = None if payload is None else np.roll(np.asarray(payload), -shift, axis=0)
    return LukasPath(out, pay)


def decode_tree(path) -> PlaneTree:
    inc = path.increments if isinstance(path, LukasPath) else np.asarray(path, dtype=np.int64)
    lp = LukasPath(inc)
    if not lp.is_excursion():
        raise InvalidExcursion("path is not an excursion ending at -1")
    return PlaneTree(inc + 1)


def encode_tree(tree: PlaneTree) -> LukasPath:
    return tree.encode()


class TreeSampler:
    """Exact sampler of P^theta_{n,K}: trees with n vertices and K leaves."""

    def __init__(self, theta: WeightSequence, n: int, K: int, method: str = "auto"):
        n, K = int(n), int(K)
        _check_nk(n, K)
        self.theta, self.n, self.K = theta, n, K
        self.m = n - K
        self.bridge = None
        if self.m > 0:
            self.bridge = BridgeSampler(theta.shifted(), self.m, K - 1, method)
        elif K != 1:
            raise IncompatibleEndpoint("K = n requires n = 1")

    def sample_increments(self, reps: int, rng: np.random.Generator) -> np.ndarray:
        """(reps, n) array of excursion-form Lukasiewicz increments."""
        if self.bridge is None:
            return np.full((reps, 1), -1, dtype=np.int64)
        bs = self.bridge
        if bs.method == "dp":
            return K_.luka_batch_dp(bs._logZ, bs.logp, self.n, self.K, int(reps), rng)
        return K_.luka_batch_split(*bs._split, self.n, self.K, int(reps), rng)

    def sample_path(self, rng: np.random.Generator) -> LukasPath:
        return LukasPath(self.sample_increments(1, rng)[0])

    def sample(self, rng: np.random.Generator) -> PlaneTree:
        return PlaneTree(self.sample_increments(1, rng)[0] + 1)


@lru_cache(maxsize=16)
def tree_sampler(theta: WeightSequence, n: int, K: int, method: str = "auto") -> TreeSampler:
    return TreeSampler(theta, n, K, method)


def sample_tree(theta: WeightSequence, n: int, K: int, rng: np.random.Generator) -> PlaneTree:
    return tree_sampler(theta, int(n), int(K)).sample(rng)


@dataclass(frozen=True)
class LukaStats:
    max_inc: int
    sum_sq: int
    Lambda: np.ndarray = field(repr=False)
    sup: int
    rescaled_sup: float
    max_ratio: float


def luka_stats(path: LukasPath, v_n: float | None = None) -> LukaStats:
    """Largest increment, sum of squares, leaf counter and sup of the path.

    ``rescaled_sup`` is sup W / sqrt(v_n) when v_n is given; ``max_ratio`` is
    (max increment)^2 / sum of squares.
    """
    inc = path.increments
    ss = int(np.dot(inc, inc))
    mx = int(inc.max())
    sup = int(path.values.max())
    return LukaStats(
        max_inc=mx,
        sum_sq=ss,
        Lambda=path.Lambda,
        sup=sup,
        rescaled_sup=sup / math.sqrt(v_n) if v_n else math.nan,
        max_ratio=mx * mx / ss if ss else math.nan,
    )


def luka_scale(theta: WeightSequence, n: int, K: int, kind: str) -> float:
    """Scaling v_n of the excursion and of the sum of squares for trees.

    ``kind``: "bulk" (b F''(b) n / F'(b) with A(b) = K/n), "small" (2K) or
    "large" ((1 + alpha) n^2 / (alpha (n - K)) with the declared alpha of F).
    """
    if kind == "bulk":
        b = solve_leaf_fraction(theta, K / n)
        _, f1, f2 = eval_derivatives(theta, b, 2)
        return b * f2 * n / f1
    if kind == "small":
        return 2.0 * K
    if kind == "large":
        if theta.delta is None:
            raise ValidationError("large regime needs declared Delta-analytic data for F")
        alpha = theta.delta[0]
        return (1 + alpha) * n * n / (alpha * (n - K))
    raise ValidationError(f"unknown tree regime {kind!r}")
