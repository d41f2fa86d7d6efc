"""Uniform well-labellings of plane trees.

A labelling gives the root label 0 and, around every internal vertex u with
children c_1..c_k, makes (l(u), l(c_1), ..., l(c_k)) a bridge with steps
>= -1 that returns to l(u).  There are binom(2k-1, k-1) such bridges of
length k, in bijection with compositions of k into k nonnegative parts.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from . import _kernels as K_
from .errors import MalformedLabelling, ValidationError
from .lukas import PlaneTree


@dataclass(frozen=True)
class LabelBridge:
    """Steps >= -1 summing to zero; ``values`` starts and ends at 0."""

    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.int64)
        if inc.size == 0 or inc.min() < -1 or inc.sum() != 0:
            raise MalformedLabelling("label bridge needs steps >= -1 summing to 0")
        object.__setattr__(self, "increments", inc)

    @property
    def k(self) -> int:
        return self.increments.size

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.increments)])


def count_label_bridges(k: int) -> int:
    if k < 1:
        raise ValidationError("bridge length must be >= 1")
    return comb(2 * k - 1, k - 1)


def composition_to_bridge(parts) -> LabelBridge:
    return LabelBridge(np.asarray(parts, dtype=np.int64) - 1)


def sample_label_bridge(k: int, rng: np.random.Generator) -> LabelBridge:
    """Uniform element of the k-step bridges with steps >= -1."""
    if k < 1:
        raise ValidationError("bridge length must be >= 1")
    bars = np.sort(rng.choice(2 * k - 1, size=k - 1, replace=False))
    # bars at slots s_1 < ... < s_{k-1}: part i counts the stars between bars
    edges = np.concatenate([[-1], bars, [2 * k - 1]])
    parts = np.diff(edges) - 1
    return composition_to_bridge(parts)


@dataclass(frozen=True, eq=False)
class LabelledTree:
    tree: PlaneTree
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", lab)
        if lab.shape != (self.tree.n,):
            raise MalformedLabelling("one label per vertex is required")

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def K(self) -> int:
        return self.tree.K

    def validate(self):
        validate_labelling(self.tree, self.labels)
        return self

    def to_json(self) -> dict:
        return {"children": self.tree.to_json(), "labels": [int(v) for v in self.labels]}

    @classmethod
    def from_json(cls, data) -> "LabelledTree":
        return cls(PlaneTree.from_json(data["children"]), np.asarray(data["labels"], dtype=np.int64)).validate()


def validate_labelling(tree: PlaneTree, labels) -> None:
    """Raise MalformedLabelling unless the labels form a valid well-labelling."""
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (tree.n,):
        raise MalformedLabelling("one label per vertex is required")
    if lab[0] != 0:
        raise MalformedLabelling("root label must be 0")
    last = tree.last_child
    # step into each child from its previous sibling (or from the parent)
    prev = np.empty(tree.n, dtype=np.int64)
    prev[0] = -1
    for u in range(tree.n):
        if tree.children[u]:
            kids = tree.child_list(u)
            prev[kids[0]] = u
            prev[kids[1:]] = kids[:-1]
    steps = lab[1:] - lab[prev[1:]]
    if steps.size and steps.min() < -1:
        v = int(np.argmin(steps)) + 1
        raise MalformedLabelling(f"label step {int(steps[v - 1])} < -1 entering vertex {v}")
    internal = np.flatnonzero(tree.children > 0)
    bad = internal[lab[last[internal]] != lab[internal]]
    if bad.size:
        raise MalformedLabelling(f"last child of vertex {int(bad[0])} does not return to its label")


def label_tree(tree: PlaneTree, rng: np.random.Generator) -> LabelledTree:
    """Uniform well-labelling of ``tree``."""
    _, first_child, size = K_.tree_links(tree.children)
    labels = np.empty(tree.n, dtype=np.int64)
    K_.label_tree_into(tree.children, first_child, size, rng, labels)
    return LabelledTree(tree, labels)
