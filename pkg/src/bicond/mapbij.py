"""Well-labelled trees to pointed rooted bipartite maps.

Every non-root vertex c of the tree (in depth-first order) is a corner
carrying the label l(c) and belonging to the map vertex reached from c by
repeatedly moving to the last child; these end points are the leaves, so an
internal vertex is merged with its right-most offspring.  Each corner sends
one edge to the next corner (cyclically, in depth-first order) whose label is
one less, or to an extra distinguished vertex when its label is minimal.

The embedding is recorded as half-edges: ``vert[h]`` is the vertex at h,
``opposite[h]`` the other half of its edge and ``next_ccw[h]`` the next
half-edge counterclockwise around ``vert[h]``.  Faces are the orbits of
h -> next_ccw[opposite[h]].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from numba import njit

from .errors import DomainError, MalformedLabelling, ValidationError
from .genfun import MapInduced, WeightSequence, eval_derivatives, from_descriptor, solve_leaf_fraction
from .labels import LabelledTree, label_tree, validate_labelling
from .lukas import tree_sampler


@dataclass(frozen=True, eq=False)
class BipartiteMap:
    vert: np.ndarray
    opposite: np.ndarray
    next_ccw: np.ndarray
    n_vertices: int
    root: int
    distinguished: int
    corner_edge: np.ndarray | None = field(default=None, repr=False)
    corner_face: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_edges(self) -> int:
        return self.vert.size // 2

    @cached_property
    def face_of(self) -> np.ndarray:
        return _face_orbits(self.opposite, self.next_ccw)

    @property
    def n_faces(self) -> int:
        return int(self.face_of.max()) + 1 if self.face_of.size else 1

    @property
    def face_degrees(self) -> np.ndarray:
        if self.vert.size == 0:
            return np.zeros(1, dtype=np.int64)
        return np.bincount(self.face_of, minlength=self.n_faces)

    def faces(self) -> list[list[int]]:
        """Half-edge orbits, each starting from its smallest half-edge."""
        out: list[list[int]] = [[] for _ in range(self.n_faces)]
        seen = np.zeros(self.vert.size, dtype=bool)
        for h0 in range(self.vert.size):
            if seen[h0]:
                continue
            h = h0
            orbit = out[self.face_of[h0]]
            while not seen[h]:
                seen[h] = True
                orbit.append(h)
                h = int(self.next_ccw[self.opposite[h]])
        return out

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def edges(self) -> np.ndarray:
        h = np.arange(0, self.vert.size)
        first = h[h < self.opposite]
        return np.stack([self.vert[first], self.vert[self.opposite[first]]], axis=1)

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": self.n_vertices,
                "distinguished": self.distinguished,
                "root_half_edge": self.root,
                "root_edge": [int(self.vert[self.root]), int(self.vert[self.opposite[self.root]])],
                "edges": self.edges().tolist(),
                "faces": [[int(self.vert[h]) for h in orbit] for orbit in self.faces()],
            }
        )


@njit(cache=True)
def _face_orbits(opposite, next_ccw):
    m = opposite.size
    face = np.full(m, -1, dtype=np.int64)
    f = 0
    for h0 in range(m):
        if face[h0] >= 0:
            continue
        h = h0
        while face[h] < 0:
            face[h] = f
            h = next_ccw[opposite[h]]
        f += 1
    return face


@njit(cache=True)
def _successors(lab):
    """Position of the next corner (cyclically) with label one less, -1 for the minimum.

    ``lab`` must start with a minimal label; then every search ends before
    wrapping past position 0, which is returned as n.
    """
    n = lab.size
    mn = lab[0]
    hi = lab.max()
    nxt = np.full(hi - mn + 1, -1, dtype=np.int64)
    nxt[0] = n
    succ = np.empty(n, dtype=np.int64)
    for r in range(n - 1, -1, -1):
        if lab[r] == mn:
            succ[r] = -1
        else:
            succ[r] = nxt[lab[r] - 1 - mn]
        nxt[lab[r] - mn] = r
    return succ


@njit(cache=True)
def _bfs(offsets, targets, source, nv):
    dist = np.full(nv, -1, dtype=np.int64)
    queue = np.empty(nv, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        for i in range(offsets[u], offsets[u + 1]):
            v = targets[i]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue[tail] = v
                tail += 1
    return dist


def corner_vertices(lt: LabelledTree) -> np.ndarray:
    """Map vertex (leaf rank) of each tree vertex: its right-most descent leaf."""
    tree = lt.tree
    last = tree.last_child
    rank = np.cumsum(tree.leaves) - 1
    end = np.arange(tree.n)
    for v in range(tree.n - 1, -1, -1):
        if last[v] >= 0:
            end[v] = end[last[v]]
    return rank[end]


def build_map(lt: LabelledTree, rng: np.random.Generator | None = None) -> BipartiteMap:
    """Map with n - 1 edges, K + 1 vertices (the distinguished one is K), n - K faces.

    The root is the edge of the first child of the tree root, oriented at
    random with ``rng`` (outward from the corner when ``rng`` is None).
    """
    tree = lt.tree
    validate_labelling(tree, lt.labels)
    n, K = tree.n, tree.K
    N = n - 1
    if N == 0:
        raise ValidationError("a map needs at least one edge (n >= 2)")
    lab_c = lt.labels[1:]
    vert_c = corner_vertices(lt)[1:]
    s = int(np.argmin(lab_c))
    order = (s + np.arange(N)) % N  # rotated position r -> corner index
    lab = np.ascontiguousarray(lab_c[order])
    succ = _successors(lab)
    star = K
    is_star = succ < 0
    tgt = np.where(is_star, 0, succ % N)

    # half-edge 2r leaves corner r, 2r + 1 arrives at its successor
    vert = np.empty(2 * N, dtype=np.int64)
    vert[0::2] = vert_c[order]
    vert[1::2] = np.where(is_star, star, vert_c[order][tgt])
    opposite = np.arange(2 * N) ^ 1
    # counterclockwise order around a vertex: corners by decreasing position;
    # inside a corner the outgoing edge, then incoming ones by source position;
    # around the distinguished vertex edges by increasing source position
    r = np.arange(N)
    corner_key = np.empty(2 * N, dtype=np.int64)
    sub_key = np.empty(2 * N, dtype=np.int64)
    corner_key[0::2] = -r
    sub_key[0::2] = -1
    corner_key[1::2] = np.where(is_star, 0, -tgt)
    sub_key[1::2] = r
    idx = np.lexsort((sub_key, corner_key, vert))
    next_ccw = np.empty(2 * N, dtype=np.int64)
    sv = vert[idx]
    start = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    stop = np.r_[start[1:], idx.size]
    nxt_pos = np.arange(1, idx.size + 1)
    nxt_pos[stop - 1] = start
    next_ccw[idx] = idx[nxt_pos]

    corner_edge = np.empty(n, dtype=np.int64)
    corner_edge[0] = -1
    corner_edge[1 + order] = r
    # the tree edge into a corner lies just after the corner's last arc
    # (counterclockwise), so the face of the parent follows that arc
    last_src = np.full(N, -1, dtype=np.int64)
    np.maximum.at(last_src, tgt[~is_star], r[~is_star])
    last_half = np.where(last_src >= 0, 2 * last_src + 1, 2 * r)
    corner_face = np.full(n, -1, dtype=np.int64)
    corner_face[1 + order] = next_ccw[last_half]
    root_edge = int(corner_edge[1])
    flip = 0 if rng is None else int(rng.integers(2))
    return BipartiteMap(
        vert=vert,
        opposite=opposite,
        next_ccw=next_ccw,
        n_vertices=K + 1,
        root=2 * root_edge + flip,
        distinguished=star,
        corner_edge=corner_edge,
        corner_face=corner_face,
    )


def bfs_distances(m: BipartiteMap, source: int) -> np.ndarray:
    """Graph distances from ``source``; -1 marks unreachable vertices."""
    if not 0 <= source < m.n_vertices:
        raise ValidationError("source vertex out of range")
    a = m.vert
    b = m.vert[m.opposite]
    order = np.argsort(a, kind="stable")
    offsets = np.zeros(m.n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=m.n_vertices), out=offsets[1:])
    return _bfs(offsets, np.ascontiguousarray(b[order]), int(source), m.n_vertices)


@dataclass(frozen=True)
class Verification:
    ok: bool
    checks: dict
    first_failure: str | None
    detail: str = ""

    def __bool__(self):
        return self.ok


def verify_correspondence(lt: LabelledTree, m: BipartiteMap) -> Verification:
    """Check Euler, even degrees, connectivity and the four tree/map properties.

    (i) one edge per non-root tree vertex; (ii) internal vertices and faces
    correspond, with face degree twice the number of children; (iii) leaves
    correspond to the non-distinguished vertices; (iv) label - min + 1 is the
    graph distance from a leaf's vertex to the distinguished vertex.
    """
    tree = lt.tree
    checks: dict[str, bool] = {}
    notes: dict[str, str] = {}

    ok_i = m.n_edges == tree.n - 1
    if ok_i and m.corner_edge is not None:
        ce = m.corner_edge[1:]
        ok_i = bool(np.array_equal(np.sort(ce), np.arange(tree.n - 1)))
    checks["edges"] = ok_i

    deg = m.face_degrees
    internal = np.flatnonzero(tree.children > 0)
    ok_ii = m.n_faces == internal.size
    if ok_ii and m.corner_face is not None:
        par = tree.parent[1:]
        fc = m.face_of[m.corner_face[1:]]
        face_u = np.full(tree.n, -1, dtype=np.int64)
        face_u[par] = fc
        split = np.flatnonzero(fc != face_u[par])
        wrong = internal[deg[face_u[internal]] != 2 * tree.children[internal]]
        if split.size:
            ok_ii = False
            notes["faces"] = f"children of vertex {int(par[split[0]])} lie on several faces"
        elif wrong.size:
            ok_ii = False
            u = int(wrong[0])
            notes["faces"] = f"face of vertex {u} has degree {deg[face_u[u]]}, arity {tree.children[u]}"
        else:
            ok_ii = np.unique(face_u[internal]).size == internal.size
    checks["faces"] = bool(ok_ii)

    ok_iii = m.n_vertices == tree.K + 1 and m.distinguished == tree.K
    if ok_iii:
        cv = corner_vertices(lt)
        ok_iii = bool(np.array_equal(cv[tree.leaves], np.arange(tree.K)))
    checks["leaves"] = ok_iii

    dist = bfs_distances(m, m.distinguished)
    lab = lt.labels[1:]
    shifted = lt.labels[tree.leaves] - lab.min() + 1
    ok_iv = ok_iii and bool(np.array_equal(dist[: tree.K], shifted))
    if not ok_iv and ok_iii:
        bad = int(np.flatnonzero(dist[: tree.K] != shifted)[0])
        notes["distances"] = f"vertex {bad}: distance {dist[bad]}, shifted label {shifted[bad]}"
    checks["distances"] = ok_iv

    checks["euler"] = m.euler_characteristic == 2
    checks["even_degrees"] = bool(np.all(deg % 2 == 0))
    checks["connected"] = bool(np.all(dist >= 0))
    first = next((k for k, v in checks.items() if not v), None)
    return Verification(first is None, checks, first, notes.get(first, "") if first else "")


def face_sigma2(m: BipartiteMap) -> int:
    """Sum over faces of d (d - 1), d being half the face degree."""
    d = m.face_degrees // 2
    return int(np.dot(d, d - 1))


@dataclass(frozen=True)
class MapReport:
    n: int
    K: int
    distance_profile: np.ndarray = field(repr=False)
    mean_distance: float
    sigma2: int
    max_face_degree: int
    sum_sq: int

    def profile_csv(self) -> str:
        rows = ["distance,count"]
        rows += [f"{d},{int(c)}" for d, c in enumerate(self.distance_profile) if c]
        return "\n".join(rows) + "\n"


def map_report(lt: LabelledTree, m: BipartiteMap, source: int | None = None) -> MapReport:
    """Distances are measured from ``source`` (the distinguished vertex by default)."""
    src = m.distinguished if source is None else int(source)
    dist = bfs_distances(m, src)
    others = np.delete(dist, src)
    inc = lt.tree.children - 1
    return MapReport(
        n=lt.n,
        K=lt.K,
        distance_profile=np.bincount(dist),
        mean_distance=float(others.mean()),
        sigma2=face_sigma2(m),
        max_face_degree=int(m.face_degrees.max()),
        sum_sq=int(np.dot(inc, inc)),
    )


def map_theta(q) -> MapInduced:
    """Offspring weights of a map family.

    Accepts a MapInduced weight, a face-weight sequence q_1, q_2, ..., None,
    "uniform" or "uniform-map" (q = 1), or a descriptor of either family.
    """
    if isinstance(q, MapInduced):
        return q
    if isinstance(q, dict):
        fam = q.get("family")
        if fam == "uniform-map":
            return MapInduced(None)
        if fam == "map-induced":
            return from_descriptor(q)
        raise ValidationError(f"map sampling needs map-induced weights, got family {fam!r}")
    if q is None or q in ("uniform", "uniform-map", "map-induced"):
        return MapInduced(None)
    if isinstance(q, (WeightSequence, str)):
        raise ValidationError(f"map sampling needs map-induced weights, got {q!r}")
    return MapInduced(tuple(float(v) for v in q))


def sample_map(q, n: int, K: int, rng: np.random.Generator) -> tuple[BipartiteMap, MapReport]:
    """Map under P^q_{n,K} with a uniformly chosen distinguished vertex.

    ``q`` is a MapInduced weight, a face-weight sequence q_1, q_2, ... or
    None / "uniform" for q = 1.  The report's distances are measured from an
    independent uniform vertex among the K + 1; ``sigma2`` always equals
    ``sum_sq - 1``.
    """
    theta = map_theta(q)
    tree = tree_sampler(theta, int(n), int(K)).sample(rng)
    lt = label_tree(tree, rng)
    m = build_map(lt, rng)
    pointed = int(rng.integers(m.n_vertices))
    return m, map_report(lt, m, pointed)


def sample_labelled_map(q, n: int, K: int, rng: np.random.Generator) -> tuple[LabelledTree, BipartiteMap]:
    theta = map_theta(q)
    lt = label_tree(tree_sampler(theta, int(n), int(K)).sample(rng), rng)
    return lt, build_map(lt, rng)


def scaling_S(x, theta: WeightSequence | None = None):
    """Distance-scaling function of maps with leaf fraction x.

    For uniform weights (theta None) the closed form
    (1 - x)(3 + x + sqrt((1 - x)(9 - x))) / (12 x); a Fraction argument whose
    square root is rational gives an exact Fraction.  Otherwise
    F'(b)/(b F''(b)) with A(b) = x.
    """
    if isinstance(x, Fraction) and theta is None:
        if not 0 < x < 1:
            raise DomainError(f"S(x) needs 0 < x < 1, got {x}")
        root = _fraction_sqrt((1 - x) * (9 - x))
        if root is not None:
            return (1 - x) * (3 + x + root) / (12 * x)
    x = float(x)
    if not 0.0 < x < 1.0 or math.isnan(x):
        raise DomainError(f"S(x) needs 0 < x < 1, got {x!r}")
    if theta is None:
        return (1 - x) * (3 + x + math.sqrt((1 - x) * (9 - x))) / (12 * x)
    b = solve_leaf_fraction(theta, x)
    _, f1, f2 = eval_derivatives(theta, b, 2)
    return f1 / (b * f2)


def _fraction_sqrt(v: Fraction) -> Fraction | None:
    a, b = math.isqrt(v.numerator), math.isqrt(v.denominator)
    if a * a == v.numerator and b * b == v.denominator:
        return Fraction(a, b)
    return None


def distance_scale(n: int, K: int, theta: WeightSequence | None = None) -> float:
    """(S(K/n) 9 / (4 n))^(1/4): multiplies distances to get the rescaled ones."""
    return (scaling_S(K / n, theta) * 9.0 / (4.0 * n)) ** 0.25


__all__ = [
    "BipartiteMap",
    "MalformedLabelling",
    "MapReport",
    "Verification",
    "bfs_distances",
    "build_map",
    "corner_vertices",
    "distance_scale",
    "face_sigma2",
    "map_report",
    "sample_map",
    "scaling_S",
    "verify_correspondence",
]
