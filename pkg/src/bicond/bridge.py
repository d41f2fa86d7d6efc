"""Samplers and statistics for simply generated nondecreasing bridges.

Two exact samplers share one interface:

* ``dp``: backward decomposition over the full table Z_k(y), k <= n, y <= x;
  O(n x) memory, O(n + x) work per path.
* ``split``: divide and conquer over the laws of block sums for the O(log n)
  block sizes obtained by halving; O(x log n) memory and work per path.

Both use step weights tilted so the mean step is x/n (tilting leaves the
bridge law unchanged and keeps the tables well scaled).  A rejection sampler
(tilt, then accept iff the i.i.d. sum hits x_n) is kept for cross-validation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import IncompatibleEndpoint, MaxTriesExceeded, ValidationError
from .exactdist import balancing_slope, conv_trunc, table_from_log_weights, trim_log_weights
from .genfun import (
    Regime,
    RegimeKind,
    WeightSequence,
    eval_derivatives,
    moments_from_derivatives,
    solve_tilt,
    tilted_log_masses,
)

DP_CELL_LIMIT = 20_000_000
DEFAULT_T_GRID = tuple(i / 10 for i in range(1, 10))


@dataclass(frozen=True)
class BridgePath:
    increments: np.ndarray
    endpoint: int

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.int64)
        if inc.size and inc.min() < 0:
            raise ValidationError("bridge increments must be nonnegative")
        if int(inc.sum()) != int(self.endpoint):
            raise ValidationError("bridge increments must sum to the endpoint")
        object.__setattr__(self, "increments", inc)

    @property
    def n(self) -> int:
        return self.increments.size

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.increments)])


def tilted_step_log_weights(w: WeightSequence, b: float, cap: int) -> np.ndarray:
    k = np.arange(cap + 1, dtype=float)
    lw = w.log_weights(cap)
    return lw + np.where(k > 0, k * math.log(b), 0.0)


def _split_plan(n: int):
    """Block sizes reached by halving n, with child indices."""
    sizes = set()
    frontier = {n}
    while frontier:
        sizes |= frontier
        nxt = set()
        for m in frontier:
            if m > 1:
                nxt.update((m // 2, m - m // 2))
        frontier = nxt - sizes
    order = sorted(sizes)
    index = {m: i for i, m in enumerate(order)}
    size = np.array(order, dtype=np.int64)
    c1 = np.array([index[m // 2] if m > 1 else -1 for m in order], dtype=np.int64)
    c2 = np.array([index[m - m // 2] if m > 1 else -1 for m in order], dtype=np.int64)
    return size, c1, c2, index[n]


class BridgeSampler:
    """Exact sampler for the bridge of n steps from 0 to x with weights w."""

    def __init__(self, w: WeightSequence, n: int, x: int, method: str = "auto"):
        n, x = int(n), int(x)
        if n < 1 or x < 0:
            raise ValidationError("need n >= 1 and x >= 0")
        if method == "auto":
            method = "dp" if (n + 1) * (x + 1) <= DP_CELL_LIMIT else "split"
        if method not in ("dp", "split"):
            raise ValidationError(f"unknown sampler method {method!r}")
        self.w, self.n, self.x, self.method = w, n, x, method
        lw = w.log_weights(x)
        slope = balancing_slope(lw, x, n)
        self.b = math.exp(-slope)
        self.logp = lw - slope * np.arange(x + 1)
        if method == "dp":
            self.table = table_from_log_weights(self.logp, n, x)
            if self.table.log_z(n, x) == -math.inf:
                raise IncompatibleEndpoint(f"no path of {n} steps reaches {x}")
            self._logZ = np.ascontiguousarray(self.table.logZ)
        else:
            self._build_split()

    def _build_split(self):
        size, c1, c2, root = _split_plan(self.n)
        pv, _ = trim_log_weights(self.logp)
        x = self.x
        tabs = np.zeros((size.size, x + 1))
        scale = np.ones(size.size)
        base = np.zeros(x + 1)
        base[: pv.size] = pv[: x + 1]
        for s, m in enumerate(size):
            if m == 1:
                row = base.copy()
            else:
                row = conv_trunc(tabs[c1[s]], tabs[c2[s]], x)
            top = row.max()
            if top <= 0:
                raise IncompatibleEndpoint(f"no path of {m} steps stays below {x}")
            tabs[s] = row / top
            scale[s] = top
        nz = tabs > 0
        lo = np.array([int(np.argmax(r)) for r in nz], dtype=np.int64)
        hi = np.array([x - int(np.argmax(r[::-1])) for r in nz], dtype=np.int64)
        if tabs[root, x] <= 0:
            raise IncompatibleEndpoint(f"no path of {self.n} steps reaches {x}")
        self._split = (tabs, scale, lo, hi, size, c1, c2, root)

    def sample_increments(self, reps: int, rng: np.random.Generator) -> np.ndarray:
        if self.method == "dp":
            return K.dp_sample_batch(self._logZ, self.logp, self.n, self.x, int(reps), rng)
        return K.split_sample_batch(*self._split, self.n, self.x, int(reps), rng)

    def sample(self, rng: np.random.Generator) -> BridgePath:
        return BridgePath(self.sample_increments(1, rng)[0], self.x)

    def step_probabilities(self, i: int, rem: int) -> np.ndarray:
        """Law of the increment at time i (0-based) given rem left to climb."""
        if self.method != "dp":
            raise ValidationError("step probabilities need the dp method")
        k = self.n - i - 1
        tot = self._logZ[k + 1, rem]
        return np.array([K.dp_step_weight(self._logZ, self.logp, k, rem, d, tot) for d in range(rem + 1)])

    def path_probability(self, increments) -> float:
        """Product of the sampler's step probabilities along a path."""
        rem = self.x
        prob = 1.0
        for i, d in enumerate(increments):
            prob *= self.step_probabilities(i, rem)[d]
            rem -= d
        return prob


@lru_cache(maxsize=16)
def bridge_sampler(w: WeightSequence, n: int, x: int, method: str = "auto") -> BridgeSampler:
    return BridgeSampler(w, n, x, method)


def sample_exact(w: WeightSequence, n: int, x_n: int, rng: np.random.Generator, method: str = "auto") -> BridgePath:
    """One exact draw from the bridge law (tables are cached per (w, n, x_n))."""
    return bridge_sampler(w, int(n), int(x_n), method).sample(rng)


class RejectionSampler:
    """Tilt to b_n, draw i.i.d. steps, accept iff they sum to x_n.

    Steps are drawn from the tilted law restricted to [0, x_n]; a path with a
    larger step is rejected anyway, so the accepted law is unchanged.
    """

    def __init__(self, w: WeightSequence, n: int, x: int):
        self.w, self.n, self.x = w, int(n), int(x)
        ip = w.support_min
        self.deterministic = x == ip * n
        if x < ip * n:
            raise IncompatibleEndpoint(f"x={x} below i_p * n")
        if self.deterministic:
            self.b = math.nan
            return
        self.b = solve_tilt(w, x / n)
        lp = tilted_log_masses(w, self.b, x)
        p = np.exp(lp - lp[np.isfinite(lp)].max())
        self.cdf = np.cumsum(p) / p.sum()
        self.cdf[-1] = 1.0

    def sample_increments(self, reps: int, rng: np.random.Generator, max_tries: int = 10**7,
                          block: int = 4096) -> tuple[np.ndarray, int]:
        """``reps`` accepted paths and the total number of tries used."""
        n, x = self.n, self.x
        if self.deterministic:
            return np.full((reps, n), self.w.support_min, dtype=np.int64), reps
        out = np.empty((reps, n), dtype=np.int64)
        got = 0
        tries = 0
        while got < reps:
            if tries >= max_tries:
                raise MaxTriesExceeded(f"accepted {got} of {reps} after {tries} tries")
            t = min(block, max_tries - tries)
            steps = np.searchsorted(self.cdf, rng.random((t, n)), side="right")
            ok = np.flatnonzero(steps.sum(axis=1) == x)
            if got + ok.size > reps:
                # tries are counted up to the last accepted row that is kept
                ok = ok[: reps - got]
                tries += int(ok[-1]) + 1
            else:
                tries += t
            out[got : got + ok.size] = steps[ok]
            got += ok.size
        return out, tries


@lru_cache(maxsize=16)
def rejection_sampler(w: WeightSequence, n: int, x: int) -> RejectionSampler:
    return RejectionSampler(w, n, x)


def sample_rejection(w: WeightSequence, n: int, x_n: int, rng: np.random.Generator, max_tries: int = 10**7,
                     return_tries: bool = False):
    inc, tries = rejection_sampler(w, int(n), int(x_n)).sample_increments(1, rng, max_tries=max_tries, block=256)
    path = BridgePath(inc[0], x_n)
    return (path, tries) if return_tries else path


# ----------------------------------------------------------------------
# statistics
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BridgeStats:
    sum_sq: int
    max_inc: int
    argmax: int
    marginal_devs: np.ndarray = field(repr=False)


def marginal_devs(increments: np.ndarray, x: int, t_grid) -> np.ndarray:
    """S_{floor(nt)} - x t for each row of a (reps, n) increment array."""
    inc = np.atleast_2d(increments)
    n = inc.shape[1]
    values = np.concatenate([np.zeros((inc.shape[0], 1), dtype=np.int64), np.cumsum(inc, axis=1)], axis=1)
    t = np.asarray(t_grid, dtype=float)
    idx = np.floor(n * t + 1e-9).astype(int)
    return values[:, idx] - x * t


def bridge_stats(path: BridgePath, t_grid=DEFAULT_T_GRID) -> BridgeStats:
    inc = path.increments
    return BridgeStats(
        sum_sq=int(np.dot(inc, inc)),
        max_inc=int(inc.max()) if inc.size else 0,
        argmax=int(np.argmax(inc)) if inc.size else 0,
        marginal_devs=marginal_devs(inc, path.endpoint, t_grid)[0],
    )


def batch_stats(increments: np.ndarray, x: int, t_grid=DEFAULT_T_GRID) -> dict:
    """Vectorised bridge_stats over the rows of a (reps, n) array."""
    inc = np.atleast_2d(increments)
    return {
        "sum_sq": np.einsum("ij,ij->i", inc, inc),
        "max_inc": inc.max(axis=1),
        "argmax": inc.argmax(axis=1),
        "marginal_devs": marginal_devs(inc, x, t_grid),
    }


@dataclass(frozen=True)
class MarginalReport:
    t: np.ndarray
    var_ratio: np.ndarray
    target: np.ndarray
    rel_error: np.ndarray
    kurtosis_half: float

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_error))


def check_brownian_marginals(devs: np.ndarray, v_n: float, t_grid=DEFAULT_T_GRID) -> MarginalReport:
    """Compare Var((S_{nt} - x t)/sqrt(v_n)) with t(1-t); kurtosis at t = 1/2."""
    devs = np.atleast_2d(np.asarray(devs, dtype=float))
    if devs.shape[0] < 1000:
        raise ValidationError("need at least 1000 samples")
    t = np.asarray(t_grid, dtype=float)
    var = devs.var(axis=0, ddof=1) / v_n
    target = t * (1 - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(target > 0, np.abs(var - target) / target, np.abs(var))
    half = int(np.argmin(np.abs(t - 0.5)))
    kurt = float(stats.kurtosis(devs[:, half], fisher=False)) if target[half] > 0 else math.nan
    return MarginalReport(t, var, target, rel, kurt)


@dataclass(frozen=True)
class CondensationReport:
    mean_ratio: float
    ratios: np.ndarray = field(repr=False)
    histogram: np.ndarray = field(repr=False)
    chi2_pvalue: float


def condensation_report(max_inc, sum_sq, argmax, n: int, bins: int = 10) -> CondensationReport:
    """max^2/sum of squares, and uniformity of argmax/n over ``bins`` bins."""
    mx = np.asarray(max_inc, dtype=float)
    ss = np.asarray(sum_sq, dtype=float)
    ratios = mx * mx / ss
    loc = np.asarray(argmax, dtype=np.int64)
    hist = np.bincount(np.minimum(loc * bins // n, bins - 1), minlength=bins)
    p = float(stats.chisquare(hist).pvalue)
    return CondensationReport(float(ratios.mean()), ratios, hist, p)


def sum_sq_limit(w: WeightSequence, regime: Regime) -> tuple[float, float]:
    """(normaliser, constant) with sum_sq / normaliser -> constant in probability.

    Bulk: n sigma_b^2 and 1 + m_b^2/sigma_b^2 (the sum of squares behaves like
    n E[X_b^2]).  SmallEndpoint: x_n and 1.  LargeEndpoint: x_n^2/(alpha n) and
    alpha + 1.  StableGaussian: |lambda_n|/eps_n and alpha - 1 + m^2/sigma^2
    (the last term only for finite variance at the radius).  StableDrift with
    alpha = 2: r_n^2 and 2 + 2 m^2/sigma^2.
    """
    kind, n, x = regime.kind, regime.n, regime.x_n
    if kind == RegimeKind.BULK:
        b = regime.b_n
        m1, m2, _, _ = moments_from_derivatives(eval_derivatives(w, b, 2) + [math.nan] * 2, b)
        var = m2 - m1 * m1
        return n * var, 1.0 + m1 * m1 / var
    if kind == RegimeKind.SMALL_ENDPOINT:
        return float(x), 1.0
    if kind == RegimeKind.LARGE_ENDPOINT:
        alpha = regime.aux["alpha"]
        return x * x / (alpha * n), alpha + 1.0
    st = w.stable
    if kind == RegimeKind.STABLE_GAUSSIAN:
        extra = st.m**2 / st.sigma2 if st.sigma2 is not None else 0.0
        return abs(regime.aux["lambda_n"]) / regime.aux["eps_n"], st.alpha - 1.0 + extra
    if kind == RegimeKind.STABLE_DRIFT and st.alpha == 2.0 and st.sigma2 is not None:
        return regime.aux["r_n"] ** 2, 2.0 + 2.0 * st.m**2 / st.sigma2
    raise ValidationError(f"no sum-of-squares constant for regime {kind.value}")
