"""Exact laws of nondecreasing walks by convolution.

Z_k(x) is the total weight of nondecreasing paths from 0 to x in k steps.
Rows are kept as linear values rescaled by their maximum, with the scale
accumulated in log space, so tables stay finite for any n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .errors import CapTooSmall, IncompatibleEndpoint, ValidationError
from .genfun import Regime, TiltedLaw, WeightSequence, classify_regime, tilted_log_masses

DIRECT_CONV_LIMIT = 4_000_000


def conv_trunc(a: np.ndarray, b: np.ndarray, cap: int) -> np.ndarray:
    """Convolution of two nonnegative arrays truncated to indices 0..cap."""
    a = a[: cap + 1]
    b = b[: cap + 1]
    if min(a.size, b.size) <= 256 or a.size * b.size <= DIRECT_CONV_LIMIT:
        out = np.convolve(a, b)[: cap + 1]
    else:
        out = signal.fftconvolve(a, b)[: cap + 1]
        np.maximum(out, 0.0, out=out)
    if out.size < cap + 1:
        out = np.concatenate([out, np.zeros(cap + 1 - out.size)])
    return out


def trim_log_weights(lw: np.ndarray) -> tuple[np.ndarray, float]:
    """Linear weights scaled to max 1 (trailing zeros dropped) and the log scale."""
    fin = np.isfinite(lw)
    if not fin.any():
        raise ValidationError("step weights are identically zero")
    top = float(np.max(lw[fin]))
    last = int(np.flatnonzero(fin)[-1])
    return np.exp(lw[: last + 1] - top), top


@dataclass(frozen=True)
class ExactTable:
    """Log partition values; ``logZ[k, x] = log Z_k(x)``.

    When built with ``keep_rows=False`` only row n is stored (as ``logZ[0]``)
    and ``first_row`` is n.
    """

    n: int
    cap: int
    logZ: np.ndarray
    normalized: bool
    first_row: int = 0

    def row(self, k: int) -> np.ndarray:
        idx = k - self.first_row
        if idx < 0 or idx >= self.logZ.shape[0]:
            raise ValidationError(f"row {k} not retained in this table")
        return self.logZ[idx]

    def log_z(self, k: int, x: int) -> float:
        if x < 0 or x > self.cap:
            return -math.inf
        return float(self.row(k)[x])

    def masses(self, k: int) -> np.ndarray:
        return np.exp(self.row(k))


def balancing_slope(lw: np.ndarray, target: int, n: int) -> float:
    """Slope s such that weights exp(lw_k - s k) have mean step target / n.

    Tilting by s multiplies Z_k(x) by exp(-s x) without changing bridge laws.
    Centering the walk on the target keeps the entries that matter near the
    top of every row, where convolution rounding is relatively negligible.
    """
    fin = np.flatnonzero(np.isfinite(lw))
    if fin.size < 2 or n <= 0:
        return 0.0
    k = fin.astype(float)
    vals = lw[fin]
    t = target / n
    if not k[0] < t < k[-1]:
        return float((vals[-1] - vals[0]) / (k[-1] - k[0]))

    def excess(sl):
        e = vals - sl * k
        wts = np.exp(e - e.max())
        return float(np.dot(wts, k) / wts.sum()) - t

    base = float((vals[-1] - vals[0]) / (k[-1] - k[0]))
    lo, hi, step = base - 1.0, base + 1.0, 1.0
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo -= step
        step *= 2
    step = 1.0
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi += step
        step *= 2
    if not (excess(lo) > 0 > excess(hi)):
        return base
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12))


def table_from_log_weights(
    lw: np.ndarray, n: int, cap: int, keep_rows: bool = True, normalized: bool = False,
    target: int | None = None,
) -> ExactTable:
    """Tables of log Z_k(x) for k = 0..n, x = 0..cap.

    ``target`` (default cap) is the endpoint the caller cares about; the step
    weights are tilted internally so the walk is centred on it.
    """
    if n < 0 or cap < 0:
        raise ValidationError("n and cap must be nonnegative")
    lw = np.asarray(lw, dtype=float)[: cap + 1]
    if lw.size < cap + 1:
        lw = np.concatenate([lw, np.full(cap + 1 - lw.size, -np.inf)])
    slope = balancing_slope(lw, cap if target is None else target, n)
    pv, shift = trim_log_weights(lw - slope * np.arange(cap + 1))
    row = np.zeros(cap + 1)
    row[0] = 1.0
    logscale = 0.0
    rows = n + 1 if keep_rows else 1
    logZ = np.full((rows, cap + 1), -np.inf)
    if keep_rows or n == 0:
        logZ[0, 0] = 0.0
    with np.errstate(divide="ignore"):
        for k in range(1, n + 1):
            row = conv_trunc(row, pv, cap)
            top = row.max()
            if top <= 0.0:
                logZ[k if keep_rows else 0:] = -np.inf
                break
            row /= top
            logscale += math.log(top) + shift
            if keep_rows:
                logZ[k] = np.log(row) + logscale
            elif k == n:
                logZ[0] = np.log(row) + logscale
    if slope != 0.0:
        logZ += slope * np.arange(cap + 1)
    logZ.setflags(write=False)
    return ExactTable(n=n, cap=cap, logZ=logZ, normalized=normalized, first_row=0 if keep_rows else n)


def build_table(law, n: int, cap: int, keep_rows: bool = True, mass_tol: float | None = None) -> ExactTable:
    """Partition table for a weight sequence or a tilted (probability) law.

    With ``mass_tol`` set and a probability law, raise CapTooSmall when the
    mass of S_n within [0, cap] falls short of 1 by more than ``mass_tol``.
    """
    if isinstance(law, TiltedLaw):
        with np.errstate(divide="ignore"):
            lw = np.log(law.masses[: cap + 1])
        normalized = True
    elif isinstance(law, WeightSequence):
        lw = law.log_weights(cap)
        normalized = False
    else:
        raise ValidationError("law must be a WeightSequence or a TiltedLaw")
    table = table_from_log_weights(lw, n, cap, keep_rows, normalized)
    if mass_tol is not None and normalized:
        total = float(np.sum(table.masses(n)))
        if total < 1.0 - mass_tol:
            raise CapTooSmall(f"mass {total:.3e} of S_{n} within cap {cap}")
    return table


def bridge_table(w: WeightSequence, n: int, x: int) -> ExactTable:
    """Full table up to cap x; weights beyond x never matter for the bridge."""
    table = build_table(w, n, x)
    if table.log_z(n, x) == -math.inf:
        raise IncompatibleEndpoint(f"no path of {n} steps reaches {x}")
    return table


def marginal_from_table(table: ExactTable, n: int, x: int, k: int) -> np.ndarray:
    if not 0 <= k <= n:
        raise ValidationError("k must lie in 0..n")
    tot = table.log_z(n, x)
    if tot == -math.inf:
        raise IncompatibleEndpoint(f"no path of {n} steps reaches {x}")
    j = np.arange(x + 1)
    lp = table.row(k)[: x + 1] + table.row(n - k)[x - j] - tot
    return np.exp(lp)


def bridge_marginal(w: WeightSequence, n: int, x_n: int, k: int) -> np.ndarray:
    """P(S_k = j | S_n = x_n) for j = 0..x_n."""
    table = bridge_table(w, n, x_n)
    pmf = marginal_from_table(table, n, x_n, k)
    if abs(pmf.sum() - 1.0) > 1e-12:
        raise ValidationError(f"bridge marginal mass {pmf.sum()!r} is not 1")
    return pmf


def log_prob_endpoint(w: WeightSequence, n: int, x: int) -> float:
    """log of the total weight Z_n(x) (log P(S_n = x) for a probability w)."""
    return build_table(w, n, x, keep_rows=False).log_z(n, x)


@dataclass(frozen=True)
class LLTResult:
    sup_error: float
    regime: Regime
    window_lo: int
    window_hi: int
    argmax_k: int
    scale: float

    def csv_row(self, family: str) -> dict:
        return {
            "family": family,
            "n": self.regime.n,
            "x_n": self.regime.x_n,
            "regime": self.regime.kind.value,
            "v_n": repr(self.scale),
            "sup_error": repr(self.sup_error),
            "window_lo": self.window_lo,
            "window_hi": self.window_hi,
        }


def llt_discrepancy(w: WeightSequence, n: int, x_n: int, regime: Regime | None = None, **classify) -> LLTResult:
    """sup_k |v P(S^(b_n)_n = x_n + k) - exp(-k^2/(2v^2))/sqrt(2 pi)|.

    The sup runs over k in [-x_n, x_n + 12 v]; the exact law of the tilted
    sum is computed by convolution on [0, x_n + 12 v].
    """
    if regime is None:
        regime = classify_regime(w, n, x_n, **classify)
    v = regime.gaussian_scale
    cap = int(math.ceil(x_n + 12.0 * v))
    lp = tilted_log_masses(w, regime.b_n, cap)
    table = table_from_log_weights(lp, n, cap, keep_rows=False, normalized=True, target=x_n)
    prob = table.masses(n)
    total = float(prob.sum())
    if total < 1.0 - 1e-9:
        raise CapTooSmall(f"window holds only {total!r} of the mass")
    k = np.arange(cap + 1) - x_n
    gauss = np.exp(-(k / v) ** 2 / 2.0) / math.sqrt(2.0 * math.pi)
    err = np.abs(v * prob - gauss)
    i = int(np.argmax(err))
    return LLTResult(float(err[i]), regime, -x_n, cap - x_n, int(k[i]), v)
