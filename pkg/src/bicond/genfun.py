"""Weight sequences, their generating functions, tilting and regime classification.

A weight sequence p(k), k >= 0, is described by a family (closed form or a
finite table).  Generating-function derivatives are evaluated analytically
when a closed form exists and by adaptively truncated power series otherwise.
All weight arithmetic is done on log weights so that tilts of huge or tiny
sequences stay representable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import reduce

import numpy as np
from scipy import optimize, special

from .errors import (
    AmbiguousRegime,
    DivergentSeries,
    InfiniteValue,
    InvalidWeights,
    MissingAnalyticData,
    OutOfRange,
    ValidationError,
)

MAX_ORDER = 4
SERIES_TOL = 1e-16
MAX_SERIES_CAP = 1 << 22


def _as_float(value) -> float:
    """Accept numbers or exact strings such as "3/16"."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def _rising_half(m: int) -> float:
    # (1/2)(3/2)...(m - 1/2)
    out = 1.0
    for i in range(m):
        out *= i + 0.5
    return out


def _falling(a: float, j: int) -> float:
    out = 1.0
    for i in range(j):
        out *= a - i
    return out


def _leibniz_over_z(z: float, g: list[float], order: int) -> list[float]:
    """Derivatives of g(z)/z from the derivatives of g, by the Leibniz rule."""
    out = []
    for j in range(order + 1):
        total = 0.0
        for i in range(j + 1):
            f_i = (-1) ** i * math.factorial(i) * z ** (-i - 1)
            total += math.comb(j, i) * f_i * g[j - i]
        out.append(total)
    return out


@dataclass(frozen=True)
class StableData:
    """Stable-domain description of the law tilted at the radius.

    ``alpha`` is the stability index, ``m`` the mean at the radius and ``L``
    the (declared constant) value of the slowly varying function.  When the
    variance at the radius is finite, ``sigma2`` holds it and ``alpha`` is 2.
    """

    alpha: float
    m: float
    L: float
    sigma2: float | None = None

    def r(self, n: int) -> float:
        if self.sigma2 is not None:
            return math.sqrt(n * self.sigma2 / 2.0)
        return (n * self.L) ** (1.0 / self.alpha)


@dataclass(frozen=True)
class WeightSequence:
    """Base class for nonnegative weight sequences p(k), k >= 0.

    ``strict`` enforces at least two support points and aperiodicity.  Offspring
    sequences of plane trees (for instance binary trees) are often periodic, so
    tree code builds them with ``strict=False``.
    """

    strict: bool = field(default=True, kw_only=True)
    declared_delta: tuple | None = field(default=None, kw_only=True)
    declared_stable: StableData | None = field(default=None, kw_only=True)
    beta: float | None = field(default=None, kw_only=True)

    family = "abstract"

    def __post_init__(self):
        lw = self._log_weights(self._probe_length())
        if np.any(np.isnan(lw)):
            raise InvalidWeights("weights must be nonnegative real numbers")
        support = np.flatnonzero(np.isfinite(lw))
        if support.size == 0:
            raise InvalidWeights("weight sequence is identically zero")
        if self.strict:
            if support.size < 2:
                raise InvalidWeights("need at least two indices with positive weight")
            h = reduce(math.gcd, (int(d) for d in np.diff(support)))
            if h != 1:
                raise InvalidWeights(f"support lies in a sublattice of span {h}")

    # -- family interface ---------------------------------------------
    def _log_weights(self, kmax: int) -> np.ndarray:
        raise NotImplementedError

    def _closed(self, b: float, order: int):
        return None

    def _probe_length(self) -> int:
        ms = self.max_support
        return 64 if ms is None else ms

    @property
    def radius(self) -> float:
        return math.inf

    @property
    def max_support(self) -> int | None:
        return None

    @property
    def default_delta(self) -> tuple | None:
        return None

    @property
    def default_stable(self) -> StableData | None:
        return None

    def params(self) -> dict:
        return {}

    # -- derived accessors --------------------------------------------
    def log_weights(self, kmax: int) -> np.ndarray:
        """log p(k) for k = 0..kmax (``-inf`` where p(k) = 0)."""
        out = np.asarray(self._log_weights(int(kmax)), dtype=float)
        return out[: kmax + 1]

    def weights(self, kmax: int) -> np.ndarray:
        return np.exp(self.log_weights(kmax))

    @property
    def support_min(self) -> int:
        lw = self._log_weights(self._probe_length())
        return int(np.flatnonzero(np.isfinite(lw))[0])

    @property
    def delta(self) -> tuple | None:
        """Declared (alpha, c) with G(rho - z) ~ c z^(-alpha), if any."""
        return self.declared_delta if self.declared_delta is not None else self.default_delta

    @property
    def stable(self) -> StableData | None:
        return self.declared_stable if self.declared_stable is not None else self.default_stable

    def shifted(self, strict: bool = False) -> "Shifted":
        """The sequence k -> p(k + 1)."""
        return Shifted(self, strict=strict)

    def descriptor(self) -> dict:
        out = {"family": self.family}
        out.update(self.params())
        if not self.strict:
            out["strict"] = False
        if self.declared_delta is not None:
            out["delta"] = list(self.declared_delta)
        if self.declared_stable is not None:
            s = self.declared_stable
            out["stable"] = {"alpha": s.alpha, "m": s.m, "L": s.L, "sigma2": s.sigma2}
        if self.beta is not None:
            out["beta"] = self.beta
        return out


@dataclass(frozen=True)
class Tabulated(WeightSequence):
    weights_: tuple = ()
    rho: float = math.inf

    family = "tabulated"

    def __post_init__(self):
        object.__setattr__(self, "weights_", tuple(float(v) for v in self.weights_))
        if any(v < 0 or math.isnan(v) for v in self.weights_):
            raise InvalidWeights("weights must be nonnegative")
        super().__post_init__()

    def _log_weights(self, kmax):
        out = np.full(kmax + 1, -np.inf)
        w = np.asarray(self.weights_[: kmax + 1], dtype=float)
        with np.errstate(divide="ignore"):
            out[: w.size] = np.log(w)
        return out

    @property
    def radius(self):
        return self.rho

    @property
    def max_support(self):
        nz = [k for k, v in enumerate(self.weights_) if v > 0]
        return nz[-1] if nz else 0

    def params(self):
        out = {"weights": list(self.weights_)}
        if math.isfinite(self.rho):
            out["radius"] = self.rho
        return out


@dataclass(frozen=True)
class BernoulliStep(WeightSequence):
    """q(0) = q(1) = 1."""

    family = "bernoulli"

    def _log_weights(self, kmax):
        out = np.full(kmax + 1, -np.inf)
        out[: min(2, kmax + 1)] = 0.0
        return out

    @property
    def max_support(self):
        return 1


@dataclass(frozen=True)
class Geometric(WeightSequence):
    """p(k) = scale * ratio**k."""

    ratio: float = 0.5
    scale: float = 0.5

    family = "geometric"

    def __post_init__(self):
        if not (self.ratio > 0 and self.scale > 0):
            raise InvalidWeights("geometric ratio and scale must be positive")
        super().__post_init__()

    def _log_weights(self, kmax):
        k = np.arange(kmax + 1)
        return math.log(self.scale) + k * math.log(self.ratio)

    @property
    def radius(self):
        return 1.0 / self.ratio

    @property
    def default_delta(self):
        return (1.0, self.scale / self.ratio)

    def _closed(self, b, order):
        r, c = self.ratio, self.scale
        if b * r >= 1.0:
            return [math.inf] * (order + 1)
        return [c * math.factorial(j) * r**j / (1.0 - r * b) ** (j + 1) for j in range(order + 1)]

    def params(self):
        return {"ratio": self.ratio, "scale": self.scale}


@dataclass(frozen=True)
class UniformMapStep(WeightSequence):
    """p(k) = 2 (3/16)^(k+1) C(2k+1, k); G(z) = ((1 - 3z/4)^(-1/2) - 1)/z."""

    family = "uniform-map"

    def _log_weights(self, kmax):
        k = np.arange(kmax + 1, dtype=float)
        logc = special.gammaln(2 * k + 2) - special.gammaln(k + 1) - special.gammaln(k + 2)
        return math.log(2.0) + (k + 1) * math.log(3.0 / 16.0) + logc

    @property
    def radius(self):
        return 4.0 / 3.0

    @property
    def default_delta(self):
        return (0.5, math.sqrt(3.0) / 2.0)

    def _closed(self, b, order):
        if b >= self.radius:
            return [math.inf] * (order + 1)
        if b < 0.5 * self.radius:
            return None
        u = 1.0 - 0.75 * b
        g = [u**-0.5 - 1.0]
        for m in range(1, order + 1):
            g.append(_rising_half(m) * 0.75**m * u ** (-0.5 - m))
        return _leibniz_over_z(b, g, order)


@dataclass(frozen=True)
class MapInduced(WeightSequence):
    """Offspring weights theta(0) = 1, theta(i) = C(2i-1, i-1) q_i of a map weight q.

    ``q`` lists q_1, q_2, ...; ``None`` stands for q_i = 1 for all i, where
    F(z) = 1/2 + 1/(2 sqrt(1 - 4z)).
    """

    q: tuple | None = None

    family = "map-induced"

    def __post_init__(self):
        if self.q is not None:
            object.__setattr__(self, "q", tuple(float(v) for v in self.q))
            if any(v < 0 or math.isnan(v) for v in self.q):
                raise InvalidWeights("map weights must be nonnegative")
        super().__post_init__()

    def _log_weights(self, kmax):
        i = np.arange(kmax + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logc = special.gammaln(2 * i) - special.gammaln(i) - special.gammaln(i + 1)
            if self.q is None:
                logq = np.zeros(kmax + 1)
            else:
                logq = np.full(kmax + 1, -np.inf)
                qs = np.asarray(self.q[:kmax], dtype=float)
                logq[1 : qs.size + 1] = np.log(qs)
        out = logc + logq
        out[0] = 0.0
        return out

    @property
    def radius(self):
        return 0.25 if self.q is None else math.inf

    @property
    def max_support(self):
        if self.q is None:
            return None
        nz = [i + 1 for i, v in enumerate(self.q) if v > 0]
        return nz[-1] if nz else 0

    @property
    def default_delta(self):
        return (0.5, 0.25) if self.q is None else None

    def _closed(self, b, order):
        if self.q is not None:
            return None
        if b >= 0.25:
            return [math.inf] * (order + 1)
        u = 1.0 - 4.0 * b
        out = [0.5 + 0.5 * u**-0.5]
        for j in range(1, order + 1):
            out.append(0.5 * _rising_half(j) * 4.0**j * u ** (-0.5 - j))
        return out

    def params(self):
        return {"q": "uniform" if self.q is None else list(self.q)}


@dataclass(frozen=True)
class StableExample(WeightSequence):
    """theta with F(s) = s + (1 - s/alpha)^alpha, 1 < alpha < 2, radius alpha.

    theta(0) = 1, theta(1) = 0 and theta(k) = (-1)^k C(alpha, k) alpha^(-k) for
    k >= 2.  Tilted at the radius the law has mean 1 and tail index 1 + alpha.
    """

    alpha: float = 1.5

    family = "stable"

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise InvalidWeights("stable example needs 1 < alpha < 2")
        super().__post_init__()

    def _log_weights(self, kmax):
        a = self.alpha
        k = np.arange(kmax + 1, dtype=float)
        out = special.gammaln(a + 1) - special.gammaln(k + 1) - special.gammaln(a - k + 1) - k * math.log(a)
        out[0] = 0.0
        if kmax >= 1:
            out[1] = -np.inf
        return out

    @property
    def radius(self):
        return self.alpha

    @property
    def default_stable(self):
        return StableData(alpha=self.alpha, m=1.0, L=1.0 / self.alpha)

    def _closed(self, b, order):
        a = self.alpha
        if b < 0.5 * a:
            return None
        u = max(a - b, 0.0) / a
        out = [b + u**a]
        if order >= 1:
            out.append(1.0 - u ** (a - 1))
        for j in range(2, order + 1):
            coef = _falling(a, j) * (-1.0 / a) ** j
            out.append(math.inf if u == 0.0 else coef * u ** (a - j))
        return out

    def params(self):
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class Shifted(WeightSequence):
    """k -> base(k + 1); generating function (F(z) - F(0))/z."""

    base: WeightSequence | None = None

    family = "shifted"

    def _log_weights(self, kmax):
        return self.base.log_weights(kmax + 1)[1:]

    def _probe_length(self):
        return max(self.base._probe_length() - 1, 1)

    @property
    def radius(self):
        return self.base.radius

    @property
    def max_support(self):
        ms = self.base.max_support
        return None if ms is None else max(ms - 1, 0)

    @property
    def default_delta(self):
        d = self.base.delta
        if d is None or not math.isfinite(self.radius):
            return None
        return (d[0], d[1] / self.radius)

    def _closed(self, b, order):
        rho = self.radius
        if not math.isfinite(rho) or b < 0.5 * rho:
            return None
        fd = eval_derivatives(self.base, b, order)
        f0 = float(np.exp(self.base.log_weights(0)[0]))
        g = [fd[0] - f0] + list(fd[1:])
        out = []
        for j in range(order + 1):
            if any(math.isinf(v) for v in g[: j + 1]):
                out.append(math.inf)
            else:
                out.append(_leibniz_over_z(b, g[: j + 1], j)[j])
        return out

    def params(self):
        return {"base": self.base.descriptor()}


FAMILIES = {
    cls.family: cls
    for cls in (Tabulated, BernoulliStep, Geometric, UniformMapStep, MapInduced, StableExample, Shifted)
}


def from_descriptor(desc) -> WeightSequence:
    """Build a weight sequence from its JSON descriptor (a bare name uses defaults)."""
    if isinstance(desc, str):
        desc = {"family": desc}
    if not isinstance(desc, dict) or "family" not in desc:
        raise ValidationError("weight descriptor needs a 'family' key")
    d = dict(desc)
    name = d.pop("family")
    common = {}
    if "strict" in d:
        common["strict"] = bool(d.pop("strict"))
    if "delta" in d:
        a, c = d.pop("delta")
        common["declared_delta"] = (_as_float(a), _as_float(c))
    if "stable" in d:
        s = d.pop("stable")
        sig = s.get("sigma2")
        common["declared_stable"] = StableData(
            alpha=_as_float(s["alpha"]), m=_as_float(s["m"]), L=_as_float(s["L"]),
            sigma2=None if sig is None else _as_float(sig),
        )
    if "beta" in d:
        common["beta"] = _as_float(d.pop("beta"))
    try:
        if name == "tabulated":
            w = [_as_float(v) for v in d.pop("weights")]
            rho = _as_float(d.pop("radius", math.inf))
            out = Tabulated(tuple(w), rho, **common)
        elif name == "bernoulli":
            out = BernoulliStep(**common)
        elif name == "geometric":
            r = _as_float(d.pop("ratio", 0.5))
            c = _as_float(d.pop("scale", 1.0 - r if r < 1 else 1.0))
            out = Geometric(r, c, **common)
        elif name == "uniform-tree":
            out = Geometric(1.0, 1.0, **common)
        elif name == "binary":
            common.setdefault("strict", False)
            out = Tabulated((1.0, 0.0, 1.0), **common)
        elif name == "uniform-map":
            out = UniformMapStep(**common)
        elif name == "map-induced":
            q = d.pop("q", "uniform")
            out = MapInduced(None if q == "uniform" else tuple(_as_float(v) for v in q), **common)
        elif name == "stable":
            out = StableExample(_as_float(d.pop("alpha", 1.5)), **common)
        elif name == "shifted":
            out = Shifted(from_descriptor(d.pop("base")), **common)
        else:
            raise ValidationError(f"unknown weight family {name!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad parameters for family {name!r}: {exc}") from exc
    if d:
        raise ValidationError(f"unexpected keys for family {name!r}: {sorted(d)}")
    return out


# ----------------------------------------------------------------------
# generating functions
# ----------------------------------------------------------------------
def _series_derivatives(w: WeightSequence, b: float, order: int) -> list[float]:
    if b == 0.0:
        lw = w.log_weights(order)
        return [math.factorial(j) * math.exp(lw[j]) for j in range(order + 1)]
    rho = w.radius
    logb = math.log(b)
    ms = w.max_support
    cap = 64 if ms is None else ms
    while True:
        lw = w.log_weights(cap)
        k = np.arange(cap + 1, dtype=float)
        logt = lw + k * logb
        top = np.max(logt[np.isfinite(logt)])
        t = np.exp(logt - top)
        sums = []
        for j in range(order + 1):
            fac = np.ones_like(k)
            for i in range(j):
                fac *= k - i
            sums.append(float(np.sum(t * fac)))
        if ms is not None and cap >= ms:
            break
        # every family's term ratios increase to b/rho, so a geometric bound holds
        last, prev = t[-1], t[-2]
        q = b / rho if math.isfinite(rho) else 0.0
        if prev > 0:
            q = max(q, last / prev)
        if q < 1.0:
            tail = last * q * math.factorial(order) * float(cap + 1) ** order / (1.0 - q) ** (order + 1)
            if tail <= SERIES_TOL * min(s for s in sums if s > 0):
                break
        if cap >= MAX_SERIES_CAP:
            raise DivergentSeries(f"series tail bound unattainable at cap {cap} for b={b}")
        cap *= 2
    scale = math.exp(top)
    return [s * scale / b**j for j, s in enumerate(sums)]


def eval_derivatives(w: WeightSequence, b: float, order: int = 2) -> list[float]:
    """Return [G(b), G'(b), ..., G^(order)(b)].

    Values are ``inf`` at b equal to the radius when the derivative diverges.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ValidationError(f"order must be in 0..{MAX_ORDER}")
    b = float(b)
    if not (b >= 0.0) or math.isnan(b):
        raise OutOfRange("tilt parameter must be nonnegative")
    rho = w.radius
    if b > rho:
        raise DivergentSeries(f"b={b} exceeds the radius of convergence {rho}")
    closed = w._closed(b, order)
    if closed is not None:
        return [float(v) for v in closed]
    if b == rho:
        raise DivergentSeries("no closed form available at the radius of convergence")
    return _series_derivatives(w, b, order)


def psi(w: WeightSequence, b: float) -> float:
    """Mean of the b-tilted law, b G'(b)/G(b)."""
    if b == 0:
        return float(w.support_min)
    if math.isinf(b):
        return psi_max(w)
    g0, g1 = eval_derivatives(w, b, 1)
    if math.isinf(g1) or math.isinf(g0):
        raise InfiniteValue(f"Psi is infinite at b={b}")
    return b * g1 / g0


def psi_max(w: WeightSequence) -> float:
    """Psi at the radius (sup of the support when the radius is infinite)."""
    rho = w.radius
    if not math.isfinite(rho):
        ms = w.max_support
        return math.inf if ms is None else float(ms)
    try:
        g0, g1 = eval_derivatives(w, rho, 1)
    except DivergentSeries:
        return math.inf
    if math.isinf(g0) or math.isinf(g1):
        return math.inf
    return rho * g1 / g0


def solve_tilt(w: WeightSequence, target_mean: float) -> float:
    """The b with Psi(b) = target_mean."""
    t = float(target_mean)
    lo, hi = float(w.support_min), psi_max(w)
    if not lo < t < hi:
        raise OutOfRange(f"target mean {t} outside ({lo}, {hi})")
    rho = w.radius
    tol = 1e-12 * max(1.0, t)

    if math.isfinite(rho) and t > psi(w, 0.5 * rho):
        # parametrise b = rho (1 - e^u) to resolve b close to the radius
        def f(u):
            return psi(w, rho * -math.expm1(u)) - t

        u_hi = math.log(0.5)
        u_lo = u_hi
        while f(u_lo) <= 0:
            u_lo -= 2.0
            if u_lo < -36.0:
                raise OutOfRange(f"target mean {t} too close to Psi(rho)")
        u = optimize.brentq(f, u_lo, u_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        b = rho * -math.expm1(u)
    else:
        def f(u):
            return psi(w, math.exp(u)) - t

        u_hi = math.log(0.5 * rho) if math.isfinite(rho) else 0.0
        while math.isinf(rho) and f(u_hi) < 0:
            u_hi += 1.0
        u_lo = u_hi - 1.0
        while f(u_lo) >= 0:
            u_lo -= 2.0
            if u_lo < -700:
                raise OutOfRange(f"target mean {t} too close to i_p")
        u = optimize.brentq(f, u_lo, u_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        b = math.exp(u)
    if abs(psi(w, b) - t) > tol:
        raise OutOfRange(f"could not solve Psi(b) = {t} to tolerance")
    return b


def moments_from_derivatives(d: list[float], b: float) -> tuple:
    """Raw moments E[X^j], j = 1..4, of the b-tilted law from G..G''''.

    Falling-factorial moments are b^j G^(j)/G; raw moments follow from Stirling
    numbers of the second kind.
    """
    g0 = d[0]
    f = [b**j * d[j] / g0 if j < len(d) else math.nan for j in range(5)]
    m1 = f[1]
    m2 = f[2] + f[1]
    m3 = f[3] + 3 * f[2] + f[1]
    m4 = f[4] + 6 * f[3] + 7 * f[2] + f[1]
    return m1, m2, m3, m4


@dataclass(frozen=True)
class TiltedLaw:
    b: float
    masses: np.ndarray
    tail_mass: float
    mean: float
    m2: float
    m3: float
    m4: float
    log_g: float

    @property
    def variance(self) -> float:
        return self.m2 - self.mean**2

    @property
    def cap(self) -> int:
        return self.masses.size - 1


def tilted_log_masses(w: WeightSequence, b: float, cap: int) -> np.ndarray:
    """log(b^k p(k)/G(b)) for k = 0..cap."""
    g = eval_derivatives(w, b, 0)[0]
    if math.isinf(g):
        raise DivergentSeries(f"G is infinite at b={b}")
    k = np.arange(cap + 1, dtype=float)
    lw = w.log_weights(cap)
    with np.errstate(divide="ignore"):
        logb = math.log(b) if b > 0 else -np.inf
        out = lw + np.where(k > 0, k * logb, 0.0) - math.log(g)
    return out


def tilted_law(w: WeightSequence, b: float, tail_tol: float = 1e-12, max_cap: int = 1 << 24) -> TiltedLaw:
    """The law b^k p(k)/G(b), truncated where the discarded mass is below tail_tol."""
    if tail_tol <= 0:
        raise ValidationError("tail_tol must be positive")
    d = eval_derivatives(w, b, MAX_ORDER)
    if math.isinf(d[0]):
        raise DivergentSeries(f"G is infinite at b={b}")
    rho = w.radius
    ms = w.max_support
    cap = 64 if ms is None else ms
    while True:
        masses = np.exp(tilted_log_masses(w, b, cap))
        if ms is not None and cap >= ms:
            tail = 0.0
            break
        q = b / rho if math.isfinite(rho) else 0.0
        if masses[-2] > 0:
            q = max(q, masses[-1] / masses[-2])
        if q < 1.0:
            tail = masses[-1] * q / (1.0 - q)
            if tail < tail_tol:
                break
        if cap >= max_cap:
            raise DivergentSeries(f"tail mass bound not reached below {tail_tol} at cap {cap}")
        cap *= 2
    masses.setflags(write=False)
    m1, m2, m3, m4 = moments_from_derivatives(d, b)
    return TiltedLaw(b=b, masses=masses, tail_mass=float(tail), mean=m1, m2=m2, m3=m3, m4=m4, log_g=math.log(d[0]))


# ----------------------------------------------------------------------
# leaf fraction map
# ----------------------------------------------------------------------
def leaf_fraction_A(theta: WeightSequence, b: float) -> float:
    """A(b) = 1 - (F(b) - F(0))/(b F'(b)) for the offspring weights theta."""
    if not 0 < b <= theta.radius:
        raise OutOfRange("b must lie in (0, rho]")
    f1 = eval_derivatives(theta, b, 1)[1]
    if math.isinf(f1):
        return 1.0
    g = eval_derivatives(theta.shifted(), b, 0)[0]  # (F(b) - F(0))/b without cancellation
    return 1.0 - g / f1


def solve_leaf_fraction(theta: WeightSequence, tau: float) -> float:
    """b with A(b) = tau, using A = Psi/(1 + Psi) for the shifted weights."""
    if not 0 < tau < 1:
        raise OutOfRange("leaf fraction must lie in (0, 1)")
    return solve_tilt(theta.shifted(), tau / (1.0 - tau))


# ----------------------------------------------------------------------
# regimes
# ----------------------------------------------------------------------
class RegimeKind(str, Enum):
    BULK = "Bulk"
    SMALL_ENDPOINT = "SmallEndpoint"
    LARGE_ENDPOINT = "LargeEndpoint"
    STABLE_DRIFT = "StableDrift"
    STABLE_GAUSSIAN = "StableGaussian"
    CONDENSATION = "Condensation"


@dataclass(frozen=True)
class Regime:
    """Classified regime of a conditioned walk.

    ``v_n`` is the local-limit scale: P(S_n = x_n + k) is close to
    exp(-k^2/(2 v_n^2))/(v_n sqrt(2 pi)) in the Gaussian regimes.  For
    StableDrift it is r_n and for Condensation it is lambda_n.
    """

    kind: RegimeKind
    n: int
    x_n: int
    v_n: float
    b_n: float
    aux: dict = field(default_factory=dict)
    alternatives: dict = field(default_factory=dict)

    @property
    def gaussian_scale(self) -> float:
        """Standard deviation of the Gaussian local limit, if there is one."""
        if self.kind == RegimeKind.STABLE_DRIFT:
            if self.aux.get("alpha") == 2.0:
                return math.sqrt(2.0) * self.v_n
            raise ValidationError("stable drift regime with alpha < 2 has no Gaussian local limit")
        if self.kind == RegimeKind.CONDENSATION:
            raise ValidationError("condensation regime has no Gaussian local limit")
        return self.v_n


def _bulk_scale(w: WeightSequence, n: int, b: float) -> float:
    d = eval_derivatives(w, b, 2)
    m1, m2, _, _ = moments_from_derivatives(d + [math.nan, math.nan], b)
    return math.sqrt(n * (m2 - m1 * m1))


def classify_regime(
    w: WeightSequence,
    n: int,
    x_n: int,
    *,
    small_ratio_threshold: float = 0.05,
    large_ratio_threshold: float = 20.0,
    stable_window: float = 3.0,
    kind: RegimeKind | str | None = None,
) -> Regime:
    """Pick the regime of (n, x_n) and its scaling sequence v_n.

    With declared stable data, lambda_n = x_n - m n is compared to r_n: within
    ``stable_window`` gives StableDrift, above it Condensation, below it
    StableGaussian (the bulk value of v_n is reported as an alternative).
    Without stable data the ratio x_n/n selects SmallEndpoint, LargeEndpoint
    or Bulk.  ``kind`` forces a regime (its data must still be available).
    """
    n, x_n = int(n), int(x_n)
    if n < 1:
        raise ValidationError("n must be positive")
    ip = w.support_min
    if x_n <= ip * n:
        raise OutOfRange(f"x_n={x_n} must exceed i_p * n = {ip * n}")
    ratio = x_n / n
    st = w.stable
    if kind is not None:
        kind = RegimeKind(kind)
    else:
        if st is not None:
            lam = x_n - st.m * n
            z = lam / st.r(n)
            if abs(z) <= stable_window:
                kind = RegimeKind.STABLE_DRIFT
            elif z > 0:
                kind = RegimeKind.CONDENSATION
            else:
                kind = RegimeKind.STABLE_GAUSSIAN
        elif ratio < small_ratio_threshold and ip == 0 and w.log_weights(1)[1] > -np.inf:
            kind = RegimeKind.SMALL_ENDPOINT
        elif ratio > large_ratio_threshold and w.delta is not None:
            kind = RegimeKind.LARGE_ENDPOINT
        elif ratio < psi_max(w):
            kind = RegimeKind.BULK
        else:
            raise AmbiguousRegime(f"x_n/n = {ratio} lies in no declared window")

    rho = w.radius
    aux: dict = {"rho": rho}
    alternatives: dict = {}
    if kind in (RegimeKind.BULK, RegimeKind.SMALL_ENDPOINT, RegimeKind.LARGE_ENDPOINT):
        b = solve_tilt(w, ratio)
        if kind == RegimeKind.BULK:
            v = _bulk_scale(w, n, b)
        elif kind == RegimeKind.SMALL_ENDPOINT:
            lw = w.log_weights(1)
            if not (np.isfinite(lw[0]) and np.isfinite(lw[1])):
                raise MissingAnalyticData("small endpoint regime needs p(0), p(1) > 0")
            v = math.sqrt(x_n)
        else:
            if w.delta is None:
                raise MissingAnalyticData("large endpoint regime needs declared (alpha, c)")
            alpha, c = w.delta
            aux.update(alpha=alpha, c=c)
            v = x_n / math.sqrt(alpha * n)
        return Regime(kind, n, x_n, v, b, aux, alternatives)

    if st is None:
        raise MissingAnalyticData(f"{kind.value} regime needs declared stable data")
    lam = x_n - st.m * n
    r = st.r(n)
    aux.update(alpha=st.alpha, m=st.m, lambda_n=lam, r_n=r)
    if kind == RegimeKind.STABLE_GAUSSIAN:
        if lam >= 0:
            raise ValidationError("stable Gaussian regime needs lambda_n < 0")
        b = solve_tilt(w, ratio)
        eps = -math.expm1(math.log(b / rho))
        aux["eps_n"] = eps
        v = math.sqrt((st.alpha - 1.0) * abs(lam) / eps)
        alternatives[RegimeKind.BULK.value] = _bulk_scale(w, n, b)
        return Regime(kind, n, x_n, v, b, aux, alternatives)
    if kind == RegimeKind.STABLE_DRIFT:
        aux["lambda"] = lam / r
        b = solve_tilt(w, ratio) if lam < 0 else rho
        return Regime(kind, n, x_n, r, b, aux, alternatives)
    if lam <= 0:
        raise ValidationError("condensation regime needs lambda_n > 0")
    if st.sigma2 is not None:
        # finite variance at the radius: lambda_n >= sqrt(c ln n) for some c > (beta - 3)/sigma^2
        if w.beta is None:
            raise MissingAnalyticData("condensation with finite variance needs a declared tail index beta")
        aux["beta"] = w.beta
        if n > 1 and lam * lam <= (w.beta - 3.0) / st.sigma2 * math.log(n):
            raise OutOfRange(f"lambda_n = {lam} is below sqrt((beta - 3) ln(n) / sigma^2)")
    return Regime(RegimeKind.CONDENSATION, n, x_n, lam, rho, aux, alternatives)
