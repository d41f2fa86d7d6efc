"""Monte Carlo experiments over n-grids with reproducible substreams.

Replica i at grid point n draws from Generator(Philox(SeedSequence([seed, n, i]))),
so results depend only on (config, seed) and never on the number of workers.
"""
from __future__ import annotations

import ast
import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .bridge import bridge_sampler, marginal_devs, sum_sq_limit
from .errors import BicondError, ConfigError, DegenerateFit, ValidationError
from .exactdist import llt_discrepancy
from .genfun import RegimeKind, WeightSequence, classify_regime, from_descriptor
from .lukas import luka_scale, tree_sampler
from .mapbij import distance_scale, map_theta, sample_map

log = logging.getLogger(__name__)

CSV_FIELDS = ["experiment", "family", "n", "param_json", "stat", "estimate", "stderr", "replicas", "seed", "config_hash"]
KINDS = ("bridge", "tree", "map", "llt")

_ALLOWED_FUNCS = {"floor": math.floor, "ceil": math.ceil, "sqrt": math.sqrt, "log": math.log, "round": round}


# ----------------------------------------------------------------------
# conditioning rules
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Rule:
    """value(n) = linear * n + coef * n**power + offset, then rounded.

    ``expr`` (optional) is an arithmetic expression in n such as "0.5n",
    "n + n^0.9" or "ceil(n^1.5)"; when set it replaces the linear form.
    """

    linear: float = 0.0
    coef: float = 0.0
    power: float = 1.0
    offset: float = 0.0
    rounding: str = "floor"
    expr: str | None = None

    def __post_init__(self):
        if self.rounding not in ("floor", "ceil", "round"):
            raise ConfigError(f"unknown rounding {self.rounding!r}")
        if self.expr is not None:
            _parse_expr(self.expr)

    def value(self, n: int) -> int:
        if self.expr is not None:
            v = _eval_expr(_parse_expr(self.expr), n)
        else:
            v = self.linear * n + self.coef * float(n) ** self.power + self.offset
        if isinstance(v, int):
            return v
        if not math.isfinite(v):
            raise ConfigError(f"rule gives {v!r} at n={n}")
        # a small guard keeps exact values such as 1000**1.5 from rounding away
        if self.rounding == "floor":
            return int(math.floor(v + 1e-9))
        if self.rounding == "ceil":
            return int(math.ceil(v - 1e-9))
        return int(round(v))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def parse(cls, spec) -> "Rule":
        if isinstance(spec, Rule):
            return spec
        if isinstance(spec, dict):
            try:
                return cls(**spec)
            except TypeError as exc:
                raise ConfigError(f"bad rule {spec!r}: {exc}") from None
        if isinstance(spec, (int, float)):
            return cls(offset=float(spec))
        if isinstance(spec, str):
            return cls(expr=spec)
        raise ConfigError(f"cannot read a rule from {spec!r}")


def _normalise_expr(text: str) -> str:
    out = []
    s = text.replace("^", "**").replace(" ", "")
    for i, ch in enumerate(s):
        # implicit product such as "0.5n" or "2(n+1)"
        if i and (ch == "n" or ch == "(") and (s[i - 1].isdigit() or s[i - 1] == "."):
            out.append("*")
        out.append(ch)
    return "".join(out)


def _parse_expr(text: str) -> ast.Expression:
    try:
        tree = ast.parse(_normalise_expr(text), mode="eval")
    except SyntaxError:
        raise ConfigError(f"cannot parse rule {text!r}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Load)):
            continue
        if isinstance(node, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.FloorDiv)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id == "n" or node.id in _ALLOWED_FUNCS):
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS:
            continue
        raise ConfigError(f"rule {text!r} uses a disallowed construct")
    return tree


def _eval_expr(tree: ast.Expression, n: int):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return n
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _ALLOWED_FUNCS[node.func.id](*[ev(a) for a in node.args])
        a, b = ev(node.left), ev(node.right)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return a / b
        if isinstance(op, ast.FloorDiv):
            return a // b
        return float(a) ** b

    return ev(tree)


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


# ----------------------------------------------------------------------
# configuration and results
# ----------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    name: str
    kind: str
    family: object
    rule: object
    n_grid: list
    replicas: int = 1
    seed: int = 0
    statistics: list = field(default_factory=lambda: ["sum_sq_scaled"])
    output: str | None = None
    regime: str | None = None
    workers: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.rule = Rule.parse(self.rule)
        self.n_grid = [int(v) for v in self.n_grid]
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n-grid must be nonempty and strictly increasing")
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be >= 1")
        self.replicas = int(self.replicas)
        if not self.statistics:
            raise ConfigError("statistics list is empty")
        unknown = [s for s in self.statistics if not _stat_known(self.kind, s)]
        if unknown:
            raise ConfigError(f"unknown statistics for {self.kind}: {unknown}")

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "family": self.family,
            "rule": self.rule.to_dict(),
            "n_grid": self.n_grid,
            "replicas": self.replicas,
            "seed": int(self.seed),
            "statistics": list(self.statistics),
            "regime": self.regime,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        p = Path(path)
        text = p.read_bytes()
        data = tomllib.loads(text.decode()) if p.suffix == ".toml" else json.loads(text)
        return cls.from_dict(data)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    family: str
    n: int
    param_json: str
    stat: str
    estimate: float
    stderr: float
    replicas: int
    seed: int
    config_hash: str


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    version: str = __version__

    def lookup(self, n: int, stat: str) -> ResultRow:
        for r in self.rows:
            if r.n == n and r.stat == stat:
                return r
        raise KeyError((n, stat))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            d = asdict(r)
            d["estimate"] = repr(float(r.estimate))
            d["stderr"] = repr(float(r.stderr))
            w.writerow(d)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config.descriptor(),
                "config_hash": self.config.config_hash,
                "version": self.version,
                "rows": [asdict(r) for r in self.rows],
                "failures": self.failures,
            },
            indent=2,
            default=str,
        )

    def write(self, path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_csv())
        p.with_suffix(".json").write_text(self.to_json())


# ----------------------------------------------------------------------
# statistics
# ----------------------------------------------------------------------
_BRIDGE_STATS = {"sum_sq", "sum_sq_scaled", "max_ratio", "argmax_frac"}
_TREE_STATS = {"sum_sq", "sum_sq_scaled", "sup_scaled", "max_ratio"}
_MAP_STATS = {"mean_distance", "rescaled_distance", "sigma2", "max_face_degree"}


def _stat_known(kind: str, name: str) -> bool:
    if kind == "bridge":
        return name in _BRIDGE_STATS or _var_t(name) is not None
    if kind == "tree":
        return name in _TREE_STATS
    if kind == "map":
        return name in _MAP_STATS
    return name == "sup_error"


def _var_t(name: str) -> float | None:
    """'var@0.3' asks for Var((S_{nt} - x t)/sqrt(v_n)) at t = 0.3."""
    if not name.startswith("var@"):
        return None
    try:
        t = float(name[4:])
    except ValueError:
        return None
    return t if 0.0 < t < 1.0 else None


def replica_rng(seed: int, n: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(n), int(i)])))


def _family(spec) -> WeightSequence:
    if isinstance(spec, WeightSequence):
        return spec
    return from_descriptor(spec)


def _family_name(spec) -> str:
    if isinstance(spec, WeightSequence):
        return json.dumps(spec.descriptor(), sort_keys=True)
    if isinstance(spec, str):
        return spec
    return json.dumps(spec, sort_keys=True)


class _Point:
    """Everything needed to run replicas at one grid point."""

    def __init__(self, cfg: ExperimentConfig, n: int):
        self.cfg, self.n = cfg, n
        self.target = cfg.rule.value(n)
        self.params: dict = {"target": self.target}
        kind = cfg.kind
        if kind == "bridge":
            w = _family(cfg.family)
            forced = RegimeKind(cfg.regime) if cfg.regime else None
            regime = classify_regime(w, n, self.target, kind=forced)
            self.params["regime"] = regime.kind.value
            self.v_n = regime.v_n**2 if regime.kind in _GAUSSIAN else regime.v_n
            try:
                self.norm, self.const = sum_sq_limit(w, regime)
            except ValidationError:
                self.norm, self.const = math.nan, math.nan
            self.params.update(v_n=self.v_n, normaliser=self.norm, constant=self.const)
            self.sampler = bridge_sampler(w, n, self.target)
        elif kind == "tree":
            theta = _family(cfg.family)
            reg = cfg.regime or "bulk"
            self.v_n = luka_scale(theta, n, self.target, reg)
            self.params.update(regime=reg, v_n=self.v_n)
            self.sampler = tree_sampler(theta, n, self.target)
        elif kind == "map":
            self.theta = map_theta(cfg.family)
            self.scale = distance_scale(n, self.target, None if self.theta.q is None else self.theta)
            self.params.update(distance_scale=self.scale)
            tree_sampler(self.theta, n, self.target)

    def replica(self, i: int) -> dict:
        rng = replica_rng(self.cfg.seed, self.n, i)
        stats_ = self.cfg.statistics
        out = {}
        if self.cfg.kind == "bridge":
            inc = self.sampler.sample_increments(1, rng)[0]
            ss = float(np.dot(inc, inc))
            for s in stats_:
                if s == "sum_sq":
                    out[s] = ss
                elif s == "sum_sq_scaled":
                    out[s] = ss / self.norm
                elif s == "max_ratio":
                    out[s] = float(inc.max()) ** 2 / ss if ss else math.nan
                elif s == "argmax_frac":
                    out[s] = float(np.argmax(inc)) / self.n
                else:
                    t = _var_t(s)
                    out[s] = float(marginal_devs(inc, self.target, [t])[0, 0]) / math.sqrt(self.v_n)
        elif self.cfg.kind == "tree":
            inc = self.sampler.sample_increments(1, rng)[0]
            ss = float(np.dot(inc, inc))
            for s in stats_:
                if s == "sum_sq":
                    out[s] = ss
                elif s == "sum_sq_scaled":
                    out[s] = ss / self.v_n
                elif s == "sup_scaled":
                    out[s] = float(np.cumsum(inc).max(initial=0)) / math.sqrt(self.v_n)
                else:
                    out[s] = float(inc.max()) ** 2 / ss
        else:
            _, rep = sample_map(self.theta, self.n, self.target, rng)
            for s in stats_:
                if s == "mean_distance":
                    out[s] = rep.mean_distance
                elif s == "rescaled_distance":
                    out[s] = rep.mean_distance * self.scale
                elif s == "sigma2":
                    out[s] = float(rep.sigma2)
                else:
                    out[s] = float(rep.max_face_degree)
        return out


_GAUSSIAN = (RegimeKind.BULK, RegimeKind.SMALL_ENDPOINT, RegimeKind.LARGE_ENDPOINT, RegimeKind.STABLE_GAUSSIAN)


def _run_chunk(cfg: ExperimentConfig, n: int, lo: int, hi: int) -> list[dict]:
    point = _Point(cfg, n)
    return [point.replica(i) for i in range(lo, hi)]


def _workers(cfg: ExperimentConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    env = os.environ.get("BICOND_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"BICOND_THREADS must be an integer, got {env!r}") from None
    return 1


def _aggregate(name: str, values: np.ndarray) -> tuple[float, float]:
    """Mean and its standard error, or for var@t the sample variance and its standard error."""
    r = values.size
    if _var_t(name) is not None:
        if r < 2:
            return float("nan"), float("nan")
        var = float(values.var(ddof=1))
        m4 = float(np.mean((values - values.mean()) ** 4))
        se = math.sqrt(max(m4 - var * var, 0.0) / r)
        return var, se
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    return mean, se


def run(config: ExperimentConfig) -> ExperimentResult:
    """Run every grid point; a failing point leaves a FAILED row and the rest continue."""
    cfg = config
    result = ExperimentResult(cfg)
    fam = _family_name(cfg.family)
    workers = _workers(cfg)
    for n in cfg.n_grid:
        try:
            if cfg.kind == "llt":
                w = _family(cfg.family)
                forced = RegimeKind(cfg.regime) if cfg.regime else None
                target = cfg.rule.value(n)
                res = llt_discrepancy(w, n, target, kind=forced)
                params = {"target": target, "regime": res.regime.kind.value, "v_n": res.scale}
                result.rows.append(_row(cfg, fam, n, params, "sup_error", res.sup_error, 0.0, 1))
                continue
            point = _Point(cfg, n)
            reps = _collect(cfg, point, n, workers)
            for s in cfg.statistics:
                vals = np.array([r[s] for r in reps], dtype=float)
                est, se = _aggregate(s, vals)
                result.rows.append(_row(cfg, fam, n, point.params, s, est, se, cfg.replicas))
        except BicondError as exc:
            log.warning("grid point n=%d failed: %s", n, exc)
            marker = {"n": n, "code": exc.code, "message": str(exc), "validation": isinstance(exc, ValidationError)}
            result.failures.append(marker)
            result.rows.append(_row(cfg, fam, n, {"error": exc.code, "message": str(exc)}, "FAILED", math.nan, math.nan, 0))
        if cfg.output:
            result.write(cfg.output)
    return result


def _collect(cfg: ExperimentConfig, point: _Point, n: int, workers: int) -> list[dict]:
    if workers == 1 or cfg.replicas < 2 * workers:
        return [point.replica(i) for i in range(cfg.replicas)]
    bounds = np.linspace(0, cfg.replicas, workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(_run_chunk, cfg, n, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        out: list[dict] = []
        for f in futs:
            out.extend(f.result())
    return out


def _row(cfg, fam, n, params, stat, est, se, reps) -> ResultRow:
    return ResultRow(
        experiment=cfg.name,
        family=fam,
        n=int(n),
        param_json=json.dumps(_jsonable(params), sort_keys=True),
        stat=stat,
        estimate=float(est),
        stderr=float(se),
        replicas=int(reps),
        seed=int(cfg.seed),
        config_hash=cfg.config_hash,
    )


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (float, np.floating)):
            v = float(v)
            v = repr(v) if not math.isfinite(v) else v
        out[k] = v
    return out


# ----------------------------------------------------------------------
# estimators
# ----------------------------------------------------------------------
def fit_exponent(pairs) -> tuple[float, float]:
    """Least-squares slope of log(estimate) against log(n), and r^2."""
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] != 2:
        raise DegenerateFit("need at least 3 (n, estimate) pairs")
    n, y = arr[:, 0], arr[:, 1]
    if np.any(n <= 0) or np.any(y <= 0) or not np.all(np.isfinite(arr)):
        raise DegenerateFit("n and estimates must be positive and finite")
    if np.unique(n).size < 2:
        raise DegenerateFit("all grid points coincide")
    lx, ly = np.log(n), np.log(y)
    if np.ptp(ly) == 0.0:
        return 0.0, 1.0
    fit = stats.linregress(lx, ly)
    return float(fit.slope), float(fit.rvalue**2)


def mc_mean_ci(samples, level: float = 0.95) -> tuple[float, float]:
    """Sample mean and normal-approximation half-width at the given level."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValidationError("need at least 2 samples")
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2.0)
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))
