"""Command-line entry point.

Exit codes: 0 on success, 1 on invalid input, 2 on runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import BicondError, ConfigError, ValidationError
from .genfun import MapInduced, UniformMapStep, WeightSequence, from_descriptor
from .harness import ExperimentConfig, Rule, fit_exponent, parse_int_list, run
from .labels import count_label_bridges
from .mapbij import distance_scale, map_report, map_theta, sample_labelled_map, scaling_S
from .oracles import (
    SuiteResult,
    enumerate_compositions,
    verify_bridges_exhaustive,
    verify_maps_exhaustive,
    verify_trees_exhaustive,
)

log = logging.getLogger("bicond")


class _Parser(argparse.ArgumentParser):
    """Argument errors raise instead of exiting with argparse's code 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _family_args(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--family", required=required, help="family name, e.g. geometric, uniform-map, map-induced")
    p.add_argument("--params", default=None, help="extra family parameters as a JSON object")
    p.add_argument("--ratio", type=float, default=None, help="shortcut for the geometric ratio parameter")


def _run_args(p: argparse.ArgumentParser, rule_flag: str):
    p.add_argument("--n", required=True, help="comma-separated grid of n")
    p.add_argument(rule_flag, dest="rule", required=True, help="conditioning rule in n, e.g. 0.5n or ceil(n^1.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--stats", default=None, help="comma-separated statistics")
    p.add_argument("--regime", default=None, help="force a regime")
    p.add_argument("--out", default=None, help="write results here (a .json mirror is written alongside)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bicond", description="Bi-conditioned walks, trees and maps.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("llt", help="local-limit discrepancies of the tilted sum")
    _family_args(p)
    p.add_argument("--n", required=True)
    p.add_argument("--xn", dest="rule", required=True)
    p.add_argument("--regime", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("bridge", help="Monte Carlo statistics of exact bridges")
    _family_args(p)
    _run_args(p, "--xn")

    p = sub.add_parser("tree", help="Monte Carlo statistics of trees with n vertices and K_n leaves")
    _family_args(p)
    _run_args(p, "--kn")

    p = sub.add_parser("map", help="sample maps with n - 1 edges and K_n + 1 vertices")
    _family_args(p, required=False)
    _run_args(p, "--kn")
    p.add_argument("--export", default=None, help="write the first map (seeded) as JSON here")
    p.add_argument("--profile", default=None, help="write its distance profile as CSV here")

    p = sub.add_parser("scaling", help="S(x) values, or the distance exponent over an n-grid")
    p.add_argument("--x", default=None, help="comma-separated leaf fractions in (0, 1)")
    p.add_argument("--n", default=None)
    p.add_argument("--kn", dest="rule", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("verify", help="exhaustive small-instance oracle suite")
    _family_args(p)
    p.add_argument("--max-n", type=int, default=7)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _family(args) -> object:
    desc: dict = {"family": args.family}
    if getattr(args, "params", None):
        try:
            extra = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params is not valid JSON: {exc}") from None
        if not isinstance(extra, dict):
            raise ConfigError("--params must be a JSON object")
        desc.update(extra)
    if getattr(args, "ratio", None) is not None:
        desc["ratio"] = args.ratio
    return desc


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _experiment(args, kind: str, default_stats: list[str]) -> int:
    family = _family(args) if args.family else "uniform"
    cfg = ExperimentConfig(
        name=kind,
        kind=kind,
        family=family,
        rule=args.rule,
        n_grid=parse_int_list(args.n),
        replicas=args.replicas,
        seed=args.seed,
        statistics=args.stats.split(",") if args.stats else default_stats,
        regime=args.regime,
    )
    res = run(cfg)
    if args.out:
        res.write(args.out) if args.format == "csv" else Path(args.out).write_text(res.to_json())
    else:
        _emit(res.to_csv() if args.format == "csv" else res.to_json() + "\n", None)
    return _failure_code(res)


def _failure_code(res) -> int:
    if not res.failures:
        return 0
    return 1 if any(f.get("validation") for f in res.failures) else 2


def cmd_llt(args) -> int:
    desc = _family(args)
    from_descriptor(desc)
    cfg = ExperimentConfig(
        name="llt", kind="llt", family=desc, rule=args.rule, n_grid=parse_int_list(args.n),
        statistics=["sup_error"], regime=args.regime,
    )
    res = run(cfg)
    rows = []
    for r in res.rows:
        p = json.loads(r.param_json)
        rows.append({"n": r.n, "x_n": p.get("target", ""), "regime": p.get("regime", p.get("error", "")),
                     "v_n": p.get("v_n", ""), "sup_error": r.estimate})
    _emit(_table(rows, args.format), args.out)
    return _failure_code(res)


def cmd_map(args) -> int:
    code = _experiment(args, "map", ["mean_distance", "rescaled_distance", "sigma2", "max_face_degree"])
    if args.export or args.profile:
        theta = map_theta(_family(args) if args.family else None)
        n = parse_int_list(args.n)[0]
        K = Rule.parse(args.rule).value(n)
        rng = np.random.default_rng(args.seed)
        lt, m = sample_labelled_map(theta, n, K, rng)
        if args.export:
            Path(args.export).write_text(m.to_json())
        if args.profile:
            Path(args.profile).write_text(map_report(lt, m).profile_csv())
    return code


def cmd_scaling(args) -> int:
    if args.x:
        rows = []
        for v in args.x.split(","):
            x = Fraction(v) if "/" in v else float(v)
            val = scaling_S(x)
            rows.append({"x": str(x), "S": str(val) if isinstance(val, Fraction) else repr(val)})
        _emit(_table(rows, args.format), args.out)
        return 0
    if not (args.n and args.rule):
        raise ConfigError("scaling needs --x, or --n together with --kn")
    grid = parse_int_list(args.n)
    cfg = ExperimentConfig(name="scaling", kind="map", family="uniform", rule=args.rule, n_grid=grid,
                           replicas=args.replicas, seed=args.seed, statistics=["mean_distance"])
    res = run(cfg)
    pairs = [(r.n, r.estimate) for r in res.rows if r.stat == "mean_distance"]
    rows = [{"n": n, "mean_distance": d, "rescaled": d * distance_scale(n, Rule.parse(args.rule).value(n))}
            for n, d in pairs]
    if len(pairs) >= 3:
        slope, r2 = fit_exponent(pairs)
        rows.append({"n": "slope", "mean_distance": slope, "rescaled": r2})
    _emit(_table(rows, args.format), args.out)
    return _failure_code(res)


def cmd_verify(args) -> int:
    w = from_descriptor(_family(args))
    if args.max_n < 1 or args.max_n > 9:
        raise ValidationError("--max-n must lie in 1..9 (the suite is exhaustive)")
    results = [verify_bridges_exhaustive(w, args.max_n)]
    if isinstance(w, (UniformMapStep, MapInduced)):
        theta: WeightSequence | None = w if isinstance(w, MapInduced) else MapInduced(None)
    else:
        theta = w if w.log_weights(0)[0] > -math.inf else None
    if theta is not None:
        results.append(verify_trees_exhaustive(theta, args.max_n))
    if isinstance(theta, MapInduced):
        results.append(verify_maps_exhaustive(theta, args.max_n))
    bad = [k for k in range(1, args.max_n + 1) if sum(1 for _ in enumerate_compositions(k, k)) != count_label_bridges(k)]
    results.append(SuiteResult("label-bridges", args.max_n, not bad, f"count mismatch at k={bad[0]}" if bad else ""))
    rows = [{"suite": r.name, "cases": r.cases, "ok": r.ok, "detail": r.detail} for r in results]
    sys.stdout.write(_table(rows, args.format))
    return 0 if all(r.ok for r in results) else 2


COMMANDS = {
    "llt": cmd_llt,
    "bridge": lambda a: _experiment(a, "bridge", ["sum_sq_scaled", "max_ratio"]),
    "tree": lambda a: _experiment(a, "tree", ["sum_sq_scaled", "sup_scaled"]),
    "map": cmd_map,
    "scaling": cmd_scaling,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError) and "required" in str(exc):
            print(parser.format_usage().rstrip(), file=sys.stderr)
        return 1
    except BicondError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, MemoryError, FloatingPointError, ArithmeticError) as exc:
        print(f"error [runtime]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
