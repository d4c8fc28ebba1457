"""Command-line driver for the experiments.

Configs are flat ``key = value`` sections.  Every key has a documented
default (see ``KEYS``) and the serializer writes them in a fixed order, so
a parsed config written back out is byte-identical to canonical input.

Exit codes: 0 success, 2 configuration error or missing inputs,
3 inconclusive verdict, 4 internal diagnostic failure.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import __version__
from .fields import (
    ParameterError, build_hierarchy, build_rational_cover, constant_field, ex1_field, ex2_field,
    ex3_field, measure_large_theta, ThetaField1D, real_str,
)

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_INTERNAL = 0, 2, 3, 4
OUT_ENV = "ROUGHMETRIC_OUT"
SUMMARY_SCHEMA = "roughmetric.report/1"


class ConfigError(ValueError):
    pass


class Inconclusive(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration

def _schedule_in(s):
    out = []
    for part in s.split(","):
        if part.strip():
            eps, h = part.split(":")
            out.append((float(eps), float(h)))
    return out


def _schedule_out(v):
    return ", ".join(f"{e!r}:{h!r}" for e, h in v)


def _point_in(s):
    return tuple(float(c) for c in s.split())


def _point_out(p):
    return " ".join(repr(float(c)) for c in p)


def _pairs_in(s):
    out = []
    for part in s.split(";"):
        if part.strip():
            a, b = part.split("->")
            out.append((_point_in(a), _point_in(b)))
    return out


def _pairs_out(v):
    return "; ".join(f"{_point_out(a)} -> {_point_out(b)}" for a, b in v)


def _points_in(s):
    return [_point_in(p) for p in s.split(";") if p.strip()]


def _points_out(v):
    return "; ".join(_point_out(p) for p in v)


def _ints_in(s):
    return [int(x) for x in s.split(",") if x.strip()]


def _ints_out(v):
    return ", ".join(str(x) for x in v)


def _bool_in(s):
    s = s.strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


TYPES = {
    "str": (str.strip, str),
    "int": (int, str),
    "float": (float, repr),
    "fraction": (lambda s: Fraction(s.strip()), real_str),
    "bool": (_bool_in, lambda b: "on" if b else "off"),
    "schedule": (_schedule_in, _schedule_out),
    "pairs": (_pairs_in, _pairs_out),
    "points": (_points_in, _points_out),
    "point": (_point_in, _point_out),
    "ints": (_ints_in, _ints_out),
}

# (section, key, type, default, description)
KEYS = [
    ("experiment", "example", "str", "EX1", "EX1 | EX2 | EX3 | CONSTANT"),
    ("experiment", "seed", "int", "0", "seed of the counter-based generator"),
    ("experiment", "out", "str", "results", "output directory"),
    ("experiment", "timings", "bool", "off", "write wall-clock runtimes (breaks byte-identical reruns)"),
    ("field", "kappa", "fraction", "1/16", "half-length scale of the rational cover"),
    ("field", "depth", "int", "24", "number of cover intervals"),
    ("field", "d", "int", "2", "dimension"),
    ("field", "p", "float", "1.0", "Sobolev exponent (EX3)"),
    ("field", "levels", "int", "4", "hierarchy depth (EX3)"),
    ("field", "constant", "float", "2.0", "conformal factor (CONSTANT)"),
    ("distance", "schedule", "schedule", "0.032:0.016, 0.016:0.008, 0.008:0.004, 0.004:0.002",
     "eps:h stages, eps decreasing, eps >= 2h"),
    ("distance", "stencil_k", "int", "3", "Chebyshev radius of the stencil"),
    ("distance", "margin", "float", "0.05", "lattice margin around the endpoints"),
    ("distance", "pairs", "pairs", "", "src -> dst pairs separated by ';'"),
    ("distance", "expect", "float", "nan", "value the brackets should contain (optional)"),
    ("speed", "points", "points", "", "curve base points"),
    ("speed", "direction", "point", "0 1", "curve direction"),
    ("speed", "h", "float", "0.2", "difference-quotient step"),
    ("slope", "points", "points", "", "points x"),
    ("slope", "function", "point", "0 1", "gradient v of the linear function x.v"),
    ("slope", "directions", "points", "0 1; 0 -1; 1 0; -1 0", "sampled directions"),
    ("slope", "h", "float", "0.2", "step"),
    ("plan", "n", "int", "10000", "curves in the plan"),
    ("plan", "subinterval", "point", "0 1", "interval whose uncovered part gives E'"),
    ("cheeger", "n", "ints", "1, 2, 3, 4", "cutoff indices (EX3)"),
    ("cheeger", "tolerance", "float", "1e-09", "deficit tolerance of the verdict"),
]


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls.parse("")

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        known = {(s, k) for s, k, *_ in KEYS}
        for sec in cp.sections():
            for k in cp[sec]:
                if (sec, k) not in known:
                    raise ConfigError(f"unknown key [{sec}] {k}")
        vals = {}
        for sec, key, typ, default, _ in KEYS:
            raw = cp.get(sec, key, fallback=default)
            try:
                vals[f"{sec}.{key}"] = TYPES[typ][0](raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
        return cls(vals)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        return cls.parse(text)

    def serialize(self) -> str:
        lines, current = [], None
        for sec, key, typ, _, _ in KEYS:
            if sec != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{sec}]")
                current = sec
            lines.append(f"{key} = {TYPES[typ][1](self.values[f'{sec}.{key}'])}")
        return "\n".join(lines) + "\n"


def make_field(cfg: ExperimentConfig):
    ex = cfg["experiment.example"]
    d = cfg["field.d"]
    if ex == "EX1":
        return ex1_field(build_rational_cover(cfg["field.kappa"], cfg["field.depth"], "line"), d)
    if ex == "EX2":
        return ex2_field(build_rational_cover(cfg["field.kappa"], cfg["field.depth"], "unit_interval"), d)
    if ex == "EX3":
        return ex3_field(build_hierarchy(d, cfg["field.p"], cfg["field.levels"]))
    if ex == "CONSTANT":
        return constant_field(cfg["field.constant"], d)
    raise ConfigError(f"unknown example {ex!r}")


# ---------------------------------------------------------------------------
# command plumbing


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    threads: int


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _run(ctx: Context, fn):
    from .distance import DiagnosticError

    try:
        return fn(ctx)
    except (ConfigError, ParameterError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except Inconclusive as exc:
        click.echo(str(exc))
        sys.exit(EXIT_INCONCLUSIVE)
    except (DiagnosticError, AssertionError) as exc:
        _fail(EXIT_INTERNAL, f"diagnostic failure: {exc}")


def _pmap(ctx: Context, fn, items):
    """Ordered map; results do not depend on the thread count."""
    if ctx.threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=ctx.threads) as ex:
        return list(ex.map(fn, items))


def _write_csv(path: Path, columns, rows, append=False):
    new = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        if new:
            wr.writeheader()
        wr.writerows(rows)


def _dump_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


@click.group()
@click.version_option(__version__)
def main():
    """Experiments on low-regularity conformal metrics."""


def _common(fn):
    fn = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="override the seed")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="output directory")(fn)
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), default=None)(fn)
    return fn


def _context(config, out, threads, seed) -> Context:
    try:
        cfg = ExperimentConfig.load(config) if config else ExperimentConfig.defaults()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if seed is not None:
        cfg.values["experiment.seed"] = seed
    out_dir = out or os.environ.get(OUT_ENV) or cfg["experiment.out"]
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return Context(cfg, path, threads)


# ---------------------------------------------------------------------------
# commands


def cmd_build(ctx: Context):
    f = make_field(ctx.cfg)
    summary = {"example": f.example, "d": f.d}
    if f.example in ("EX1", "EX2"):
        cover = f.payload
        (ctx.out / "field.json").write_text(cover.to_json() + "\n", encoding="utf-8")
        summary.update(kappa=real_str(cover.kappa), depth=cover.depth, intervals=len(cover.merged),
                       measure=real_str(cover.measure()), measure_bound=real_str(2 * cover.kappa),
                       large_theta=real_str(measure_large_theta(ThetaField1D(cover), exact=True)))
    elif f.example == "EX3":
        hier = f.payload
        (ctx.out / "field.json").write_text(hier.to_json() + "\n", encoding="utf-8")
        summary.update(p=hier.p, levels=hier.levels, a=hier.a, c0=real_str(hier.c0),
                       level_counts=[len(D) for D in hier.D], radii=[real_str(r) for r in hier.r],
                       ball_measure=hier.ball_measure(), tail_measure_bound=hier.tail_measure_bound(),
                       certificate_ok=hier.certificate.ok)
    else:
        summary.update(constant=f.constant)
    _dump_json(ctx.out / "build.json", summary)
    for k, v in summary.items():
        click.echo(f"{k}: {v}")
    return summary


def cmd_distance(ctx: Context):
    from .distance import CSV_COLUMNS, distance_estimate

    cfg = ctx.cfg
    f = make_field(cfg)
    pairs = cfg["distance.pairs"]
    if not pairs:
        raise ConfigError("[distance] pairs is empty")
    for a, b in pairs:
        if len(a) != f.d or len(b) != f.d:
            raise ConfigError(f"pair {a} -> {b} does not match d = {f.d}")

    def run(pair):
        return distance_estimate(f, pair[0], pair[1], cfg["distance.schedule"], cfg["distance.stencil_k"],
                                 margin=cfg["distance.margin"])

    try:
        queries = _pmap(ctx, run, pairs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for q in queries:
        row = q.csv_row()
        if not cfg["experiment.timings"]:
            row["runtime_ms"] = "-"
        rows.append(row)
        click.echo(f"{row['src']} -> {row['dst']}: [{q.lower_bound:.6g}, {q.upper_bound:.6g}]")
    _write_csv(ctx.out / "distance.csv", CSV_COLUMNS, rows, append=True)
    return queries


SPEED_COLUMNS = ["example", "point", "direction", "h", "lower", "upper", "conclusive"]
SLOPE_COLUMNS = ["example", "point", "function", "h", "lower", "upper", "conclusive"]


def cmd_speed(ctx: Context):
    from .calculus import Curve, metric_speed

    cfg = ctx.cfg
    f = make_field(cfg)
    u = cfg["speed.direction"]
    pts = cfg["speed.points"]
    if not pts:
        raise ConfigError("[speed] points is empty")

    def run(y):
        return metric_speed(f, Curve.straight(y, u), 0.0, cfg["distance.schedule"], cfg["speed.h"],
                            cfg["distance.stencil_k"], margin=cfg["distance.margin"])

    res = _pmap(ctx, run, pts)
    rows = [{"example": f.example, "point": _point_out(y), "direction": _point_out(u), "h": repr(b.h),
             "lower": repr(b.lower), "upper": repr(b.upper), "conclusive": b.conclusive}
            for y, b in zip(pts, res)]
    _write_csv(ctx.out / "speed.csv", SPEED_COLUMNS, rows)
    for r in rows:
        click.echo(f"{r['point']}: [{r['lower']}, {r['upper']}]")
    if not all(b.conclusive for b in res):
        raise Inconclusive("speed brackets too wide")
    return res


def cmd_slope(ctx: Context):
    from .calculus import linear_function, slope

    cfg = ctx.cfg
    f = make_field(cfg)
    v = cfg["slope.function"]
    fn = linear_function(v, "x." + _point_out(v))
    pts = cfg["slope.points"]
    if not pts:
        raise ConfigError("[slope] points is empty")

    def run(x):
        return slope(f, fn, x, cfg["slope.directions"], cfg["distance.schedule"], cfg["slope.h"],
                     cfg["distance.stencil_k"], margin=cfg["distance.margin"])

    res = _pmap(ctx, run, pts)
    rows = [{"example": f.example, "point": _point_out(x), "function": fn.id, "h": repr(b.h),
             "lower": repr(b.lower), "upper": repr(b.upper), "conclusive": b.conclusive}
            for x, b in zip(pts, res)]
    _write_csv(ctx.out / "slope.csv", SLOPE_COLUMNS, rows)
    for r in rows:
        click.echo(f"{r['point']}: [{r['lower']}, {r['upper']}]")
    if not all(b.conclusive for b in res):
        raise Inconclusive("slope brackets too wide")
    return res


def cmd_plan(ctx: Context):
    from .calculus import (
        VERDICT_COLUMNS, check_weak_upper_gradient, g_gradient_norm, linear_function, make_test_plan,
        verdict_row,
    )
    from .distance import alpha_ex1, alpha_ex3

    cfg = ctx.cfg
    f = make_field(cfg)
    n, seed = cfg["plan.n"], cfg["experiment.seed"]
    if f.example == "EX1":
        lo, hi = cfg["plan.subinterval"]
        plan = make_test_plan("EX1", {"cover": f.payload, "d": f.d, "subinterval": (Fraction(repr(lo)), Fraction(repr(hi)))},
                              n, seed)
        v = np.zeros(f.d)
        v[1] = 1.0
        speed = alpha_ex1(plan.direction)
    elif f.example == "EX3":
        plan = make_test_plan("EX3", {"hier": f.payload}, n, seed)
        v = np.zeros(f.d)
        v[-1] = 1.0
        speed = alpha_ex3(plan.direction)
    else:
        raise ConfigError("plans exist for EX1 and EX3")
    fn = linear_function(v, "x2" if f.example == "EX1" else "xd")
    res = check_weak_upper_gradient(plan, fn, g_gradient_norm(f, fn), speed)
    row = verdict_row(f"{f.example}-seed{seed}-n{n}", fn.id, "|grad_g f|_g", res)
    _write_csv(ctx.out / "plan.csv", VERDICT_COLUMNS, [row])
    np.savetxt(ctx.out / "plan_bases.csv", plan.bases, delimiter=",", fmt="%.17g")
    click.echo(f"lhs {res.lhs:.6f} rhs {res.rhs:.6f} verdict {res.verdict}")
    if res.verdict == "INCONCLUSIVE":
        raise Inconclusive("weak-upper-gradient check inconclusive")
    return res


def cmd_cheeger(ctx: Context):
    from .cheeger import REPORT_COLUMNS, ex2_report, ex3_report

    cfg = ctx.cfg
    f = make_field(cfg)
    tol = cfg["cheeger.tolerance"]
    if f.example == "EX2":
        reports = [ex2_report(f.payload, f.d, tol)]
    elif f.example == "EX3":
        reports = _pmap(ctx, lambda n: ex3_report(f.payload, n, tol), cfg["cheeger.n"])
    else:
        raise ConfigError("Cheeger experiments exist for EX2 and EX3")
    docs = [json.loads(r.to_json()) for r in reports]
    _dump_json(ctx.out / "cheeger.json", {"schema": "roughmetric.cheeger-run/1", "reports": docs})
    _write_csv(ctx.out / "cheeger.csv", REPORT_COLUMNS, [r.csv_row() for r in reports])
    for r in reports:
        click.echo(f"{r.params}: deficit {r.deficit:.9g} prediction {r.prediction:.9g} {r.verdict}")
    return reports


def _read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(ctx: Context):
    out = ctx.out
    expected = ["build.json", "distance.csv", "speed.csv", "slope.csv", "plan.csv", "cheeger.json"]
    present = [name for name in expected if (out / name).exists()]
    if not present:
        missing = ", ".join(expected)
        click.echo(f"missing inputs: {missing}")
        _dump_json(out / "report.json", {"schema": SUMMARY_SCHEMA, "missing": expected, "checks": []})
        sys.exit(EXIT_CONFIG)
    checks = []
    cfg = ctx.cfg
    if "distance.csv" in present:
        rows = _read_csv(out / "distance.csv")
        target = cfg["distance.expect"]
        for r in rows:
            lo, hi = float(r["lower_bound"]), float(r["upper_bound"])
            item = {"check": "distance bracket", "src": r["src"], "dst": r["dst"], "lower": lo, "upper": hi}
            if not math.isnan(target):
                item["target"] = target
                item["pass"] = lo <= target <= hi and (hi - lo) <= 0.02 * target
            checks.append(item)
    if "speed.csv" in present:
        for r in _read_csv(out / "speed.csv"):
            checks.append({"check": "metric speed", "point": r["point"], "upper": float(r["upper"]),
                           "pass": float(r["upper"]) <= 1.02})
    if "slope.csv" in present:
        for r in _read_csv(out / "slope.csv"):
            checks.append({"check": "slope", "point": r["point"], "lower": float(r["lower"]),
                           "pass": float(r["lower"]) >= 0.98})
    if "plan.csv" in present:
        for r in _read_csv(out / "plan.csv"):
            checks.append({"check": "weak upper gradient", "plan": r["plan_id"], "lhs": float(r["lhs"]),
                           "rhs": float(r["rhs"]), "verdict": r["verdict"], "pass": r["verdict"] == "VIOLATED"})
    if "cheeger.json" in present:
        doc = json.loads((out / "cheeger.json").read_text(encoding="utf-8"))
        for rep in doc["reports"]:
            checks.append({"check": "parallelogram deficit", "example": rep["example"], "params": rep["params"],
                           "deficit": rep["deficit"], "prediction": rep["prediction"],
                           "verdict": rep["verdict"], "pass": rep["verdict"] == "NON_HILBERTIAN"})
    missing = [name for name in expected if name not in present]
    _dump_json(out / "report.json", {"schema": SUMMARY_SCHEMA, "missing": missing, "checks": checks})
    for c in checks:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[c.get("pass")]
        detail = ", ".join(f"{k}={v}" for k, v in c.items() if k not in ("check", "pass"))
        click.echo(f"{status} {c['check']}: {detail}")
    if missing:
        click.echo(f"missing inputs: {', '.join(missing)}")
    return checks


def _register(name, fn, doc):
    @main.command(name, help=doc)
    @_common
    def command(config, out, threads, seed):
        _run(_context(config, out, threads, seed), fn)
    return command


_register("build", cmd_build, "Build the configured field and write it as JSON.")
_register("distance", cmd_distance, "Bracket distances for the configured pairs (appends CSV).")
_register("speed", cmd_speed, "Bracket metric speeds of straight curves.")
_register("slope", cmd_slope, "Bracket slopes of a linear function.")
_register("plan", cmd_plan, "Sample a test plan and check the weak-upper-gradient inequality.")
_register("cheeger", cmd_cheeger, "Cheeger energies, parallelogram deficit and verdict.")
_register("report", cmd_report, "Summarise the outputs in the output directory.")


@main.command("config", help="Print the canonical config (defaults or a parsed file).")
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None)
def show_config(config):
    try:
        cfg = ExperimentConfig.load(config) if config else ExperimentConfig.defaults()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(cfg.serialize(), nl=False)


if __name__ == "__main__":
    main()
