"""Config-driven experiment runner and command-line tools.

``mvem run config.toml`` executes one sweep described by a TOML file,
writes plot-ready artifacts (points.csv / points.json / ratefit.json /
plotdata.csv) plus a human summary with a PASS/FAIL verdict when the
config declares a target slope window.  Artifacts embed the fully resolved
configuration and are byte-identical across reruns and worker counts;
wall-clock information lives only in summary.txt.

Exit codes: 0 completed (PASS, WARN or no verdict), 1 verdict FAIL,
2 invalid config or input, 3 integration failure, 4 noise budget exhausted
(NOISY verdict, partial artifacts), 5 exact-transport size cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import __version__
from .analysis import (
    ESTIMATORS,
    ReplicationPlan,
    SweepSpec,
    default_eval_times,
    fit_rate,
    run_sweep,
    validate_sweep,
)
from .errors import ConfigError, DomainError, IntegrationError, UnsupportedModelError
from .measures import (
    EXACT_ASSIGNMENT_CAP,
    DiscreteMeasure,
    functional_catalog,
    wasserstein_1d,
    wasserstein_exact,
    wasserstein_sliced,
)
from .reference_models import model_catalog

OUTPUT_ENV = "MVEM_OUTPUT_DIR"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_NOISY = 4
EXIT_SIZE_CAP = 5


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _req(table: dict, key: str, kind, path: str):
    if key not in table:
        raise ConfigError("missing required key", key=f"{path}.{key}")
    return _typed(table[key], kind, f"{path}.{key}")


def _opt(table: dict, key: str, kind, path: str, default):
    if key not in table:
        return default
    return _typed(table[key], kind, f"{path}.{key}")


def _typed(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=path)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=path)
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=path)
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key=path)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key=path)
        return value
    raise AssertionError(kind)


def load_config(path: str) -> dict:
    """Parse and validate a TOML experiment config into a resolved dict in
    which every default is explicit."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(str(exc), key=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}", key=str(path)) from exc

    exp = raw.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("missing [experiment] table", key="experiment")
    kind = _req(exp, "kind", str, "experiment")
    if kind not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {kind!r}; known: {sorted(ESTIMATORS)}",
                          key="experiment.kind")
    model = _req(exp, "model", str, "experiment")
    functional = _opt(exp, "functional", str, "experiment", None)
    horizon = _req(exp, "horizon", float, "experiment")
    seed = _req(exp, "seed", int, "experiment")
    output = _opt(exp, "output", str, "experiment", None)

    sweep = raw.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("missing [sweep] table", key="sweep")
    axis = _req(sweep, "axis", str, "sweep")
    if axis not in ("steps", "particles"):
        raise ConfigError(f"axis must be 'steps' or 'particles', got {axis!r}", key="sweep.axis")
    values = [_typed(v, int, "sweep.values[]") for v in _req(sweep, "values", list, "sweep")]
    if axis == "steps":
        fixed = _req(sweep, "fixed_particles", int, "sweep")
        finest = _opt(sweep, "finest_steps", int, "sweep", max(values) if values else 1)
    else:
        fixed = _req(sweep, "fixed_steps", int, "sweep")
        finest = _opt(sweep, "finest_steps", int, "sweep", fixed)
    reference = _opt(sweep, "reference", str, "sweep", "exact")

    reps = raw.get("replications")
    if not isinstance(reps, dict):
        raise ConfigError("missing [replications] table", key="replications")
    mode = _req(reps, "mode", str, "replications")
    if mode == "fixed":
        plan = {
            "mode": "fixed",
            "value": _req(reps, "value", int, "replications"),
            "initial": 0,
            "budget": 0,
        }
    elif mode == "adaptive":
        plan = {
            "mode": "adaptive",
            "value": 0,
            "initial": _opt(reps, "initial", int, "replications", 64),
            "budget": _opt(reps, "budget", int, "replications", 1 << 16),
        }
    else:
        raise ConfigError(f"mode must be 'fixed' or 'adaptive', got {mode!r}",
                          key="replications.mode")

    evaluation = raw.get("evaluation", {})
    if not isinstance(evaluation, dict):
        raise ConfigError("expected a table", key="evaluation")
    times = evaluation.get("times")
    if times is None:
        if kind == "strong-w2":
            times = list(default_eval_times(horizon))
        else:
            times = [horizon]
    else:
        times = [_typed(t, float, "evaluation.times[]") for t in _typed(times, list, "evaluation.times")]

    verdict = raw.get("verdict")
    if verdict is not None:
        if not isinstance(verdict, dict):
            raise ConfigError("expected a table", key="verdict")
        window = _req(verdict, "slope_window", list, "verdict")
        if len(window) != 2:
            raise ConfigError("slope_window must be [low, high]", key="verdict.slope_window")
        window = [_typed(v, float, "verdict.slope_window[]") for v in window]
        sided = _opt(verdict, "sided", str, "verdict", "two")
        if sided not in ("two", "upper", "lower"):
            raise ConfigError("sided must be 'two', 'upper' or 'lower'", key="verdict.sided")
        verdict = {
            "slope_window": window,
            "sided": sided,
            "informational": _opt(verdict, "informational", bool, "verdict", False),
        }

    model_params = raw.get("model_params", {})
    functional_params = raw.get("functional_params", {})
    for name, tab in (("model_params", model_params), ("functional_params", functional_params)):
        if not isinstance(tab, dict):
            raise ConfigError("expected a table", key=name)

    known = {"experiment", "sweep", "replications", "evaluation", "verdict",
             "model_params", "functional_params"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown table [{key}]", key=key)

    resolved = {
        "experiment": {
            "kind": kind,
            "model": model,
            "functional": functional,
            "horizon": horizon,
            "seed": seed,
            "output": output,
        },
        "model_params": dict(model_params),
        "functional_params": dict(functional_params),
        "sweep": {
            "axis": axis,
            "values": values,
            "fixed": fixed,
            "finest_steps": finest,
            "reference": reference,
        },
        "replications": plan,
        "evaluation": {"times": times},
        "verdict": verdict,
    }
    return resolved


def spec_from_config(resolved: dict) -> SweepSpec:
    exp = resolved["experiment"]
    plan_cfg = resolved["replications"]
    plan = ReplicationPlan(
        mode=plan_cfg["mode"],
        value=plan_cfg["value"],
        initial=plan_cfg["initial"] or 1,
        budget=plan_cfg["budget"] or 1,
    ) if plan_cfg["mode"] == "adaptive" else ReplicationPlan(mode="fixed", value=plan_cfg["value"])
    try:
        spec = SweepSpec.build(
            estimator=exp["kind"],
            model_id=exp["model"],
            model_params=resolved["model_params"],
            horizon=exp["horizon"],
            axis=resolved["sweep"]["axis"],
            values=resolved["sweep"]["values"],
            fixed=resolved["sweep"]["fixed"],
            finest_steps=resolved["sweep"]["finest_steps"],
            eval_times=resolved["evaluation"]["times"],
            seed=exp["seed"],
            plan=plan,
            functional_id=exp["functional"],
            functional_params=resolved["functional_params"],
            reference=resolved["sweep"]["reference"],
        )
        validate_sweep(spec)
    except (DomainError, UnsupportedModelError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "estimator", "model", "functional", "n_particles", "steps", "mesh",
    "horizon", "eval_time", "estimate", "std_error", "replications",
    "variant", "clean", "extra",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _points_csv_text(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for p in points:
        extra = json.dumps(p.extra, sort_keys=True) if p.extra else ""
        writer.writerow([
            p.estimator, p.model_id, _fmt(p.functional_id), p.n_particles,
            p.steps, _fmt(p.mesh), _fmt(p.horizon), _fmt(p.eval_time),
            _fmt(p.estimate), _fmt(p.std_error), p.replications, p.variant,
            p.clean, extra,
        ])
    return buf.getvalue()


def _plotdata_csv_text(points, axis: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "axis_value", "log_axis_value", "estimate",
                     "log_estimate", "std_error"])
    for p in points:
        x = p.mesh if axis == "steps" else p.n_particles
        log_est = np.log(p.estimate) if p.estimate > 0 else float("nan")
        writer.writerow([
            "mesh" if axis == "steps" else "particles",
            _fmt(float(x)), _fmt(float(np.log(x))), _fmt(p.estimate),
            _fmt(float(log_est)), _fmt(p.std_error),
        ])
    return buf.getvalue()


def _evaluate_verdict(verdict_cfg, fit, fit_reason):
    """Map a fit (or its absence) to PASS / FAIL / WARN / NOISY / DONE."""
    if verdict_cfg is None:
        return "DONE", None
    if fit is None:
        return "NOISY", fit_reason
    lo, hi = verdict_cfg["slope_window"]
    sided = verdict_cfg["sided"]
    ok = True
    if sided in ("two", "lower") and fit.slope < lo:
        ok = False
    if sided in ("two", "upper") and fit.slope > hi:
        ok = False
    if ok:
        return "PASS", None
    if verdict_cfg["informational"]:
        return "WARN", f"slope {fit.slope:.4f} outside window [{lo}, {hi}] ({sided}-sided)"
    return "FAIL", f"slope {fit.slope:.4f} outside window [{lo}, {hi}] ({sided}-sided)"


def run_experiment(config_path: str, seed=None, output=None, workers=None) -> int:
    """Execute one configured experiment and write its artifacts.

    Returns the process exit code (see module docstring).
    """
    try:
        resolved = load_config(config_path)
        if seed is not None:
            resolved["experiment"]["seed"] = int(seed)
        out_dir = (
            output
            or resolved["experiment"]["output"]
            or os.environ.get(OUTPUT_ENV)
            or "mvem-out"
        )
        resolved["experiment"]["output"] = out_dir
        spec = spec_from_config(resolved)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if workers is None:
        workers = os.cpu_count() or 1
    started = time.time()
    try:
        result = run_sweep(spec, workers=int(workers))
    except IntegrationError as exc:
        print(f"integration error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION

    points = list(result.points)
    axis = spec.axis
    fit = None
    fit_reason = None
    clean_points = [p for p in points if p.clean]
    try:
        fit = fit_rate(clean_points, "mesh" if axis == "steps" else "particles")
    except DomainError as exc:
        fit_reason = str(exc)

    verdict, verdict_reason = _evaluate_verdict(resolved["verdict"], fit, fit_reason)

    os.makedirs(out_dir, exist_ok=True)
    meta = {"version": __version__, "config": resolved}

    with open(os.path.join(out_dir, "points.csv"), "w", newline="") as fh:
        fh.write(_points_csv_text(points))
    with open(os.path.join(out_dir, "points.json"), "w") as fh:
        json.dump({**meta, "points": [p.to_dict() for p in points]}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "ratefit.json"), "w") as fh:
        json.dump({
            **meta,
            "fit": fit.to_dict() if fit is not None else None,
            "status": "ok" if fit is not None else "refused",
            "reason": fit_reason,
            "points_used": len(clean_points),
            "budget_exhausted": result.budget_exhausted,
            "verdict": verdict,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "plotdata.csv"), "w", newline="") as fh:
        fh.write(_plotdata_csv_text(points, axis))

    lines = [
        f"mvem {__version__} experiment summary",
        f"finished: {time.strftime('%Y-%m-%d %H:%M:%S', time.localtime())}"
        f" ({time.time() - started:.1f} s, workers={workers})",
        f"estimator: {spec.estimator}  model: {spec.model_id}"
        f"  functional: {spec.functional_id or '-'}",
        f"axis: {axis}  values: {list(spec.values)}  fixed: {spec.fixed}"
        f"  finest_steps: {spec.finest_steps}  seed: {spec.seed}",
        "",
        "points (estimate +- std_error, R, clean):",
    ]
    for p in points:
        lines.append(
            f"  N={p.n_particles:>6d} n={p.steps:>5d}  "
            f"{p.estimate:.6e} +- {p.std_error:.2e}  R={p.replications}  "
            f"{'clean' if p.clean else 'NOISY'}"
        )
    if fit is not None:
        lines.append("")
        lines.append(
            f"fit: slope={fit.slope:.4f} +- {fit.slope_half_width:.4f} (95%)"
            f"  noise_ratio={fit.noise_ratio:.3f}  points={fit.n_points}"
        )
    else:
        lines.append("")
        lines.append(f"fit refused: {fit_reason}")
    if resolved["verdict"] is not None:
        w = resolved["verdict"]
        lines.append(
            f"target: slope window {w['slope_window']} ({w['sided']}-sided"
            + (", informational)" if w["informational"] else ")")
        )
    lines.append(f"verdict: {verdict}" + (f"  ({verdict_reason})" if verdict_reason else ""))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))

    if verdict == "NOISY":
        return EXIT_NOISY
    if verdict == "FAIL":
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# wasserstein / catalog / selftest subcommands
# ---------------------------------------------------------------------------


def _load_cloud(path: str) -> DiscreteMeasure:
    rows = []
    width = None
    with open(path, "r", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ConfigError(
                    f"{path}:{lineno}: row has {len(parts)} columns, expected {width}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no points found")
    return DiscreteMeasure.uniform(np.asarray(rows))


def wasserstein_cmd(args) -> int:
    try:
        mu = _load_cloud(args.file_a)
        nu = _load_cloud(args.file_b)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.method == "exact":
            if max(mu.size, nu.size) > EXACT_ASSIGNMENT_CAP:
                print(
                    f"error: exact assignment capped at {EXACT_ASSIGNMENT_CAP} points "
                    f"(got {max(mu.size, nu.size)}); try --method sliced",
                    file=sys.stderr,
                )
                return EXIT_SIZE_CAP
            value = wasserstein_exact(mu, nu, args.p)
        elif args.method == "1d":
            value = wasserstein_1d(mu, nu, args.p)
        else:
            value = wasserstein_sliced(
                mu, nu, args.p, n_projections=args.projections, seed=args.seed
            )
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    tag = "approximate" if args.method == "sliced" else "exact"
    print(f"W{args.p} = {value!r}  (method={args.method}, {tag}, "
          f"sizes {mu.size}/{nu.size}, dim {mu.dim})")
    return EXIT_OK


def catalog_cmd(_args) -> int:
    print("models:")
    for model_id, info in model_catalog().items():
        defaults = ", ".join(f"{k}={v!r}" for k, v in info["defaults"].items())
        print(f"  {model_id}: {info['description']}")
        print(f"      defaults: {defaults}")
    print("functionals:")
    for fid, desc in functional_catalog().items():
        print(f"  {fid}: {desc}")
    return EXIT_OK


def selftest_cmd(_args) -> int:
    """Small oracle suite usable from an installed package."""
    from itertools import permutations

    from .analysis import sampling_rate
    from .measures import w2_to_gaussian
    from .noise import generate_tableau
    from .reference_models import ou_flow
    from .sde_core import TimeGrid

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    check("sampling rate d=1", abs(sampling_rate(10000, 1) - 0.01) < 1e-15)
    check(
        "sampling rate d=4",
        abs(sampling_rate(100, 4) - 0.1 * np.log(101)) < 1e-15,
    )
    check("sampling rate d=8", abs(sampling_rate(1024, 8) - 1024 ** -0.25) < 1e-15)

    m, v = ou_flow(-1.0, 0.0, 1.0, 0.0, 0.0, 1.0)
    check("flow variance", abs(v - 0.5 * (1 - np.exp(-2.0))) < 1e-12)

    grid = TimeGrid(1.0, 8)
    t1 = generate_tableau(123, 0, 4, 1, grid)
    t2 = generate_tableau(123, 0, 4, 1, grid)
    check("tableau determinism", np.array_equal(t1.increments, t2.increments))

    rng = np.random.default_rng(7)
    ok = True
    for _ in range(50):
        m_pts = rng.integers(2, 6)
        x = rng.normal(size=(m_pts, 2))
        y = rng.normal(size=(m_pts, 2))
        mu = DiscreteMeasure.uniform(x)
        nu = DiscreteMeasure.uniform(y)
        got = wasserstein_exact(mu, nu, 2)
        cost = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
        best = min(
            sum(cost[i, p[i]] for i in range(m_pts)) for p in permutations(range(m_pts))
        )
        ok = ok and abs(got - (best / m_pts) ** 0.5) < 1e-10
    check("exact transport vs permutation search", ok)

    sample = np.random.default_rng(11).normal(size=20000)
    w2 = w2_to_gaussian(DiscreteMeasure.uniform(sample[:, None]), 0.0, 1.0)
    check("empirical-to-law distance small", w2 ** 2 < 2e-3)

    print("selftest:", "OK" if failures == 0 else f"{failures} failure(s)")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvem",
        description="Mean-field particle-scheme experiments and transport distances",
        epilog=(
            "points.csv columns: " + ", ".join(_CSV_COLUMNS) + ". "
            f"Default output directory comes from ${OUTPUT_ENV} when set."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("config", help="TOML experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: hardware parallelism)")

    p_w = sub.add_parser("wasserstein", help="distance between two CSV point clouds")
    p_w.add_argument("file_a")
    p_w.add_argument("file_b")
    p_w.add_argument("--p", type=int, default=2, choices=(1, 2))
    p_w.add_argument("--method", default="exact", choices=("exact", "1d", "sliced"))
    p_w.add_argument("--projections", type=int, default=64)
    p_w.add_argument("--seed", type=int, default=0)

    sub.add_parser("catalog", help="list built-in models and functionals")
    sub.add_parser("selftest", help="run the embedded oracle checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, seed=args.seed, output=args.out,
                              workers=args.workers)
    if args.command == "wasserstein":
        return wasserstein_cmd(args)
    if args.command == "catalog":
        return catalog_cmd(args)
    if args.command == "selftest":
        return selftest_cmd(args)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
