"""Monte Carlo error estimators and log-log rate regression.

Every estimator measures a distance between the particle scheme and the
exact mean-field law (or a coupled reference) at one design point
(n_particles, steps) and reports an :class:`ErrorPoint` with a standard
error.  Sweeps vary one axis while holding the other fixed and reuse the
same underlying Brownian paths across all design points of a replication
(common random numbers): mesh sweeps aggregate one finest-grid tableau,
particle sweeps slice a shared tableau to its first N streams.

Replications are independent by construction (counter-based streams keyed
by the replication index), execute in deterministic chunks across a worker
pool, and accumulate in replication order, so results are bit-identical
for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import t as student_t

from .errors import DomainError, UnsupportedModelError
from .measures import (
    DiscreteMeasure,
    Functional,
    functional_eval,
    make_functional,
    w1_to_gaussian,
    w2_to_gaussian,
)
from .noise import auxiliary_normals, generate_tableau
from .particles import _exact_reference_batch, _simulate_batch, grid_step_index
from .reference_models import ModelBundle, build_model
from .sde_core import TimeGrid

__all__ = [
    "sampling_rate",
    "ErrorPoint",
    "RateFit",
    "ReplicationPlan",
    "SweepSpec",
    "SweepResult",
    "run_sweep",
    "validate_sweep",
    "fit_rate",
    "weak_error_semigroup",
    "strong_error_semigroup",
    "strong_error_trajectory",
    "strong_error_w2",
    "mean_measure_w1",
    "default_eval_times",
]

ESTIMATORS = (
    "weak-semigroup",
    "strong-semigroup",
    "strong-traj",
    "strong-w2",
    "mean-measure-w1",
)

NOISE_GATE = 0.2  # a point is clean when std_error <= NOISE_GATE * |estimate|


def sampling_rate(n_particles: int, dim: int) -> float:
    """Dimension-dependent decay rate of empirical-measure approximation.

    N^{-1/2} below dimension four, N^{-1/2} log(N+1) at dimension four and
    N^{-2/d} above it.
    """
    if n_particles < 2:
        raise DomainError(f"n_particles must be >= 2, got {n_particles}")
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    if dim < 4:
        return n_particles ** -0.5
    if dim == 4:
        return n_particles ** -0.5 * math.log(n_particles + 1)
    return n_particles ** (-2.0 / dim)


@dataclass(frozen=True)
class ErrorPoint:
    """One Monte Carlo error estimate at a design point."""

    estimator: str
    model_id: str
    functional_id: Optional[str]
    n_particles: int
    steps: int
    horizon: float
    eval_time: float
    estimate: float
    std_error: float
    replications: int
    variant: str = "sup-outside"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise DomainError("std_error must be >= 0")
        if self.std_error > 0 and self.replications < 2:
            raise DomainError("a reported std_error needs at least 2 replications")

    @property
    def mesh(self) -> float:
        return self.horizon / self.steps

    @property
    def clean(self) -> bool:
        return self.std_error <= NOISE_GATE * abs(self.estimate)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "model": self.model_id,
            "functional": self.functional_id,
            "n_particles": self.n_particles,
            "steps": self.steps,
            "mesh": self.mesh,
            "horizon": self.horizon,
            "eval_time": self.eval_time,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "replications": self.replications,
            "variant": self.variant,
            "clean": self.clean,
            **{k: v for k, v in self.extra.items()},
        }


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(estimate) against log(mesh) or log(N)."""

    axis: str
    slope: float
    intercept: float
    slope_half_width: float
    noise_ratio: float
    n_points: int

    @property
    def clean(self) -> bool:
        return self.noise_ratio <= NOISE_GATE

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_half_width": self.slope_half_width,
            "noise_ratio": self.noise_ratio,
            "n_points": self.n_points,
            "clean": self.clean,
        }


def fit_rate(points: Sequence[ErrorPoint], axis: str) -> RateFit:
    """Ordinary least squares on (log axis, log estimate).

    Requires at least four design points with strictly monotone axis values
    and positive estimates; the 95% slope half-width comes from the
    residual variance.
    """
    if axis not in ("mesh", "particles"):
        raise DomainError(f"axis must be 'mesh' or 'particles', got {axis!r}")
    if len(points) < 4:
        raise DomainError(f"need at least 4 design points, got {len(points)}")
    xs = np.array(
        [p.mesh if axis == "mesh" else p.n_particles for p in points], dtype=np.float64
    )
    ys = np.array([p.estimate for p in points], dtype=np.float64)
    if np.any(ys <= 0):
        raise DomainError("all estimates must be positive for a log-log fit")
    diffs = np.diff(xs)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise DomainError("axis values must be strictly monotone")
    lx = np.log(xs)
    ly = np.log(ys)
    k = len(points)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = k - 2
    se_slope = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    half = float(student_t.ppf(0.975, dof)) * se_slope if dof > 0 else 0.0
    ratios = [p.std_error / abs(p.estimate) for p in points]
    return RateFit(
        axis=axis,
        slope=slope,
        intercept=intercept,
        slope_half_width=half,
        noise_ratio=float(max(ratios)),
        n_points=k,
    )


# ---------------------------------------------------------------------------
# Sweep specification and validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationPlan:
    """Fixed replication count, or double-until-clean with a budget cap."""

    mode: str  # "fixed" | "adaptive"
    value: int = 0
    initial: int = 64
    budget: int = 1 << 16

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise DomainError(f"replication mode must be fixed or adaptive, got {self.mode!r}")
        if self.mode == "fixed" and self.value < 1:
            raise DomainError("fixed replications must be >= 1")
        if self.mode == "adaptive" and not 1 <= self.initial <= self.budget:
            raise DomainError("adaptive plan needs 1 <= initial <= budget")


@dataclass(frozen=True)
class SweepSpec:
    """Everything a worker needs to reproduce one sweep deterministically."""

    estimator: str
    model_id: str
    model_params: tuple
    horizon: float
    axis: str  # "steps" | "particles"
    values: tuple
    fixed: int
    finest_steps: int
    eval_times: tuple
    seed: int
    plan: ReplicationPlan
    functional_id: Optional[str] = None
    functional_params: tuple = ()
    reference: str = "exact"  # strong-traj only: "exact" | "fine:<factor>"

    @classmethod
    def build(
        cls,
        estimator,
        model_id,
        model_params,
        horizon,
        axis,
        values,
        fixed,
        finest_steps,
        eval_times,
        seed,
        plan,
        functional_id=None,
        functional_params=None,
        reference="exact",
    ):
        return cls(
            estimator=estimator,
            model_id=model_id,
            model_params=tuple(sorted((model_params or {}).items())),
            horizon=float(horizon),
            axis=axis,
            values=tuple(int(v) for v in values),
            fixed=int(fixed),
            finest_steps=int(finest_steps),
            eval_times=tuple(float(t) for t in eval_times),
            seed=int(seed),
            plan=plan,
            functional_id=functional_id,
            functional_params=tuple(sorted((functional_params or {}).items())),
            reference=reference,
        )

    def bundle(self) -> ModelBundle:
        return build_model(self.model_id, **dict(self.model_params))

    def functional(self) -> Optional[Functional]:
        if self.functional_id is None:
            return None
        return make_functional(self.functional_id, **dict(self.functional_params))

    def reference_factor(self) -> Optional[int]:
        if self.reference == "exact":
            return None
        if self.reference.startswith("fine:"):
            factor = int(self.reference.split(":", 1)[1])
            if factor < 2:
                raise DomainError("refinement factor must be >= 2")
            return factor
        raise DomainError(f"reference must be 'exact' or 'fine:<factor>', got {self.reference!r}")


def default_eval_times(horizon: float, n_nodes: int = 16) -> tuple:
    """Fixed evaluation schedule approximating a supremum over time:
    n_nodes equispaced times including the horizon."""
    return tuple(horizon * k / n_nodes for k in range(1, n_nodes + 1))


def validate_sweep(spec: SweepSpec) -> None:
    if spec.estimator not in ESTIMATORS:
        raise DomainError(f"unknown estimator {spec.estimator!r}; known: {ESTIMATORS}")
    if spec.axis not in ("steps", "particles"):
        raise DomainError(f"axis must be 'steps' or 'particles', got {spec.axis!r}")
    if not spec.values:
        raise DomainError("the sweep needs at least one design value")
    if any(b <= a for a, b in zip(spec.values, spec.values[1:])):
        raise DomainError("sweep values must be strictly increasing")
    if spec.horizon <= 0:
        raise DomainError("horizon must be positive")
    if spec.fixed < 1:
        raise DomainError("the fixed coordinate must be >= 1")
    step_values = spec.values if spec.axis == "steps" else (spec.fixed,)
    for n in step_values:
        if n < 1:
            raise DomainError(f"step counts must be >= 1, got {n}")
        if spec.finest_steps % n != 0:
            raise DomainError(
                f"steps value {n} does not divide the finest grid ({spec.finest_steps}),"
                " so one tableau cannot serve the whole sweep"
            )
    factor = spec.reference_factor() if spec.estimator == "strong-traj" else None
    if factor is not None:
        for n in step_values:
            if spec.finest_steps % (n * factor) != 0:
                raise DomainError(
                    f"refined grid {n}*{factor} does not divide the finest grid"
                    f" ({spec.finest_steps})"
                )
    for t in spec.eval_times:
        if not 0.0 <= t <= spec.horizon:
            raise DomainError(f"evaluation time {t} outside [0, {spec.horizon}]")
        for n in step_values:
            grid_step_index(TimeGrid(spec.horizon, n), t)  # raises if not a node
    if spec.estimator == "mean-measure-w1" and len(spec.eval_times) != 1:
        raise DomainError("mean-measure-w1 pools samples at a single evaluation time")
    bundle = spec.bundle()
    needs_flow = spec.estimator in ("weak-semigroup", "strong-semigroup", "strong-w2", "mean-measure-w1")
    if spec.estimator == "strong-traj" and factor is None:
        needs_flow = True
    if needs_flow and bundle.flow is None:
        raise UnsupportedModelError(
            f"estimator {spec.estimator!r} needs an exact reference law, "
            f"which model {spec.model_id!r} does not provide"
        )
    if needs_flow and bundle.model.dim != 1:
        raise DomainError("flow-based estimators are defined for one-dimensional models")
    if spec.estimator in ("weak-semigroup", "strong-semigroup") and spec.functional_id is None:
        raise DomainError("semigroup estimators need a functional id")


# ---------------------------------------------------------------------------
# Worker: simulate a chunk of replications for all active design points
# ---------------------------------------------------------------------------


def _chunk_size(spec: SweepSpec, n_max: int, noise_dim: int) -> int:
    bytes_per_rep = n_max * spec.finest_steps * noise_dim * 8
    overhead = 4 if spec.estimator == "strong-traj" else 3
    budget = 256 << 20
    return int(max(1, min(64, budget // max(1, bytes_per_rep * overhead))))


def _value_slots(spec: SweepSpec) -> int:
    if spec.estimator in ("weak-semigroup", "strong-semigroup", "strong-w2"):
        return len(spec.eval_times)
    if spec.estimator == "strong-traj":
        n_max = max(spec.values) if spec.axis == "steps" else spec.fixed
        return n_max + 1
    if spec.estimator == "mean-measure-w1":
        return max(spec.values) if spec.axis == "particles" else spec.fixed
    raise DomainError(spec.estimator)


def _point_dims(spec: SweepSpec, value: int):
    """(n_particles, steps) of one design point."""
    if spec.axis == "steps":
        return spec.fixed, value
    return value, spec.fixed


def _worker(task) -> np.ndarray:
    """Compute per-replication values for one chunk; pure and order-free."""
    spec, rep_start, rep_count, active = task
    bundle = spec.bundle()
    model = bundle.model
    q = model.noise_dim
    d = model.dim
    n_max = max(_point_dims(spec, v)[0] for v in spec.values)
    fine = TimeGrid(spec.horizon, spec.finest_steps)
    phi = spec.functional()
    factor = spec.reference_factor() if spec.estimator == "strong-traj" else None

    out = np.full((rep_count, len(spec.values), _value_slots(spec)), np.nan)

    inc = np.empty((rep_count, n_max, fine.steps, q))
    x0 = np.empty((rep_count, n_max, d))
    for b in range(rep_count):
        rep = rep_start + b
        inc[b] = generate_tableau(spec.seed, rep, n_max, q, fine).increments
        x0[b] = bundle.initial.sample(spec.seed, rep, n_max, d)

    ref_fine_p0 = None
    if spec.estimator == "strong-traj" and factor is None:
        # exact reference for particle 0 only: its dynamics see the
        # deterministic mean flow, not the ensemble
        res = np.empty((rep_count, 1, fine.steps, 1))
        for b in range(rep_count):
            res[b] = auxiliary_normals(spec.seed, rep_start + b, 1, fine.steps)
        snaps = _exact_reference_batch(
            bundle.flow, x0[:, :1, :], inc[:, :1, :, :], res, fine, range(fine.steps + 1)
        )
        ref_fine_p0 = snaps[:, :, 0, 0]  # (n_fine + 1, rep_count)

    for pt, value in enumerate(spec.values):
        if not active[pt]:
            continue
        n_particles, steps = _point_dims(spec, value)
        grid = TimeGrid(spec.horizon, steps)
        ratio = fine.steps // steps
        pt_inc = inc[:, :n_particles]
        if ratio > 1:
            pt_inc = pt_inc.reshape(rep_count, n_particles, steps, ratio, q).sum(axis=3)
        pt_x0 = x0[:, :n_particles]

        if spec.estimator in ("weak-semigroup", "strong-semigroup"):
            node_idx = [grid_step_index(grid, t) for t in spec.eval_times]
            snaps = _simulate_batch(model, pt_x0, pt_inc, grid, node_idx)
            for ti in range(len(spec.eval_times)):
                for b in range(rep_count):
                    mu = DiscreteMeasure.uniform(snaps[ti, b])
                    out[b, pt, ti] = functional_eval(phi, mu)

        elif spec.estimator == "strong-w2":
            node_idx = [grid_step_index(grid, t) for t in spec.eval_times]
            snaps = _simulate_batch(model, pt_x0, pt_inc, grid, node_idx)
            for ti, t in enumerate(spec.eval_times):
                m_t, v_t = bundle.flow.at(t)
                for b in range(rep_count):
                    mu = DiscreteMeasure.uniform(snaps[ti, b])
                    out[b, pt, ti] = w2_to_gaussian(mu, m_t, v_t) ** 2

        elif spec.estimator == "mean-measure-w1":
            node_idx = [grid_step_index(grid, spec.eval_times[0])]
            snaps = _simulate_batch(model, pt_x0, pt_inc, grid, node_idx)
            out[:, pt, :n_particles] = snaps[0, :, :, 0]

        elif spec.estimator == "strong-traj":
            snaps = _simulate_batch(model, pt_x0, pt_inc, grid, range(steps + 1))
            scheme_p0 = snaps[:, :, 0, 0]  # (steps + 1, rep_count)
            if factor is None:
                ref_p0 = ref_fine_p0[::ratio]
            else:
                ref_grid = grid.refine(factor)
                ref_ratio = fine.steps // ref_grid.steps
                ref_inc = inc[:, :n_particles]
                if ref_ratio > 1:
                    ref_inc = ref_inc.reshape(
                        rep_count, n_particles, ref_grid.steps, ref_ratio, q
                    ).sum(axis=3)
                ref_snaps = _simulate_batch(
                    model, pt_x0, ref_inc, ref_grid, range(0, ref_grid.steps + 1, factor)
                )
                ref_p0 = ref_snaps[:, :, 0, 0]
            gap = scheme_p0 - ref_p0
            out[:, pt, : steps + 1] = (gap * gap).T

    return out


# ---------------------------------------------------------------------------
# Reduction of per-replication values to error points
# ---------------------------------------------------------------------------


def _se(values: np.ndarray) -> float:
    r = values.size
    if r < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(r))


def _reduce_point(spec: SweepSpec, bundle, value: int, vals: np.ndarray):
    """Turn the (R, slots) value block of one design point into the main
    ErrorPoint plus any companion points."""
    n_particles, steps = _point_dims(spec, value)
    r = vals.shape[0]
    common = dict(
        model_id=spec.model_id,
        functional_id=spec.functional_id,
        n_particles=n_particles,
        steps=steps,
        horizon=spec.horizon,
        replications=r,
    )

    if spec.estimator in ("weak-semigroup", "strong-semigroup"):
        truth = np.array([bundle.flow_functional(t) for t in spec.eval_times])
        means = vals.mean(axis=0)
        weak_per_t = np.abs(means - truth)
        wi = int(np.argmax(weak_per_t))
        weak = ErrorPoint(
            estimator="weak-semigroup",
            eval_time=spec.eval_times[wi],
            estimate=float(weak_per_t[wi]),
            std_error=_se(vals[:, wi]),
            **common,
        )
        dev = np.abs(vals - truth[None, :])
        strong_per_t = dev.mean(axis=0)
        si = int(np.argmax(strong_per_t))
        strong = ErrorPoint(
            estimator="strong-semigroup",
            eval_time=spec.eval_times[si],
            estimate=float(strong_per_t[si]),
            std_error=_se(dev[:, si]),
            **common,
        )
        main = weak if spec.estimator == "weak-semigroup" else strong
        companion = strong if spec.estimator == "weak-semigroup" else weak
        main = replace(
            main,
            extra={
                "companion_estimator": companion.estimator,
                "companion_estimate": companion.estimate,
                "companion_std_error": companion.std_error,
            },
        )
        return main

    if spec.estimator == "strong-w2":
        per_t = vals.mean(axis=0)
        ti = int(np.argmax(per_t))
        return ErrorPoint(
            estimator="strong-w2",
            eval_time=spec.eval_times[ti],
            estimate=float(per_t[ti]),
            std_error=_se(vals[:, ti]),
            **common,
        )

    if spec.estimator == "strong-traj":
        node_vals = vals[:, : steps + 1]
        per_node = node_vals.mean(axis=0)
        ji = int(np.argmax(per_node))
        grid = TimeGrid(spec.horizon, steps)
        rep_max = node_vals.max(axis=1)
        return ErrorPoint(
            estimator="strong-traj",
            eval_time=grid.node(ji),
            estimate=float(per_node[ji]),
            std_error=_se(node_vals[:, ji]),
            extra={
                "sup_inside_estimate": float(rep_max.mean()),
                "sup_inside_std_error": _se(rep_max),
            },
            **common,
        )

    if spec.estimator == "mean-measure-w1":
        t = spec.eval_times[0]
        m_t, v_t = bundle.flow.at(t)
        pooled = np.ascontiguousarray(vals[:, :n_particles]).reshape(-1)
        mu = DiscreteMeasure.uniform(pooled[:, None])
        est = w1_to_gaussian(mu, m_t, v_t)
        groups = min(4, r)
        bounds = np.linspace(0, r, groups + 1, dtype=int)
        gvals = []
        for gi in range(groups):
            block = np.ascontiguousarray(vals[bounds[gi] : bounds[gi + 1], :n_particles]).reshape(-1)
            gvals.append(w1_to_gaussian(DiscreteMeasure.uniform(block[:, None]), m_t, v_t))
        se = _se(np.array(gvals)) if groups >= 2 else 0.0
        return ErrorPoint(
            estimator="mean-measure-w1",
            eval_time=t,
            estimate=float(est),
            std_error=se,
            extra={"pooled_samples": int(pooled.size), "pooled_rate": sampling_rate(pooled.size, 1)},
            **common,
        )

    raise DomainError(spec.estimator)


class _BundleWithTruth:
    """Caches the flow functional values needed by reductions."""

    def __init__(self, bundle: ModelBundle, phi: Optional[Functional]):
        self._bundle = bundle
        self._phi = phi

    @property
    def flow(self):
        return self._bundle.flow

    def flow_functional(self, t: float) -> float:
        m_t, v_t = self._bundle.flow.at(t)
        return self._phi.on_gaussian(m_t, v_t)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    points: tuple
    budget_exhausted: bool

    @property
    def all_clean(self) -> bool:
        return all(p.clean for p in self.points)


def _map_tasks(tasks, workers):
    if workers <= 1:
        return [_worker(t) for t in tasks]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return pool.map(_worker, tasks)


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Execute a sweep under its replication plan and reduce every design
    point to an error estimate.

    Adaptive plans double the replication count until every point passes
    the noise gate (std_error <= 0.2 |estimate|) or the budget is reached;
    points that are already clean stop being simulated.  The outcome is a
    pure function of the spec, whatever the worker count.
    """
    validate_sweep(spec)
    raw_bundle = spec.bundle()
    bundle = _BundleWithTruth(raw_bundle, spec.functional())
    n_pts = len(spec.values)
    slots = _value_slots(spec)
    n_max = max(_point_dims(spec, v)[0] for v in spec.values)
    chunk = _chunk_size(spec, n_max, raw_bundle.model.noise_dim)

    plan = spec.plan
    target = plan.value if plan.mode == "fixed" else plan.initial
    done = 0
    active = [True] * n_pts
    blocks = []  # list of (rep_count, n_pts, slots) arrays in replication order
    point_reps = [0] * n_pts
    points = [None] * n_pts

    while True:
        tasks = []
        start = done
        while start < target:
            count = min(chunk, target - start)
            tasks.append((spec, start, count, tuple(active)))
            start += count
        if tasks:
            blocks.extend(_map_tasks(tasks, workers))
        done = target
        values = np.concatenate(blocks, axis=0) if blocks else np.empty((0, n_pts, slots))
        for pt in range(n_pts):
            if not active[pt]:
                continue
            point_reps[pt] = done
            points[pt] = _reduce_point(spec, bundle, spec.values[pt], values[:done, pt, :])
        if plan.mode == "fixed":
            break
        for pt in range(n_pts):
            if active[pt] and points[pt].clean:
                active[pt] = False
        if not any(active) or done >= plan.budget:
            break
        target = min(2 * done, plan.budget)

    exhausted = plan.mode == "adaptive" and any(
        not p.clean for p in points
    ) and done >= plan.budget
    return SweepResult(spec=spec, points=tuple(points), budget_exhausted=exhausted)


# ---------------------------------------------------------------------------
# Single-point convenience estimators
# ---------------------------------------------------------------------------


def _single_point(
    estimator,
    bundle: ModelBundle,
    n_particles,
    grid: TimeGrid,
    replications,
    seed,
    eval_times,
    functional_id=None,
    functional_params=None,
    reference="exact",
    finest_steps=None,
    workers=1,
) -> SweepResult:
    spec = SweepSpec.build(
        estimator=estimator,
        model_id=bundle.model_id,
        model_params=bundle.params,
        horizon=grid.horizon,
        axis="steps",
        values=[grid.steps],
        fixed=n_particles,
        finest_steps=finest_steps or grid.steps,
        eval_times=eval_times,
        seed=seed,
        plan=ReplicationPlan(mode="fixed", value=replications),
        functional_id=functional_id,
        functional_params=functional_params,
        reference=reference,
    )
    return run_sweep(spec, workers=workers)


def weak_error_semigroup(
    bundle, functional_id, n_particles, grid, replications, seed,
    eval_times=None, functional_params=None, workers=1,
) -> ErrorPoint:
    """|E Phi(empirical) - Phi(law)| at the requested times (max over them)."""
    eval_times = eval_times or (grid.horizon,)
    return _single_point(
        "weak-semigroup", bundle, n_particles, grid, replications, seed,
        eval_times, functional_id, functional_params, workers=workers,
    ).points[0]


def strong_error_semigroup(
    bundle, functional_id, n_particles, grid, replications, seed,
    eval_times=None, functional_params=None, workers=1,
) -> ErrorPoint:
    """E |Phi(empirical) - Phi(law)| at the requested times (max over them)."""
    eval_times = eval_times or (grid.horizon,)
    return _single_point(
        "strong-semigroup", bundle, n_particles, grid, replications, seed,
        eval_times, functional_id, functional_params, workers=workers,
    ).points[0]


def strong_error_trajectory(
    bundle, n_particles, grid, replications, seed,
    reference="exact", finest_steps=None, workers=1,
) -> ErrorPoint:
    """Max over grid nodes of the replication-averaged squared gap between
    the scheme and its synchronously coupled reference, for particle one
    (particles are exchangeable).  The companion mean-of-pathwise-max sits
    in ``extra['sup_inside_estimate']``."""
    if reference == "exact":
        finest = finest_steps or grid.steps
    else:
        factor = int(reference.split(":", 1)[1])
        finest = finest_steps or grid.steps * factor
    return _single_point(
        "strong-traj", bundle, n_particles, grid, replications, seed,
        eval_times=(grid.horizon,), reference=reference, finest_steps=finest,
        workers=workers,
    ).points[0]


def strong_error_w2(
    bundle, n_particles, grid, replications, seed, eval_times=None, workers=1,
) -> ErrorPoint:
    """Max over requested nodes of E[W2(empirical law, exact law)^2]."""
    eval_times = eval_times or default_eval_times(grid.horizon)
    return _single_point(
        "strong-w2", bundle, n_particles, grid, replications, seed, eval_times,
        workers=workers,
    ).points[0]


def mean_measure_w1(
    bundle, n_particles, grid, replications, seed, eval_time=None, workers=1,
) -> ErrorPoint:
    """W1 between the pooled empirical measure of all replications (the
    estimator of the mean measure) and the exact law at one time."""
    t = grid.horizon if eval_time is None else eval_time
    return _single_point(
        "mean-measure-w1", bundle, n_particles, grid, replications, seed, (t,),
        workers=workers,
    ).points[0]
