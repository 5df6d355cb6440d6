"""Euler-Maruyama integration of the interacting particle system.

One explicit step advances every particle with the coefficients frozen at
the left node and at the ensemble's own empirical measure:

    X^i_{j+1} = X^i_j + b(t_j, X^i_j, mu^N_j) h + sigma(t_j, X^i_j, mu^N_j) dW^i_j.

The measure view is frozen once per step and shared by all particles, so a
step costs one moment pass plus one coefficient evaluation over the
ensemble.  Only node values are stored.

Two synchronously coupled references are provided for strong-error
measurement, both consuming the same underlying Brownian increments as the
scheme:

* :func:`simulate_coupled_ou` - for linear-interaction models with a known
  Gaussian law, the reference follows the mean-field dynamics with the
  true deterministic mean input and advances by exact one-step transitions.
  The stochastic convolution over each fine interval is sampled exactly by
  conditioning on the Brownian increment and adding an independent
  residual from a dedicated noise domain, so the joint law of (scheme,
  reference) at the nodes is exactly the synchronous coupling.
* :func:`simulate_coupled_fine` - a refined-mesh copy of the scheme itself,
  for models without a closed-form law.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, IntegrationError, UnsupportedModelError
from .noise import NoiseTableau, auxiliary_normals, coarsen
from .reference_models import GaussianFlow, ModelBundle
from .sde_core import CoefficientModel, EmpiricalMeasureView, TimeGrid

__all__ = [
    "ParticleEnsemble",
    "TrajectoryRecord",
    "Provenance",
    "CoupledResult",
    "em_step",
    "simulate",
    "simulate_coupled_ou",
    "simulate_coupled_fine",
    "export_record_csv",
    "save_record",
    "load_record",
    "grid_step_index",
]


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particle positions at one time with the induced empirical view."""

    time: float
    positions: np.ndarray
    view: EmpiricalMeasureView = field(init=False, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2:
            raise DomainError("positions must be an (N, d) array")
        object.__setattr__(self, "positions", pos)
        pos.setflags(write=False)
        object.__setattr__(self, "view", EmpiricalMeasureView(pos))

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class Provenance:
    seed: int
    replication: int
    model_id: str
    n_particles: int
    steps: int


@dataclass(frozen=True)
class TrajectoryRecord:
    """Node snapshots of one simulated ensemble trajectory."""

    grid: TimeGrid
    times: tuple
    positions: np.ndarray  # (n_times, N, d)
    provenance: Provenance

    def __post_init__(self):
        if len(self.times) != self.positions.shape[0]:
            raise DomainError("one snapshot per recorded time is required")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise DomainError("snapshot times must be strictly increasing")
        self.positions.setflags(write=False)

    def ensemble_at(self, t: float) -> ParticleEnsemble:
        try:
            idx = self.times.index(t)
        except ValueError:
            raise DomainError(f"time {t} was not recorded") from None
        return ParticleEnsemble(t, self.positions[idx])

    @property
    def terminal(self) -> ParticleEnsemble:
        return ParticleEnsemble(self.times[-1], self.positions[-1])


@dataclass(frozen=True)
class CoupledResult:
    scheme: TrajectoryRecord
    reference: TrajectoryRecord


def grid_step_index(grid: TimeGrid, t: float) -> int:
    """Index j with node(j) == t, snapping away rounding noise."""
    r = t * grid.steps / grid.horizon
    j = round(r)
    if not 0 <= j <= grid.steps or abs(r - j) > 1e-9 * max(1.0, abs(j)):
        raise DomainError(f"time {t} is not a node of a {grid.steps}-step grid")
    return int(j)


def _check_finite(x: np.ndarray, step) -> None:
    # a full-array sum is one cheap pass and poisons on any NaN/inf
    if math.isfinite(float(x.sum())):
        return
    bad = np.argwhere(~np.isfinite(x))
    particle = int(bad[0][-2]) if bad.size else -1
    raise IntegrationError(
        f"non-finite position for particle {particle} after step {step}",
        particle=particle,
        step=step,
    )


def _apply_step(
    model: CoefficientModel,
    t: float,
    h: float,
    x: np.ndarray,
    increments: np.ndarray,
) -> np.ndarray:
    """One explicit update of positions (..., N, d) with increments (..., N, q)."""
    view = EmpiricalMeasureView(x)
    drift = model.drift(t, x, view)
    if model.constant_diffusion is not None:
        return x + drift * h + model.constant_diffusion * increments
    sigma = model.diffusion(t, x, view)
    return x + drift * h + np.einsum("...dq,...q->...d", sigma, increments)


def em_step(
    ensemble: ParticleEnsemble,
    t: float,
    h: float,
    increments: np.ndarray,
    model: CoefficientModel,
) -> ParticleEnsemble:
    """Advance one ensemble by a single explicit step of width h."""
    increments = np.asarray(increments, dtype=np.float64)
    if increments.shape != (ensemble.size, model.noise_dim):
        raise DomainError(
            f"increments must have shape {(ensemble.size, model.noise_dim)}, "
            f"got {increments.shape}"
        )
    if ensemble.dim != model.dim:
        raise DomainError(f"ensemble dimension {ensemble.dim} != model {model.dim}")
    new_pos = _apply_step(model, t, h, ensemble.positions, increments)
    _check_finite(new_pos, step=f"t={t}")
    return ParticleEnsemble(t + h, new_pos)


def _simulate_batch(
    model: CoefficientModel,
    x0: np.ndarray,
    increments: np.ndarray,
    grid: TimeGrid,
    record_steps: Sequence[int],
) -> np.ndarray:
    """Core stepping loop over a batch of independent replications.

    x0: (..., N, d); increments: (..., N, steps, q).  Returns snapshots of
    shape (n_record, ..., N, d) at the requested step indices (0 = initial
    state).  Per-row arithmetic is independent of the batch size.
    """
    h = grid.mesh
    n = grid.steps
    record = sorted(set(int(j) for j in record_steps))
    if record and not 0 <= record[0] <= record[-1] <= n:
        raise DomainError("recorded steps must lie in 0..steps")
    # step-major contiguous increments make the inner loop stride-free
    inc = np.ascontiguousarray(np.moveaxis(increments, -2, 0))
    x = np.array(x0, dtype=np.float64)
    out = np.empty((len(record),) + x.shape)
    pos = 0
    if record and record[0] == 0:
        out[0] = x
        pos = 1
    for j in range(n):
        x = _apply_step(model, grid.node(j), h, x, inc[j])
        _check_finite(x, step=j)
        if pos < len(record) and record[pos] == j + 1:
            out[pos] = x
            pos += 1
    return out


def _resolve_record_steps(grid: TimeGrid, record_times) -> list:
    if record_times is None:
        return list(range(grid.steps + 1))
    return [grid_step_index(grid, t) for t in record_times]


def _prepare(model, n_particles, grid, tableau):
    if tableau.noise_dim != model.noise_dim:
        raise DomainError(
            f"tableau noise dimension {tableau.noise_dim} != model {model.noise_dim}"
        )
    if n_particles > tableau.n_particles:
        raise DomainError(
            f"tableau holds {tableau.n_particles} particle streams, need {n_particles}"
        )
    inc = coarsen(tableau, grid)[:n_particles]
    return inc


def simulate(
    bundle: ModelBundle,
    n_particles: int,
    grid: TimeGrid,
    tableau: NoiseTableau,
    record_times: Optional[Sequence[float]] = None,
) -> TrajectoryRecord:
    """Run the particle scheme for one replication on the given grid.

    The tableau's fine increments are aggregated to the grid; initial
    positions come from the tableau's dedicated initial-condition stream,
    so they are identical for every mesh the tableau serves.
    """
    model = bundle.model
    inc = _prepare(model, n_particles, grid, tableau)
    x0 = bundle.initial.sample(tableau.seed, tableau.replication, n_particles, model.dim)
    record = _resolve_record_steps(grid, record_times)
    snaps = _simulate_batch(model, x0, inc, grid, record)
    times = tuple(grid.node(j) for j in record)
    return TrajectoryRecord(
        grid=grid,
        times=times,
        positions=snaps,
        provenance=Provenance(
            tableau.seed, tableau.replication, bundle.model_id, n_particles, grid.steps
        ),
    )


# ---------------------------------------------------------------------------
# Exact one-step transition of the linear reference dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ExactStepCoeffs:
    """Per-step constants of the exact linear transition over width delta.

    X(t+delta) = decay X(t) + forcing(t) + sigma (on_increment dW + residual_scale eta)
    where eta is standard normal independent of dW.
    """

    delta: float
    decay: float
    on_increment: float
    residual_scale: float

    @classmethod
    def build(cls, a: float, delta: float) -> "_ExactStepCoeffs":
        if a != 0.0:
            decay = math.exp(a * delta)
            conv_var = math.expm1(2.0 * a * delta) / (2.0 * a)
            conv_cov = math.expm1(a * delta) / a
        else:
            decay = 1.0
            conv_var = delta
            conv_cov = delta
        on_inc = conv_cov / delta
        resid = conv_var - conv_cov * conv_cov / delta
        return cls(delta, decay, on_inc, math.sqrt(max(resid, 0.0)))


def _reference_forcing(flow: GaussianFlow, t: float, coeffs: _ExactStepCoeffs) -> float:
    # integral of the deterministic mean input over one step, in closed form
    return float(flow.mean(t)) * coeffs.decay * math.expm1(flow.b_mean * coeffs.delta)


def _exact_reference_batch(
    flow: GaussianFlow,
    x0: np.ndarray,
    increments: np.ndarray,
    residuals: np.ndarray,
    fine_grid: TimeGrid,
    record_steps: Sequence[int],
) -> np.ndarray:
    """Exact node transitions of the mean-field reference, shape like
    :func:`_simulate_batch` output.  x0: (..., N, 1), increments and
    residuals: (..., N, steps, 1)."""
    coeffs = _ExactStepCoeffs.build(flow.a, fine_grid.mesh)
    record = sorted(set(int(j) for j in record_steps))
    inc = np.ascontiguousarray(np.moveaxis(increments, -2, 0))
    res = np.ascontiguousarray(np.moveaxis(residuals, -2, 0))
    x = np.array(x0, dtype=np.float64)
    out = np.empty((len(record),) + x.shape)
    pos = 0
    if record and record[0] == 0:
        out[0] = x
        pos = 1
    sig = flow.sigma0
    for j in range(fine_grid.steps):
        forcing = _reference_forcing(flow, fine_grid.node(j), coeffs)
        noise = coeffs.on_increment * inc[j] + coeffs.residual_scale * res[j]
        x = coeffs.decay * x + forcing + sig * noise
        if pos < len(record) and record[pos] == j + 1:
            out[pos] = x
            pos += 1
    return out


def simulate_coupled_ou(
    bundle: ModelBundle,
    n_particles: int,
    coarse_grid: TimeGrid,
    tableau: NoiseTableau,
    record_times: Optional[Sequence[float]] = None,
) -> CoupledResult:
    """Scheme and exact mean-field reference driven by the same noise.

    Requires a linear-interaction model with an attached Gaussian law.  The
    scheme consumes the tableau aggregated to the coarse grid; the
    reference advances on the tableau's fine grid by exact transitions and
    is recorded at the same (coarse) times, realising the per-particle
    synchronous coupling.
    """
    if bundle.flow is None or bundle.model.constant_diffusion is None:
        raise UnsupportedModelError(
            f"model {bundle.model_id!r} has no exact reference law; "
            "use simulate_coupled_fine instead"
        )
    if not coarse_grid.subdivides(tableau.grid):
        raise DomainError(
            f"coarse steps {coarse_grid.steps} must divide tableau steps {tableau.grid.steps}"
        )
    scheme = simulate(bundle, n_particles, coarse_grid, tableau, record_times)
    record_coarse = _resolve_record_steps(coarse_grid, record_times)
    ratio = tableau.grid.steps // coarse_grid.steps
    record_fine = [j * ratio for j in record_coarse]
    x0 = bundle.initial.sample(
        tableau.seed, tableau.replication, n_particles, bundle.model.dim
    )
    residuals = auxiliary_normals(
        tableau.seed, tableau.replication, n_particles, tableau.grid.steps
    )
    ref_snaps = _exact_reference_batch(
        bundle.flow,
        x0,
        tableau.increments[:n_particles],
        residuals,
        tableau.grid,
        record_fine,
    )
    times = tuple(coarse_grid.node(j) for j in record_coarse)
    reference = TrajectoryRecord(
        grid=tableau.grid,
        times=times,
        positions=ref_snaps,
        provenance=Provenance(
            tableau.seed,
            tableau.replication,
            bundle.model_id + "/exact-reference",
            n_particles,
            tableau.grid.steps,
        ),
    )
    return CoupledResult(scheme=scheme, reference=reference)


def simulate_coupled_fine(
    bundle: ModelBundle,
    n_particles: int,
    coarse_grid: TimeGrid,
    refinement_factor: int,
    tableau: NoiseTableau,
    record_times: Optional[Sequence[float]] = None,
) -> CoupledResult:
    """Scheme on the coarse grid against the same scheme on a mesh refined
    by ``refinement_factor``, both driven by the same tableau.  The generic
    reference when no closed-form law exists; its own bias is assessed by
    doubling the factor, not assumed away."""
    if refinement_factor < 2 or int(refinement_factor) != refinement_factor:
        raise DomainError(
            f"refinement_factor must be an integer >= 2, got {refinement_factor}"
        )
    fine_grid = coarse_grid.refine(int(refinement_factor))
    if not fine_grid.subdivides(tableau.grid):
        raise DomainError(
            f"refined steps {fine_grid.steps} must divide tableau steps {tableau.grid.steps}"
        )
    scheme = simulate(bundle, n_particles, coarse_grid, tableau, record_times)
    record_coarse = _resolve_record_steps(coarse_grid, record_times)
    fine_times = [coarse_grid.node(j) for j in record_coarse]
    reference = simulate(bundle, n_particles, fine_grid, tableau, fine_times)
    return CoupledResult(scheme=scheme, reference=reference)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_record_csv(record: TrajectoryRecord, path) -> None:
    """Write snapshots as rows (replication, time, particle, coordinate, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "time", "particle", "coordinate", "value"])
        rep = record.provenance.replication
        for t, snap in zip(record.times, record.positions):
            n, d = snap.shape
            for i in range(n):
                for k in range(d):
                    writer.writerow([rep, repr(float(t)), i, k, repr(float(snap[i, k]))])


_REC_HEADER = struct.Struct("<QQQQQd")  # seed, replication, N, d, n_times, horizon


def save_record(record: TrajectoryRecord, path) -> None:
    with open(path, "wb") as fh:
        n_times, n, d = record.positions.shape
        fh.write(
            _REC_HEADER.pack(
                record.provenance.seed,
                record.provenance.replication,
                n,
                d,
                n_times,
                record.grid.horizon,
            )
        )
        fh.write(struct.pack("<Q", record.grid.steps))
        fh.write(np.asarray(record.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(record.positions, dtype="<f8").tobytes())


def load_record(path, model_id: str = "") -> TrajectoryRecord:
    with open(path, "rb") as fh:
        seed, replication, n, d, n_times, horizon = _REC_HEADER.unpack(
            fh.read(_REC_HEADER.size)
        )
        (steps,) = struct.unpack("<Q", fh.read(8))
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8")
        payload = fh.read()
    positions = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    positions = positions.reshape(n_times, n, d)
    return TrajectoryRecord(
        grid=TimeGrid(horizon, int(steps)),
        times=tuple(float(t) for t in times),
        positions=positions,
        provenance=Provenance(int(seed), int(replication), model_id, int(n), int(steps)),
    )
