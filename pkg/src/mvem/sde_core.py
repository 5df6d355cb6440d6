"""Core abstractions: time grids, coefficient models, empirical-measure views.

A mean-field SDE is driven by a drift b(t, x, mu) and a diffusion
sigma(t, x, mu) where mu is a probability measure.  In the particle
discretisation every measure argument is the empirical measure of the
ensemble, so coefficients only ever see an :class:`EmpiricalMeasureView`:
the raw particle positions plus cached first/second moments.

Coefficient callables are vectorised: they receive positions of shape
``(..., N, d)`` (arbitrary leading batch axes) and must return an array of
the same shape (drift) or ``(..., N, d, q)`` (diffusion).  Evaluation must
be pure; the integrator freezes one view per step and shares it across all
particles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "TimeGrid",
    "left_node",
    "RegularityCard",
    "EmpiricalMeasureView",
    "CoefficientModel",
    "evaluate_drift",
    "evaluate_diffusion",
    "particle_mean",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with ``steps`` intervals of width ``mesh``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")

    @property
    def mesh(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        """All nodes j * mesh for j = 0..steps (length steps + 1)."""
        ts = np.arange(self.steps + 1) * self.mesh
        ts[-1] = self.horizon
        return ts

    def node(self, j: int) -> float:
        if not 0 <= j <= self.steps:
            raise DomainError(f"node index {j} outside 0..{self.steps}")
        return self.horizon if j == self.steps else j * self.mesh

    def refine(self, factor: int) -> "TimeGrid":
        if factor < 1 or int(factor) != factor:
            raise DomainError(f"refinement factor must be a positive integer, got {factor}")
        return TimeGrid(self.horizon, self.steps * int(factor))

    def subdivides(self, fine: "TimeGrid") -> bool:
        """True when ``fine`` has the same horizon and a step count that is
        an integer multiple of ours (so our nodes are a subset of its)."""
        return fine.horizon == self.horizon and fine.steps % self.steps == 0


def left_node(t: float, grid: TimeGrid) -> float:
    """Project t onto the grid node strictly to its left.

    Returns the node t_j with t_j < t <= t_{j+1}; by convention the left
    endpoint maps to itself, left_node(0) = 0.  Inputs that are grid nodes
    up to rounding noise are snapped to the exact node before projecting,
    so left_node(t_j) = t_{j-1} holds for every representable node.
    """
    if not (0.0 <= t <= grid.horizon) or not math.isfinite(t):
        raise DomainError(f"time {t} outside [0, {grid.horizon}]")
    if t == 0.0:
        return 0.0
    r = t * grid.steps / grid.horizon
    nearest = round(r)
    if nearest > 0 and abs(r - nearest) <= 1e-9 * max(1.0, abs(nearest)):
        j = nearest - 1
    else:
        j = math.ceil(r) - 1
    return grid.node(int(j))


@dataclass(frozen=True)
class RegularityCard:
    """Declared (not verified) regularity of a coefficient pair.

    ``holder_exponent`` is the spatial Holder exponent of the drift in
    (0, 1]; ``lipschitz_in_state_and_measure`` announces a joint Lipschitz
    bound in (x, mu) with constant ``lipschitz_constant`` when known.
    """

    holder_exponent: float = 1.0
    lipschitz_in_state_and_measure: bool = True
    smooth: bool = True
    bounded: bool = False
    lipschitz_constant: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.holder_exponent <= 1.0:
            raise DomainError(
                f"holder_exponent must lie in (0, 1], got {self.holder_exponent}"
            )


def particle_mean(points: np.ndarray) -> np.ndarray:
    """Mean over the particle axis of ``(..., N, d)`` positions.

    Reduces each coordinate over a contiguous last axis so the result for
    any batch row is bit-identical to reducing that row alone; this keeps
    ensemble statistics independent of how replications are batched.
    """
    if points.ndim < 2:
        raise DomainError("points must have shape (..., N, d)")
    d = points.shape[-1]
    cols = []
    for k in range(d):
        col = points[..., k]
        if not col.flags.c_contiguous:
            col = np.ascontiguousarray(col)
        cols.append(col.mean(axis=-1))
    return np.stack(cols, axis=-1)


class EmpiricalMeasureView:
    """Read-only view of N uniformly weighted points with cached moments.

    Construction freezes the positions array (``writeable=False`` on a
    private copy is avoided: the caller promises not to mutate, and the
    integrator passes snapshots it owns).  ``mean`` has shape ``(..., d)``
    and ``second_moment`` (the mean of |x|^2) has shape ``(...,)``.
    """

    __slots__ = ("_points", "_mean", "_second_moment")

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim < 2 or points.shape[-2] < 1:
            raise DomainError("an empirical measure needs at least one point")
        self._points = points
        self._mean = particle_mean(points)
        sq = points * points
        self._second_moment = particle_mean(sq).sum(axis=-1)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def size(self) -> int:
        return self._points.shape[-2]

    @property
    def dim(self) -> int:
        return self._points.shape[-1]

    @property
    def weight(self) -> float:
        """Uniform weight 1/N carried by every point."""
        return 1.0 / self.size

    @property
    def mean(self) -> np.ndarray:
        return self._mean

    @property
    def second_moment(self) -> np.ndarray:
        return self._second_moment

    def mean_broadcast(self) -> np.ndarray:
        """Cached mean with a singleton particle axis, shape (..., 1, d)."""
        return self._mean[..., None, :]

    def moments_consistent(self, rtol: float = 1e-12) -> bool:
        """Recompute the cached moments from the points and compare."""
        fresh_mean = particle_mean(self._points)
        fresh_second = particle_mean(self._points * self._points).sum(axis=-1)
        scale_m = np.maximum(np.abs(fresh_mean), 1.0)
        scale_s = np.maximum(np.abs(fresh_second), 1.0)
        return bool(
            np.all(np.abs(fresh_mean - self._mean) <= rtol * scale_m)
            and np.all(np.abs(fresh_second - self._second_moment) <= rtol * scale_s)
        )


@dataclass(frozen=True)
class CoefficientModel:
    """Drift/diffusion pair acting on (time, state, empirical measure).

    ``drift(t, x, view) -> (..., N, d)`` and
    ``diffusion(t, x, view) -> (..., N, d, q)`` must be deterministic, total
    on finite inputs and safe for concurrent read-only use.  When the
    diffusion is a constant scalar multiple of the identity, set
    ``constant_diffusion`` so integrators can skip the matrix product
    (requires ``noise_dim == dim``).
    """

    dim: int
    noise_dim: int
    drift: Callable[[float, np.ndarray, EmpiricalMeasureView], np.ndarray]
    diffusion: Callable[[float, np.ndarray, EmpiricalMeasureView], np.ndarray]
    card: RegularityCard = field(default_factory=RegularityCard)
    name: str = ""
    constant_diffusion: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise DomainError("dim and noise_dim must be positive")
        if self.constant_diffusion is not None and self.dim != self.noise_dim:
            raise DomainError("constant scalar diffusion requires noise_dim == dim")


def _check_state(model: CoefficientModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] != model.dim:
        raise DomainError(
            f"state has trailing dimension {x.shape[-1] if x.ndim else 0}, "
            f"model expects {model.dim}"
        )
    return x


def evaluate_drift(
    model: CoefficientModel, t: float, x: np.ndarray, view: EmpiricalMeasureView
) -> np.ndarray:
    """Evaluate the drift at one or many states against a frozen view."""
    x = _check_state(model, x)
    if view.dim != model.dim:
        raise DomainError(f"measure dimension {view.dim} != model dimension {model.dim}")
    single = x.ndim == 1
    if single:
        x = x[None, :]
    out = np.asarray(model.drift(t, x, view), dtype=np.float64)
    out = np.broadcast_to(out, x.shape)
    return out[0] if single else out


def evaluate_diffusion(
    model: CoefficientModel, t: float, x: np.ndarray, view: EmpiricalMeasureView
) -> np.ndarray:
    """Evaluate the diffusion matrix, shape (..., d, q)."""
    x = _check_state(model, x)
    if view.dim != model.dim:
        raise DomainError(f"measure dimension {view.dim} != model dimension {model.dim}")
    single = x.ndim == 1
    if single:
        x = x[None, :]
    out = np.asarray(model.diffusion(t, x, view), dtype=np.float64)
    out = np.broadcast_to(out, x.shape + (model.noise_dim,))
    return out[0] if single else out
