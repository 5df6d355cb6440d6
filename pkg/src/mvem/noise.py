"""Deterministic hierarchical Gaussian increments on a finest time grid.

Every random quantity is addressed, not drawn sequentially: a Philox
counter-based generator is keyed by (master seed, replication) and the
256-bit counter space is split into domains (increments / initial
conditions / auxiliary residuals) via its most significant word.  Inside a
domain, word ``(i * n_fine + j) * q + c`` belongs to particle i, fine step
j, component c.  Uniform deviates come from one raw 64-bit word each
(``u = ((w >> 11) + 0.5) * 2^-53``, never exactly 0 or 1) and are mapped
through the inverse normal CDF, so any sub-range of the tableau can be
regenerated independently and bit-identically, regardless of worker count
or generation order.

Coarse-mesh schemes and fine-mesh references must consume the same
Brownian paths; :func:`coarsen` sums fine increments inside each coarse
interval, exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DomainError
from .sde_core import TimeGrid

__all__ = [
    "NoiseTableau",
    "generate_tableau",
    "coarsen",
    "initial_normals",
    "auxiliary_normals",
    "raw_words",
    "normals_for_range",
    "save_tableau",
    "load_tableau",
    "DOMAIN_INCREMENTS",
    "DOMAIN_INIT",
    "DOMAIN_AUX",
]

DOMAIN_INCREMENTS = 0
DOMAIN_INIT = 1
DOMAIN_AUX = 2

_WORDS_PER_COUNTER = 4  # Philox4x64 emits four 64-bit words per counter tick


def raw_words(seed: int, replication: int, domain: int, start: int, count: int) -> np.ndarray:
    """Return ``count`` raw 64-bit words from the (seed, replication) stream,
    starting at word index ``start`` inside ``domain``."""
    if count < 0 or start < 0:
        raise DomainError("word range must be non-negative")
    key = np.array([seed, replication], dtype=np.uint64)
    counter = np.array([start // _WORDS_PER_COUNTER, 0, 0, domain], dtype=np.uint64)
    bit_gen = np.random.Philox(counter=counter, key=key)
    lead = start % _WORDS_PER_COUNTER
    n_raw = lead + count
    words = bit_gen.random_raw(n_raw if n_raw > 0 else 1)
    return words[lead : lead + count]


def _uniforms(words: np.ndarray) -> np.ndarray:
    # top 53 bits, centred on the grid: strictly inside (0, 1)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def normals_for_range(
    seed: int, replication: int, domain: int, start: int, count: int
) -> np.ndarray:
    """Standard normals at word indices [start, start + count) of a domain."""
    return ndtri(_uniforms(raw_words(seed, replication, domain, start, count)))


@dataclass(frozen=True)
class NoiseTableau:
    """Seeded Gaussian increments for one replication on the finest grid.

    ``increments`` has shape (n_particles, n_fine, noise_dim); entry
    [i, j, :] is the Brownian increment of particle i over fine interval j
    and has variance mesh_fine per component.
    """

    seed: int
    replication: int
    n_particles: int
    noise_dim: int
    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        expected = (self.n_particles, self.grid.steps, self.noise_dim)
        if self.increments.shape != expected:
            raise DomainError(
                f"increment shape {self.increments.shape} != expected {expected}"
            )
        self.increments.setflags(write=False)

    def particle_increments(self, i: int) -> np.ndarray:
        return self.increments[i]


def generate_tableau(
    seed: int,
    replication: int,
    n_particles: int,
    noise_dim: int,
    grid: TimeGrid,
) -> NoiseTableau:
    """Materialise the full increment table for one replication."""
    if n_particles < 1:
        raise DomainError(f"n_particles must be >= 1, got {n_particles}")
    if noise_dim < 1:
        raise DomainError(f"noise_dim must be >= 1, got {noise_dim}")
    total = n_particles * grid.steps * noise_dim
    z = normals_for_range(seed, replication, DOMAIN_INCREMENTS, 0, total)
    inc = z.reshape(n_particles, grid.steps, noise_dim)
    inc *= np.sqrt(grid.mesh)
    return NoiseTableau(seed, replication, n_particles, noise_dim, grid, inc)


def initial_normals(seed: int, replication: int, n_particles: int, dim: int) -> np.ndarray:
    """Standard normals for initial conditions, shape (n_particles, dim).

    Drawn from a dedicated domain so initial positions never depend on the
    grid resolution.
    """
    if n_particles < 1 or dim < 1:
        raise DomainError("n_particles and dim must be >= 1")
    z = normals_for_range(seed, replication, DOMAIN_INIT, 0, n_particles * dim)
    return z.reshape(n_particles, dim)


def auxiliary_normals(
    seed: int, replication: int, n_particles: int, n_steps: int, width: int = 1
) -> np.ndarray:
    """Standard normals for per-step auxiliary residuals, shape
    (n_particles, n_steps, width).

    Used by exact reference updates that need randomness beyond the
    Brownian increments (conditional sampling of stochastic convolutions).
    """
    if n_particles < 1 or n_steps < 1 or width < 1:
        raise DomainError("auxiliary stream shape must be positive")
    z = normals_for_range(
        seed, replication, DOMAIN_AUX, 0, n_particles * n_steps * width
    )
    return z.reshape(n_particles, n_steps, width)


def coarsen(tableau: NoiseTableau, coarse_grid: TimeGrid) -> np.ndarray:
    """Aggregate fine increments to a coarser grid whose step count divides
    the tableau's.  Returns shape (n_particles, coarse_steps, noise_dim);
    each coarse increment is the exact sum of the contained fine ones."""
    fine = tableau.grid
    if coarse_grid.horizon != fine.horizon:
        raise DomainError(
            f"horizons differ: {coarse_grid.horizon} vs {fine.horizon}"
        )
    if fine.steps % coarse_grid.steps != 0:
        raise DomainError(
            f"coarse steps {coarse_grid.steps} do not divide fine steps {fine.steps}"
        )
    ratio = fine.steps // coarse_grid.steps
    if ratio == 1:
        return tableau.increments
    n, _, q = tableau.increments.shape
    blocks = tableau.increments.reshape(n, coarse_grid.steps, ratio, q)
    return blocks.sum(axis=2)


_HEADER = struct.Struct("<QQQQQd")  # seed, replication, N, q, n_fine, horizon


def save_tableau(path, tableau: NoiseTableau) -> None:
    """Binary dump: little-endian header then float64 increments in
    particle-major, step, component order."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                tableau.seed,
                tableau.replication,
                tableau.n_particles,
                tableau.noise_dim,
                tableau.grid.steps,
                tableau.grid.horizon,
            )
        )
        fh.write(np.ascontiguousarray(tableau.increments, dtype="<f8").tobytes())


def load_tableau(path) -> NoiseTableau:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DomainError(f"{path}: truncated tableau header")
        seed, replication, n, q, n_fine, horizon = _HEADER.unpack(header)
        payload = fh.read()
    expected = n * n_fine * q * 8
    if len(payload) != expected:
        raise DomainError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    inc = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(n, n_fine, q)
    return NoiseTableau(int(seed), int(replication), int(n), int(q), TimeGrid(horizon, int(n_fine)), inc)
