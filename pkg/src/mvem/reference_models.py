"""Exactly solvable mean-field benchmark models and their Gaussian laws.

A linear-interaction model

    dX_t = (a X_t + b_mean * m(t)) dt + sigma0 dW_t,
    m(t) = E[X_t],  X_0 ~ Normal(m0, v0),

keeps a Gaussian law at every time, with mean and variance solving

    m'(t) = (a + b_mean) m(t),        v'(t) = 2 a v(t) + sigma0^2.

The closed forms below are the ground truth for every rate experiment.
The catalogue also carries a deliberately rough probe whose drift is only
Holder continuous in the state/measure pair and has no closed-form law, so
it can only be benchmarked against a refined-mesh reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .noise import initial_normals
from .sde_core import CoefficientModel, RegularityCard

__all__ = [
    "GaussianFlow",
    "ou_flow",
    "GaussianInitial",
    "ModelBundle",
    "linear_interaction_model",
    "attractive_model",
    "holder_drift_model",
    "model_catalog",
    "build_model",
]


@dataclass(frozen=True)
class GaussianFlow:
    """Closed-form (mean, variance) trajectory of a linear mean-field model."""

    a: float
    b_mean: float
    sigma0: float
    m0: float
    v0: float

    def __post_init__(self):
        if self.v0 < 0:
            raise DomainError(f"initial variance must be >= 0, got {self.v0}")

    def mean(self, t):
        return self.m0 * np.exp((self.a + self.b_mean) * np.asarray(t, dtype=np.float64))

    def variance(self, t):
        t = np.asarray(t, dtype=np.float64)
        s2 = self.sigma0 * self.sigma0
        if self.a != 0.0:
            ratio = s2 / (2.0 * self.a)
            v = (self.v0 + ratio) * np.exp(2.0 * self.a * t) - ratio
        else:
            v = self.v0 + s2 * t
        return np.maximum(v, 0.0)

    def moment_ode_rhs(self, t, state):
        """Right-hand side of the (mean, variance) ODE system; used by
        independent integrator cross-checks."""
        m, v = state
        return np.array([(self.a + self.b_mean) * m, 2.0 * self.a * v + self.sigma0**2])

    def at(self, t: float):
        return float(self.mean(t)), float(self.variance(t))


def ou_flow(a: float, b_mean: float, sigma0: float, m0: float, v0: float, t):
    """Mean and variance of the linear mean-field model at time t >= 0."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise DomainError("flow times must be >= 0")
    flow = GaussianFlow(a, b_mean, sigma0, m0, v0)
    return flow.mean(t), flow.variance(t)


@dataclass(frozen=True)
class GaussianInitial:
    """Initial condition X_0 ~ Normal(mean, variance), sampled from the
    tableau's dedicated stream so it never depends on the time resolution."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError(f"initial variance must be >= 0, got {self.variance}")

    def sample(self, seed: int, replication: int, n_particles: int, dim: int) -> np.ndarray:
        if self.variance == 0.0:
            return np.full((n_particles, dim), self.mean)
        z = initial_normals(seed, replication, n_particles, dim)
        return self.mean + math.sqrt(self.variance) * z


@dataclass(frozen=True)
class ModelBundle:
    """A coefficient model together with whatever ground truth it has."""

    model_id: str
    model: CoefficientModel
    initial: GaussianInitial
    flow: Optional[GaussianFlow] = None
    params: dict = field(default_factory=dict)

    @property
    def has_exact_law(self) -> bool:
        return self.flow is not None


def linear_interaction_model(
    a: float = -1.0,
    b_mean: float = 0.5,
    sigma0: float = 1.0,
    m0: float = 1.0,
    v0: float = 0.0,
    model_id: str = "ou-linear",
) -> ModelBundle:
    """Drift a*x + b_mean * mean(mu), constant diffusion sigma0."""

    def drift(t, x, view):
        return a * x + b_mean * view.mean_broadcast()

    def diffusion(t, x, view):
        return np.broadcast_to(sigma0, x.shape + (1,))

    lip = abs(a) + abs(b_mean)
    model = CoefficientModel(
        dim=1,
        noise_dim=1,
        drift=drift,
        diffusion=diffusion,
        card=RegularityCard(
            holder_exponent=1.0,
            lipschitz_in_state_and_measure=True,
            smooth=True,
            bounded=False,
            lipschitz_constant=lip,
        ),
        name=model_id,
        constant_diffusion=sigma0,
    )
    flow = GaussianFlow(a, b_mean, sigma0, m0, v0)
    return ModelBundle(
        model_id=model_id,
        model=model,
        initial=GaussianInitial(m0, v0),
        flow=flow,
        params={"a": a, "b_mean": b_mean, "sigma0": sigma0, "m0": m0, "v0": v0},
    )


def attractive_model(
    sigma0: float = 1.0, m0: float = 1.0, v0: float = 0.0, model_id: str = "ou-attract"
) -> ModelBundle:
    """Drift -(x - mean(mu)): every particle is pulled to the ensemble mean.

    The mean flow is constant, m(t) = m0, and v'(t) = -2 v + sigma0^2.
    """
    bundle = linear_interaction_model(
        a=-1.0, b_mean=1.0, sigma0=sigma0, m0=m0, v0=v0, model_id=model_id
    )
    return ModelBundle(
        model_id=model_id,
        model=bundle.model,
        initial=bundle.initial,
        flow=bundle.flow,
        params={"sigma0": sigma0, "m0": m0, "v0": v0},
    )


def holder_drift_model(
    c: float = -1.0,
    a: float = 0.0,
    eta: float = 0.5,
    sigma0: float = 1.0,
    m0: float = 1.0,
    v0: float = 0.0,
    drift_clip: float = 1e6,
    model_id: str = "holder-drift",
) -> ModelBundle:
    """Rough probe: drift c * sign(x - mean) |x - mean|^eta + a * x.

    For eta = 1 and a = 0 this is exactly the attractive model.  The drift
    is clipped at +-drift_clip so the declared boundedness holds; the clip
    is far outside any region the dynamics visit.  No closed-form law: use
    a refined-mesh reference.
    """
    if not 0.0 < eta <= 1.0:
        raise DomainError(f"eta must lie in (0, 1], got {eta}")

    def drift(t, x, view):
        z = x - view.mean_broadcast()
        raw = c * np.sign(z) * np.abs(z) ** eta + a * x
        return np.clip(raw, -drift_clip, drift_clip)

    def diffusion(t, x, view):
        return np.broadcast_to(sigma0, x.shape + (1,))

    model = CoefficientModel(
        dim=1,
        noise_dim=1,
        drift=drift,
        diffusion=diffusion,
        card=RegularityCard(
            holder_exponent=eta,
            lipschitz_in_state_and_measure=(eta == 1.0 and a == 0.0),
            smooth=False,
            bounded=True,
        ),
        name=model_id,
        constant_diffusion=sigma0,
    )
    return ModelBundle(
        model_id=model_id,
        model=model,
        initial=GaussianInitial(m0, v0),
        flow=None,
        params={
            "c": c,
            "a": a,
            "eta": eta,
            "sigma0": sigma0,
            "m0": m0,
            "v0": v0,
            "drift_clip": drift_clip,
        },
    )


_CATALOG = {
    "ou-linear": (
        linear_interaction_model,
        "linear drift a*x + b_mean*mean(mu), constant noise; exact Gaussian law",
    ),
    "ou-attract": (
        attractive_model,
        "pull to the ensemble mean, constant noise; exact Gaussian law",
    ),
    "holder-drift": (
        holder_drift_model,
        "Holder-continuous pull (exponent eta < 1); refined-mesh reference only",
    ),
}


def model_catalog() -> dict:
    """Built-in model ids with descriptions and default parameters."""
    out = {}
    for model_id, (factory, desc) in _CATALOG.items():
        bundle = factory()
        out[model_id] = {"description": desc, "defaults": dict(bundle.params)}
    return out


def build_model(model_id: str, **params) -> ModelBundle:
    """Instantiate a catalogue model, overriding any default parameters."""
    try:
        factory, _ = _CATALOG[model_id]
    except KeyError:
        raise DomainError(
            f"unknown model {model_id!r}; known: {sorted(_CATALOG)}"
        ) from None
    return factory(**params)
