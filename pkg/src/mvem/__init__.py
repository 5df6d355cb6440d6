"""Interacting-particle simulation of mean-field SDEs with rate estimation.

The package simulates McKean-Vlasov dynamics through the explicit
Euler-Maruyama discretisation of the associated interacting particle
system, measures strong and weak approximation errors against exactly
solvable Gaussian reference laws, and fits empirical convergence orders in
the mesh size and the particle count.
"""

__version__ = "0.1.0"

from .analysis import (
    ErrorPoint,
    RateFit,
    ReplicationPlan,
    SweepSpec,
    fit_rate,
    mean_measure_w1,
    run_sweep,
    sampling_rate,
    strong_error_semigroup,
    strong_error_trajectory,
    strong_error_w2,
    weak_error_semigroup,
)
from .errors import ConfigError, DomainError, IntegrationError, UnsupportedModelError
from .measures import (
    DiscreteMeasure,
    functional_eval,
    functional_on_gaussian,
    make_functional,
    moment,
    w1_to_gaussian,
    w2_to_gaussian,
    wasserstein_1d,
    wasserstein_exact,
    wasserstein_sliced,
)
from .noise import NoiseTableau, coarsen, generate_tableau
from .particles import (
    CoupledResult,
    ParticleEnsemble,
    TrajectoryRecord,
    em_step,
    simulate,
    simulate_coupled_fine,
    simulate_coupled_ou,
)
from .reference_models import (
    GaussianFlow,
    ModelBundle,
    build_model,
    model_catalog,
    ou_flow,
)
from .sde_core import (
    CoefficientModel,
    EmpiricalMeasureView,
    RegularityCard,
    TimeGrid,
    evaluate_drift,
    evaluate_diffusion,
    left_node,
)

__all__ = [
    "__version__",
    "CoefficientModel",
    "ConfigError",
    "CoupledResult",
    "DiscreteMeasure",
    "DomainError",
    "EmpiricalMeasureView",
    "ErrorPoint",
    "GaussianFlow",
    "IntegrationError",
    "ModelBundle",
    "NoiseTableau",
    "ParticleEnsemble",
    "RateFit",
    "RegularityCard",
    "ReplicationPlan",
    "SweepSpec",
    "TimeGrid",
    "TrajectoryRecord",
    "UnsupportedModelError",
    "build_model",
    "coarsen",
    "em_step",
    "evaluate_diffusion",
    "evaluate_drift",
    "fit_rate",
    "functional_eval",
    "functional_on_gaussian",
    "generate_tableau",
    "left_node",
    "make_functional",
    "mean_measure_w1",
    "model_catalog",
    "moment",
    "ou_flow",
    "run_sweep",
    "sampling_rate",
    "simulate",
    "simulate_coupled_fine",
    "simulate_coupled_ou",
    "strong_error_semigroup",
    "strong_error_trajectory",
    "strong_error_w2",
    "w1_to_gaussian",
    "w2_to_gaussian",
    "wasserstein_1d",
    "wasserstein_exact",
    "wasserstein_sliced",
    "weak_error_semigroup",
]
