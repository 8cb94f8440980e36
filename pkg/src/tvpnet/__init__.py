"""Bayesian dynamic latent-space networks with time-varying edge predictors."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DynamicNetwork,
    EdgeCovariates,
    ModelConfig,
    ModelState,
    PosteriorSamples,
    draw_state_from_prior,
    initial_state,
    link_probability,
    log_likelihood,
    predictor,
    simulate,
)
from .gibbs import SamplerPlan, run_sampler  # noqa: E402

__all__ = [
    "DynamicNetwork",
    "EdgeCovariates",
    "ModelConfig",
    "ModelState",
    "PosteriorSamples",
    "SamplerPlan",
    "draw_state_from_prior",
    "initial_state",
    "link_probability",
    "log_likelihood",
    "predictor",
    "run_sampler",
    "simulate",
]
