"""Bayesian additive-and-multiplicative-effects model for networks with nodal attributes."""

from .chain import GibbsSampler, run_chain
from .diagnostics import effective_sample_size
from .identify import (
    conditional_coefficients,
    conditional_expectation,
    log_density,
    network_log_density,
    simulate_attributes,
    simulate_from_prior,
    simulate_relations,
    to_identified,
)
from .model import ChainData, build_data, init_state
from .state import ConditionalCoefficients, ModelState, PosteriorSamples, PriorConfig, Schedule
from .updates import (
    expected_z,
    impute_missing,
    update_additive,
    update_cov,
    update_latent_relations,
    update_multiplicative,
    update_rho,
    update_sigma_e,
)

__all__ = [
    "ChainData", "ConditionalCoefficients", "GibbsSampler", "ModelState", "PosteriorSamples",
    "PriorConfig", "Schedule", "build_data", "conditional_coefficients", "conditional_expectation",
    "effective_sample_size", "expected_z", "impute_missing", "init_state", "log_density",
    "network_log_density", "run_chain", "simulate_attributes", "simulate_from_prior",
    "simulate_relations", "to_identified", "update_additive", "update_cov",
    "update_latent_relations", "update_multiplicative", "update_rho", "update_sigma_e",
]
