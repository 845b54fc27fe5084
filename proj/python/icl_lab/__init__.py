"""Bayesian in-context regression lab: priors, exact oracles and the CLI."""

from ._icl_lab import (
    BayesOracle,
    Component,
    Episode,
    IclError,
    Model,
    Prior,
    episodes,
    fit_rate,
    haar_component,
    haar_prior,
    mixture,
    posterior_mean_mc,
    run_cli,
    target_exponent,
)

__all__ = [
    "BayesOracle",
    "Component",
    "Episode",
    "IclError",
    "Model",
    "Prior",
    "episodes",
    "fit_rate",
    "haar_component",
    "haar_prior",
    "mixture",
    "posterior_mean_mc",
    "run_cli",
    "target_exponent",
]
