"""Federated stochastic bilevel optimization simulator.

Thin re-export of the compiled core. The heavy lifting (oracles, truncated
series hypergradients, the two momentum estimators, the federated run loop)
lives in C++; this package exposes it for scripting and plotting.
"""

from ._core import (
    Accounting,
    Algorithm,
    BilevelOracle,
    CapabilityError,
    Dataset,
    DerivedConstants,
    DivergenceError,
    FederationConfig,
    HyperParams,
    IterationRecord,
    NeumannConfig,
    QuadQuadConfig,
    QuadQuadOracle,
    RandomStream,
    RateDerivation,
    RatePreset,
    RidgeHyperConfig,
    RidgeHyperOracle,
    RunTrace,
    SmoothnessConstants,
    StepSchedule,
    accounting,
    audit_rate_derivation,
    convergence_metric,
    default_Q,
    default_theta,
    derived_constants,
    gaussian_vec,
    hypergrad_samples,
    load_csv_dataset,
    measure_bias,
    neumann_apply,
    run,
    stochastic_hypergradient,
    synth_dataset,
    theorem_hyperparams,
    truncation_bias_bound,
)

__all__ = [
    "Accounting",
    "Algorithm",
    "BilevelOracle",
    "CapabilityError",
    "Dataset",
    "DerivedConstants",
    "DivergenceError",
    "FederationConfig",
    "HyperParams",
    "IterationRecord",
    "NeumannConfig",
    "QuadQuadConfig",
    "QuadQuadOracle",
    "RandomStream",
    "RateDerivation",
    "RatePreset",
    "RidgeHyperConfig",
    "RidgeHyperOracle",
    "RunTrace",
    "SmoothnessConstants",
    "StepSchedule",
    "accounting",
    "audit_rate_derivation",
    "convergence_metric",
    "default_Q",
    "default_theta",
    "derived_constants",
    "gaussian_vec",
    "hypergrad_samples",
    "load_csv_dataset",
    "measure_bias",
    "neumann_apply",
    "run",
    "stochastic_hypergradient",
    "synth_dataset",
    "theorem_hyperparams",
    "truncation_bias_bound",
]
