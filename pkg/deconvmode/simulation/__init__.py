from .experiment import (
    MCResult,
    SimConfig,
    SimulationPlan,
    generate_dataset,
    oracle_bandwidths,
    run_mc_experiment,
    true_mode_set,
)
from .scenarios import SCENARIO_REGISTRY, MixtureScenario

__all__ = [
    "MCResult",
    "SimConfig",
    "SimulationPlan",
    "generate_dataset",
    "oracle_bandwidths",
    "run_mc_experiment",
    "true_mode_set",
    "SCENARIO_REGISTRY",
    "MixtureScenario",
]
