"""Max-stable velocity processes: simulation, closed forms and waiting-time tail dependence."""
from __future__ import annotations

__version__ = "0.1.0"

from .attributes import Attribute, Empirical, Estimate, Factored, PointMass, table1_attributes
from .errors import ConfigError, DataError, NumericalError, TailwaitError
from .exceedance import WaitingTimes, marginal_waits, pairwise_waits
from .mixture import MixtureParams, MixturePriors, run_chain
from .sim import MsvConfig, Panel, simulate_panel
from .tail_dep import GammaPosterior, gamma_posterior, ks_distance, mmd

__all__ = [
    "Attribute", "ConfigError", "DataError", "Empirical", "Estimate", "Factored", "GammaPosterior",
    "MixtureParams", "MixturePriors", "MsvConfig", "NumericalError", "Panel", "PointMass", "TailwaitError",
    "WaitingTimes", "gamma_posterior", "ks_distance", "marginal_waits", "mmd", "pairwise_waits", "run_chain",
    "simulate_panel", "table1_attributes",
]
