"""Fluctuations of fractional Brownian motion and shadow prices under proportional costs."""

__version__ = "0.1.0"

from .arbitrage_diagnostics import (
    ConsistentPriceSystem,
    CpsConstructionError,
    CpsResult,
    build_cps,
    crossing_times,
    detect_obvious_arbitrage,
    ensemble_from_tree,
    twc_curve,
)
from .duality import dual_conjugacy_check, dual_value, random_consistent_price_system
from .fbm import FBMSampler, GaussianPath, ModelSpec, PricePath, TimeGrid, fbm_covariance, sample_fbm_paths
from .fluctuation import (
    FluctuationCounter,
    TailLawRegressor,
    drift_budget,
    fluctuation_counts,
    fluctuation_times,
    mc_tail_curve,
    moment_estimates,
    scaling_fit,
)
from .ledger import CostSpec, TradingStrategy, check_admissible, liquidation_value, settle
from .shadow import extract_shadow, myopic_check, verify_shadow
from ._barrier import SolverError
from .tree import ScenarioTree, build_fbs_tree, one_period_tree
from .tree_optimizer import TreeUtilityMaximizer, frictionless_optimize, maximize_utility
from .utility import UtilitySpec
from .wealth_bound import BoundParams, bound_value, check_wealth_bound, dp_oracle_best_terminal, k_constant

__all__ = [
    "BoundParams",
    "ConsistentPriceSystem",
    "CostSpec",
    "CpsConstructionError",
    "CpsResult",
    "FBMSampler",
    "FluctuationCounter",
    "GaussianPath",
    "ModelSpec",
    "PricePath",
    "ScenarioTree",
    "SolverError",
    "TailLawRegressor",
    "TimeGrid",
    "TradingStrategy",
    "TreeUtilityMaximizer",
    "UtilitySpec",
    "bound_value",
    "build_cps",
    "build_fbs_tree",
    "check_admissible",
    "check_wealth_bound",
    "crossing_times",
    "detect_obvious_arbitrage",
    "dp_oracle_best_terminal",
    "drift_budget",
    "dual_conjugacy_check",
    "dual_value",
    "ensemble_from_tree",
    "extract_shadow",
    "fbm_covariance",
    "fluctuation_counts",
    "fluctuation_times",
    "frictionless_optimize",
    "k_constant",
    "liquidation_value",
    "maximize_utility",
    "mc_tail_curve",
    "moment_estimates",
    "myopic_check",
    "one_period_tree",
    "random_consistent_price_system",
    "sample_fbm_paths",
    "scaling_fit",
    "settle",
    "twc_curve",
    "verify_shadow",
]
