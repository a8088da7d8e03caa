"""Dynamic Gaussian copula default-time model.

Closed-form default intensities and factor drifts, the party-survival
supermartingale, an exact path simulator, the invariance-measure change,
statistical verification suites and a counterparty-adjustment sweep.
"""
from __future__ import annotations

from .errors import (ConfigError, DegenerateHazard, MissingResidual,
                     NonConvergence, ThresholdUndefined)
from .model import (ModelConfig, PortfolioState, default_config,
                    dump_config, load_config, load_state)
from .engine import (Scope, azema_supermartingale, cds_clean_value,
                     factor_drift, factor_drift_reduction, intensity,
                     intensity_reduction, intensity_report, par_spread,
                     survival_probability)
from .simulate import (GridSpec, SeedSpec, doleans_weight, iter_blocks,
                       simulate_path)
from .batch import write_path_dump
from .verify import (all_passed, run_suites, summary_table,
                     verification_config, write_report)
from .tva import TVARunSpec, run_tva, write_tva

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateHazard", "MissingResidual", "NonConvergence",
    "ThresholdUndefined",
    "ModelConfig", "PortfolioState", "default_config", "dump_config",
    "load_config", "load_state",
    "Scope", "azema_supermartingale", "cds_clean_value", "factor_drift",
    "factor_drift_reduction", "intensity", "intensity_reduction",
    "intensity_report", "par_spread", "survival_probability",
    "GridSpec", "SeedSpec", "doleans_weight", "iter_blocks", "simulate_path",
    "write_path_dump",
    "all_passed", "run_suites", "summary_table", "verification_config",
    "write_report",
    "TVARunSpec", "run_tva", "write_tva",
    "__version__",
]
