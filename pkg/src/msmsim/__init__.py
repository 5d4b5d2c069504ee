"""Simulate longitudinal survival data compatible with a marginal structural model.

The main entry points are :func:`builtin_scenario` / :func:`parse_scenario`
to describe a data-generating mechanism, :func:`simulate_cohort` to generate
data, and :func:`run_msm_validation` to verify the MSM by IPTW refitting.
"""

from .engine import (Cohort, IndividualRecord, register_risk_score_hook, sensitivity_m_run,
                     simulate_cohort, simulate_individual_known_cdf, simulate_individual_matched,
                     simulate_potential_arm)
from .errors import *  # noqa: F401,F403
from .estimation import (FitResult, MsmPipeline, PersonPeriodTable, bootstrap_ci, expand_person_period,
                         fit_pooled_binary, sandwich_variance, stabilized_weights)
from .scenario import (DEFAULT_SEED, PRESET_NAMES, PoolConfig, ScenarioSpec, builtin_scenario, eval_g,
                       load_scenario, parse_scenario)
from .studies import run_msm_validation, run_sim_study

try:
    from importlib.metadata import version as _version

    __version__ = _version("artifact")
except Exception:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"
