import os
import warnings

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def quiet():
    """Silence expected runtime warnings (pool restarts, small probabilities)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def minimal_document(**overrides):
    """Smallest legal scenario: one visit, no B, one confounder, marginal MSM."""
    doc = {
        "visits": 1,
        "confounders": [{"name": "l1", "kind": "normal", "intercept": 0.0}],
        "treatment": {"kind": "binary", "intercept": 0.0, "terms": {"l1": 0.5}},
        "msm": {"link": "logit", "baseline": -1.0, "terms": {"a": -0.5}},
        "risk_score": {"terms": {"l1": 1.0}},
        "rho": -0.5,
        "pool": {"m": 200, "restart_m": 4000},
    }
    doc.update(overrides)
    return doc
