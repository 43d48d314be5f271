"""Shared fixtures: tiny demo sets, fitted supports, and policies.

Everything here is deliberately small so the unit files stay fast; the
full-size protocol runs live in test_acceptance.py only.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dfrlab.controllers import PolicyConfig, fit_policy
from dfrlab.envs import builtin_env_spec
from dfrlab.kernel_ocsvm import KernelParams, OcsvmParams
from dfrlab.supervisor import generate_demos
from dfrlab.support import fit_time_varying

settings.register_profile(
    "repo",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def point_push_spec():
    return builtin_env_spec("point_push")


@pytest.fixture(scope="session")
def line_track_spec():
    return builtin_env_spec("line_track")


@pytest.fixture(scope="session")
def pp_demos():
    """20 clean point_push demonstrations, the workhorse fixture."""
    return generate_demos(builtin_env_spec("point_push"), 20, seed=5)


@pytest.fixture(scope="session")
def pp_support(pp_demos):
    params = OcsvmParams(nu=0.05, kernel=KernelParams(gamma=15.0))
    return fit_time_varying(pp_demos, params)


@pytest.fixture(scope="session")
def pp_policy(pp_demos):
    cfg = PolicyConfig(centers=200, bandwidth=0.15)
    return fit_policy(pp_demos, cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
