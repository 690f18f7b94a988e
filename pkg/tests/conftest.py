from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from coalbg.core import ModelParams, SelectionProfile

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fig2() -> ModelParams:
    return ModelParams(mu1=0.025, mu2=0.025, r=0.0, nu=0.1, selection=SelectionProfile.balancing(0.16, 0.5))


@pytest.fixture
def neutral(fig2) -> ModelParams:
    return fig2.with_(selection=SelectionProfile.neutral())
