import math
import os

import pytest
from hypothesis import HealthCheck, settings

from fadingsde import DriftFunction, ParametricSchedule, SpikySchedule

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def spiky():
    return SpikySchedule(1.0, "1/(k+1)", "1/(k+3)")


def bundled_schedules():
    """Name -> schedule for the analytic and numeric fixtures used across tests."""
    P = ParametricSchedule
    return {
        "exp": P("exp_decay"),
        "integrable_log": P("expression", expr="1/((t+2)*log(t+2)**2)"),
        "log_half": P("log", L=0.5),
        "log_one": P("log", L=1.0),
        "log_two": P("log", L=2.0),
        "constant": P("constant", c=1.0),
        "loglog": P("expression", expr="log(t+2)/log(log(t+16))"),
        "power_half": P("power_decay", p=0.5),
        "cw_two": P("chan_williams", p=2.0),
        "spiky": spiky(),
    }


@pytest.fixture
def schedules():
    return bundled_schedules()


@pytest.fixture
def drifts():
    return {
        "linear": DriftFunction("linear"),
        "cubic": DriftFunction("odd_power", n=3),
        "saturating": DriftFunction("saturating", a=1.0),
        "saturating_coercive": DriftFunction("saturating", a=1.0, slope=0.5),
        "oscillating": DriftFunction("oscillating", a=1.2),
    }


E = math.e
