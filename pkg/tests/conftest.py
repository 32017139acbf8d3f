import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leadtime.eventlog import Event, EventLog, Trace, parse_timestamp
from leadtime.features import StaticRecord
from leadtime.synthgen import GenConfig, generate

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def ev(case: str, act: str, ts: str, **attrs) -> Event:
    return Event(case_id=case, activity=act, timestamp=parse_timestamp(ts), dyn_attrs=attrs)


def trace_of(case: str, *events: Event) -> Trace:
    return Trace(case_id=case, events=tuple(events))


def record_of(case: str, attrs: dict, production: float, postprocessing: float) -> StaticRecord:
    return StaticRecord(case_id=case, attrs=attrs, targets={
        "production": production,
        "postprocessing": postprocessing,
        "procurement": production + postprocessing,
    })


@pytest.fixture(scope="session")
def small_dataset():
    """160 generated spools shared by encoder/model/trainer tests."""
    log, statics, truths = generate(GenConfig(n_spools=160, seed=11))
    return log, statics, truths


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
