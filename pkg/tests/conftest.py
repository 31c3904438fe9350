"""Shared test configuration.

Property-based tests run derandomized so that the suite is bit-for-bit
reproducible between invocations.
"""

from hypothesis import HealthCheck, settings

settings.register_profile(
    "repro",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")
