import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("default")


def images(max_side=12):
    """Hypothesis strategy for uint8 (H, W, 3) images."""
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.just(3))
    return shapes.flatmap(lambda s: arrays(np.uint8, s))


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)


@pytest.fixture
def small_image(rng_np):
    return rng_np.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
