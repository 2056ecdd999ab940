import numpy as np
import pytest
from hypothesis import settings

from pimjoin.memory import MemoryGeometry, TimingParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# acceptance criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def geometry():
    return MemoryGeometry()


@pytest.fixture
def timing():
    return TimingParams()


@pytest.fixture
def small_geometry():
    """A tiny memory system so capacity limits are reachable in tests."""
    return MemoryGeometry(channels=2, dimms_per_channel=1, chips_per_rank=4, banks_per_chip=2,
                          subarrays_per_bank=2, rows_per_subarray=4, columns_per_row=16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
