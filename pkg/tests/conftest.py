import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lesionbench import available_backends
from lesionbench.volume_io import GridGeometry, LabelVolume

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


def make_mask(arr, spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    arr = np.asarray(arr, dtype=bool)
    return LabelVolume(GridGeometry(arr.shape, spacing), arr)


def mask_from_coords(dims, coords, spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    arr = np.zeros(dims, dtype=bool)
    for c in coords:
        arr[tuple(c)] = True
    return make_mask(arr, spacing)


def pytest_terminal_summary(terminalreporter):
    lines = [value for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
             for key, value in getattr(rep, "user_properties", []) if key == "acceptance"]
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
