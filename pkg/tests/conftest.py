import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from gssplat.geometry import Camera, CameraIntrinsics, Pose  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_camera(width=32, height=32, distance=2.5, fov=60.0, eye=None):
    eye = (0.3, -distance, 0.4) if eye is None else eye
    return Camera(CameraIntrinsics.from_fov(width, height, fov),
                  Pose.look_at(eye, (0.0, 0.0, 0.0)))


@pytest.fixture
def camera():
    return make_camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record one verdict line each; printed after the run
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
