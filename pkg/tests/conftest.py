import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bevproj.geometry import CameraRig

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def forward_camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, H=101, W=101, height=1.5, pitch=0.0, name="cam"):
    """Camera at the ego origin looking along +x."""
    return CameraRig.looking(name, fx=fx, fy=fy, cx=cx, cy=cy, H=H, W=W, position=(0.0, 0.0, height),
                             pitch=pitch)


@pytest.fixture
def cam():
    return forward_camera()


@pytest.fixture
def small_cam():
    # 64x40 image, slight downward tilt so most of the image sees the ground
    return forward_camera(fx=40.0, fy=40.0, cx=31.5, cy=19.5, H=40, W=64, pitch=math.radians(8.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
