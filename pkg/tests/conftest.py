import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ldeq.landmark_model import ArchDescriptor, LandmarkDEQ

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def tiny_arch():
    return ArchDescriptor(image_size=16, heatmap_size=8, num_landmarks=2, feature_channels=4)


@pytest.fixture
def tiny_model(tiny_arch):
    return LandmarkDEQ(tiny_arch)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
