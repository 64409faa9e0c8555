import numpy as np
import pytest

from guidedstereo.imgio import ImagePair


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def shifted_pair(rng, height=16, width=16, shift=3, channels=1):
    """Random-texture pair where left (x, y) matches right (x - shift, y)."""
    wide = rng.integers(0, 256, size=(height, width + shift, channels), dtype=np.uint8)
    left = wide[:, :width]
    right = wide[:, shift:]
    return ImagePair(np.ascontiguousarray(left), np.ascontiguousarray(right))


@pytest.fixture
def textured_pair(rng):
    return shifted_pair(rng)
