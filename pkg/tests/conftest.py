from __future__ import annotations

import numpy as np
import pytest

from emoforge.fixtures import make_image
from emoforge.providers import MockSuite
from emoforge.providers.images import ImageRef


@pytest.fixture(scope="session")
def suite():
    return MockSuite(d=32, seed=42)


@pytest.fixture()
def smooth_image():
    return make_image(123, "conftest", "smooth")


@pytest.fixture()
def noise_image():
    rng = np.random.default_rng(99)
    return ImageRef(
        id="noise-99",
        content=rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8),
    )
