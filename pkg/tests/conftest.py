import functools

import numpy as np
import pytest

from nestq.backend import ImageBuffer

GRAY_IMAGES = ("camera", "moon", "brick")


@functools.lru_cache(maxsize=None)
def load_image(name):
    from skimage import data

    return ImageBuffer(np.asarray(getattr(data, name)()))


@pytest.fixture(scope="session")
def gray_images():
    return [load_image(n) for n in GRAY_IMAGES]


@pytest.fixture(scope="session")
def camera():
    return load_image("camera")


@pytest.fixture
def small_rgb():
    rng = np.random.default_rng(7)
    base = np.linspace(0, 255, 40)[None, :, None] * np.ones((27, 1, 3))
    noisy = base + rng.normal(0, 12, base.shape)
    return ImageBuffer(np.clip(noisy, 0, 255).astype(np.uint8))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
