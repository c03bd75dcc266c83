import numpy as np
import pytest

from unwarp.geometry import RasterImage
from unwarp.synth import make_suite, render_page


@pytest.fixture(scope="session")
def flat_page():
    return render_page(7, blocks=3)


@pytest.fixture(scope="session")
def small_fine_suite():
    return make_suite(3, 5, "+fine")


@pytest.fixture(scope="session")
def gradient_image():
    """Smooth low-frequency image: kind to interpolation, no flat regions."""
    h, w = 120, 160
    y, x = np.mgrid[0:h, 0:w]
    data = 0.5 + 0.25 * np.sin(2 * np.pi * x / w) * np.cos(2 * np.pi * y / h)
    data = data + 0.2 * (x / w) * (y / h)
    return RasterImage(np.clip(data, 0, 1))
