import numpy as np
import pytest

from unwarp import kernels

HAVE_NATIVE = "native" in kernels.available_backends()

needs_native = pytest.mark.skipif(not HAVE_NATIVE, reason="native kernels not built")


@pytest.fixture(scope="module")
def random_inputs():
    rng = np.random.default_rng(42)
    img = rng.random((37, 53, 3))
    px = rng.uniform(-4, 60, 20000)
    py = rng.uniform(-4, 44, 20000)
    # sprinkle near-integer and exactly-integer coordinates
    px[:500] = np.round(px[:500]) + rng.uniform(-1e-10, 1e-10, 500)
    py[:500] = np.round(py[:500])
    return img, px, py


@needs_native
def test_sample_image_parity(random_inputs):
    img, px, py = random_inputs
    fill = np.array([0.1, 0.2, 0.3])
    a, oa = kernels.sample_image(img, px, py, fill, backend="native")
    b, ob = kernels.sample_image(img, px, py, fill, backend="reference")
    assert np.array_equal(a, b)
    assert np.array_equal(oa, ob)


@needs_native
def test_sample_field_parity(random_inputs):
    img, px, py = random_inputs
    field = np.random.default_rng(1).normal(0, 1, (37, 53, 2))
    a = kernels.sample_field(field, px, py, backend="native")
    b = kernels.sample_field(field, px, py, backend="reference")
    assert np.array_equal(a, b)


@needs_native
def test_grow_regions_parity():
    rng = np.random.default_rng(3)
    gray = rng.random((48, 64))
    gray[20:24, 5:60] = 0.0
    from unwarp.lines import _sobel

    gx, gy = _sobel(gray)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) + np.pi / 2
    ang = np.where(ang > np.pi, ang - 2 * np.pi, ang)
    cand = np.nonzero(mag.ravel() >= 0.02)[0]
    order = cand[np.argsort(-mag.ravel()[cand], kind="stable")]
    la, na = kernels.grow_regions(ang, mag, order, 0.02, 0.4, backend="native")
    lb, nb = kernels.grow_regions(ang, mag, order, 0.02, 0.4, backend="reference")
    assert na == nb
    assert np.array_equal(la, lb)


@pytest.mark.parametrize("backend", ["reference"] + (["native"] if HAVE_NATIVE else []))
class TestSemantics:
    def test_snap_to_integer(self, backend):
        img = np.arange(12.0).reshape(3, 4, 1) / 11.0
        px = np.array([1.0 + 3e-10, 2.0 - 3e-10])
        py = np.array([1.0 - 3e-10, 0.0 + 3e-10])
        out, oob = kernels.sample_image(img, px, py, np.zeros(1), backend=backend)
        assert np.array_equal(out[:, 0], [img[1, 1, 0], img[0, 2, 0]])
        assert not oob.any()

    def test_oob_fill_and_mask(self, backend):
        img = np.ones((4, 4, 1))
        px = np.array([-0.5, 3.5, 2.0])
        py = np.array([1.0, 1.0, 1.0])
        out, oob = kernels.sample_image(img, px, py, np.array([0.25]), backend=backend)
        assert np.array_equal(oob, [1, 1, 0])
        assert np.array_equal(out[:, 0], [0.25, 0.25, 1.0])

    def test_field_clamps(self, backend):
        field = np.dstack(np.meshgrid(np.arange(5.0), np.arange(4.0)))
        out = kernels.sample_field(field, np.array([-3.0, 10.0]), np.array([1.5, 1.5]),
                                   backend=backend)
        assert np.array_equal(out[0], [0.0, 1.5])
        assert np.array_equal(out[1], [4.0, 1.5])

    def test_bilinear_value(self, backend):
        img = np.array([[[0.0], [1.0]], [[1.0], [1.0]]])
        out, _ = kernels.sample_image(img, np.array([0.5]), np.array([0.0]),
                                      np.zeros(1), backend=backend)
        assert out[0, 0] == 0.5
