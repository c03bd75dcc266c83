import numpy as np
import pytest

from unwarp.errors import GeometryError, SingularTransformError
from unwarp.geometry import (
    AffineTransform2D,
    BackwardMap,
    Grid2D,
    RasterImage,
    canonical_grid,
    pixel_to_norm,
)
from unwarp.warp import (
    SampleOptions,
    compose_affine_into_map,
    compose_maps,
    densify_grid,
    invert_affine,
    invert_map,
    resize_image,
    warp_affine,
    warp_by_map,
)


def random_image(h, w, c=3, seed=0):
    return RasterImage(np.random.default_rng(seed).random((h, w, c)))


def smooth_field(h, w, seed, amplitude=0.05):
    """Identity plus low-frequency sinusoid displacement, as a BackwardMap."""
    rng = np.random.default_rng(seed)
    base = BackwardMap.identity(h, w).coords.copy()
    for axis in range(2):
        a = rng.uniform(0.2, 1.0) * amplitude
        fx, fy = rng.uniform(1.0, 2.5, 2)
        ph = rng.uniform(0, 2 * np.pi)
        base[:, :, axis] += a * np.sin(fx * base[:, :, 0] + fy * base[:, :, 1] + ph)
    return BackwardMap(base)


class TestWarpAffine:
    def test_identity_bit_exact(self):
        img = random_image(12, 17)
        out = warp_affine(img, AffineTransform2D.identity(), 12, 17)
        assert np.array_equal(out.data, img.data)

    def test_translation_one_pixel_oracle(self):
        img = random_image(8, 10, c=1, seed=2)
        w = img.width
        # shift output content one pixel to the right: p_out = p_src + pitch
        pitch = 2.0 / (w - 1)
        a = AffineTransform2D(np.array([[1.0, 0.0, pitch], [0.0, 1.0, 0.0]]))
        out = warp_affine(img, a, 8, 10, SampleOptions(fill=0.5))
        expected = np.empty_like(img.data)
        for i in range(8):
            for j in range(10):
                expected[i, j] = img.data[i, j - 1] if j >= 1 else 0.5
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_singular_raises(self):
        img = random_image(8, 8)
        deg = AffineTransform2D(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]))
        with pytest.raises(SingularTransformError):
            warp_affine(img, deg, 8, 8)

    def test_zero_size_output(self):
        with pytest.raises(GeometryError):
            warp_affine(random_image(8, 8), AffineTransform2D.identity(), 0, 8)

    def test_oob_mask(self):
        img = random_image(8, 8)
        a = AffineTransform2D(np.array([[0.5, 0, 0], [0, 0.5, 0]]))
        out, mask = warp_affine(img, a, 8, 8, SampleOptions(emit_oob_mask=True))
        # inverse scales outward: corners land outside the source
        assert mask.data[0, 0] == 0 and mask.data[4, 4] == 1

    def test_output_range(self):
        img = random_image(16, 16)
        a = AffineTransform2D(np.array([[0.7, 0.2, 0.05], [-0.1, 0.8, 0.0]]))
        out = warp_affine(img, a, 20, 22)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestWarpByMap:
    def test_identity_bit_exact(self):
        img = random_image(9, 13)
        out = warp_by_map(img, BackwardMap.identity(9, 13))
        assert np.array_equal(out.data, img.data)

    def test_constant_map(self):
        img = random_image(8, 8, seed=5)
        center = np.array([pixel_to_norm(4, 8), pixel_to_norm(3, 8)])
        coords = np.broadcast_to(center, (6, 6, 2)).copy()
        out = warp_by_map(img, BackwardMap(coords))
        assert np.allclose(out.data, img.data[3, 4])

    def test_shift_left_fill_right(self):
        img = random_image(8, 10, c=1, seed=3)
        w = img.width
        coords = BackwardMap.identity(8, 10).coords.copy()
        coords[:, :, 0] += 2.0 / (w - 1)
        out = warp_by_map(img, BackwardMap(coords), SampleOptions(fill=0.25))
        expected = np.empty_like(img.data)
        for i in range(8):
            for j in range(10):
                expected[i, j] = img.data[i, j + 1] if j + 1 < w else 0.25
        assert np.allclose(out.data, expected, atol=1e-12)


class TestDensify:
    def test_canonical_densifies_to_identity(self):
        g = canonical_grid(5, 4)
        d = densify_grid(g, 30, 40)
        ident = BackwardMap.identity(30, 40)
        assert np.allclose(d.coords, ident.coords, atol=1e-12)

    def test_control_points_reproduced(self):
        rng = np.random.default_rng(8)
        g = Grid2D(rng.uniform(-1, 1, (4, 5, 2)))
        # output size chosen so control points sit exactly on pixels
        d = densify_grid(g, 2 * 4 - 1, 2 * 5 - 1)
        assert np.allclose(d.coords[::2, ::2], g.points, atol=1e-15)


class TestComposeAffine:
    def test_identity_transform(self):
        rng = np.random.default_rng(4)
        g = Grid2D(rng.uniform(-1, 1, (5, 7, 2)))
        d = compose_affine_into_map(g, AffineTransform2D.identity(), 20, 25)
        assert np.array_equal(d.coords, densify_grid(g, 20, 25).coords)

    def test_pointwise_formula(self):
        ident = BackwardMap.identity(10, 12)
        a_inv = AffineTransform2D(np.array([[2.0, 0.0, 0.1], [0.0, 1.0, -0.2]]))
        d = compose_affine_into_map(ident, a_inv)
        assert np.allclose(d.coords[:, :, 0], 2 * ident.coords[:, :, 0] + 0.1, atol=1e-15)
        assert np.allclose(d.coords[:, :, 1], ident.coords[:, :, 1] - 0.2, atol=1e-15)

    def test_matches_sequential_warps(self, gradient_image):
        img = gradient_image
        a = AffineTransform2D(np.array([[1.15, 0.05, 0.02], [-0.03, 1.1, -0.04]]))
        g = smooth_field(64, 64, seed=11, amplitude=0.03)
        composed = compose_affine_into_map(g, a.invert())
        direct = warp_by_map(img, composed)
        o0 = warp_affine(img, a, img.height, img.width)
        sequential = warp_by_map(o0, g)
        diff = np.abs(direct.data - sequential.data).mean()
        assert diff <= 1e-3

    def test_grid_requires_dims(self):
        with pytest.raises(GeometryError):
            compose_affine_into_map(canonical_grid(4, 4), AffineTransform2D.identity())


class TestComposeMaps:
    def test_right_identity(self):
        d = smooth_field(16, 20, seed=1)
        out = compose_maps(d, BackwardMap.identity(16, 20))
        assert np.array_equal(out.coords, d.coords)

    def test_left_identity_clamps(self):
        rng = np.random.default_rng(2)
        g = BackwardMap(rng.uniform(-1.4, 1.4, (12, 12, 2)))
        out = compose_maps(BackwardMap.identity(12, 12), g)
        assert np.allclose(out.coords, np.clip(g.coords, -1, 1), atol=1e-12)

    def test_shift_addition_interior(self):
        h = w = 11
        pitch = 2.0 / (w - 1)
        da = BackwardMap.identity(h, w).coords.copy()
        da[:, :, 0] += pitch
        gb = BackwardMap.identity(h, w).coords.copy()
        gb[:, :, 0] += 2 * pitch
        out = compose_maps(BackwardMap(da), BackwardMap(gb))
        expected = BackwardMap.identity(h, w).coords.copy()
        expected[:, :, 0] += 3 * pitch
        interior = out.coords[1:-1, 1:-4]
        assert np.allclose(interior, expected[1:-1, 1:-4], atol=1e-12)

    def test_associativity_within_tolerance(self):
        for seed in range(5):
            d = smooth_field(64, 64, seed=seed * 3 + 1)
            g1 = smooth_field(64, 64, seed=seed * 3 + 2)
            g2 = smooth_field(64, 64, seed=seed * 3 + 3)
            left = compose_maps(compose_maps(d, g1), g2)
            right = compose_maps(d, compose_maps(g1, g2))
            err = np.abs(left.coords - right.coords).mean()
            assert err <= 2e-3

    def test_single_sampling_fidelity(self, gradient_image):
        img = gradient_image
        d = smooth_field(img.height, img.width, seed=21, amplitude=0.04)
        g = smooth_field(img.height, img.width, seed=22, amplitude=0.04)
        once = warp_by_map(img, compose_maps(d, g))
        twice = warp_by_map(warp_by_map(img, d), g)
        assert np.abs(once.data - twice.data).mean() <= 2e-2


class TestInvertAffine:
    def test_identity(self):
        inv = invert_affine(AffineTransform2D.identity())
        assert np.array_equal(inv.m, AffineTransform2D.identity().m)

    def test_closed_form(self):
        a = AffineTransform2D(np.array([[2.0, 0.0, 0.1], [0.0, 1.0, -0.2]]))
        assert np.allclose(invert_affine(a).m, [[0.5, 0, -0.05], [0, 1, 0.2]], atol=1e-12)

    def test_singular(self):
        with pytest.raises(SingularTransformError):
            invert_affine(AffineTransform2D(np.array([[1.0, 1, 0], [1, 1, 0]])))


class TestInvertMap:
    def test_recovers_preimage(self):
        d = smooth_field(48, 48, seed=9, amplitude=0.06)
        rng = np.random.default_rng(10)
        q_true = rng.uniform(-0.8, 0.8, (200, 2))
        px = (q_true[:, 0] + 1) * (48 - 1) / 2
        py = (q_true[:, 1] + 1) * (48 - 1) / 2
        from unwarp import kernels

        targets = kernels.sample_field(d.coords, px, py)
        q = invert_map(d, targets, init=q_true + 0.05)
        assert np.max(np.abs(q - q_true)) < 1e-6


def test_resize_identity():
    img = random_image(14, 15)
    assert np.array_equal(resize_image(img, 14, 15).data, img.data)
