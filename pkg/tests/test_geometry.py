import numpy as np
import pytest

from unwarp.errors import (
    BadMagicError,
    FormatError,
    GeometryError,
    SingularTransformError,
)
from unwarp.formats import (
    MAP_MAGIC,
    read_flow,
    read_grid,
    read_image,
    read_layout,
    read_map,
    read_mask,
    write_flow,
    write_grid,
    write_image,
    write_layout,
    write_map,
    write_mask,
)
from unwarp.geometry import (
    AffineTransform2D,
    BackwardMap,
    ForegroundMask,
    Grid2D,
    Homography2D,
    RasterImage,
    canonical_grid,
    norm_to_pixel,
    pixel_to_norm,
)


class TestCanonicalGrid:
    def test_2x2_corners(self):
        g = canonical_grid(2, 2)
        assert np.array_equal(
            g.points,
            [[[-1, -1], [1, -1]], [[-1, 1], [1, 1]]],
        )

    def test_3x3_center(self):
        g = canonical_grid(3, 3)
        assert np.array_equal(g.points[1, 1], [0.0, 0.0])

    def test_default_grid_midpoint(self):
        # spacing formula evaluated independently at the midpoint indices
        g = canonical_grid(45, 31)
        assert g.points[22, 15, 0] == -1 + 2 * 15 / 30
        assert g.points[22, 15, 1] == -1 + 2 * 22 / 44
        assert np.array_equal(g.points[22, 15], [0.0, 0.0])

    def test_monotone_and_uniform(self):
        g = canonical_grid(9, 7)
        dx = np.diff(g.points[:, :, 0], axis=1)
        dy = np.diff(g.points[:, :, 1], axis=0)
        assert np.all(dx > 0) and np.all(dy > 0)
        assert np.ptp(dx) <= 1e-12 and np.ptp(dy) <= 1e-12

    @pytest.mark.parametrize("h,w", [(1, 5), (5, 1), (0, 0)])
    def test_too_small(self, h, w):
        with pytest.raises(GeometryError):
            canonical_grid(h, w)


class TestPixelNorm:
    def test_endpoints(self):
        assert pixel_to_norm(0, 100) == -1.0
        assert pixel_to_norm(99, 100) == 1.0

    def test_midpoint(self):
        assert pixel_to_norm(49.5, 100) == 0.0

    def test_roundtrip_and_monotone(self):
        rng = np.random.default_rng(0)
        px = rng.uniform(-5, 105, 500)
        back = norm_to_pixel(pixel_to_norm(px, 100), 100)
        assert np.max(np.abs(back - px)) <= 1e-12
        xs = pixel_to_norm(np.arange(100), 100)
        assert np.all(np.diff(xs) > 0)

    def test_size_guard(self):
        with pytest.raises(GeometryError):
            pixel_to_norm(0, 1)


class TestAffine:
    def test_identity(self):
        a = AffineTransform2D.identity()
        pts = np.array([[0.25, -0.5], [1.0, 1.0]])
        assert np.array_equal(a.apply(pts), pts)

    def test_compose_order(self):
        scale = AffineTransform2D(np.array([[2.0, 0, 0], [0, 2.0, 0]]))
        shift = AffineTransform2D(np.array([[1.0, 0, 1.0], [0, 1.0, 0]]))
        p = np.array([1.0, 1.0])
        assert np.allclose((scale @ shift).apply(p), [4.0, 2.0])
        assert np.allclose((shift @ scale).apply(p), [3.0, 2.0])

    def test_invert(self):
        a = AffineTransform2D(np.array([[2.0, 0.0, 0.1], [0.0, 1.0, -0.2]]))
        inv = a.invert()
        assert np.allclose(inv.m, [[0.5, 0.0, -0.05], [0.0, 1.0, 0.2]], atol=1e-12)
        both = a @ inv
        assert np.allclose(both.m, AffineTransform2D.identity().m, atol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularTransformError):
            AffineTransform2D(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]])).invert()

    def test_finite_required(self):
        with pytest.raises(GeometryError):
            AffineTransform2D(np.array([[np.nan, 0, 0], [0, 1, 0]]))


class TestHomography:
    def test_affine_embedding(self):
        h = Homography2D(np.array([[2.0, 0, 0.1], [0, 1.0, -0.2], [0, 0, 1.0]]))
        pts = np.array([[0.5, 0.5]])
        assert np.allclose(h.apply(pts), [[1.1, 0.3]])

    def test_projective_invert(self):
        h = Homography2D(np.array([[1.0, 0.1, 0], [0, 1.0, 0], [0.2, 0.1, 1.0]]))
        pts = np.random.default_rng(1).uniform(-0.8, 0.8, (20, 2))
        back = h.invert().apply(h.apply(pts))
        assert np.max(np.abs(back - pts)) < 1e-10


class TestImagesAndMasks:
    def test_channel_validation(self):
        with pytest.raises(GeometryError):
            RasterImage(np.zeros((4, 4, 2)))

    def test_range_validation(self):
        with pytest.raises(GeometryError):
            RasterImage(np.full((4, 4), 1.5))
        # fp noise within 1e-9 is clipped, not rejected
        img = RasterImage(np.full((4, 4), 1.0 + 1e-10))
        assert img.data.max() == 1.0

    def test_gray_of_rgb(self):
        img = RasterImage(np.dstack([np.ones((4, 4)), np.zeros((4, 4)), np.zeros((4, 4))]))
        assert np.allclose(img.to_gray(), 0.299)

    def test_mask_binarizes(self):
        m = ForegroundMask(np.array([[0, 3], [255, 0]]))
        assert np.array_equal(m.data, [[0, 1], [1, 0]])


class TestMapFormat:
    def test_roundtrip_map(self, tmp_path):
        coords = np.float32(
            np.random.default_rng(3).uniform(-1, 1, (8, 8, 2))
        ).astype(np.float64)
        m = BackwardMap(coords)
        path = tmp_path / "m.dmap"
        write_map(path, m)
        back = read_map(path)
        assert np.array_equal(back.coords, coords)

    def test_file_size_arithmetic(self, tmp_path):
        g = canonical_grid(45, 31)
        path = tmp_path / "g.dmap"
        write_grid(path, g)
        assert path.stat().st_size == 16 + 45 * 31 * 2 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.dmap"
        path.write_bytes(b"XXXX" + bytes(60))
        with pytest.raises(BadMagicError):
            read_map(path)

    def test_truncated(self, tmp_path):
        g = canonical_grid(4, 4)
        path = tmp_path / "g.dmap"
        write_grid(path, g)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_grid(path)

    def test_grid_map_share_magic(self, tmp_path):
        path = tmp_path / "g.dmap"
        write_grid(path, canonical_grid(4, 5))
        m = read_map(path)
        assert (m.height, m.width) == (4, 5)
        assert path.read_bytes()[:5] == MAP_MAGIC

    def test_double_roundtrip_bit_exact(self, tmp_path):
        coords = np.random.default_rng(9).uniform(-1, 1, (6, 7, 2))
        p1, p2 = tmp_path / "a.dmap", tmp_path / "b.dmap"
        write_map(p1, BackwardMap(coords))
        write_map(p2, read_map(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_flow_roundtrip_and_magic(self, tmp_path):
        v = np.float32(np.random.default_rng(4).normal(0, 3, (5, 6, 2))).astype(float)
        path = tmp_path / "f.dflo"
        write_flow(path, v)
        assert np.array_equal(read_flow(path), v)
        assert path.read_bytes()[:5] == b"DFLO1"
        with pytest.raises(BadMagicError):
            read_map(path)


class TestImageFiles:
    def test_png_roundtrip(self, tmp_path):
        data = np.round(np.random.default_rng(5).random((16, 12, 3)) * 255) / 255
        img = RasterImage(data)
        path = tmp_path / "i.png"
        write_image(path, img)
        assert np.array_equal(read_image(path).data, data)

    def test_gray_png_roundtrip(self, tmp_path):
        data = np.round(np.random.default_rng(6).random((16, 12)) * 255) / 255
        path = tmp_path / "g.png"
        write_image(path, RasterImage(data))
        back = read_image(path)
        assert back.channels == 1
        assert np.array_equal(back.data[:, :, 0], data)

    def test_mask_roundtrip(self, tmp_path):
        m = ForegroundMask(np.random.default_rng(7).random((9, 9)) > 0.5)
        path = tmp_path / "m.png"
        write_mask(path, m)
        assert np.array_equal(read_mask(path).data, m.data)


class TestLayoutFile:
    def test_roundtrip_with_escapes(self, tmp_path):
        poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]])
        text = "line one\nline\ttwo\\three"
        path = tmp_path / "layout.txt"
        write_layout(path, [(poly, text)])
        blocks = read_layout(path)
        assert len(blocks) == 1
        assert np.allclose(blocks[0][0], poly)
        assert blocks[0][1] == text

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("no tab here\n")
        with pytest.raises(FormatError):
            read_layout(path)
