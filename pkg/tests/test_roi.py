import numpy as np
import pytest
from scipy import ndimage

from ivseg.masks import ProbMask, neutral_mask
from ivseg.roi import (
    Box,
    Roi,
    expand_box,
    first_round_roi,
    guidance_bbox,
    paste_from_roi,
    warp_to_roi,
)


def ref_bilinear(img, x, y, pad):
    """Closed-form bilinear sample at one point, pixel centers at +0.5."""
    h, w = img.shape
    u, v = x - 0.5, y - 0.5
    u0, v0 = int(np.floor(u)), int(np.floor(v))
    fu, fv = u - u0, v - v0
    total = 0.0
    for dv, wv in ((0, 1 - fv), (1, fv)):
        for du, wu in ((0, 1 - fu), (1, fu)):
            r, c = v0 + dv, u0 + du
            val = img[r, c] if 0 <= r < h and 0 <= c < w else pad
            total += wu * wv * val
    return total


class TestGuidanceBbox:
    def test_single_pixel(self):
        pos = np.zeros((30, 30), bool)
        pos[10, 20] = True
        box = guidance_bbox(pos, np.zeros_like(pos), None, None)
        assert (box.x0, box.y0, box.x1, box.y1) == (20, 10, 21, 11)

    def test_two_extremes(self):
        pos = np.zeros((10, 10), bool)
        pos[0, 0] = pos[9, 9] = True
        box = guidance_bbox(pos, np.zeros_like(pos), None, None)
        assert (box.x0, box.y0, box.x1, box.y1) == (0, 0, 10, 10)

    def test_empty_guidance_is_none(self):
        z = np.zeros((5, 5), bool)
        assert guidance_bbox(z, z, None, None) is None

    def test_mask_threshold(self):
        z = np.zeros((6, 6), bool)
        m = np.zeros((6, 6), np.float32)
        m[2, 3] = 0.7
        m[4, 4] = 0.3  # below threshold, ignored
        box = guidance_bbox(z, z, ProbMask(m), None)
        assert (box.x0, box.y0, box.x1, box.y1) == (3, 2, 4, 3)

    def test_dimension_mismatch(self):
        from ivseg.masks import DimensionError

        with pytest.raises(DimensionError):
            guidance_bbox(np.zeros((4, 4), bool), np.zeros((5, 5), bool), None, None)


class TestExpandBox:
    def test_doubling(self):
        b = expand_box(Box(10, 20, 30, 40))
        assert (b.x0, b.y0, b.x1, b.y1) == (0, 10, 40, 50)

    def test_may_exit_image(self):
        b = expand_box(Box(0, 0, 10, 10))
        assert (b.x0, b.y0, b.x1, b.y1) == (-5, -5, 15, 15)

    def test_unit_box(self):
        b = expand_box(Box(3, 3, 4, 4))
        assert (b.x0, b.y0, b.x1, b.y1) == (2.5, 2.5, 4.5, 4.5)

    def test_center_and_area_preserved(self, rng):
        for _ in range(50):
            x0, y0 = rng.uniform(-10, 10, 2)
            w, h = rng.uniform(0.5, 20, 2)
            tight = Box(x0, y0, x0 + w, y0 + h)
            big = expand_box(tight)
            assert big.center == pytest.approx(tight.center, abs=1e-9)
            assert big.width * big.height == pytest.approx(4 * w * h, rel=1e-9)


class TestFirstRoundRoi:
    def test_whole_image(self):
        roi = first_round_roi(100, 200)
        assert (roi.box.x0, roi.box.y0, roi.box.x1, roi.box.y1) == (0, 0, 200, 100)

    def test_degenerate(self):
        roi = first_round_roi(1, 1)
        assert (roi.box.x1, roi.box.y1) == (1, 1)

    def test_square(self):
        roi = first_round_roi(256, 256)
        assert (roi.box.x1, roi.box.y1) == (256, 256)


class TestWarpToRoi:
    def test_identity(self, rng):
        img = rng.random((12, 17))
        roi = Roi(Box(0, 0, 17, 12), 12, 17)
        out = warp_to_roi(img, roi)
        assert out == pytest.approx(img, abs=1e-6)

    def test_constant_interior(self):
        img = np.full((10, 10), 0.7)
        roi = Roi(Box(2, 2, 8, 8), 16, 16)
        out = warp_to_roi(img, roi)
        assert out == pytest.approx(np.full((16, 16), 0.7), abs=1e-6)

    def test_checkerboard_matches_reference(self):
        img = np.array([[1.0, 0.0], [0.0, 1.0]])
        roi = Roi(Box(0, 0, 2, 2), 4, 4)
        out = warp_to_roi(img, roi, pad=0.0)
        expected = np.empty((4, 4))
        for i in range(4):
            for j in range(4):
                expected[i, j] = ref_bilinear(img, (j + 0.5) / 2.0, (i + 0.5) / 2.0, 0.0)
        assert out == pytest.approx(expected, abs=1e-9)

    def test_probability_padding(self):
        img = np.full((4, 4), 1.0)
        roi = Roi(Box(-12, -12, -2, -2), 8, 8)  # beyond bilinear support
        out = warp_to_roi(img, roi, pad=0.5)
        assert out == pytest.approx(np.full((8, 8), 0.5), abs=1e-9)

    def test_linearity(self, rng):
        x = rng.random((9, 9))
        y = rng.random((9, 9))
        roi = Roi(Box(1.3, 0.7, 7.9, 8.1), 16, 16)
        lhs = warp_to_roi(2.0 * x + 3.0 * y, roi)
        rhs = 2.0 * warp_to_roi(x, roi) + 3.0 * warp_to_roi(y, roi)
        assert lhs == pytest.approx(rhs, abs=1e-6)

    def test_multichannel_pads(self):
        maps = np.stack([np.ones((4, 4)), np.ones((4, 4))])
        roi = Roi(Box(-12, -12, -2, -2), 4, 4)
        out = warp_to_roi(maps, roi, pad=(0.0, 0.5))
        assert out[0] == pytest.approx(np.zeros((4, 4)), abs=1e-9)
        assert out[1] == pytest.approx(np.full((4, 4), 0.5), abs=1e-9)


class TestPasteFromRoi:
    def test_full_frame_paste(self, rng):
        pred = rng.random((16, 16))
        full = neutral_mask(8, 8)
        roi = Roi(Box(0, 0, 8, 8), 16, 16)
        out = paste_from_roi(pred, roi, full)
        # every pixel comes from pred, none from the original neutral mask
        assert not np.any(out.values == 0.5) or pred.min() <= 0.5 <= pred.max()
        identity_roi = Roi(Box(0, 0, 8, 8), 8, 8)
        out2 = paste_from_roi(np.full((8, 8), 0.25), identity_roi, full)
        assert out2.values == pytest.approx(np.full((8, 8), 0.25), abs=1e-6)

    def test_constant_roundtrip(self, rng):
        for _ in range(10):
            c = float(rng.random())
            full = ProbMask(np.full((20, 20), c, np.float32))
            roi = Roi(Box(3.2, 4.1, 15.7, 17.3), 32, 32)
            warped = warp_to_roi(full.values, roi, pad=c)
            out = paste_from_roi(warped, roi, full)
            assert out.values == pytest.approx(full.values, abs=1e-3)

    def test_roi_outside_image_unchanged(self, rng):
        full = ProbMask(rng.random((10, 10)).astype(np.float32))
        roi = Roi(Box(50, 50, 60, 60), 16, 16)
        out = paste_from_roi(np.ones((16, 16)), roi, full)
        assert np.array_equal(out.values, full.values)

    def test_outside_pixels_kept(self, rng):
        full = ProbMask(rng.random((20, 20)).astype(np.float32))
        roi = Roi(Box(5, 5, 10, 10), 16, 16)
        out = paste_from_roi(np.zeros((16, 16)), roi, full)
        assert np.array_equal(out.values[:5, :], full.values[:5, :])
        assert np.array_equal(out.values[:, 12:], full.values[:, 12:])
        assert out.values[6:9, 6:9] == pytest.approx(0.0, abs=1e-6)


class TestRoundTripProperty:
    def test_smooth_masks(self, rng):
        failures = 0
        for _ in range(25):
            smooth = ndimage.gaussian_filter(rng.random((40, 40)), sigma=4)
            smooth = (smooth - smooth.min()) / max(1e-9, smooth.max() - smooth.min())
            mask = ProbMask(smooth.astype(np.float32))
            x0, y0 = rng.uniform(2, 10, 2)
            bw, bh = rng.uniform(8, 20, 2)
            box = Box(x0, y0, min(38.0, x0 + bw), min(38.0, y0 + bh))
            out_size = int(2 * max(box.width, box.height)) + 8
            roi = Roi(box, out_size, out_size)
            warped = warp_to_roi(mask.values, roi, pad=0.5)
            back = paste_from_roi(warped, roi, mask)
            r0 = int(np.ceil(box.y0 - 0.5)) + 1
            r1 = int(np.floor(box.y1 - 0.5)) - 1
            c0 = int(np.ceil(box.x0 - 0.5)) + 1
            c1 = int(np.floor(box.x1 - 0.5)) - 1
            err = np.abs(back.values - mask.values)[r0:r1, c0:c1]
            if err.size and err.max() > 0.05:
                failures += 1
        assert failures == 0
