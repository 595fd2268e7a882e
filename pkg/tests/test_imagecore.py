"""Image representation, file I/O, and geometric transform tests."""

import numpy as np
import pytest
from PIL import Image as PILImage

from biasforge.errors import (
    CorruptImageData,
    ImageFileMissing,
    RangeTagError,
    ShapeError,
    UnsupportedImageFormat,
)
from biasforge.imagecore import (
    Image,
    RangeTag,
    constant,
    from_array,
    from_model_range,
    horizontal_flip,
    load_image,
    resize_bilinear,
    rotate,
    save_image,
    to_grayscale,
    to_model_range,
)

QUANT_BOUND = 1.0 / 510.0


def _write_png(path, arr):
    PILImage.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")


class TestImageType:
    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            Image(np.zeros((4, 4), dtype=np.float32), RangeTag.UNIT)

    def test_rejects_two_channels(self):
        with pytest.raises(ShapeError):
            Image(np.zeros((4, 4, 2), dtype=np.float32), RangeTag.UNIT)

    def test_rejects_out_of_range_unit(self):
        with pytest.raises(RangeTagError):
            from_array(np.full((2, 2), 1.5))

    def test_rejects_nonfinite(self):
        with pytest.raises(RangeTagError):
            from_array(np.full((2, 2), np.nan))

    def test_model_range_accepts_negative(self):
        img = from_array(np.full((2, 2), -1.0), RangeTag.MODEL)
        assert img.range_tag is RangeTag.MODEL


class TestLoadImage:
    def test_all_255_loads_as_ones(self, tmp_path):
        p = tmp_path / "white.png"
        _write_png(p, np.full((2, 2, 3), 255))
        img = load_image(p)
        assert img.range_tag is RangeTag.UNIT
        assert np.array_equal(img.pixels, np.ones((2, 2, 3), dtype=np.float32))

    def test_byte_zero_loads_as_zero(self, tmp_path):
        p = tmp_path / "black.png"
        _write_png(p, np.zeros((1, 1), dtype=np.uint8))
        assert load_image(p).pixels[0, 0, 0] == 0.0

    def test_byte_128_scales_by_255(self, tmp_path):
        p = tmp_path / "mid.png"
        _write_png(p, np.full((1, 1), 128, dtype=np.uint8))
        assert load_image(p).pixels[0, 0, 0] == pytest.approx(128.0 / 255.0, abs=1e-7)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageFileMissing):
            load_image(tmp_path / "absent.png")

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "img.bmp"
        PILImage.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(p, format="BMP")
        with pytest.raises(UnsupportedImageFormat):
            load_image(p)

    def test_non_image_bytes(self, tmp_path):
        p = tmp_path / "not_an_image.png"
        p.write_bytes(b"this is not a png")
        with pytest.raises(UnsupportedImageFormat):
            load_image(p)

    def test_corrupt_data(self, tmp_path):
        p = tmp_path / "trunc.png"
        rng = np.random.default_rng(0)
        _write_png(p, rng.integers(0, 256, size=(64, 64, 3)))
        data = p.read_bytes()
        p.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptImageData):
            load_image(p)

    def test_error_types_are_distinct(self):
        kinds = {ImageFileMissing, UnsupportedImageFormat, CorruptImageData}
        assert len(kinds) == 3
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)


class TestSaveImage:
    def test_round_trip_endpoint_exact(self, tmp_path):
        p = tmp_path / "ones.png"
        save_image(constant(3, 3, (1.0, 1.0, 1.0)), p)
        assert np.array_equal(load_image(p).pixels, np.ones((3, 3, 3), dtype=np.float32))

    def test_round_trip_value_03(self, tmp_path):
        p = tmp_path / "p3.png"
        img = constant(2, 2, 0.3)
        save_image(img, p)
        stored = float(img.pixels[0, 0, 0])
        recovered = float(load_image(p).pixels[0, 0, 0])
        # 0.3*255 = 76.5 sits on a quantization boundary: error is exactly
        # half a step, so allow float32 representation slack on top
        assert abs(recovered - stored) <= QUANT_BOUND + 1e-7

    def test_round_trip_bound_all_pixels(self, tmp_path):
        rng = np.random.default_rng(7)
        img = from_array(rng.random((9, 11, 3)))
        p = tmp_path / "r.png"
        save_image(img, p)
        back = load_image(p)
        assert np.max(np.abs(back.pixels - img.pixels)) <= QUANT_BOUND + 1e-7

    def test_rejects_model_range(self, tmp_path):
        img = from_array(np.zeros((2, 2)), RangeTag.MODEL)
        with pytest.raises(RangeTagError):
            save_image(img, tmp_path / "m.png")

    def test_grayscale_round_trip(self, tmp_path):
        img = from_array(np.linspace(0, 1, 16).reshape(4, 4))
        p = tmp_path / "g.png"
        save_image(img, p)
        back = load_image(p)
        assert back.channels == 1
        assert np.max(np.abs(back.pixels - img.pixels)) <= QUANT_BOUND + 1e-7


class TestRangeConversion:
    def test_endpoints_and_midpoint(self):
        img = from_array(np.array([[0.0, 0.5, 1.0]]).reshape(1, 3, 1))
        m = to_model_range(img)
        assert m.range_tag is RangeTag.MODEL
        assert np.allclose(m.pixels[0, :, 0], [-1.0, 0.0, 1.0], atol=1e-7)

    def test_inverse_pair(self):
        rng = np.random.default_rng(3)
        img = from_array(rng.random((8, 8, 3)))
        back = from_model_range(to_model_range(img))
        assert np.max(np.abs(back.pixels - img.pixels)) <= 1e-6

    def test_wrong_source_tag(self):
        unit = from_array(np.zeros((2, 2)))
        model = to_model_range(unit)
        with pytest.raises(RangeTagError):
            to_model_range(model)
        with pytest.raises(RangeTagError):
            from_model_range(unit)


class TestResize:
    def test_identity_dimensions(self):
        rng = np.random.default_rng(5)
        img = from_array(rng.random((6, 7, 3)))
        out = resize_bilinear(img, 6, 7)
        assert np.max(np.abs(out.pixels - img.pixels)) <= 1e-6

    def test_constant_preserved(self):
        out = resize_bilinear(constant(64, 64, 0.7), 32, 32)
        assert np.allclose(out.pixels, 0.7, atol=1e-6)

    def test_two_pixel_upsample(self):
        img = from_array(np.array([[0.0, 1.0]], dtype=np.float32).reshape(1, 2, 1))
        out = resize_bilinear(img, 1, 4)
        row = out.pixels[0, :, 0]
        assert np.all(np.diff(row) >= 0)
        # half-pixel centers land at source coords -0.25, 0.25, 0.75, 1.25
        assert np.allclose(row, [0.0, 0.25, 0.75, 1.0], atol=1e-6)

    def test_output_within_input_range(self):
        rng = np.random.default_rng(11)
        img = from_array(0.2 + 0.6 * rng.random((10, 10, 3)))
        out = resize_bilinear(img, 23, 5)
        assert out.pixels.min() >= img.pixels.min() - 1e-7
        assert out.pixels.max() <= img.pixels.max() + 1e-7

    def test_rejects_zero_size(self):
        img = constant(4, 4, 0.5)
        with pytest.raises(ValueError):
            resize_bilinear(img, 0, 4)
        with pytest.raises(ValueError):
            resize_bilinear(img, 4, -1)

    def test_preserves_model_tag(self):
        img = from_array(np.zeros((4, 4, 3)), RangeTag.MODEL)
        assert resize_bilinear(img, 8, 8).range_tag is RangeTag.MODEL


class TestGrayscale:
    def test_white_maps_to_one(self):
        out = to_grayscale(constant(2, 2, (1.0, 1.0, 1.0)))
        assert out.channels == 1
        assert np.allclose(out.pixels, 1.0, atol=1e-7)

    def test_pure_red_and_blue_weights(self):
        red = to_grayscale(constant(1, 1, (1.0, 0.0, 0.0)))
        blue = to_grayscale(constant(1, 1, (0.0, 0.0, 1.0)))
        assert red.pixels[0, 0, 0] == pytest.approx(0.299, abs=1e-6)
        assert blue.pixels[0, 0, 0] == pytest.approx(0.114, abs=1e-6)

    def test_rejects_single_channel(self):
        with pytest.raises(ShapeError):
            to_grayscale(constant(2, 2, 0.5))


class TestFlip:
    def test_involution(self):
        rng = np.random.default_rng(13)
        img = from_array(rng.random((5, 9, 3)))
        assert np.array_equal(horizontal_flip(horizontal_flip(img)).pixels, img.pixels)

    def test_symmetric_unchanged(self):
        img = from_array(np.array([[0.1, 0.8, 0.1]]).reshape(1, 3, 1))
        assert np.array_equal(horizontal_flip(img).pixels, img.pixels)

    def test_two_pixel_swap(self):
        img = from_array(np.array([[0.2, 0.9]]).reshape(1, 2, 1))
        out = horizontal_flip(img)
        assert np.allclose(out.pixels[0, :, 0], [0.9, 0.2], atol=1e-7)


class TestRotate:
    def test_zero_angle_identity(self):
        rng = np.random.default_rng(17)
        img = from_array(rng.random((8, 8, 3)))
        assert np.max(np.abs(rotate(img, 0.0).pixels - img.pixels)) <= 1e-6

    def test_constant_any_angle(self):
        for angle in (-45.0, -10.0, 7.5, 45.0):
            out = rotate(constant(16, 16, (0.3, 0.6, 0.9)), angle)
            assert np.allclose(out.pixels, [0.3, 0.6, 0.9], atol=1e-6)

    def test_rotate_then_unrotate_center_crop(self):
        rng = np.random.default_rng(19)
        # smooth image so resampling error stays small
        base = rng.random((5, 5, 3))
        img = resize_bilinear(from_array(base), 40, 40)
        back = rotate(rotate(img, 10.0), -10.0)
        h, w = img.height, img.width
        r0, r1 = h // 4, h - h // 4
        c0, c1 = w // 4, w - w // 4
        crop_a = img.pixels[r0:r1, c0:c1]
        crop_b = back.pixels[r0:r1, c0:c1]
        assert np.max(np.abs(crop_a - crop_b)) <= 0.05

    def test_preserves_dimensions(self):
        out = rotate(constant(10, 14, 0.5), 30.0)
        assert (out.height, out.width) == (10, 14)

    def test_rejects_large_angle(self):
        img = constant(4, 4, 0.5)
        with pytest.raises(ValueError):
            rotate(img, 46.0)
        with pytest.raises(ValueError):
            rotate(img, -50.0)


class TestRangeClosure:
    def test_every_op_stays_in_declared_interval(self):
        rng = np.random.default_rng(23)
        img = from_array(rng.random((12, 12, 3)))
        outputs = [
            resize_bilinear(img, 7, 19),
            to_grayscale(img),
            horizontal_flip(img),
            rotate(img, 13.0),
            from_model_range(to_model_range(img)),
        ]
        for out in outputs:
            lo, hi = out.range_tag.interval
            assert out.pixels.min() >= lo and out.pixels.max() <= hi
        m = to_model_range(img)
        assert m.pixels.min() >= -1.0 and m.pixels.max() <= 1.0
