import numpy as np
import pytest

from foodcurate.imaging import (
    LOSSLESS_CODECS,
    ImagingError,
    PixelImage,
    RealImage,
    Rejection,
    average_image,
    decode_and_validate,
    decode_image,
    encode_lossless,
    quantize_u8,
    resize_bilinear,
    to_grayscale,
)

from conftest import jpeg_bytes, png_bytes, random_image, solid_image


class TestDecodeValidate:
    def test_valid_boundary_size_accepted(self):
        img = decode_and_validate(png_bytes(solid_image(70, w=32, h=32)))
        assert isinstance(img, PixelImage)
        assert (img.width, img.height) == (32, 32)

    def test_below_minimum_side_rejected(self):
        out = decode_and_validate(png_bytes(solid_image(70, w=31, h=40)))
        assert isinstance(out, Rejection) and out.reason == "undersized"

    def test_truncated_file_rejected(self):
        data = jpeg_bytes(random_image(0, w=64, h=64))
        out = decode_and_validate(data[: len(data) // 2])
        assert isinstance(out, Rejection) and out.reason == "truncated"

    def test_garbage_rejected_as_undecodable(self):
        out = decode_and_validate(b"definitely not an image")
        assert isinstance(out, Rejection) and out.reason == "undecodable"

    def test_grayscale_png_stays_single_channel(self):
        img = decode_and_validate(png_bytes(solid_image(90, channels=1)))
        assert img.channels == 1

    def test_jpeg_and_png_both_decode(self):
        src = random_image(3, w=40, h=36)
        assert isinstance(decode_and_validate(png_bytes(src)), PixelImage)
        assert isinstance(decode_and_validate(jpeg_bytes(src)), PixelImage)


class TestGrayscale:
    def test_pure_white_maps_to_255(self):
        assert to_grayscale(solid_image(255)).pixels.max() == 255

    def test_pure_red_maps_to_76(self):
        red = solid_image(0)
        red.pixels[:, :, 0] = 255
        assert int(to_grayscale(red).pixels[0, 0, 0]) == 76

    def test_gray_input_is_identity(self):
        g = solid_image(123, channels=1)
        assert to_grayscale(g) is g

    def test_output_bounded(self):
        g = to_grayscale(random_image(1))
        assert g.pixels.min() >= 0 and g.pixels.max() <= 255 and g.channels == 1


class TestResize:
    def test_constant_image_stays_constant(self):
        for w, h in [(3, 9), (64, 64), (17, 5)]:
            out = resize_bilinear(solid_image(128, w=5, h=7), w, h)
            assert (out.pixels == 128).all()

    def test_monotone_row_upsamples_monotone(self):
        img = PixelImage.from_array(np.array([[0, 255]], np.uint8))
        row = resize_bilinear(img, 4, 1).pixels[0, :, 0].astype(int)
        assert row[0] == 0 and row[-1] == 255
        assert (np.diff(row) >= 0).all()

    def test_downscale_matches_reference_resampler(self):
        cv2 = pytest.importorskip("cv2")
        for seed in range(5):
            src = random_image(seed, w=123, h=97)
            mine = resize_bilinear(src, 40, 31).pixels
            ref = cv2.resize(src.pixels, (40, 31), interpolation=cv2.INTER_LINEAR)
            assert np.abs(mine.astype(int) - ref.astype(int)).max() <= 1

    def test_bad_target_rejected(self):
        with pytest.raises(ImagingError):
            resize_bilinear(solid_image(1), 0, 5)


class TestAverage:
    def test_black_and_white_average_to_128(self):
        out = average_image([solid_image(0), solid_image(255)])
        assert (out.pixels == 128).all()

    def test_single_image_is_identity(self):
        img = random_image(2)
        assert average_image([img]).same_pixels(img)

    def test_permutation_invariant(self):
        imgs = [random_image(s) for s in range(6)]
        a = average_image(imgs)
        b = average_image(list(reversed(imgs)))
        assert a.same_pixels(b)

    def test_empty_list_rejected(self):
        with pytest.raises(ImagingError):
            average_image([])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ImagingError):
            average_image([solid_image(1, w=4), solid_image(1, w=5)])


class TestLossless:
    def test_encode_is_deterministic(self):
        img = random_image(4)
        assert encode_lossless(img) == encode_lossless(img)

    @pytest.mark.parametrize("codec", LOSSLESS_CODECS)
    def test_round_trip_exact(self, codec):
        for seed in range(10):
            img = random_image(seed, w=37, h=41)
            assert decode_image(encode_lossless(img, codec=codec)).same_pixels(img)

    def test_grayscale_round_trip(self):
        img = random_image(11, channels=1)
        assert decode_image(encode_lossless(img)).same_pixels(img)

    def test_constant_encodes_smaller_than_noise(self):
        const = solid_image(90, w=64, h=64)
        noise = random_image(5, w=64, h=64)
        assert len(encode_lossless(const)) < len(encode_lossless(noise))

    def test_unknown_codec_rejected(self):
        with pytest.raises(ImagingError):
            encode_lossless(solid_image(1), codec="bmp")


class TestBufferTypes:
    def test_quantize_rounds_half_up(self):
        out = quantize_u8(np.array([[[0.5, 1.49, 254.5]]]))
        assert out.tolist() == [[[1, 1, 255]]]

    def test_pixel_image_validates_shape(self):
        with pytest.raises(ImagingError):
            PixelImage(np.zeros((4, 4, 2), np.uint8))
        with pytest.raises(ImagingError):
            PixelImage(np.zeros((4, 4, 3), np.float64))

    def test_real_image_round_trip(self):
        img = random_image(7)
        real = RealImage.from_pixel_image(img)
        assert real.quantize().same_pixels(img)
