import math

import numpy as np
import pytest

from cifsdip.errors import InputError, ParseError
from cifsdip.images import (
    SYNTHETIC_KINDS,
    NoiseSpec,
    add_gaussian_noise,
    crop_divisible,
    decode_netpbm,
    encode_netpbm,
    list_images,
    load_image,
    psnr,
    save_image,
    stable_seed,
    synthetic_image,
    synthetic_suite,
)


class TestNoise:
    def test_zero_sigma_is_identity(self, rng):
        x = rng.random((3, 8, 8))
        np.testing.assert_array_equal(add_gaussian_noise(x, NoiseSpec(0, seed=1)), x)

    def test_statistics(self):
        x = np.full((3, 256, 256), 0.5)
        d = add_gaussian_noise(x, NoiseSpec(25, seed=0)) - x
        # 0.5 +- 4 sigma stays inside [0, 1], so clamping is inactive
        assert abs(d.std() - 25 / 255) < 0.05 * 25 / 255
        assert abs(d.mean()) < 0.05 * 25 / 255

    def test_same_seed_same_noise(self, rng):
        x = rng.random((1, 16, 16))
        a = add_gaussian_noise(x, NoiseSpec(15, seed=3))
        b = add_gaussian_noise(x, NoiseSpec(15, seed=3))
        np.testing.assert_array_equal(a, b)

    def test_clamp_flag(self):
        x = np.full((1, 64, 64), 0.98)
        assert add_gaussian_noise(x, NoiseSpec(50, seed=0)).max() <= 1.0
        assert add_gaussian_noise(x, NoiseSpec(50, seed=0, clamp=False)).max() > 1.0

    def test_negative_sigma(self):
        with pytest.raises(InputError):
            NoiseSpec(-1.0)


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        x = rng.random((3, 4, 4))
        assert psnr(x, x) == math.inf

    def test_unit_mse(self):
        assert psnr(np.zeros((1, 4, 4)), np.ones((1, 4, 4))) == 0.0

    def test_half_offset(self):
        assert psnr(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


class TestNetpbm:
    def test_round_trip_bytes(self, tmp_path, rng):
        pix = rng.integers(0, 256, (3, 5, 7)).astype(np.float64) / 255
        save_image(tmp_path / "a.ppm", pix)
        back = load_image(tmp_path / "a.ppm")
        assert encode_netpbm(back) == (tmp_path / "a.ppm").read_bytes()
        np.testing.assert_array_equal(back, pix)

    def test_grey_round_trip(self, tmp_path, rng):
        pix = rng.integers(0, 256, (1, 3, 4)) / 255
        save_image(tmp_path / "a.pgm", pix)
        assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"
        np.testing.assert_array_equal(load_image(tmp_path / "a.pgm"), pix)

    def test_single_red_pixel(self):
        np.testing.assert_array_equal(decode_netpbm(b"P6\n1 1\n255\n\xff\x00\x00")[:, 0, 0], [1.0, 0.0, 0.0])

    def test_comments_in_header(self):
        img = decode_netpbm(b"P5 # grey\n2 # w\n1\n255\n\x00\xff")
        np.testing.assert_array_equal(img, [[[0.0, 1.0]]])

    def test_16_bit_rejected(self):
        with pytest.raises(ParseError, match="maxval"):
            decode_netpbm(b"P6\n1 1\n65535\n" + b"\x00" * 6)

    @pytest.mark.parametrize("data,fragment", [
        (b"P3\n1 1\n255\n0 0 0", "magic"),
        (b"P6\nx 1\n255\n", "width"),
        (b"P6\n2 2\n255\n\x00", "truncated"),
        (b"P6\n2", "end of header"),
        (b"P6\n0 2\n255\n", "positive"),
    ])
    def test_malformed_headers_name_offset(self, data, fragment):
        with pytest.raises(ParseError, match=fragment) as info:
            decode_netpbm(data)
        assert info.value.where.startswith("offset")

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_image(tmp_path / "nope.ppm")

    def test_list_images_sorted(self, tmp_path):
        for name in ("b.ppm", "a.pgm", "c.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in list_images(tmp_path)] == ["a.pgm", "b.ppm"]


class TestSynthetic:
    @pytest.mark.parametrize("kind", SYNTHETIC_KINDS)
    def test_kinds_are_deterministic_and_8bit(self, kind):
        a = synthetic_image(kind, 32, seed=2)
        assert a.shape == (3, 32, 32)
        np.testing.assert_array_equal(a, synthetic_image(kind, 32, seed=2))
        np.testing.assert_array_equal(np.round(a * 255), a * 255)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            synthetic_image("plasma")

    def test_suite_names_unique(self):
        names = [n for n, _ in synthetic_suite(8, 16)]
        assert len(set(names)) == 8

    def test_stable_seed(self):
        assert stable_seed("a", 1) == stable_seed("a", 1) != stable_seed("a", 2)


class TestCrop:
    def test_crops_to_multiple(self):
        out = crop_divisible(np.zeros((3, 70, 67)), 8)
        assert out.shape == (3, 64, 64)

    def test_max_size(self):
        assert crop_divisible(np.zeros((1, 100, 100)), 8, 40).shape == (1, 40, 40)

    def test_too_small(self):
        with pytest.raises(InputError):
            crop_divisible(np.zeros((1, 5, 5)), 8)
