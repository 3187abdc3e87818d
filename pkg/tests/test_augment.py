import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relic_lab.augment import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    LUMA_WEIGHTS,
    AugmentationSpec,
    DrawBatch,
    apply_draws,
    color_jitter,
    compose_pipeline,
    gaussian_blur,
    gaussian_kernel,
    grayscale,
    normalize,
    random_resized_crop,
    sample_crops,
    sample_draws,
    solarize,
)
from relic_lab.errors import ConfigError, ContractError

unit = st.floats(0.0, 1.0, allow_nan=False)


def _images(seed=0, n=4, h=8, w=8, c=3):
    return np.random.default_rng(seed).random((n, h, w, c))


class TestSolarize:
    def test_fixed_points(self):
        out = solarize(np.array([0.3, 0.7, 0.5]))
        assert out[0] == 0.3
        assert out[1] == pytest.approx(0.3, abs=1e-16)
        assert out[2] == 0.5

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            solarize(np.array([1.2]))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 0.5, allow_nan=False))
    def test_involution_on_lower_half(self, x):
        assert solarize(solarize(np.array([x])))[0] == x


class TestBlur:
    def test_constant_image(self):
        img = np.full((1, 6, 6, 3), 0.42)
        np.testing.assert_allclose(gaussian_blur(img, 1.3, 3), img, rtol=0, atol=1e-15)

    def test_delta_limit(self):
        img = _images()
        np.testing.assert_allclose(gaussian_blur(img, 1e-6, 5), img, rtol=0, atol=1e-9)

    def test_impulse_matches_dense_convolution(self):
        # brute-force oracle: explicit clamp-to-edge sum over offsets
        row = np.array([0.0, 0, 1, 0, 0])
        img = np.tile(row[None, :, None], (5, 1, 1))[None]  # constant along the vertical axis
        w = np.exp(-np.array([1.0, 0.0, 1.0]) / 2.0)
        w /= w.sum()
        expected = np.array([sum(w[j] * row[min(max(i + j - 1, 0), 4)] for j in range(3)) for i in range(5)])
        np.testing.assert_allclose(gaussian_blur(img, 1.0, 3)[0, 2, :, 0], expected, rtol=0, atol=1e-15)

    def test_even_kernel_rejected(self):
        with pytest.raises(ContractError):
            gaussian_blur(_images(), 1.0, 4)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 50.0), st.sampled_from([1, 3, 5, 7, 23]))
    def test_kernel_sums_to_one(self, sigma, k):
        assert abs(gaussian_kernel(sigma, k).sum() - 1.0) <= 1e-12


class TestCrop:
    def test_full_image_identity(self):
        img = _images(h=6, w=6)
        rng = np.random.default_rng(0)
        out = random_resized_crop(img, rng, area_range=(1.0, 1.0), aspect_range=(1.0, 1.0))
        np.testing.assert_allclose(out, img, rtol=0, atol=1e-15)

    def test_seeded_rectangles_repeat(self):
        a = sample_crops(np.random.default_rng(5), 10, 16, 16, (0.08, 1.0), (3 / 4, 4 / 3))
        b = sample_crops(np.random.default_rng(5), 10, 16, 16, (0.08, 1.0), (3 / 4, 4 / 3))
        np.testing.assert_array_equal(a, b)

    def test_checkerboard_corner(self):
        board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
        img = np.repeat(board[None, :, :, None], 3, axis=3)
        out = random_resized_crop(img, np.array([[0, 0, 2, 2]]), out_size=(2, 2))
        np.testing.assert_array_equal(out[0, :, :, 0], board[:2, :2])

    def test_rectangles_fit(self):
        crops = sample_crops(np.random.default_rng(1), 500, 9, 13, (0.08, 1.0), (3 / 4, 4 / 3))
        top, left, ch, cw = crops.T
        assert (top >= 0).all() and (left >= 0).all() and (ch >= 1).all() and (cw >= 1).all()
        assert (top + ch <= 9).all() and (left + cw <= 13).all()


class TestColor:
    def test_grayscale_uses_luma(self):
        px = np.array([0.2, 0.5, 0.9]).reshape(1, 1, 1, 3)
        out = grayscale(px)
        expect = float(LUMA_WEIGHTS @ px.reshape(3) / LUMA_WEIGHTS.sum())
        np.testing.assert_allclose(out.reshape(3), [expect] * 3, rtol=0, atol=1e-15)

    def test_grayscale_idempotent_on_gray(self):
        img = np.repeat(_images(c=1), 3, axis=3)
        np.testing.assert_allclose(grayscale(img), img, rtol=0, atol=1e-15)

    def test_jitter_identity_factors(self):
        img = _images()
        factors = np.tile([1.0, 1.0, 1.0, 0.0], (4, 1))
        order = np.tile(np.arange(4), (4, 1))
        np.testing.assert_allclose(color_jitter(img, factors, order), img, rtol=0, atol=1e-12)

    def test_normalize(self):
        img = np.full((1, 2, 2, 3), 0.5)
        out = normalize(img, IMAGENET_MEAN, IMAGENET_STD)
        np.testing.assert_allclose(out[0, 0, 0], (0.5 - np.array(IMAGENET_MEAN)) / np.array(IMAGENET_STD))


class TestPipeline:
    def test_disabled_pipeline_is_resize_and_normalize(self):
        spec = AugmentationSpec.disabled()
        pipe, _ = compose_pipeline(spec, np.random.default_rng(0))
        img = _images()
        np.testing.assert_allclose(pipe(img), normalize(img, spec.mean, spec.std), rtol=0, atol=1e-12)

    def test_draws_differ_and_replay_exactly(self):
        spec = AugmentationSpec()
        pipe, draws = compose_pipeline(spec, np.random.default_rng(0))
        img = _images(n=6)
        a = pipe(img)
        b = pipe(img)
        assert not np.array_equal(a, b)
        assert pipe.replay(img, draws[:6]).tobytes() == a.tobytes()
        assert pipe.replay(img, draws[6:]).tobytes() == b.tobytes()

    def test_draw_roundtrip_through_list(self):
        spec = AugmentationSpec()
        batch = sample_draws(spec, np.random.default_rng(2), 5, 8, 8)
        again = DrawBatch.from_list(batch.to_list())
        img = _images(n=5)
        assert apply_draws(img, batch, spec).tobytes() == apply_draws(img, again, spec).tobytes()

    def test_invalid_spec_lists_keys(self):
        with pytest.raises(ConfigError) as info:
            AugmentationSpec(crop_area_range=(0.0, 1.0), blur_kernel_size=4)
        assert set(info.value.keys) == {"crop_area_range", "blur_kernel_size"}

    def test_out_of_range_input(self):
        spec = AugmentationSpec()
        with pytest.raises(ContractError):
            apply_draws(np.full((1, 4, 4, 3), 1.5), sample_draws(spec, np.random.default_rng(0), 1, 4, 4), spec)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (2, 6, 5, 3), elements=unit), st.integers(0, 2**31))
    def test_ops_preserve_unit_range(self, img, seed):
        rng = np.random.default_rng(seed)
        outs = [
            solarize(img),
            grayscale(img),
            gaussian_blur(img, rng.uniform(0.1, 2.0, size=2), 3),
            random_resized_crop(img, rng),
            color_jitter(img, np.column_stack([rng.uniform(0.6, 1.4, (2, 3)), rng.uniform(-0.1, 0.1, 2)]), np.argsort(rng.random((2, 4)), axis=1)),
        ]
        for out in outs:
            assert out.min() >= -1e-12 and out.max() <= 1 + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 5, 5, 3), elements=unit), st.integers(0, 2**31))
    def test_replay_is_pure(self, img, seed):
        spec = AugmentationSpec()
        draws = sample_draws(spec, np.random.default_rng(seed), 3, 5, 5)
        assert apply_draws(img, draws, spec).tobytes() == apply_draws(img, draws, spec).tobytes()
