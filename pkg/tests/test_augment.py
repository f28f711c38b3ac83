import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taco.augment import (
    AugmentConfig, apply_jitter, canvas_fit, color_jitter, crop_box, fit_size,
    make_view_triple, permute_regions, random_crop_scale, reorder_characters, reorder_slots,
)
from taco.datagen import AttributeLabel, CharBox, FontSet, SegmentSpec, TextSegmentSample, render_segment
from taco.errors import ConfigError


@pytest.fixture(scope="module")
def sample():
    fonts = FontSet.from_dir(limit=4)
    spec = SegmentSpec("Quick fox", (AttributeLabel(1, 2, italic=True),) * 8, 24)
    return render_segment(spec, fonts, np.random.default_rng(0))


def test_identity_crop_on_canvas_sized_input():
    img = np.random.default_rng(0).random((32, 256, 3)).astype(np.float32)
    out = random_crop_scale(img, np.random.default_rng(1), AugmentConfig.identity())
    assert np.array_equal(out, img)


def test_crop_arithmetic_example():
    # 64x512 at ratios (0.8, 0.6): 51x307 crop, factor 32/51, 32x192 content
    cfg = AugmentConfig(crop_ratio_h=(0.8, 0.8), crop_ratio_w=(0.6, 0.6))
    _, _, ch, cw = crop_box((64, 512), np.random.default_rng(0), cfg)
    assert (ch, cw) == (51, 307)
    assert fit_size(51, 307) == (32, 192)
    img = np.full((64, 512, 3), 0.25, dtype=np.float32)
    img[:, :, 0] = 0.9
    out, size = random_crop_scale(img, np.random.default_rng(0), cfg, return_size=True)
    assert size == (32, 192)
    assert out.shape == (32, 256, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 120), st.integers(1, 700), st.integers(0, 2**32 - 1))
def test_output_always_canvas_sized(h, w, seed):
    img = np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)
    rng = np.random.default_rng(seed)
    out, (nh, nw) = random_crop_scale(img, rng, AugmentConfig(), return_size=True)
    assert out.shape == (32, 256, 3)
    assert 0.0 <= out.min() and out.max() <= 1.0
    # aspect of the content matches the crop within one pixel of rounding
    _, _, ch, cw = crop_box(img.shape, np.random.default_rng(seed), AugmentConfig())
    if nh == 32:
        assert abs(nw - cw * 32 / ch) <= 1
    else:
        assert abs(nh - ch * 256 / cw) <= 1


def test_pad_uses_border_median():
    img = np.zeros((16, 16, 3), dtype=np.float32)
    img[...] = (0.2, 0.4, 0.6)
    out = canvas_fit(img)
    np.testing.assert_allclose(out[:, -1], np.tile([0.2, 0.4, 0.6], (32, 1)), atol=1e-6)


def test_jitter_zero_strength_identity():
    img = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
    cfg = AugmentConfig(jitter_strengths=(0, 0, 0, 0), jitter_prob=1.0)
    for s in range(20):
        assert np.array_equal(color_jitter(img, np.random.default_rng(s), cfg), img)


def test_jitter_gated_off():
    img = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
    cfg = AugmentConfig(jitter_prob=0.0)
    assert np.array_equal(color_jitter(img, np.random.default_rng(3), cfg), img)


def test_brightness_oracle():
    img = np.full((4, 4, 3), 0.5, dtype=np.float32)
    np.testing.assert_allclose(apply_jitter(img, (1.4, 1, 1, 0)), 0.7, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jitter_stays_in_range(seed):
    img = np.random.default_rng(seed).random((8, 16, 3)).astype(np.float32)
    out = color_jitter(img, np.random.default_rng(seed), AugmentConfig(jitter_prob=1.0))
    assert out.shape == img.shape and out.min() >= 0.0 and out.max() <= 1.0


def _two_char_sample():
    img = np.zeros((10, 20, 3), dtype=np.uint8)
    img[2:8, 2:8] = 255
    img[2:8, 10:16] = (255, 0, 0)
    lab = AttributeLabel(0, 0)
    chars = [CharBox(2, 2, 8, 8, "A", lab), CharBox(10, 2, 16, 8, "B", lab)]
    return TextSegmentSample(img, chars, "AB", lab)


def test_swap_matches_manual_oracle():
    s = _two_char_sample()
    f = s.image.astype(np.float32) / 255
    oracle = f.copy()
    oracle[2:8, 2:8], oracle[2:8, 10:16] = f[2:8, 10:16], f[2:8, 2:8]
    assert np.array_equal(permute_regions(s.image, reorder_slots(s), [1, 0]), oracle)
    # with prob 1 the only non-identity permutation of two slots is the swap
    outs = [reorder_characters(s, np.random.default_rng(k), 1.0) for k in range(10)]
    assert any(np.array_equal(o, oracle) for o in outs)
    assert all(np.array_equal(o, oracle) or np.array_equal(o, f) for o in outs)


def test_identity_permutation_and_single_char():
    s = _two_char_sample()
    assert np.array_equal(permute_regions(s.image, reorder_slots(s), [0, 1]), s.image / 255.0)
    one = TextSegmentSample(s.image, s.chars[:1], "A", s.segment_label)
    assert np.array_equal(reorder_characters(one, np.random.default_rng(0), 1.0), s.image / 255.0)


def test_word_slots(sample):
    slots = reorder_slots(sample, "word")
    assert len(slots) == 2
    assert slots[0][2] <= slots[1][0]


def test_all_gated_off_triple_identical(sample):
    cfg = AugmentConfig.identity()
    t = make_view_triple(sample, np.random.default_rng(0), cfg)
    ref = canvas_fit(sample.image)
    assert np.array_equal(t.view_i, ref) and np.array_equal(t.view_j, ref)
    assert np.array_equal(t.view_k, ref)


def test_view_k_is_jitter_then_fit(sample):
    cfg = AugmentConfig(jitter_prob=1.0)
    t = make_view_triple(sample, np.random.default_rng(4), cfg)
    _, _, rng_k = np.random.default_rng(4).spawn(3)
    assert np.array_equal(t.view_k, canvas_fit(color_jitter(sample.image, rng_k, cfg)))


def test_view_k_keeps_full_text_extent(sample):
    t = make_view_triple(sample, np.random.default_rng(1), AugmentConfig(jitter_prob=0.0))
    _, (nh, nw) = canvas_fit(sample.image, return_size=True)
    h, w = sample.image.shape[:2]
    assert (nh, nw) == fit_size(h, w)
    assert np.array_equal(t.view_k, canvas_fit(sample.image))


def test_triple_reproducible(sample):
    a = make_view_triple(sample, np.random.default_rng(9), AugmentConfig())
    b = make_view_triple(sample, np.random.default_rng(9), AugmentConfig())
    for x, y in zip((a.view_i, a.view_j, a.view_k), (b.view_i, b.view_j, b.view_k)):
        assert np.array_equal(x, y)
        assert x.shape == (32, 256, 3)


@pytest.mark.parametrize("kw", [dict(jitter_prob=1.5), dict(crop_ratio_h=(0.0, 1.0)),
                                dict(jitter_strengths=(0.4, 0.4, 0.4, 0.6)),
                                dict(reorder_unit="line")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        AugmentConfig(**kw).validate()
