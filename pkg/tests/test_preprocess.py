from __future__ import annotations

import importlib
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pavescan.dataset import BoxAnnotation, Sample, synthesize_scene
from pavescan.preprocess import (
    AugmentationSpec,
    AugmentParams,
    ClaheParams,
    PreprocessConfig,
    apply_augmentation,
    apply_params,
    clahe,
    image_stream,
    prepare_image,
    resize_with_annotations,
    rgb_to_luma,
    sample_params,
    tile_mappings,
)

from oracles import augmentation_box_mask_ious, global_equalization

clahe_module = importlib.import_module("pavescan.preprocess.clahe")

# -- CLAHE -------------------------------------------------------------------------


def test_clahe_constant_image_stays_constant():
    out = clahe(np.full((48, 64), 128, np.uint8))
    assert out.dtype == np.uint8
    assert len(np.unique(out)) == 1


@pytest.mark.parametrize("clip", [255.0, math.inf])
def test_clahe_single_tile_equalsglobal_equalization(rng, clip):
    for _ in range(10):
        gray = rng.integers(0, 256, (37, 53)).astype(np.uint8)
        out = clahe(gray, ClaheParams(clip_limit=clip, tiles=(1, 1)))
        diff = np.abs(out.astype(int) - global_equalization(gray).astype(int))
        assert diff.max() <= 1


def test_clahe_grayscale_mode_uses_rounded_luma(rng):
    rgb = rng.integers(0, 256, (20, 30, 3)).astype(np.uint8)
    params = ClaheParams(tiles=(2, 3))
    assert np.array_equal(clahe(rgb, params), clahe(rgb_to_luma(rgb), params))
    r, g, b = (rgb[..., i].astype(float) for i in range(3))
    assert np.array_equal(rgb_to_luma(rgb), np.rint(0.299 * r + 0.587 * g + 0.114 * b).astype(np.uint8))


def test_clahe_luminance_mode_keeps_three_channels(rng):
    rgb = rng.integers(0, 256, (24, 32, 3)).astype(np.uint8)
    out = clahe(rgb, ClaheParams(mode="luminance"))
    assert out.shape == rgb.shape and out.dtype == np.uint8


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(4, 40), st.integers(4, 40))),
    st.floats(0.5, 8.0),
    st.integers(1, 4),
    st.integers(1, 4),
)
def test_clahe_range_and_monotone_tile_maps(gray, clip, rows, cols):
    params = ClaheParams(clip_limit=clip, tiles=(rows, cols))
    out = clahe(gray, params)
    assert out.shape == gray.shape and out.dtype == np.uint8
    maps, _, _ = tile_mappings(gray, params)
    assert np.all(np.diff(maps, axis=-1) >= 0)
    assert maps.min() >= 0 and maps.max() <= 255 + 1e-9


def test_clahe_oversized_tiles_fall_back_with_warning(rng, caplog):
    gray = rng.integers(0, 256, (5, 6)).astype(np.uint8)
    with caplog.at_level(logging.WARNING):
        out = clahe(gray, ClaheParams(tiles=(8, 8)))
    assert "larger than" in caplog.text
    assert np.array_equal(out, clahe(gray, ClaheParams(tiles=(1, 1))))


def test_clahe_deterministic_and_traversal_order_free(rng, monkeypatch):
    gray = rng.integers(0, 256, (40, 50)).astype(np.uint8)
    params = ClaheParams(tiles=(3, 4))
    first = clahe(gray, params)
    assert np.array_equal(first, clahe(gray, params))

    # recompute the tile maps visiting tiles in reverse order; the result must not change
    maps, ye, xe = tile_mappings(gray, params)
    reversed_maps = np.empty_like(maps)
    for r in reversed(range(maps.shape[0])):
        for c in reversed(range(maps.shape[1])):
            tile = gray[ye[r] : ye[r + 1], xe[c] : xe[c + 1]]
            single, _, _ = tile_mappings(np.ascontiguousarray(tile), ClaheParams(params.clip_limit, (1, 1)))
            reversed_maps[r, c] = single[0, 0]
    assert np.array_equal(maps, reversed_maps)
    monkeypatch.setattr(clahe_module, "tile_mappings", lambda g, p: (reversed_maps, ye, xe))
    assert np.array_equal(clahe_module.equalize_channel(gray, params), first)


@pytest.mark.parametrize("kwargs", [{"clip_limit": 0}, {"tiles": (0, 2)}, {"mode": "hsv"}])
def test_clahe_params_validate(kwargs):
    with pytest.raises(ValueError):
        ClaheParams(**kwargs)


def test_clahe_rejects_empty_and_float_images():
    with pytest.raises(ValueError):
        clahe(np.zeros((0, 4), np.uint8))
    with pytest.raises(ValueError):
        clahe(np.zeros((4, 4), np.float32))


# -- resize ------------------------------------------------------------------------


def _scene_sample(seed, size=(180, 120)):
    scene = synthesize_scene(np.random.default_rng(seed), size=size, max_instances=3)
    return scene, Sample(f"s{seed}", scene.image, scene.boxes(), scene.mask)


def test_resize_to_same_size_is_bit_identical():
    _, sample = _scene_sample(0)
    out = resize_with_annotations(sample, (180, 120))
    assert np.array_equal(out.image, sample.image) and np.array_equal(out.mask, sample.mask)


def test_resize_halving_keeps_mask_class_support():
    for seed in range(5):
        scene = synthesize_scene(np.random.default_rng(seed), size=(1800, 1200), max_instances=3)
        sample = Sample("big", scene.image, scene.boxes(), scene.mask)
        out = resize_with_annotations(sample, (900, 600))
        assert out.image.shape == (600, 900, 3)
        assert set(np.unique(out.mask)) == set(np.unique(sample.mask))


def test_resize_leaves_normalized_boxes_unchanged(rng):
    box = BoxAnnotation(2, 0.5, 0.5, 0.2, 0.1)
    sample = Sample("x", rng.integers(0, 256, (30, 40, 3)).astype(np.uint8), [box], None)
    for target in [(13, 7), (400, 300), (40, 30)]:
        assert resize_with_annotations(sample, target).boxes == [box]


def test_resize_rejects_empty_target(rng):
    sample = Sample("x", np.zeros((4, 4, 3), np.uint8), [], None)
    with pytest.raises(ValueError):
        resize_with_annotations(sample, (0, 4))


def test_prepare_image_is_three_channel_at_target(rng):
    img = rng.integers(0, 256, (50, 70, 3)).astype(np.uint8)
    for mode in ("none", "clahe"):
        out = prepare_image(img, (64, 32), PreprocessConfig(mode=mode))
        assert out.shape == (32, 64, 3) and out.dtype == np.uint8


# -- augmentation ------------------------------------------------------------------


def test_identity_spec_returns_inputs_exactly():
    _, s = _scene_sample(3)
    image, boxes, mask = apply_augmentation(s.image, s.boxes, s.mask, AugmentationSpec.identity(), np.random.default_rng(0))
    assert np.array_equal(image, s.image) and np.array_equal(mask, s.mask) and boxes == s.boxes


def test_double_horizontal_flip_is_identity():
    _, s = _scene_sample(4)
    flip = AugmentParams(flip=True)
    once = apply_params(s.image, s.boxes, s.mask, flip)
    twice = apply_params(*once, flip)
    assert not np.array_equal(once[0], s.image)
    assert np.array_equal(twice[0], s.image) and np.array_equal(twice[2], s.mask)
    for a, b in zip(twice[1], s.boxes):
        assert a.class_id == b.class_id
        assert (a.cx, a.cy, a.w, a.h) == pytest.approx((b.cx, b.cy, b.w, b.h), abs=1e-12)


def test_quarter_turn_box_corner_arithmetic():
    image = np.zeros((100, 100, 3), np.uint8)
    (box,) = apply_params(image, [BoxAnnotation(1, 0.25, 0.5, 0.1, 0.2)], None, AugmentParams(angle=90.0))[1]
    assert (box.cx, box.cy, box.w, box.h) == pytest.approx((0.5, 0.25, 0.2, 0.1), abs=1e-9)


def test_box_mostly_outside_frame_is_dropped():
    image = np.zeros((100, 100, 3), np.uint8)
    box = BoxAnnotation(1, 0.1, 0.5, 0.2, 0.2)
    # box spans x in [0, 20); shifting left by 19 px leaves 5% of its area in frame
    _, boxes, _ = apply_params(image, [box], None, AugmentParams(shift=(-0.19, 0.0)))
    assert boxes == []


def test_photometric_only_leaves_mask_and_boxes_bitwise():
    _, s = _scene_sample(6)
    spec = AugmentationSpec(0, 0, 0, 0, 0.3, 0.3)
    for seed in range(10):
        image, boxes, mask = apply_augmentation(s.image, s.boxes, s.mask, spec, np.random.default_rng(seed))
        assert boxes == s.boxes and np.array_equal(mask, s.mask)
        assert image.dtype == np.uint8


def test_augmentation_reproducible_for_fixed_stream():
    _, s = _scene_sample(7)
    spec = AugmentationSpec()
    a = apply_augmentation(s.image, s.boxes, s.mask, spec, image_stream(3, 5, 11))
    b = apply_augmentation(s.image, s.boxes, s.mask, spec, image_stream(3, 5, 11))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[2], b[2]) and a[1] == b[1]


def test_sampled_params_respect_limits(rng):
    spec = AugmentationSpec(0.1, 0.2, 30, 0.5, 0.25, 0.15)
    for _ in range(500):
        p = sample_params(spec, rng)
        assert all(abs(v) <= 0.1 for v in p.shift)
        assert 0.8 <= p.scale <= 1.2 and abs(p.angle) <= 30
        assert abs(p.contrast - 1) <= 0.15 and abs(p.brightness) <= 0.25


def test_boxes_stay_consistent_with_transformed_mask_instances():
    """Each transformed box overlaps the tight box of its warped instance with IoU >= 0.95."""
    ious = augmentation_box_mask_ious(range(40), AugmentationSpec(rotate_limit=45))
    assert len(ious) >= 40
    assert min(ious) >= 0.95
