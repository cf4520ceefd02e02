from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from pavescan.dataset import DatasetManifest
from pavescan.preprocess import AugmentationSpec
from pavescan.runtime import TrainingError
from pavescan.segmenter import (
    AsppConfig,
    CheckpointError,
    SegmenterConfig,
    EarlyStopping,
    build_aspp,
    build_segmenter,
    class_weights_from_frequency,
    early_stop_epoch,
    effective_kernel,
    load_checkpoint,
    predict_mask,
    save_checkpoint,
    train_segmenter,
    weighted_cross_entropy,
    weighted_cross_entropy_logits,
    weights_from_counts,
)

from oracles import wce_gradients

# -- atrous geometry and ASPP ------------------------------------------------------


@pytest.mark.parametrize("k,r,expected", [(3, 1, 3), (3, 2, 5), (3, 12, 25), (1, 7, 1), (5, 3, 13)])
def test_effective_kernel(k, r, expected):
    assert effective_kernel(k, r) == expected
    # oracle: span of the nonzero taps after inserting r - 1 zeros between neighbours
    taps = np.zeros(effective_kernel(k, r))
    taps[::r] = 1
    assert taps.sum() == k and taps[-1] == 1


def test_effective_kernel_rejects_bad_arguments():
    with pytest.raises(ValueError):
        effective_kernel(0, 1)
    with pytest.raises(ValueError):
        effective_kernel(3, 0)


def test_aspp_config_validation():
    with pytest.raises(ValueError):
        AsppConfig(rates=(6, 6))
    with pytest.raises(ValueError):
        AsppConfig(rates=(0, 2))


@pytest.mark.parametrize("rates", [(6, 12, 18), (1, 2), (3,)])
@pytest.mark.parametrize("pooling", [True, False])
def test_aspp_preserves_spatial_dims(rates, pooling):
    aspp = build_aspp(7, AsppConfig(rates=rates, branch_channels=10, include_image_pooling=pooling)).eval()
    x = torch.randn(2, 7, 13, 17)
    with torch.no_grad():
        assert aspp(x).shape == (2, 10, 13, 17)
        assert all(b.shape == (2, 10, 13, 17) for b in aspp.branches(x))


def test_rate_one_branch_equals_plain_convolution():
    torch.manual_seed(0)
    aspp = build_aspp(4, AsppConfig(rates=(1, 3), branch_channels=5)).eval()
    conv = aspp.atrous[0].conv
    assert conv.dilation == (1, 1) and conv.padding == (1, 1)
    x = torch.randn(1, 4, 11, 9)
    # direct 3x3 correlation with zero padding, written out tap by tap
    xp = F.pad(x, (1, 1, 1, 1))
    w = conv.weight.detach()
    direct = torch.zeros(1, 5, 11, 9)
    for dy in range(3):
        for dx in range(3):
            direct += torch.einsum("oc,bchw->bohw", w[:, :, dy, dx], xp[:, :, dy : dy + 11, dx : dx + 9])
    with torch.no_grad():
        assert (conv(x) - direct).abs().max() <= 1e-6


@pytest.mark.parametrize("rate", [2, 6, 12])
def test_atrous_padding_equals_rate(rate):
    aspp = build_aspp(3, AsppConfig(rates=(rate,), branch_channels=2))
    assert aspp.atrous[0].conv.padding == (rate, rate)
    assert aspp.atrous[0].conv.dilation == (rate, rate)


def test_image_pooling_on_constant_input_is_constant():
    aspp = build_aspp(3, AsppConfig(branch_channels=6)).eval()
    x = torch.full((1, 3, 9, 14), 0.7)
    with torch.no_grad():
        y = aspp.pooling(x)
    assert torch.allclose(y, y[..., :1, :1].expand_as(y), atol=1e-7)


@pytest.mark.parametrize("rate", [2, 4])
def test_atrous_branch_translation_equivariance(rate):
    torch.manual_seed(1)
    aspp = build_aspp(3, AsppConfig(rates=(rate,), branch_channels=4)).eval()
    branch = aspp.atrous[0]
    x = torch.randn(1, 3, 32, 32)
    shifted = torch.roll(x, shifts=(rate, rate), dims=(2, 3))
    with torch.no_grad():
        a = torch.roll(branch(x), shifts=(rate, rate), dims=(2, 3))
        b = branch(shifted)
    m = 3 * rate  # margin clear of both zero padding and the roll wrap-around
    assert torch.allclose(a[..., m:-m, m:-m], b[..., m:-m, m:-m], atol=1e-6)


@pytest.mark.parametrize("stride", [8, 16])
def test_network_output_matches_input_size(stride):
    config = SegmenterConfig(input_size=(64, 48), output_stride=stride, width=4,
                             aspp=AsppConfig(rates=(1, 2), branch_channels=8))
    model = build_segmenter(config).eval()
    with torch.no_grad():
        assert model(torch.rand(2, 3, 48, 64)).shape == (2, 6, 48, 64)


def test_segmenter_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SegmenterConfig(output_stride=4)
    with pytest.raises(ValueError):
        SegmenterConfig(class_weights=(1, 1, 1, 1, 1, 0))
    with pytest.raises(ValueError):
        SegmenterConfig(batch=0)
    config = SegmenterConfig(class_weights=(1, 2, 3, 4, 5, 6), crop=(128, 128))
    assert SegmenterConfig.from_dict(config.to_dict()) == config


# -- class weights -----------------------------------------------------------------


def test_equal_frequencies_give_unit_weights():
    assert weights_from_counts([7] * 6) == pytest.approx([1.0] * 6)


def test_two_class_worked_example():
    assert weights_from_counts([75, 25]) == pytest.approx([0.5, 1.5], abs=1e-12)


def test_absent_class_gets_max_present_weight(caplog):
    with caplog.at_level(logging.WARNING):
        w = weights_from_counts([60, 30, 10, 0])
    assert "no pixels" in caplog.text
    assert w[3] == pytest.approx(w[2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=2, max_size=8), st.randoms(use_true_random=False))
def test_weights_normalized_and_permutation_equivariant(counts, random):
    w = weights_from_counts(counts)
    assert w.mean() == pytest.approx(1.0, rel=1e-12)
    perm = list(range(len(counts)))
    random.shuffle(perm)
    assert weights_from_counts([counts[i] for i in perm]) == pytest.approx(w[perm], rel=1e-12)


def test_weights_from_manifest_match_pixel_count(synthetic_small):
    from pavescan.dataset import read_mask

    counts = np.zeros(6)
    for rec in synthetic_small.split("train"):
        counts += np.bincount(read_mask(synthetic_small.resolve(rec.mask_path)).ravel(), minlength=6)
    f = counts / counts.sum()
    inv = np.where(f > 0, 1 / np.where(f > 0, f, 1), 0)
    inv[f == 0] = inv[f > 0].max()
    assert class_weights_from_frequency(synthetic_small) == pytest.approx(inv / inv.mean(), rel=1e-12)


def test_weights_from_manifest_without_masks():
    with pytest.raises(ValueError, match="no masks"):
        class_weights_from_frequency(DatasetManifest(()))


# -- weighted cross-entropy --------------------------------------------------------


def test_wce_perfect_prediction_is_zero():
    probs = np.eye(6)[np.array([[0, 3], [5, 1]])]
    assert weighted_cross_entropy(probs, np.array([[0, 3], [5, 1]]), np.arange(1, 7)) == 0.0


def test_wce_unit_weights_is_mean_cross_entropy(rng):
    logits = rng.normal(size=(4, 5, 6))
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    labels = rng.integers(0, 6, (4, 5))
    expected = -np.log(np.take_along_axis(probs, labels[..., None], -1)).mean()
    assert weighted_cross_entropy(probs, labels, np.ones(6)) == pytest.approx(expected, rel=1e-12)


def test_wce_two_pixel_worked_example():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    value = weighted_cross_entropy(probs, np.array([0, 1]), [1.0, 3.0])
    assert value == pytest.approx((math.log(2) + 3 * math.log(4 / 3)) / 4, rel=1e-12)
    assert value == pytest.approx(0.389048, abs=1e-6)


def test_wce_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        weighted_cross_entropy(np.full((2, 6), 1 / 6), np.array([0, 6]), np.ones(6))


def test_wce_logits_form_agrees_with_probability_form(rng):
    logits = torch.tensor(rng.normal(size=(2, 6, 4, 5)))
    labels = torch.tensor(rng.integers(0, 6, (2, 4, 5)))
    w = rng.uniform(0.2, 3, 6)
    probs = torch.softmax(logits, 1).permute(0, 2, 3, 1)
    a = float(weighted_cross_entropy_logits(logits, labels, w))
    assert a == pytest.approx(weighted_cross_entropy(probs.numpy(), labels.numpy(), w), rel=1e-10)
    assert a == pytest.approx(float(weighted_cross_entropy(probs, labels, w)), rel=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_wce_gradient_matches_central_differences(seed):
    analytic, numeric = wce_gradients(seed)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


# -- early stopping ----------------------------------------------------------------


def test_strictly_decreasing_losses_never_stop():
    losses = [1.0 / (e + 1) for e in range(40)]
    assert early_stop_epoch(losses, patience=10) == (None, 40)


def test_plateau_worked_example():
    assert early_stop_epoch([1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9], patience=3) == (5, 2)


def test_improvement_smaller_than_min_delta_does_not_count():
    assert early_stop_epoch([1.0, 0.99995, 0.99992, 0.99991], patience=3, min_delta=1e-4) == (4, 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30), st.integers(1, 6))
def test_incremental_stopper_agrees_with_replay(losses, patience):
    stopper = EarlyStopping(patience)
    stop_at = None
    for epoch, loss in enumerate(losses, start=1):
        if stopper.update(loss):
            stop_at = epoch
            break
    expected_stop, expected_best = early_stop_epoch(losses, patience)
    assert stop_at == expected_stop
    assert stopper.best_epoch == expected_best


# -- training and prediction -------------------------------------------------------


def _tiny_config(**kw):
    base = dict(input_size=(64, 48), width=4, aspp=AsppConfig(rates=(1, 2), branch_channels=8), batch=4,
                max_epochs=3, patience=5, seed=2)
    base.update(kw)
    return SegmenterConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(synthetic_small, tmp_path_factory):
    out = tmp_path_factory.mktemp("segrun")
    return train_segmenter(synthetic_small, _tiny_config(), out)


def test_training_curve_contract(tiny_run):
    with tiny_run.log_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "train_loss", "val_loss", "lr"]
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert all(math.isfinite(float(r["train_loss"])) and math.isfinite(float(r["val_loss"])) for r in rows)
    assert float(rows[0]["lr"]) == 5e-4
    assert len(tiny_run.class_weights) == 6 and np.mean(tiny_run.class_weights) == pytest.approx(1.0)
    best = min(range(3), key=lambda i: float(rows[i]["val_loss"]))
    assert tiny_run.best_epoch == best + 1


def test_training_is_deterministic(synthetic_small, tiny_run, tmp_path):
    again = train_segmenter(synthetic_small, _tiny_config(), tmp_path)
    assert again.log_path.read_bytes() == tiny_run.log_path.read_bytes()
    assert (tmp_path / "last/weights.pt").read_bytes() == (tiny_run.last_checkpoint / "weights.pt").read_bytes()


def test_worker_count_does_not_change_training(synthetic_small, tiny_run, tmp_path, monkeypatch):
    monkeypatch.setenv("PAVESCAN_NUM_WORKERS", "3")
    threaded = train_segmenter(synthetic_small, _tiny_config(), tmp_path)
    assert threaded.log_path.read_bytes() == tiny_run.log_path.read_bytes()


def test_training_requires_masks(synthetic_small, tmp_path):
    stripped = synthetic_small.subset([dataclasses.replace(r, mask_path=None) for r in synthetic_small.records])
    with pytest.raises((TrainingError, ValueError), match="mask"):
        train_segmenter(stripped, _tiny_config(class_weights=(1,) * 6), tmp_path)


def test_predict_mask_contract(tiny_run, synthetic_small, rng):
    image = rng.integers(0, 256, (50, 70, 3)).astype(np.uint8)
    labels, probs = predict_mask(image, tiny_run.best_checkpoint)
    assert labels.shape == (50, 70) and labels.dtype == np.uint8
    assert probs.shape == (50, 70, 6)
    assert probs.min() >= 0 and np.abs(probs.sum(-1) - 1).max() <= 1e-6
    assert np.array_equal(labels, probs.argmax(-1))
    again, _ = predict_mask(image, tiny_run.best_checkpoint)
    assert np.array_equal(labels, again)


def test_argmax_ties_go_to_lower_class():
    probs = np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])
    assert probs.argmax(-1).tolist() == [0, 1]


def test_checkpoint_round_trip(tiny_run, tmp_path):
    model, config, _ = load_checkpoint(tiny_run.best_checkpoint)
    assert config.class_weights is not None
    copy = save_checkpoint(model, config, tmp_path / "copy")
    model2, config2, _ = load_checkpoint(copy)
    assert config2 == config
    x = torch.rand(1, 3, 48, 64)
    with torch.no_grad():
        assert torch.equal(model(x), model2(x))


def test_broken_checkpoints_raise_checkpoint_error(tiny_run, tmp_path):
    model, config, _ = load_checkpoint(tiny_run.best_checkpoint)
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tmp_path / "nowhere")
    wider = save_checkpoint(model, config, tmp_path / "wider")
    (wider / "config.json").write_text(json.dumps(dataclasses.replace(config, width=8).to_dict()))
    with pytest.raises(CheckpointError, match="weights do not match"):
        load_checkpoint(wider)


def test_photometric_augmentation_only_changes_image(synthetic_small):
    from pavescan.segmenter.train import _augmented, prepare_masked

    config = _tiny_config(augmentation=AugmentationSpec(0, 0, 0, 0, 0.2, 0.2))
    (p,) = prepare_masked(synthetic_small, synthetic_small.records[:1], config)
    image, mask = _augmented((0, p), config, epoch=0)
    assert np.array_equal(mask, p.mask)
