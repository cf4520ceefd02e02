"""Acceptance criteria, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion. The long trainings are session fixtures in
conftest and are shared with the smoke tests.
"""

from __future__ import annotations

import csv
import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

import pavescan.segmenter.train as seg_train
from pavescan.cli import run_cli
from pavescan.dataset import CLASSES, synthesize_scene
from pavescan.detector import decode_box, encode_box, evaluate_prepared, load_checkpoint, prepare_records
from pavescan.geometry import Detection, box_iou, diou_nms
from pavescan.metrics import detection_report, match_detections, seg_confusion, seg_report
from pavescan.preprocess import AugmentationSpec, ClaheParams, apply_augmentation, clahe
from pavescan.segmenter import early_stop_epoch, train_segmenter
from pavescan.segmenter import evaluate_prepared as seg_evaluate
from pavescan.segmenter import load_checkpoint as seg_load
from pavescan.segmenter import prepare_masked

from conftest import DETECT_SMOKE, DICE_AUDIT
from oracles import (
    augmentation_box_mask_ious,
    brute_match,
    brute_report,
    detection_loss_gradients,
    global_equalization,
    naive_nms,
    naive_seg_scores,
    random_scene,
    wce_gradients,
)

THIRTY_MINUTES = 30 * 60


@pytest.mark.criterion(1, "metric oracle equivalence")
def test_metrics_equal_brute_force_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(500):
        images = [random_scene(rng, max_boxes=10, n_classes=3) for _ in range(int(rng.integers(1, 4)))]
        dets, gts = [d for d, _ in images], [g for _, g in images]
        for d, g in images:
            res = match_detections(d, g, 0.5)
            status, matched, ious = brute_match(d, g, 0.5)
            assert res.status == status and res.matched_gt == matched
            assert np.allclose(res.iou, ious, rtol=0, atol=1e-9)
        rep = detection_report(dets, gts)
        want = brute_report(dets, gts, CLASSES.ids)
        for c in CLASSES.ids:
            assert (rep.ap[c] is None) == (want["ap"][c] is None)
            if rep.ap[c] is not None:
                assert abs(rep.ap[c] - want["ap"][c]) <= 1e-9
        for key in ("mAP", "precision", "recall", "f1", "ave_iou"):
            assert abs(getattr(rep, key) - want[key]) <= 1e-9
        assert (rep.tp, rep.fp, rep.fn) == (want["tp"], want["fp"], want["fn"])
    for _ in range(500):
        h, w = rng.integers(1, 17, 2)
        gt, pred = rng.integers(0, 6, (h, w)), rng.integers(0, 6, (h, w))
        rep = seg_report(seg_confusion(pred, gt))
        iou, dice, miou, mean_dice, _ = naive_seg_scores(pred, gt, 6)
        assert rep.iou == iou and rep.dice == dice and rep.miou == miou and rep.mean_dice == mean_dice
    assert time.perf_counter() - start < 60


@pytest.mark.criterion(2, "geometry suite")
def test_geometry_identities_round_trip_and_nms():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        x, y = rng.uniform(-50, 50, 2)
        w, h = rng.uniform(0.5, 80, 2)
        a = (x, y, x + w, y + h)
        for variant in ("iou", "diou", "ciou"):
            assert box_iou(a, a, variant) == pytest.approx(1.0, abs=1e-12)
        bx, by = rng.uniform(-50, 50, 2)
        s = rng.uniform(0.2, 3)
        b = (bx, by, bx + w * s, by + h * s)  # same aspect ratio as a
        assert box_iou(a, b, "ciou") == pytest.approx(box_iou(a, b, "diou"), abs=1e-12)
        bw, bh = rng.uniform(0.5, 80, 2)
        c = (bx, by, bx + bw, by + bh)
        assert box_iou(a, c, "diou") <= box_iou(a, c, "iou") + 1e-15

    for _ in range(2000):
        stride = int(rng.choice([8, 16, 32]))
        grid = 608 // stride
        cx, cy = rng.uniform(0, 608, 2)
        bw, bh = rng.uniform(1, 400, 2)
        anchor = rng.uniform(4, 300, 2)
        encoded = encode_box(cx, cy, bw, bh, stride, grid, anchor)
        decoded = decode_box(*encoded, stride, anchor)
        assert np.max(np.abs(np.subtract(decoded, (cx, cy, bw, bh)))) <= 1e-6

    for n in list(range(0, 101)) + [100] * 50:
        xy = rng.uniform(0, 120, (n, 2))
        wh = rng.uniform(3, 50, (n, 2))
        scores = np.round(rng.uniform(0, 1, n), 1)  # coarse scores force tie-breaking
        dets = [Detection(int(k), float(sc), (px, py, px + pw, py + ph))
                for k, sc, (px, py), (pw, ph) in zip(rng.integers(1, 4, n), scores, xy, wh)]
        threshold = float(rng.choice([0.0, 0.3, 0.45, 0.7]))
        assert diou_nms(dets, threshold) == naive_nms(dets, threshold)


@pytest.mark.criterion(3, "gradient checks")
def test_loss_gradients_match_central_differences():
    for seed in range(20):
        analytic, numeric = detection_loss_gradients(100 + seed)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)
        analytic, numeric = wce_gradients(100 + seed)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


@pytest.mark.criterion(4, "Dice-IoU identity on every confusion matrix")
@pytest.mark.run_last
def test_dice_iou_identity_audit(rng):
    # a batch of accumulated matrices of its own, on top of everything the session computed
    confusion = np.zeros((6, 6), np.int64)
    for _ in range(200):
        h, w = rng.integers(1, 40, 2)
        confusion += seg_confusion(rng.integers(0, 6, (h, w)), rng.integers(0, 6, (h, w)))
        seg_report(confusion)
    assert DICE_AUDIT["reports"] >= 200
    assert DICE_AUDIT["failures"] == []


@pytest.mark.criterion(5, "CLAHE")
def test_clahe_constant_global_oracle_and_determinism():
    rng = np.random.default_rng(5)
    for value in (0, 1, 77, 128, 254, 255):
        for tiles in ((1, 1), (8, 8), (3, 5)):
            out = clahe(np.full((64, 96), value, np.uint8), ClaheParams(tiles=tiles))
            assert len(np.unique(out)) == 1
    for _ in range(50):
        h, w = rng.integers(8, 120, 2)
        gray = rng.integers(int(rng.integers(0, 100)), 256, (h, w)).astype(np.uint8)
        out = clahe(gray, ClaheParams(clip_limit=float("inf"), tiles=(1, 1)))
        assert np.abs(out.astype(int) - global_equalization(gray).astype(int)).max() <= 1
    image = rng.integers(0, 256, (120, 180, 3)).astype(np.uint8)
    for params in (ClaheParams(), ClaheParams(mode="luminance", clip_limit=4.0, tiles=(4, 6))):
        assert np.array_equal(clahe(image, params), clahe(image.copy(), params))


@pytest.mark.criterion(6, "augmentation consistency")
def test_augmentation_consistency_and_identity():
    ious = augmentation_box_mask_ious(range(200), AugmentationSpec())
    ious += augmentation_box_mask_ious(range(200, 400), AugmentationSpec(rotate_limit=45, scale_limit=0.3))
    assert len(ious) >= 400
    assert min(ious) >= 0.95
    identity = AugmentationSpec.identity()
    for seed in range(200):
        scene = synthesize_scene(np.random.default_rng(seed), size=(120, 80), max_instances=3)
        boxes = scene.boxes()
        image, out_boxes, mask = apply_augmentation(scene.image, boxes, scene.mask, identity, np.random.default_rng(seed))
        assert np.array_equal(image, scene.image) and image.dtype == scene.image.dtype
        assert np.array_equal(mask, scene.mask) and out_boxes == boxes


@pytest.mark.slow
@pytest.mark.criterion(7, "detector smoke run")
def test_detector_smoke_run(detector_smoke, detector_overfit, synthetic_250):
    assert DETECT_SMOKE.max_iterations <= 2000
    model, config, _ = load_checkpoint(detector_smoke.result.last_checkpoint)
    val = prepare_records(synthetic_250, synthetic_250.split("val"), config)
    assert len(val) == 50
    report = evaluate_prepared(model, val, config)
    print(f"detector smoke: val mAP@0.5 {report.mAP:.4f} after {config.max_iterations} iterations "
          f"in {detector_smoke.seconds:.0f}s")
    assert report.mAP >= 0.5
    assert detector_smoke.seconds <= THIRTY_MINUTES

    losses = [row["loss"] for row in detector_overfit.result.history]
    final = float(np.mean(losses[-10:]))
    print(f"detector overfit: loss {losses[0]:.4f} -> {final:.4f}")
    assert final < 0.1 * losses[0]


@pytest.mark.slow
@pytest.mark.criterion(8, "segmenter smoke run")
def test_segmenter_smoke_run(segmenter_smoke, synthetic_250, synthetic_small, tmp_path, monkeypatch):
    result = segmenter_smoke.result
    assert len(result.history) <= 100
    model, config, _ = seg_load(result.best_checkpoint)
    val = prepare_masked(synthetic_250, synthetic_250.split("val"), config)
    report = seg_evaluate(model, val, config.num_classes)
    print(f"segmenter smoke: val mIoU {report.miou:.4f} (best epoch {result.best_epoch} of {len(result.history)}) "
          f"in {segmenter_smoke.seconds:.0f}s")
    assert report.miou >= 0.6
    assert segmenter_smoke.seconds <= THIRTY_MINUTES

    # a scripted val-loss plateau drives the real training loop
    scripted = [1.0, 0.8, 0.79995, 0.81, 0.8, 0.7999, 0.9, 0.85, 0.83, 0.84, 0.5]
    feed = iter(scripted)
    monkeypatch.setattr(seg_train, "_mean_loss", lambda *args, **kwargs: next(feed))
    from test_segmenter import _tiny_config

    patience = 3
    run = train_segmenter(synthetic_small, _tiny_config(max_epochs=len(scripted), patience=patience), tmp_path)
    stop_epoch, best_epoch = early_stop_epoch(scripted, patience=patience, min_delta=1e-4)
    assert (stop_epoch, best_epoch) == (5, 2)
    assert run.stopped_early and len(run.history) == stop_epoch and run.best_epoch == best_epoch
    assert json.loads((run.best_checkpoint / "meta.json").read_text())["epoch"] == best_epoch


@pytest.mark.slow
@pytest.mark.criterion(9, "pipeline A/B harness")
def test_eval_detect_original_and_processed_columns(detector_smoke, synthetic_250, tmp_path, capsys):
    code = run_cli(["eval", "detect", "--root", str(synthetic_250.root), "--checkpoint",
                    str(detector_smoke.result.last_checkpoint), "--preprocess", "none", "clahe", "--out", str(tmp_path)])
    assert code == 0
    with (tmp_path / "detection_report.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "Original", "Processed"]
    names = [r[0] for r in rows[1:]]
    assert names[:5] == [f"{CLASSES.name(c)} AP" for c in CLASSES.ids]
    assert names[-3:] == ["mAP", "F1-score", "ave IoU"]
    for row in rows[1:]:
        assert len(row) == 3
        for cell in row[1:]:
            assert cell == "n/a" or 0.0 <= float(cell) <= 1.0
    out = capsys.readouterr().out
    assert "Original: mAP" in out and "Processed: mAP" in out


def _same_files(a: Path, b: Path, names):
    for name in names:
        assert (a / name).is_file(), name
        assert filecmp.cmp(a / name, b / name, shallow=False), name


@pytest.mark.criterion(10, "determinism")
def test_cli_runs_repeat_byte_identically(tmp_path, monkeypatch):
    monkeypatch.setenv("PAVESCAN_NUM_WORKERS", "1")
    data = tmp_path / "data"
    assert run_cli(["dataset", "synth", "--out", str(data), "--n", "10", "--size", "128x96", "--val-fraction", "0.3",
                    "--seed", "9"]) == 0
    detect = ["--set", "detect.input_size=64", "--set", "detect.width=4", "--set", "detect.batch=4",
              "--set", "detect.subdivisions=2", "--set", "detect.max_iterations=6", "--set", "detect.eval_interval=3"]
    segment = ["--set", "segment.input_size=64,48", "--set", "segment.width=4", "--set", "segment.aspp.rates=1,2",
               "--set", "segment.aspp.branch_channels=8", "--set", "segment.max_epochs=3"]
    runs = {}
    for attempt in ("a", "b"):
        for task, extra in (("detect", detect), ("segment", segment)):
            out = tmp_path / f"{task}_{attempt}"
            assert run_cli(["train", task, "--root", str(data), "--out", str(out), "--seed", "3", *extra]) == 0
            ev = tmp_path / f"{task}_eval_{attempt}"
            assert run_cli(["eval", task, "--root", str(data), "--checkpoint", str(out / "best"),
                            "--preprocess", "none", "clahe", "--out", str(ev), "--seed", "3"]) == 0
            runs[task, attempt] = (out, ev)
    for task, stem in (("detect", "detection_report"), ("segment", "segmentation_report")):
        (out_a, ev_a), (out_b, ev_b) = runs[task, "a"], runs[task, "b"]
        reports = [f"{stem}.{suffix}" for suffix in ("csv", "md", "json")]
        _same_files(out_a, out_b, reports + ["loss_curve.csv", "train_log.csv"])
        _same_files(ev_a, ev_b, reports)
