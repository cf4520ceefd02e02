from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np
import torch

from .. import detector, segmenter
from ..dataset import (
    CLASSES,
    DatasetError,
    class_stats,
    generate_synthetic,
    ingest_manifest,
    read_image,
    read_mask,
    stratified_split,
    write_manifest,
    write_mask,
)
from ..geometry import Detection
from ..metrics import detection_report, seg_confusion, seg_report
from ..preprocess import ClaheParams, as_rgb, clahe
from ..runtime import CheckpointError, TrainingError, num_workers
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .render import colorize_mask, render_overlay
from .report import emit_report, load_report

log = logging.getLogger("pavescan")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
COLUMN_FOR_MODE = {"none": "Original", "clahe": "Processed"}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class UsageError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    if config:
        p.add_argument("--config", help="flat key = value experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--dump-config", action="store_true", help="print the merged config and exit")


def build_parser() -> Parser:
    parser = Parser(prog="pavescan", description="Pavement distress detection and segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    ds = sub.add_parser("dataset", help="ingest, inspect, split or synthesize datasets")
    ds_sub = ds.add_subparsers(dest="action", required=True, parser_class=Parser)
    p = ds_sub.add_parser("ingest", help="validate a dataset directory and write its manifest")
    p.add_argument("--root", required=True)
    _common(p, config=False)
    p = ds_sub.add_parser("stats", help="per-class image/annotation counts per split")
    p.add_argument("--root", required=True)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    _common(p, config=False)
    p = ds_sub.add_parser("split", help="stratified train/val split")
    p.add_argument("--root", required=True)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--force", action="store_true", help="reassign records that already have a split")
    _common(p, config=False)
    p = ds_sub.add_parser("synth", help="generate a synthetic distress dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--size", type=_size, default=(600, 400), help="WxH")
    p.add_argument("--max-instances", type=int, default=3)
    p.add_argument("--mix", help="comma-separated class weights for ids 1..5")
    p.add_argument("--val-fraction", type=float, help="also split the generated set")
    _common(p, config=False)

    p = sub.add_parser("preprocess", help="write CLAHE copies of every image with suffix _clahe")
    p.add_argument("--root", required=True)
    p.add_argument("--clahe-clip", type=float, default=2.0)
    p.add_argument("--clahe-tiles", type=_size, default=(8, 8), help="ROWSxCOLS")
    p.add_argument("--mode", choices=("grayscale", "luminance"), default="grayscale")
    _common(p, config=False)

    tr = sub.add_parser("train", help="train a detector or segmenter")
    tr_sub = tr.add_subparsers(dest="task", required=True, parser_class=Parser)
    for task in ("detect", "segment"):
        p = tr_sub.add_parser(task)
        p.add_argument("--root")
        p.add_argument("--out")
        p.add_argument("--preprocess", choices=("none", "clahe"))
        _common(p)

    ev = sub.add_parser("eval", help="evaluate a checkpoint or saved predictions")
    ev_sub = ev.add_subparsers(dest="task", required=True, parser_class=Parser)
    p = ev_sub.add_parser("detect")
    p.add_argument("--root")
    p.add_argument("--checkpoint")
    p.add_argument("--pred", help="directory of per-image detection JSON files")
    p.add_argument("--out")
    p.add_argument("--preprocess", nargs="+", choices=("none", "clahe"),
                   help="one column per mode; defaults to the checkpoint's own mode")
    _common(p)
    p = ev_sub.add_parser("segment")
    p.add_argument("--root")
    p.add_argument("--checkpoint")
    p.add_argument("--pred", help="directory of predicted label PNGs")
    p.add_argument("--gt", help="directory of ground-truth label PNGs")
    p.add_argument("--out")
    p.add_argument("--preprocess", nargs="+", choices=("none", "clahe"))
    _common(p)

    p = sub.add_parser("infer", help="run a checkpoint on images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, nargs="+", help="image files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--conf-threshold", type=float, default=0.25)
    p.add_argument("--nms-threshold", type=float, default=0.45)
    p.add_argument("--overlay", action="store_true", help="also write overlay PNGs")
    _common(p, config=False)

    p = sub.add_parser("report", help="combine saved evaluation JSONs into one multi-column report")
    p.add_argument("--detect", nargs="+", default=[], help="detection_report.json files")
    p.add_argument("--segment", nargs="+", default=[], help="segmentation_report.json files")
    p.add_argument("--labels", nargs="+", help="column names (default Original, Processed, ...)")
    p.add_argument("--out", required=True)
    _common(p, config=False)
    return parser


# -- helpers -----------------------------------------------------------------


def _experiment(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag in ("root", "out"):
        if getattr(args, flag, None) is not None:
            overrides[flag] = getattr(args, flag)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    pre = getattr(args, "preprocess", None)
    if isinstance(pre, str):
        overrides["preprocess.mode"] = pre
    if getattr(args, "task", None) in ("detect", "segment"):
        overrides["task"] = args.task
    return load_config(args.config, overrides)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _images_in(paths) -> list[Path]:
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out += sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
        elif p.is_file():
            out.append(p)
        else:
            raise FileNotFoundError(f"input {p} does not exist")
    return out


def _eval_records(manifest, split: str):
    recs = manifest.split(split)
    if not recs:
        raise UsageError(f"split {split!r} is empty; run `pavescan dataset split` first")
    return recs


# -- dataset -----------------------------------------------------------------


def cmd_dataset(args) -> int:
    if args.action == "synth":
        mix = None if args.mix is None else [float(v) for v in args.mix.split(",")]
        if mix is not None and len(mix) != len(CLASSES):
            raise UsageError(f"--mix needs {len(CLASSES)} weights")
        manifest = generate_synthetic(args.n, args.out, args.size, args.seed or 0, mix, args.max_instances)
        if args.val_fraction is not None:
            manifest = stratified_split(manifest, args.val_fraction, args.seed or 0)
            write_manifest(manifest, args.out)
        print(f"wrote {len(manifest)} synthetic images to {args.out}")
        return EXIT_OK

    manifest = ingest_manifest(args.root)
    if args.action == "ingest":
        write_manifest(manifest, args.root)
        masked = sum(r.mask_path is not None for r in manifest.records)
        print(f"{len(manifest)} records ({masked} with masks) written to {Path(args.root) / 'manifest.jsonl'}")
    elif args.action == "stats":
        stats = class_stats(manifest)
        if args.format == "json":
            print(json.dumps({"rows": stats.rows, "totals": stats.totals}, indent=2, sort_keys=True))
        elif args.format == "csv":
            print("class," + ",".join(stats.COLUMNS))
            for name, row in list(stats.rows.items()) + [("Total", stats.totals)]:
                print(name + "," + ",".join(str(row[c]) for c in stats.COLUMNS))
        else:
            print(stats.format_table())
    elif args.action == "split":
        if args.force:
            manifest = manifest.subset(replace(r, split="unassigned") for r in manifest.records)
        seed = manifest.seed if args.seed is None else args.seed
        manifest = replace(stratified_split(manifest, args.val_fraction, seed), seed=seed)
        write_manifest(manifest, args.root)
        print(f"train {len(manifest.split('train'))} / val {len(manifest.split('val'))}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    params = ClaheParams(clip_limit=args.clahe_clip, tiles=tuple(args.clahe_tiles), mode=args.mode)
    manifest = ingest_manifest(args.root)
    for rec in manifest.records:
        src = manifest.resolve(rec.image_path)
        dst = src.with_name(f"{src.stem}_clahe.png")
        out = as_rgb(clahe(read_image(src), params))
        cv2.imwrite(str(dst), cv2.cvtColor(out, cv2.COLOR_RGB2BGR))
    print(f"wrote {len(manifest)} CLAHE images")
    return EXIT_OK


# -- train / eval -------------------------------------------------------------


def _progress_printer(task: str):
    def show(row):
        if task == "detect" and row.get("val_mAP") is not None:
            print(f"iteration {row['iteration'] + 1}: loss {row['loss']:.4f} val mAP {row['val_mAP']:.4f}", flush=True)
        elif task == "segment":
            val = "" if row["val_loss"] is None else f" val loss {row['val_loss']:.4f}"
            print(f"epoch {row['epoch']}: train loss {row['train_loss']:.4f}{val}", flush=True)

    return show


def cmd_train(args, exp: ExperimentConfig) -> int:
    exp.check_paths("root", "out")
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.cfg").write_text(dump_config(exp), encoding="utf-8")
    manifest = ingest_manifest(exp.root)
    column = COLUMN_FOR_MODE[exp.preprocess.mode]
    if args.task == "detect":
        config = exp.model_config("detect")
        result = detector.train_detector(manifest, config, out, progress=_progress_printer("detect"))
        model, cfg, classes = detector.load_checkpoint(result.best_checkpoint)
        report = _detect_eval(model, cfg, manifest, exp)
        emit_report(out, detection={column: report}, curves={"loss": result.history}, classes=classes)
        print(f"mAP@{exp.eval.iou_threshold:g} {report.mAP:.4f}  F1 {report.f1:.4f}  ave IoU {report.ave_iou:.4f}")
    else:
        config = exp.model_config("segment")
        result = segmenter.train_segmenter(manifest, config, out, progress=_progress_printer("segment"))
        model, cfg, classes = segmenter.load_checkpoint(result.best_checkpoint)
        report = _segment_eval(model, cfg, manifest, exp)
        emit_report(out, segmentation={column: report}, curves={"loss": result.history}, classes=classes)
        print(f"mIoU {report.miou:.4f}  mean Dice {report.mean_dice:.4f}  pixel accuracy {report.pixel_accuracy:.4f}")
    return EXIT_OK


def _detect_eval(model, cfg, manifest, exp: ExperimentConfig):
    prepared = detector.prepare_records(manifest, _eval_records(manifest, exp.eval.split), cfg)
    return detector.evaluate_prepared(model, prepared, cfg, exp.eval.iou_threshold, exp.eval.report_conf, exp.eval.ap_method)


def _segment_eval(model, cfg, manifest, exp: ExperimentConfig):
    prepared = segmenter.prepare_masked(manifest, _eval_records(manifest, exp.eval.split), cfg)
    return segmenter.evaluate_prepared(model, prepared, cfg.num_classes)


def _modes(args, checkpoint_mode: str) -> list[str]:
    return list(dict.fromkeys(args.preprocess or [checkpoint_mode]))


def cmd_eval(args, exp: ExperimentConfig) -> int:
    out = Path(exp.out) if exp.out is not None else None
    if args.task == "detect":
        reports = _eval_detect(args, exp)
        if out is not None:
            emit_report(out, detection=reports)
        for name, r in reports.items():
            print(f"{name}: mAP {r.mAP:.4f}  F1 {r.f1:.4f}  ave IoU {r.ave_iou:.4f}")
    else:
        reports = _eval_segment(args, exp)
        if out is not None:
            emit_report(out, segmentation=reports)
        for name, r in reports.items():
            print(f"{name}: mIoU {r.miou:.4f}  mean Dice {r.mean_dice:.4f}")
    return EXIT_OK


def _eval_detect(args, exp: ExperimentConfig) -> dict:
    exp.check_paths("root")
    manifest = ingest_manifest(exp.root)
    if args.pred is not None:
        recs = _eval_records(manifest, exp.eval.split)
        dets = [_load_detections(Path(args.pred) / f"{r.id}.json") for r in recs]
        report = detection_report(dets, [list(r.boxes) for r in recs], exp.eval.iou_threshold, exp.eval.report_conf,
                                  exp.eval.ap_method, image_sizes=[(r.width, r.height) for r in recs])
        return {"Predictions": report}
    if args.checkpoint is None:
        raise UsageError("eval detect needs --checkpoint or --pred")
    model, cfg, _ = detector.load_checkpoint(args.checkpoint)
    reports = {}
    for mode in _modes(args, cfg.preprocess.mode):
        run_cfg = replace(cfg, preprocess=replace(exp.preprocess, mode=mode))
        reports[COLUMN_FOR_MODE[mode]] = _detect_eval(model, run_cfg, manifest, exp)
    return reports


def _eval_segment(args, exp: ExperimentConfig) -> dict:
    if args.pred is not None or args.gt is not None:
        if args.pred is None or args.gt is None:
            raise UsageError("eval segment needs both --pred and --gt")
        pred_dir, gt_dir = Path(args.pred), Path(args.gt)
        for d in (pred_dir, gt_dir):
            if not d.is_dir():
                raise FileNotFoundError(f"{d} is not a directory")
        gt_files = sorted(gt_dir.glob("*.png"))
        if not gt_files:
            raise UsageError(f"no PNG masks in {gt_dir}")
        confusion = np.zeros((CLASSES.n_mask_classes,) * 2, np.int64)
        for g in gt_files:
            p = pred_dir / g.name
            if not p.is_file():
                raise FileNotFoundError(f"prediction {p} missing for ground truth {g.name}")
            confusion += seg_confusion(read_mask(p), read_mask(g), CLASSES.n_mask_classes)
        return {"Predictions": seg_report(confusion)}
    if args.checkpoint is None:
        raise UsageError("eval segment needs --checkpoint or --pred/--gt")
    exp.check_paths("root")
    manifest = ingest_manifest(exp.root)
    model, cfg, _ = segmenter.load_checkpoint(args.checkpoint)
    reports = {}
    for mode in _modes(args, cfg.preprocess.mode):
        run_cfg = replace(cfg, preprocess=replace(exp.preprocess, mode=mode))
        reports[COLUMN_FOR_MODE[mode]] = _segment_eval(model, run_cfg, manifest, exp)
    return reports


def _load_detections(path: Path) -> list[Detection]:
    if not path.is_file():
        raise FileNotFoundError(f"missing detections file {path}")
    out = []
    for d in json.loads(path.read_text(encoding="utf-8")):
        out.append(Detection(CLASSES.by_name(d["class"]).id, float(d["score"]), tuple(float(v) for v in d["box"])))
    return out


# -- infer / report -----------------------------------------------------------


def _checkpoint_task(path: Path) -> str:
    cfg_path = path / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"{path} is not a checkpoint directory")
    return "segment" if "output_stride" in json.loads(cfg_path.read_text(encoding="utf-8")) else "detect"


def cmd_infer(args) -> int:
    ckpt = Path(args.checkpoint)
    task = _checkpoint_task(ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    loaded = detector.load_checkpoint(ckpt) if task == "detect" else segmenter.load_checkpoint(ckpt)
    classes = loaded[2]
    images = _images_in(args.input)
    for path in images:
        image = read_image(path)
        if task == "detect":
            dets = detector.infer_detector(image, loaded, args.conf_threshold, args.nms_threshold)
            _write_json(out / f"{path.stem}.json", [d.to_json(classes) for d in dets])
            overlay = render_overlay(image, detections=dets, classes=classes) if args.overlay else None
        else:
            mask, _ = segmenter.predict_mask(image, loaded)
            write_mask(out / f"{path.stem}.png", mask)
            cv2.imwrite(str(out / f"{path.stem}_color.png"), cv2.cvtColor(colorize_mask(mask), cv2.COLOR_RGB2BGR))
            overlay = render_overlay(image, mask=mask, classes=classes) if args.overlay else None
        if overlay is not None:
            cv2.imwrite(str(out / f"{path.stem}_overlay.png"), cv2.cvtColor(overlay, cv2.COLOR_RGB2BGR))
    print(f"{task}: processed {len(images)} images into {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.detect and not args.segment:
        raise UsageError("report needs --detect and/or --segment inputs")
    written = []
    for kind, files in (("detection", args.detect), ("segmentation", args.segment)):
        if not files:
            continue
        labels = args.labels or ["Original", "Processed"] + [f"Run {i}" for i in range(3, len(files) + 1)]
        if len(labels) < len(files):
            raise UsageError(f"{len(files)} reports but only {len(labels)} labels")
        columns = {}
        for label, f in zip(labels, files):
            loaded = load_report(f)
            columns[label] = next(iter(loaded.values()))
        written += emit_report(args.out, **{kind: columns})
    for p in written:
        print(p)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if num_workers() == 1:
        torch.set_num_threads(1)
    try:
        if args.command in ("train", "eval"):
            exp = _experiment(args)
            if args.dump_config:
                sys.stdout.write(dump_config(exp))
                return EXIT_OK
            return cmd_train(args, exp) if args.command == "train" else cmd_eval(args, exp)
        handlers = {"dataset": cmd_dataset, "preprocess": cmd_preprocess, "infer": cmd_infer, "report": cmd_report}
        return handlers[args.command](args)
    except (UsageError, ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, CheckpointError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())
