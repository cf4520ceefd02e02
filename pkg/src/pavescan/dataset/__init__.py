"""Taxonomy, annotation formats, manifest, splitting, statistics and synthetic data."""

from .records import (
    BoxAnnotation,
    DatasetError,
    DatasetManifest,
    ImageRecord,
    Sample,
    ingest_manifest,
    load_sample,
    parse_box_file,
    read_image,
    read_mask,
    write_box_file,
    write_manifest,
    write_mask,
)
from .split import ClassStats, class_stats, stratified_split
from .synth import SyntheticScene, generate_synthetic, synthesize_scene, tight_box
from .taxonomy import BACKGROUND_ID, CLASSES, NUM_CLASSES, NUM_MASK_CLASSES, ClassTable, DistressClass

__all__ = [
    "BACKGROUND_ID",
    "BoxAnnotation",
    "CLASSES",
    "ClassStats",
    "ClassTable",
    "DatasetError",
    "DatasetManifest",
    "DistressClass",
    "ImageRecord",
    "NUM_CLASSES",
    "NUM_MASK_CLASSES",
    "Sample",
    "SyntheticScene",
    "class_stats",
    "generate_synthetic",
    "ingest_manifest",
    "load_sample",
    "parse_box_file",
    "read_image",
    "read_mask",
    "stratified_split",
    "synthesize_scene",
    "tight_box",
    "write_box_file",
    "write_manifest",
    "write_mask",
]
