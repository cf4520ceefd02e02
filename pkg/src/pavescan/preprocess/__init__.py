"""CLAHE, annotation-aware resizing and training augmentations."""

from .augment import (
    AugmentationSpec,
    AugmentParams,
    affine_matrix,
    apply_augmentation,
    apply_params,
    augment_sample,
    image_stream,
    sample_params,
    transform_box,
)
from .clahe import ClaheParams, as_rgb, clahe, rgb_to_luma, tile_mappings
from .resize import PreprocessConfig, prepare_image, resize_image, resize_mask, resize_with_annotations

__all__ = [
    "AugmentParams",
    "AugmentationSpec",
    "ClaheParams",
    "PreprocessConfig",
    "affine_matrix",
    "apply_augmentation",
    "apply_params",
    "as_rgb",
    "augment_sample",
    "clahe",
    "image_stream",
    "prepare_image",
    "resize_image",
    "resize_mask",
    "resize_with_annotations",
    "rgb_to_luma",
    "sample_params",
    "tile_mappings",
    "transform_box",
]
