"""Image loading and preprocessing to fixed-size, normalized 3-channel tensors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import PreprocessError, RoiBoundsError
from .types import ImageSample, RoiBox


@dataclass(frozen=True)
class Normalization:
    """Per-channel (value - mean) / std applied after scaling pixels to [0, 1]."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std entries must be positive, got {self.std}")


IDENTITY_NORM = Normalization(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))

# Published input statistics of the pretrained default backbone.
IMAGENET_NORM = Normalization(mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225))

DEFAULT_TARGET_SIZE = (224, 224)

# Fixed resize interpolation, recorded in run reports for reproducibility.
RESIZE_MODE = "bilinear"


def preprocess_array(
    array: np.ndarray,
    roi: Optional[RoiBox] = None,
    target_size: tuple[int, int] = DEFAULT_TARGET_SIZE,
    normalization: Normalization = IMAGENET_NORM,
) -> torch.Tensor:
    """Preprocess an in-memory image array to a (3, h, w) float32 tensor.

    Accepts HxW grayscale or HxWx3 color arrays. uint8 input is scaled to
    [0, 1]; float input is assumed to already be in [0, 1]. If ``roi`` is
    given the box is cropped first, then the crop is resized to
    ``target_size`` (bilinear; skipped when the size already matches).
    """
    if array.ndim == 2:
        array = np.stack([array, array, array], axis=-1)
    if array.ndim != 3 or array.shape[-1] != 3:
        raise PreprocessError(f"expected HxW or HxWx3 image, got shape {array.shape}")

    height, width = array.shape[0], array.shape[1]
    if roi is not None:
        if not roi.fits_within(width, height):
            raise RoiBoundsError(
                f"ROI {roi.as_list()} does not fit inside a {width}x{height} image"
            )
        array = array[roi.y : roi.y + roi.height, roi.x : roi.x + roi.width]

    if array.dtype == np.uint8:
        values = array.astype(np.float32) / 255.0
    else:
        values = array.astype(np.float32)

    tensor = torch.from_numpy(np.ascontiguousarray(values)).permute(2, 0, 1)

    target_h, target_w = target_size
    if tensor.shape[1] != target_h or tensor.shape[2] != target_w:
        tensor = F.interpolate(
            tensor.unsqueeze(0),
            size=(target_h, target_w),
            mode=RESIZE_MODE,
            align_corners=False,
        ).squeeze(0)

    mean = torch.tensor(normalization.mean, dtype=torch.float32).view(3, 1, 1)
    std = torch.tensor(normalization.std, dtype=torch.float32).view(3, 1, 1)
    tensor = (tensor - mean) / std

    if not torch.isfinite(tensor).all():
        raise PreprocessError("preprocessed tensor contains non-finite values")
    return tensor


def load_image_array(path: str | Path) -> np.ndarray:
    """Decode an image file to a uint8 array (HxW for grayscale, HxWx3 otherwise)."""
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                return np.asarray(img.convert("L"))
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise PreprocessError(f"cannot decode image {path}: {exc}") from exc


def preprocess(
    sample: ImageSample,
    target_size: tuple[int, int] = DEFAULT_TARGET_SIZE,
    normalization: Normalization = IMAGENET_NORM,
) -> torch.Tensor:
    """Load and preprocess one :class:`ImageSample` to a (3, h, w) tensor."""
    array = load_image_array(sample.source_path)
    return preprocess_array(array, roi=sample.roi, target_size=target_size, normalization=normalization)
