import numpy as np
import pytest
import torch

from mmfal import (
    IDENTITY_NORM,
    IMAGENET_NORM,
    ImageSample,
    ModalityKind,
    Normalization,
    RoiBox,
    preprocess,
    preprocess_array,
)
from mmfal.errors import PreprocessError, RoiBoundsError

from conftest import write_png


def test_grayscale_replicates_three_identical_channels(tmp_path):
    rng = np.random.default_rng(0)
    array = rng.integers(0, 256, size=(512, 512), dtype=np.uint8)
    path = tmp_path / "gray.png"
    write_png(path, array)
    sample = ImageSample("s", "p", ModalityKind.LSTE, path, roi=RoiBox(100, 100, 224, 224))
    tensor = preprocess(sample, (224, 224), IDENTITY_NORM)
    assert tensor.shape == (3, 224, 224)
    assert torch.equal(tensor[0], tensor[1])
    assert torch.equal(tensor[1], tensor[2])
    # crop content matches the ROI region exactly (no resize happened)
    expected = torch.from_numpy(array[100:324, 100:324].astype(np.float32) / 255.0)
    assert torch.equal(tensor[0], expected)


def test_identity_resize_preserves_pixels(tmp_path):
    rng = np.random.default_rng(1)
    array = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    path = tmp_path / "rgb.png"
    write_png(path, array)
    sample = ImageSample("s", "p", ModalityKind.LUS, path)
    tensor = preprocess(sample, (224, 224), IDENTITY_NORM)
    expected = torch.from_numpy(array.astype(np.float32) / 255.0).permute(2, 0, 1)
    assert torch.equal(tensor, expected)


def test_constant_image_normalization():
    v, m, s = 0.6, 0.4, 0.5
    array = np.full((16, 16, 3), v, dtype=np.float32)
    norm = Normalization(mean=(m, m, m), std=(s, s, s))
    tensor = preprocess_array(array, target_size=(8, 8), normalization=norm)
    assert torch.allclose(tensor, torch.full((3, 8, 8), (v - m) / s), atol=1e-6)


def test_roi_outside_image_raises(tmp_path):
    path = tmp_path / "small.png"
    write_png(path, np.zeros((64, 64), dtype=np.uint8))
    sample = ImageSample("s", "p", ModalityKind.LSTE, path, roi=RoiBox(10, 10, 60, 60))
    with pytest.raises(RoiBoundsError):
        preprocess(sample)


def test_unreadable_image_raises(tmp_path):
    path = tmp_path / "corrupt.png"
    path.write_bytes(b"this is not a png")
    sample = ImageSample("s", "p", ModalityKind.LUS, path)
    with pytest.raises(PreprocessError):
        preprocess(sample)


def test_missing_file_raises(tmp_path):
    sample = ImageSample("s", "p", ModalityKind.LUS, tmp_path / "nope.png")
    with pytest.raises(FileNotFoundError):
        preprocess(sample)


def test_shape_idempotence_with_identity_norm():
    rng = np.random.default_rng(2)
    array = rng.random((32, 32, 3)).astype(np.float32)
    once = preprocess_array(array, target_size=(32, 32), normalization=IDENTITY_NORM)
    twice = preprocess_array(
        once.permute(1, 2, 0).numpy(), target_size=(32, 32), normalization=IDENTITY_NORM
    )
    assert once.shape == twice.shape
    assert torch.equal(once, twice)


def test_resize_changes_shape_only():
    array = np.full((100, 60, 3), 0.25, dtype=np.float32)
    tensor = preprocess_array(array, target_size=(32, 32), normalization=IDENTITY_NORM)
    assert tensor.shape == (3, 32, 32)
    # constant image stays constant under bilinear resize
    assert torch.allclose(tensor, torch.full((3, 32, 32), 0.25), atol=1e-6)


def test_default_normalization_is_backbone_published_stats():
    assert IMAGENET_NORM.mean == (0.485, 0.456, 0.406)
    assert IMAGENET_NORM.std == (0.229, 0.224, 0.225)
