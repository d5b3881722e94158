"""Input checking and conversion shared by the estimator, CLI and model."""

from __future__ import annotations

import numpy as np
import torch

from .backbone import MIN_SIDE

# per-channel normalization applied to [0, 1] images
MEAN = (0.5, 0.5, 0.5)
STD = (0.5, 0.5, 0.5)


def to_float_image(image) -> np.ndarray:
    """(H, W, 3) float image in [0, 1] from uint8, float, grayscale or PIL input."""
    if hasattr(image, "convert"):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    arr = arr[..., :3]
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
        if arr.min() < 0 or arr.max() > 1:
            raise ValueError("float images must lie in [0, 1]")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if min(arr.shape[:2]) < MIN_SIDE:
        raise ValueError(f"image side must be >= {MIN_SIDE}px, got {arr.shape[:2]}")
    return arr


def check_image(image) -> torch.Tensor:
    """Normalized (3, H, W) float32 tensor; tensors already in that layout pass through."""
    if torch.is_tensor(image) and image.dim() == 3 and image.shape[0] == 3:
        if min(image.shape[1:]) < MIN_SIDE:
            raise ValueError(f"image side must be >= {MIN_SIDE}px")
        return image
    arr = to_float_image(image)
    t = torch.from_numpy(arr).permute(2, 0, 1).float()
    mean = torch.tensor(MEAN).view(3, 1, 1)
    std = torch.tensor(STD).view(3, 1, 1)
    return (t - mean) / std


def check_images(X) -> list:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("no images given")
    return X
