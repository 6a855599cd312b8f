"""Input coercion helpers shared by the estimator and CLI layers."""

from __future__ import annotations

import numpy as np

from .containers import ChangeMask, Image


def as_image(value) -> Image:
    """Accept an Image or an (H, W[, C]) uint8-compatible array."""
    if isinstance(value, Image):
        return value
    arr = np.asarray(value)
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and arr.max(initial=0.0) <= 1.0:
            arr = np.rint(arr * 255.0)
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return Image(arr)


def as_mask(value, s_max: float = 255.0) -> ChangeMask:
    """Accept a ChangeMask, a boolean array, or a grayscale array."""
    if isinstance(value, ChangeMask):
        return value
    arr = np.asarray(value)
    if arr.dtype == bool:
        return ChangeMask(arr.astype(np.float32) * np.float32(s_max), s_max=s_max)
    return ChangeMask(arr.astype(np.float32), s_max=s_max)
