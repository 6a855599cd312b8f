"""Core value types: images, flow fields, change masks and 4-D tensors.

All containers are immutable after construction (their backing arrays are
marked read-only), so they can be shared freely across threads. Operations
on them live in :mod:`viewchange.tensor_ops` and return fresh containers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

S_MAX_DEFAULT = 255.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Image:
    """8-bit image, (H, W, C) row-major interleaved, C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, 1|3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"image samples must be uint8, got {arr.dtype}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement in pixels.

    ``u`` is positive rightward, ``v`` positive downward; both are (H, W)
    float32 so that .flo round trips are bit exact.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeError(f"flow components must share an (H, W) shape, got {u.shape} vs {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "u", _freeze(u))
        object.__setattr__(self, "v", _freeze(v))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


@dataclass(frozen=True)
class ChangeMask:
    """Grayscale change target with values in [0, s_max]."""

    values: np.ndarray
    s_max: float = S_MAX_DEFAULT

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {arr.shape}")
        if self.s_max <= 0:
            raise ValueError("s_max must be positive")
        if not np.isfinite(arr).all():
            raise ValueError("mask contains non-finite values")
        if arr.min() < 0 or arr.max() > self.s_max:
            raise ValueError("mask values must lie in [0, s_max]")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Tensor4:
    """Dense (batch, channels, height, width) tensor of 32- or 64-bit reals.

    Training paths use float32; float64 is for finite-difference gradient
    checks. ``data`` is row major and read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (B, C, H, W), got {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("tensor contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype


@dataclass(frozen=True)
class ImagePair:
    """Two temporally separated views of one scene, equal dims."""

    t0: Image
    t1: Image

    def __post_init__(self):
        if (self.t0.width, self.t0.height) != (self.t1.width, self.t1.height):
            raise ShapeError(
                f"pair dims differ: {self.t0.width}x{self.t0.height} vs "
                f"{self.t1.width}x{self.t1.height}"
            )

    @property
    def width(self) -> int:
        return self.t0.width

    @property
    def height(self) -> int:
        return self.t0.height


def as_nchw(x) -> np.ndarray:
    """Return the (B, C, H, W) array behind a Tensor4 or pass arrays through."""
    if isinstance(x, Tensor4):
        return x.data
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D array, got {arr.shape}")
    return arr
