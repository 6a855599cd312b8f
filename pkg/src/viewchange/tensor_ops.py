"""Pure operations on the core containers.

Everything here is a pure function; inputs are never mutated. Array-level
helpers (suffix ``_array``) operate on plain ndarrays and are reused by the
heavier numerical modules.
"""

from __future__ import annotations

import numpy as np

from .containers import ChangeMask, FlowField, Image, Tensor4, as_nchw
from .errors import ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# Normalization and channel stacking
# ---------------------------------------------------------------------------

def normalize_image(img: Image, dtype=np.float32) -> Tensor4:
    """Map 8-bit samples affinely onto [-1, 1]: s / 127.5 - 1."""
    arr = img.data.astype(dtype) / dtype(127.5) - dtype(1.0)
    return Tensor4(arr.transpose(2, 0, 1)[None])


def denormalize_image(t: Tensor4) -> np.ndarray:
    """Inverse of :func:`normalize_image`; returns float samples in [0, 255]."""
    return (t.data + t.dtype.type(1.0)) * t.dtype.type(127.5)


def normalize_flow(flow: FlowField, d_max: float = 64.0, dtype=np.float32) -> Tensor4:
    """Clamp components to [-d_max, d_max], then scale into [-1, 1]."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    u = np.clip(flow.u.astype(dtype), -d_max, d_max) / dtype(d_max)
    v = np.clip(flow.v.astype(dtype), -d_max, d_max) / dtype(d_max)
    return Tensor4(np.stack([u, v])[None])


def concat_inputs(a: Tensor4, b: Tensor4, f: Tensor4 | None = None) -> Tensor4:
    """Stack input channels in the fixed order (first image, second image, flow).

    With ``f`` absent the result has 6 channels (image-pair-only mode),
    otherwise 8.
    """
    parts = [a, b] if f is None else [a, b, f]
    dims = {(p.batch, p.height, p.width) for p in parts}
    if len(dims) != 1:
        raise ShapeError(f"inputs disagree on batch/spatial dims: {sorted(dims)}")
    return Tensor4(np.concatenate([p.data for p in parts], axis=1))


# ---------------------------------------------------------------------------
# Elementwise / structural tensor plumbing
# ---------------------------------------------------------------------------

def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.dims != b.dims:
        raise ShapeError(f"dims {a.dims} vs {b.dims}")
    return Tensor4(a.data + b.data)


def mul(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.dims != b.dims:
        raise ShapeError(f"dims {a.dims} vs {b.dims}")
    return Tensor4(a.data * b.data)


def pad(t: Tensor4, top: int, bottom: int, left: int, right: int, value: float = 0.0) -> Tensor4:
    if min(top, bottom, left, right) < 0:
        raise ValueError("pad amounts must be non-negative")
    out = np.pad(t.data, ((0, 0), (0, 0), (top, bottom), (left, right)), constant_values=value)
    return Tensor4(out)


def crop(t: Tensor4, y: int, x: int, height: int, width: int) -> Tensor4:
    if y < 0 or x < 0 or y + height > t.height or x + width > t.width:
        raise ShapeError(f"crop ({y},{x},{height},{width}) exceeds {t.dims}")
    return Tensor4(t.data[:, :, y : y + height, x : x + width].copy())


def bilinear_resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (H, W) or (H, W, C) array.

    Sample positions follow the half-pixel convention, so resizing to the
    input size is the identity. Integer inputs come back as float64.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dims must be positive")
    squeeze = arr.ndim == 2
    work = arr[:, :, None] if squeeze else arr
    work = work.astype(np.float64, copy=False)
    h, w = work.shape[:2]

    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]

    top = work[y0][:, x0] * (1 - wx) + work[y0][:, x1] * wx
    bot = work[y1][:, x0] * (1 - wx) + work[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    if squeeze:
        out = out[:, :, 0]
    return out.astype(arr.dtype, copy=False) if arr.dtype in (np.float32, np.float64) else out


def bilinear_resize(t: Tensor4, out_h: int, out_w: int) -> Tensor4:
    planes = [
        bilinear_resize_array(t.data[b, c], out_h, out_w)
        for b in range(t.batch)
        for c in range(t.channels)
    ]
    out = np.stack(planes).reshape(t.batch, t.channels, out_h, out_w)
    return Tensor4(out.astype(t.dtype, copy=False))


def bilinear_sample_array(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an (H, W) array at float coordinates.

    Sample positions are clamped to the image border (replicate padding
    semantics for out-of-range reads).
    """
    h, w = arr.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def rotate90_array(arr: np.ndarray, turns: int = 1) -> np.ndarray:
    """Rotate an (H, W, ...) array by ``turns`` quarter turns.

    The convention is fixed so that a displacement vector (u, v) at a pixel
    maps to (-v, u) at the rotated pixel after one turn; four turns are the
    exact identity.
    """
    return np.rot90(arr, k=-(turns % 4), axes=(0, 1)).copy()


def rotate90(t: Tensor4, turns: int = 1) -> Tensor4:
    out = np.rot90(t.data, k=-(turns % 4), axes=(2, 3)).copy()
    return Tensor4(out)


def rotate_flow_90(flow: FlowField, turns: int = 1) -> FlowField:
    """Rotate a flow field as a vector field: positions and components."""
    u, v = flow.u, flow.v
    for _ in range(turns % 4):
        u_r = rotate90_array(u)
        v_r = rotate90_array(v)
        u, v = -v_r, u_r
    return FlowField(u, v)


def to_gray_array(img: Image) -> np.ndarray:
    """Luma conversion (0.299 / 0.587 / 0.114) to a float64 (H, W) array in [0, 1]."""
    arr = img.data.astype(np.float64) / 255.0
    if img.channels == 1:
        return arr[:, :, 0]
    w = np.asarray(LUMA_WEIGHTS)
    return arr @ w


# ---------------------------------------------------------------------------
# Flow color coding
# ---------------------------------------------------------------------------

def flow_to_color(flow: FlowField, max_mag: float | None = None) -> Image:
    """Render a flow field on the hue wheel: hue = atan2(v, u), saturation
    proportional to magnitude (capped at ``max_mag``), zero flow white.

    ``max_mag=None`` picks the 99th-percentile magnitude automatically.
    """
    mag = flow.magnitude()
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99.0))
        if max_mag <= 0:
            max_mag = 1.0
    elif max_mag <= 0:
        raise ValueError("max_mag must be positive")

    ang = np.arctan2(flow.v.astype(np.float64), flow.u.astype(np.float64))
    hue = (ang / (2.0 * np.pi)) % 1.0
    sat = np.minimum(mag / max_mag, 1.0)

    # Vectorized HSV -> RGB with value fixed at 1.
    h6 = hue * 6.0
    sector = np.floor(h6).astype(int) % 6
    frac = h6 - np.floor(h6)
    p = 1.0 - sat
    q = 1.0 - sat * frac
    t = 1.0 - sat * (1.0 - frac)
    one = np.ones_like(sat)
    r = np.choose(sector, [one, q, p, p, t, one])
    g = np.choose(sector, [t, one, one, q, p, p])
    b = np.choose(sector, [p, p, t, one, one, q])
    rgb = np.stack([r, g, b], axis=-1)
    return Image(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8))
