"""File formats: 8-bit PNG for images and masks, Middlebury .flo for flow.

Writers are atomic: content goes to a temporary file in the target
directory and is renamed into place only on success.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .containers import ChangeMask, FlowField, Image
from .errors import FormatError

FLO_MAGIC = 202021.25


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_png(path: str | Path) -> Image:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.uint8)
    return Image(arr)


def write_png(img: Image, path: str | Path) -> None:
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    pil = PILImage.fromarray(arr, mode="L" if img.channels == 1 else "RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_mask_png(path: str | Path, s_max: float = 255.0) -> ChangeMask:
    img = read_png(path)
    gray = img.data[:, :, 0] if img.channels == 1 else np.rint(
        img.data.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    ).astype(np.uint8)
    return ChangeMask(gray.astype(np.float32) * np.float32(s_max / 255.0), s_max=s_max)


def write_mask_png(mask: ChangeMask, path: str | Path) -> None:
    scaled = np.rint(mask.values.astype(np.float64) * (255.0 / mask.s_max))
    write_png(Image(np.clip(scaled, 0, 255).astype(np.uint8)), path)


def flo_bytes(flow: FlowField) -> bytes:
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    interleaved = np.empty((flow.height, flow.width, 2), dtype="<f4")
    interleaved[:, :, 0] = flow.u
    interleaved[:, :, 1] = flow.v
    return header + interleaved.tobytes()


def write_flo(flow: FlowField, path: str | Path) -> None:
    atomic_write_bytes(path, flo_bytes(flow))


def read_flo(path: str | Path) -> FlowField:
    raw = Path(path).read_bytes()
    return parse_flo(raw, name=str(path))


def parse_flo(raw: bytes, name: str = "<bytes>") -> FlowField:
    if len(raw) < 12:
        raise FormatError(f"{name}: truncated .flo header")
    magic, width, height = struct.unpack_from("<fii", raw, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{name}: bad .flo magic {magic!r}")
    if width < 0 or height < 0:
        raise FormatError(f"{name}: negative dims {width}x{height}")
    expect = 12 + 8 * width * height
    if len(raw) != expect:
        raise FormatError(f"{name}: payload is {len(raw)} bytes, expected {expect}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width, 2)
    return FlowField(data[:, :, 0], data[:, :, 1])
