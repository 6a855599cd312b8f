import numpy as np
import pytest

from viewchange.containers import Image


def smooth_texture(seed: int, width: int, height: int, channels: int = 3) -> Image:
    """Band-limited random texture with plenty of NCC-friendly structure."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.full((height, width, channels), 0.5)
    for _ in range(8):
        lam = rng.uniform(6.0, 40.0)
        ang = rng.uniform(0, np.pi)
        ph = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi / lam * (np.cos(ang) * xs + np.sin(ang) * ys) + ph)
        img += wave[:, :, None] * rng.uniform(0.03, 0.09, size=channels)
    return Image(np.clip(np.rint(img * 255), 0, 255).astype(np.uint8))


def shifted_copy(img: Image, dx: int, dy: int) -> Image:
    """img translated by (dx, dy) with edge replication (no wraparound)."""
    arr = img.data
    h, w = arr.shape[:2]
    pad = max(abs(dx), abs(dy))
    padded = np.pad(arr, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return Image(padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w])


def random_rotation(rng: np.random.Generator, scale: float = 0.3) -> np.ndarray:
    w = rng.normal(size=3) * scale
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
