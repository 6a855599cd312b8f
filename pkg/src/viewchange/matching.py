"""Tentative correspondence search between a roughly registered image pair.

A grid of anchors in the first image is matched into the second by
normalized cross-correlation, coarse to fine over a box pyramid: the full
search radius is spent at the coarsest level and each finer level only
refines by a few pixels. The output is quasi-dense and outlier
contaminated; epipolar RANSAC cleans it up downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .containers import FlowField, Image
from .errors import FormatError, ShapeError
from .fileio import atomic_write_bytes
from .tensor_ops import to_gray_array

MATCHES_HEADER = "# viewchange-matches v1"


@dataclass(frozen=True)
class MatchConfig:
    grid: int = 8            # anchor spacing in px
    patch: int = 9           # NCC patch side, odd
    levels: int = 3          # pyramid depth
    radius_coarse: int = 8   # search radius at the coarsest level, px
    refine: int = 2          # per-level refinement radius, px
    min_score: float = 0.4   # NCC acceptance threshold

    def __post_init__(self):
        if self.grid < 1 or self.levels < 1 or self.radius_coarse < 0 or self.refine < 0:
            raise ValueError("matcher config values out of range")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch side must be odd and >= 3")


@dataclass(frozen=True)
class Match:
    p: tuple[float, float]   # (x, y) in the first image
    q: tuple[float, float]   # (x, y) in the second image
    score: float             # NCC in [-1, 1]
    inlier: bool = False


@dataclass(frozen=True)
class MatchSet:
    matches: tuple[Match, ...]
    source_dims: tuple[int, int]   # (W, H)

    def __len__(self) -> int:
        return len(self.matches)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """(N, 2) arrays of p and q coordinates."""
        if not self.matches:
            return np.zeros((0, 2)), np.zeros((0, 2))
        p = np.array([m.p for m in self.matches], dtype=np.float64)
        q = np.array([m.q for m in self.matches], dtype=np.float64)
        return p, q

    def inlier_flags(self) -> np.ndarray:
        return np.array([m.inlier for m in self.matches], dtype=bool)

    def with_inliers(self, flags: np.ndarray) -> "MatchSet":
        if len(flags) != len(self.matches):
            raise ShapeError("flag count does not match match count")
        updated = tuple(replace(m, inlier=bool(f)) for m, f in zip(self.matches, flags))
        return MatchSet(updated, self.source_dims)

    def only_inliers(self) -> "MatchSet":
        return MatchSet(tuple(m for m in self.matches if m.inlier), self.source_dims)


def build_pyramid(img: Image, levels: int) -> list[np.ndarray]:
    """Grayscale box pyramid; level k is level k-1 box-filtered and halved."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if img.width < 2 ** (levels - 1) or img.height < 2 ** (levels - 1):
        raise ValueError(
            f"{img.width}x{img.height} image too small for {levels} pyramid levels"
        )
    out = [to_gray_array(img)]
    for _ in range(levels - 1):
        prev = out[-1]
        h2, w2 = prev.shape[0] // 2, prev.shape[1] // 2
        blocks = prev[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
        out.append(blocks.mean(axis=(1, 3)))
    return out


def ncc(patch_a: np.ndarray, patch_b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation; 0 when either patch is constant."""
    if patch_a.shape != patch_b.shape:
        raise ShapeError(f"patch dims {patch_a.shape} vs {patch_b.shape}")
    a = patch_a.astype(np.float64) - patch_a.mean()
    b = patch_b.astype(np.float64) - patch_b.mean()
    na = np.sqrt((a * a).sum())
    nb = np.sqrt((b * b).sum())
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip((a * b).sum() / (na * nb), -1.0, 1.0))


def _padded_windows(level: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, patch, patch) view of replicate-padded patches centered per pixel."""
    r = patch // 2
    padded = np.pad(level, r, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, (patch, patch))


def _best_displacement(
    win_a: np.ndarray,
    win_b: np.ndarray,
    ax: int,
    ay: int,
    cx: int,
    cy: int,
    radius: int,
    dims: tuple[int, int],
) -> tuple[int, int, float]:
    """Best NCC displacement for the anchor patch around (cx, cy) in b.

    Ties are broken by smaller displacement magnitude, then lexicographic
    (dx, dy); candidates outside the level are skipped.
    """
    w, h = dims
    a = win_a[ay, ax] - win_a[ay, ax].mean()
    na = np.sqrt((a * a).sum())

    x_lo, x_hi = max(cx - radius, 0), min(cx + radius, w - 1)
    y_lo, y_hi = max(cy - radius, 0), min(cy + radius, h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return 0, 0, 0.0
    block = win_b[y_lo : y_hi + 1, x_lo : x_hi + 1]
    means = block.mean(axis=(2, 3), keepdims=True)
    centered = block - means
    nb = np.sqrt((centered * centered).sum(axis=(2, 3)))
    if na < 1e-12:
        scores = np.zeros(nb.shape)
    else:
        corr = np.einsum("yxij,ij->yx", centered, a)
        denom = na * nb
        scores = np.where(nb < 1e-12, 0.0, corr / np.where(denom < 1e-24, 1.0, denom))
    scores = np.clip(scores, -1.0, 1.0)

    ys, xs = np.unravel_index(np.argsort(scores, axis=None)[::-1], scores.shape)
    best = float(scores[ys[0], xs[0]])
    cand = [
        (xs[i] + x_lo - cx, ys[i] + y_lo - cy)
        for i in range(len(ys))
        if scores[ys[i], xs[i]] >= best - 1e-12
    ]
    cand.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
    dx, dy = cand[0]
    return int(dx), int(dy), best


def match_images(a: Image, b: Image, cfg: MatchConfig = MatchConfig()) -> MatchSet:
    """Coarse-to-fine NCC matching on a regular anchor grid.

    Deterministic: identical inputs and config give an identical MatchSet.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(
            f"image dims differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    pyr_a = build_pyramid(a, cfg.levels)
    pyr_b = build_pyramid(b, cfg.levels)
    wins_a = [_padded_windows(lvl, cfg.patch) for lvl in pyr_a]
    wins_b = [_padded_windows(lvl, cfg.patch) for lvl in pyr_b]

    matches: list[Match] = []
    for y in range(0, a.height, cfg.grid):
        for x in range(0, a.width, cfg.grid):
            dx = dy = 0
            score = 0.0
            for level in range(cfg.levels - 1, -1, -1):
                scale = 2 ** level
                lh, lw = pyr_a[level].shape
                ax = min(int(round(x / scale)), lw - 1)
                ay = min(int(round(y / scale)), lh - 1)
                if level == cfg.levels - 1:
                    cx, cy = ax, ay
                    radius = cfg.radius_coarse
                else:
                    dx, dy = 2 * dx, 2 * dy
                    cx, cy = ax + dx, ay + dy
                    radius = cfg.refine
                step_dx, step_dy, score = _best_displacement(
                    wins_a[level], wins_b[level], ax, ay, cx, cy, radius, (lw, lh)
                )
                dx = (cx + step_dx) - ax
                dy = (cy + step_dy) - ay
            qx, qy = x + dx, y + dy
            if score >= cfg.min_score and 0 <= qx < a.width and 0 <= qy < a.height:
                matches.append(Match((float(x), float(y)), (float(qx), float(qy)), score))
    return MatchSet(tuple(matches), (a.width, a.height))


# ---------------------------------------------------------------------------
# Line-oriented serialization: `x1 y1 x2 y2 score inlier`
# ---------------------------------------------------------------------------

def matches_to_text(ms: MatchSet) -> str:
    lines = [f"{MATCHES_HEADER} {ms.source_dims[0]} {ms.source_dims[1]}"]
    for m in ms.matches:
        lines.append(
            f"{m.p[0]:.6g} {m.p[1]:.6g} {m.q[0]:.6g} {m.q[1]:.6g} "
            f"{m.score:.6f} {int(m.inlier)}"
        )
    return "\n".join(lines) + "\n"


def write_matches(ms: MatchSet, path: str | Path) -> None:
    atomic_write_bytes(path, matches_to_text(ms).encode())


def read_matches(path: str | Path) -> MatchSet:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(MATCHES_HEADER):
        raise FormatError(f"{path}: missing '{MATCHES_HEADER}' header")
    head = lines[0].split()
    try:
        w, h = int(head[-2]), int(head[-1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header {lines[0]!r}") from exc
    matches = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 6:
            raise FormatError(f"{path}: malformed match line {ln!r}")
        x1, y1, x2, y2, score = map(float, parts[:5])
        matches.append(Match((x1, y1), (x2, y2), score, bool(int(parts[5]))))
    return MatchSet(tuple(matches), (w, h))
