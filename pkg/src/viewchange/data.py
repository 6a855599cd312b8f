"""Dataset ingestion, patch extraction, fold splits and synthetic scenes.

The synthetic generator is the desk-scale ground-truth source: it renders
an analytic scene twice, the second view warped by a smooth seeded
disparity field (recorded as the true flow) with hard-edged texture shapes
inserted or deleted (recorded as the exact change mask).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .containers import ChangeMask, FlowField, Image, ImagePair, Tensor4
from .errors import IngestionError, ShapeError
from .fileio import atomic_write_bytes, read_flo, read_mask_png, read_png, write_flo, write_mask_png, write_png
from .tensor_ops import (
    bilinear_resize_array,
    bilinear_sample_array,
    concat_inputs,
    normalize_flow,
    normalize_image,
    rotate90_array,
    rotate_flow_90,
)

SUBSETS = ("TSUNAMI", "GSV", "SYNTH")


@dataclass(frozen=True)
class ScenePair:
    id: str
    image_t0: Image
    image_t1: Image
    gt_mask: ChangeMask
    subset: str
    flow: FlowField | None = None

    def __post_init__(self):
        dims = {
            (self.image_t0.width, self.image_t0.height),
            (self.image_t1.width, self.image_t1.height),
            (self.gt_mask.width, self.gt_mask.height),
        }
        if self.flow is not None:
            dims.add((self.flow.width, self.flow.height))
        if len(dims) != 1:
            raise ShapeError(f"pair {self.id}: inconsistent dims {sorted(dims)}")

    @property
    def pair(self) -> ImagePair:
        return ImagePair(self.image_t0, self.image_t1)


@dataclass(frozen=True)
class PatchSample:
    x: Tensor4                      # 1 x {6,8} x out x out normalized input
    target: ChangeMask              # out x out, [0, s_max]
    pair_id: str
    crop_x: int
    crop_y: int
    rotation: int                   # quarter turns

    @property
    def channels(self) -> int:
        return self.x.channels


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict[str, int]     # pair id -> fold index

    def test_ids(self, fold: int) -> list[str]:
        return sorted(pid for pid, f in self.assignments.items() if f == fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(pid for pid, f in self.assignments.items() if f != fold)


# ---------------------------------------------------------------------------
# PCD-style directory ingestion: <root>/<subset>/{t0,t1,mask}/<id>.png
# ---------------------------------------------------------------------------

def load_pcd(root_dir: str | Path, with_flow: bool = False) -> list[ScenePair]:
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    pairs: list[ScenePair] = []
    for subset_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        subset = subset_dir.name
        t0_dir, t1_dir, mask_dir = (subset_dir / n for n in ("t0", "t1", "mask"))
        if not t0_dir.is_dir():
            continue
        for t0_path in sorted(t0_dir.glob("*.png")):
            pid = t0_path.stem
            t1_path = t1_dir / t0_path.name
            mask_path = mask_dir / t0_path.name
            missing = [str(p) for p in (t1_path, mask_path) if not p.is_file()]
            if missing:
                raise IngestionError(f"pair {subset}/{pid}: missing {', '.join(missing)}")
            flow = None
            if with_flow:
                flow_path = subset_dir / "flow" / f"{pid}.flo"
                if not flow_path.is_file():
                    raise IngestionError(f"pair {subset}/{pid}: missing {flow_path}")
                flow = read_flo(flow_path)
            pairs.append(
                ScenePair(
                    id=f"{subset}/{pid}",
                    image_t0=read_png(t0_path),
                    image_t1=read_png(t1_path),
                    gt_mask=read_mask_png(mask_path),
                    subset=subset,
                    flow=flow,
                )
            )
    if not pairs:
        raise IngestionError(f"{root}: no scene pairs found")
    return pairs


def write_scene(pair: ScenePair, root_dir: str | Path) -> None:
    """Write one pair into the directory layout (flow included when present)."""
    root = Path(root_dir)
    pid = pair.id.split("/")[-1]
    for sub in ("t0", "t1", "mask") + (("flow",) if pair.flow is not None else ()):
        (root / pair.subset / sub).mkdir(parents=True, exist_ok=True)
    write_png(pair.image_t0, root / pair.subset / "t0" / f"{pid}.png")
    write_png(pair.image_t1, root / pair.subset / "t1" / f"{pid}.png")
    write_mask_png(pair.gt_mask, root / pair.subset / "mask" / f"{pid}.png")
    if pair.flow is not None:
        write_flo(pair.flow, root / pair.subset / "flow" / f"{pid}.flo")


# ---------------------------------------------------------------------------
# Patch pipeline
# ---------------------------------------------------------------------------

def patch_positions(width: int, height: int, patch: int, stride: int) -> list[tuple[int, int]]:
    """Sliding crop origins: 0, stride, ... up to the last full fit per axis."""
    if width < patch or height < patch:
        raise ValueError(f"{width}x{height} image narrower than patch {patch}")
    xs = range(0, width - patch + 1, stride)
    ys = range(0, height - patch + 1, stride)
    return [(x, y) for y in ys for x in xs]


def _crop_resize_channels(
    pair: ScenePair, x: int, y: int, patch: int, out: int, use_flow: bool, d_max: float
) -> tuple[Tensor4, ChangeMask]:
    sl = np.s_[y : y + patch, x : x + patch]
    t0 = bilinear_resize_array(pair.image_t0.data[sl], out, out)
    t1 = bilinear_resize_array(pair.image_t1.data[sl], out, out)
    a = normalize_image(Image(np.clip(np.rint(t0), 0, 255).astype(np.uint8)))
    b = normalize_image(Image(np.clip(np.rint(t1), 0, 255).astype(np.uint8)))
    f = None
    if use_flow:
        if pair.flow is None:
            raise ValueError(f"pair {pair.id} has no flow but 8-channel input requested")
        zoom = out / patch
        fu = bilinear_resize_array(pair.flow.u[sl], out, out) * zoom
        fv = bilinear_resize_array(pair.flow.v[sl], out, out) * zoom
        f = normalize_flow(FlowField(fu, fv), d_max=d_max)
    mask = bilinear_resize_array(pair.gt_mask.values[sl], out, out)
    target = ChangeMask(np.clip(mask, 0.0, pair.gt_mask.s_max), s_max=pair.gt_mask.s_max)
    return concat_inputs(a, b, f), target


def extract_patches(
    pair: ScenePair,
    patch: int = 224,
    stride: int = 56,
    out: int = 256,
    use_flow: bool = True,
    d_max: float = 64.0,
) -> list[PatchSample]:
    """Slide a patch-sized crop over the pair and resize each crop to ``out``.

    Crops of the flow are resized like the images, with the displacement
    values scaled by the zoom factor so they stay in output-pixel units.
    The mask is resized bilinearly and kept continuous.
    """
    samples = []
    for x, y in patch_positions(pair.image_t0.width, pair.image_t0.height, patch, stride):
        inputs, target = _crop_resize_channels(pair, x, y, patch, out, use_flow, d_max)
        samples.append(
            PatchSample(x=inputs, target=target, pair_id=pair.id, crop_x=x, crop_y=y, rotation=0)
        )
    return samples


def augment_rotations(sample: PatchSample) -> list[PatchSample]:
    """The four quarter-turn rotations of a square sample.

    Image channels rotate as scalars; flow channels rotate as vectors, so a
    quarter turn maps (u, v) to (-v, u) at the rotated pixel. The 0-turn
    entry is the sample itself.
    """
    if sample.x.height != sample.x.width:
        raise ShapeError("rotation augmentation needs square samples")
    out = [sample]
    arr = sample.x.data[0]
    has_flow = sample.channels == 8
    for turns in (1, 2, 3):
        imgs = np.stack([rotate90_array(arr[c], turns) for c in range(6)])
        if has_flow:
            ff = rotate_flow_90(FlowField(arr[6], arr[7]), turns)
            chans = np.concatenate([imgs, np.stack([ff.u, ff.v])])
        else:
            chans = imgs
        target = ChangeMask(
            rotate90_array(sample.target.values, turns), s_max=sample.target.s_max
        )
        out.append(replace(sample, x=Tensor4(chans[None]), target=target, rotation=turns))
    return out


def make_folds(pairs: list[ScenePair], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle within each subset, then round-robin fold assignment."""
    assignments: dict[str, int] = {}
    by_subset: dict[str, list[str]] = {}
    for p in pairs:
        by_subset.setdefault(p.subset, []).append(p.id)
    for subset in sorted(by_subset):
        ids = sorted(by_subset[subset])
        if len(ids) < k:
            raise ValueError(f"subset {subset} has {len(ids)} pairs, fewer than k={k}")
        order = np.random.default_rng(
            [seed, zlib.crc32(subset.encode())]
        ).permutation(len(ids))
        for pos, idx in enumerate(order):
            assignments[ids[idx]] = pos % k
    return FoldPlan(k=k, assignments=assignments)


def write_fold_plan(plan: FoldPlan, path: str | Path) -> None:
    lines = ["pair_id,fold"] + [f"{pid},{plan.assignments[pid]}" for pid in sorted(plan.assignments)]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def read_fold_plan(path: str | Path) -> FoldPlan:
    lines = Path(path).read_text().splitlines()
    assignments = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        pid, fold = ln.rsplit(",", 1)
        assignments[pid] = int(fold)
    return FoldPlan(k=max(assignments.values()) + 1, assignments=assignments)


# ---------------------------------------------------------------------------
# Synthetic scene generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    width: int = 128
    height: int = 128
    texture_waves: int = 6            # background gratings per channel
    bump_count: tuple[int, int] = (2, 5)   # persistent soft blobs
    shift_mag: float = 8.0            # peak disparity in px
    vertical_ratio: float = 0.25      # vertical disparity relative to shift_mag
    change_fraction: float = 0.15     # target changed-pixel fraction
    jitter: float = 0.0               # photometric gain jitter amplitude

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas dims must be positive")
        if not 0.0 <= self.change_fraction <= 1.0:
            raise ValueError("change_fraction must lie in [0, 1]")
        if self.shift_mag < 0:
            raise ValueError("shift_mag must be non-negative")


class _Scene:
    """Analytic scene: low-frequency gratings plus Gaussian color bumps.

    Everything is evaluable at arbitrary float coordinates, so both views
    render without resampling error; only change shapes have hard edges.
    """

    def __init__(self, rng: np.random.Generator, cfg: SynthConfig):
        n = cfg.texture_waves
        self.base = rng.uniform(0.35, 0.65, size=3)
        wavelens = rng.uniform(16.0, 80.0, size=n)
        angles = rng.uniform(0.0, np.pi, size=n)
        self.freq = np.stack(
            [np.cos(angles) / wavelens, np.sin(angles) / wavelens], axis=1
        ) * (2.0 * np.pi)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
        self.amp = rng.uniform(0.02, 0.08, size=(n, 3))

        n_bumps = rng.integers(cfg.bump_count[0], cfg.bump_count[1] + 1)
        self.bump_pos = rng.uniform(0.0, 1.0, size=(n_bumps, 2)) * [cfg.width, cfg.height]
        self.bump_sigma = rng.uniform(4.0, 10.0, size=n_bumps)
        self.bump_amp = rng.uniform(-0.25, 0.25, size=(n_bumps, 3))

    def eval(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.base, xs.shape + (3,)).copy()
        for k in range(len(self.phase)):
            wave = np.cos(self.freq[k, 0] * xs + self.freq[k, 1] * ys + self.phase[k])
            out += wave[..., None] * self.amp[k]
        for j in range(len(self.bump_sigma)):
            r2 = (xs - self.bump_pos[j, 0]) ** 2 + (ys - self.bump_pos[j, 1]) ** 2
            out += np.exp(-r2 / (2.0 * self.bump_sigma[j] ** 2))[..., None] * self.bump_amp[j]
        return np.clip(out, 0.0, 1.0)


def _disparity(rng: np.random.Generator, cfg: SynthConfig):
    """Smooth analytic displacement field with peak magnitude shift_mag.

    Wavelengths are kept long relative to the magnitude so the warp is
    invertible by fixed-point iteration.
    """
    if cfg.shift_mag == 0.0:
        return lambda xs, ys: (np.zeros_like(xs), np.zeros_like(ys))
    lam = max(4.0 * np.pi * cfg.shift_mag, 2.0 * max(cfg.width, cfg.height))
    fu = rng.uniform(0.6, 1.0) * 2.0 * np.pi / lam
    fv = rng.uniform(0.6, 1.0) * 2.0 * np.pi / lam
    pu, pv = rng.uniform(0.0, 2.0 * np.pi, size=2)
    au = cfg.shift_mag
    av = cfg.shift_mag * cfg.vertical_ratio
    ang = rng.uniform(0.0, np.pi)
    cu, su = np.cos(ang), np.sin(ang)

    def field(xs, ys):
        t = cu * xs + su * ys
        du = au * np.cos(fu * t + pu)
        dv = av * np.cos(fv * t + pv)
        return du, dv

    return field


def _ellipses_for_fraction(rng, cfg, xs, ys) -> list[tuple[float, float, float, float, float]]:
    """Random ellipses (cx, cy, rx, ry, angle) until their union covers the
    change-fraction target (the last shape may overshoot by its own area)."""
    target = cfg.change_fraction * cfg.width * cfg.height
    if target <= 0:
        return []
    shapes = []
    union = np.zeros(xs.shape, dtype=bool)
    while union.sum() < target:
        rx = rng.uniform(0.06, 0.14) * cfg.width
        ry = rng.uniform(0.06, 0.14) * cfg.height
        cx = rng.uniform(rx, cfg.width - rx)
        cy = rng.uniform(ry, cfg.height - ry)
        shape = (cx, cy, rx, ry, rng.uniform(0, np.pi))
        shapes.append(shape)
        union |= _ellipse_mask(shape, xs, ys)
    return shapes


def _ellipse_mask(shape, xs, ys) -> np.ndarray:
    cx, cy, rx, ry, ang = shape
    dx, dy = xs - cx, ys - cy
    xr = dx * np.cos(ang) + dy * np.sin(ang)
    yr = -dx * np.sin(ang) + dy * np.cos(ang)
    return (xr / rx) ** 2 + (yr / ry) ** 2 <= 1.0


def _draw_objects(img: np.ndarray, shapes, rng, xs, ys) -> np.ndarray:
    out = img.copy()
    for shape in shapes:
        m = _ellipse_mask(shape, xs, ys)
        color = rng.uniform(0.1, 0.9, size=3)
        wave = np.cos(rng.uniform(0.3, 0.8) * (xs + ys) + rng.uniform(0, 2 * np.pi))
        tex = color + 0.15 * wave[..., None] * rng.uniform(-1, 1, size=3)
        out[m] = np.clip(tex, 0, 1)[m]
    return out


def synth_generate(cfg: SynthConfig) -> ScenePair:
    """One synthetic pair with exact flow and change-mask ground truth.

    t1 renders the same analytic scene through the inverse of the recorded
    warp, so sampling t1 at x + flow(x) reproduces t0 wherever nothing
    changed. Change shapes are deletions (drawn only into t0) and
    insertions (drawn only into t1, in t1 coordinates).
    """
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    scene = _Scene(rng, cfg)
    disparity = _disparity(rng, cfg)
    ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)

    shapes = _ellipses_for_fraction(rng, cfg, xs, ys)
    rng_split = rng.integers(0, 2, size=len(shapes))
    deletions = [s for s, tag in zip(shapes, rng_split) if tag == 0]
    insertions = [s for s, tag in zip(shapes, rng_split) if tag == 1]

    # t0: scene + deleted objects, on its own grid.
    t0 = scene.eval(xs, ys)
    t0 = _draw_objects(t0, deletions, np.random.default_rng([cfg.seed, 1]), xs, ys)

    # Flow on the t0 grid.
    du, dv = disparity(xs, ys)
    flow = FlowField(du.astype(np.float32), dv.astype(np.float32))

    # t1: invert q = p + d(p) by fixed point, render the scene at p(q),
    # then draw insertions at t1 coordinates.
    px, py = xs.copy(), ys.copy()
    for _ in range(40):
        dxi, dyi = disparity(px, py)
        px, py = xs - dxi, ys - dyi
    t1 = scene.eval(px, py)
    t1 = _draw_objects(t1, insertions, np.random.default_rng([cfg.seed, 2]), xs, ys)

    if cfg.jitter > 0:
        gain = 1.0 + np.random.default_rng([cfg.seed, 3]).uniform(
            -cfg.jitter, cfg.jitter, size=3
        )
        t1 = np.clip(t1 * gain, 0.0, 1.0)

    mask = np.zeros((cfg.height, cfg.width), dtype=bool)
    for s in deletions + insertions:
        mask |= _ellipse_mask(s, xs, ys)

    return ScenePair(
        id=f"SYNTH/{cfg.seed:06d}",
        image_t0=Image(np.rint(t0 * 255.0).astype(np.uint8)),
        image_t1=Image(np.rint(t1 * 255.0).astype(np.uint8)),
        gt_mask=ChangeMask(mask.astype(np.float32) * 255.0),
        subset="SYNTH",
        flow=flow,
    )


def warp_consistency_error(pair: ScenePair, margin: int | None = None) -> float:
    """Max photometric error of warping t1 back onto t0, outside changes.

    The change mask is dilated by the peak flow magnitude (plus a safety
    margin) so insertion regions are excluded in both frames.
    """
    if pair.flow is None:
        raise ValueError("pair has no recorded flow")
    g0 = pair.image_t0.data.astype(np.float64) / 255.0
    g1 = pair.image_t1.data.astype(np.float64) / 255.0
    h, w = g0.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    wx = xs + pair.flow.u
    wy = ys + pair.flow.v
    warped = np.stack(
        [bilinear_sample_array(g1[:, :, c], wx, wy) for c in range(g0.shape[2])], axis=-1
    )
    err = np.abs(warped - g0).max(axis=-1)

    if margin is None:
        margin = int(math.ceil(pair.flow.magnitude().max())) + 2
    changed = pair.gt_mask.values > pair.gt_mask.s_max / 2
    if changed.any() and margin > 0:
        pad = np.pad(changed, margin)
        windows = np.lib.stride_tricks.sliding_window_view(pad, (2 * margin + 1, 2 * margin + 1))
        changed = windows.any(axis=(2, 3))
    border = margin + 1
    keep = ~changed
    keep[:border] = keep[-border:] = False
    keep[:, :border] = keep[:, -border:] = False
    if not keep.any():
        return 0.0
    return float(err[keep].max())
