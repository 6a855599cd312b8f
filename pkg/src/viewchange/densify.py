"""Densify inlier matches into a per-pixel flow field.

The field minimizes a classic variational energy,

    E(w) = sum_x psi((I1(x + w) - I0(x))^2)
         + alpha * sum_x psi(|grad u|^2 + |grad v|^2)
         + beta  * sum_matches |w(p) - (q - p)|^2,

with psi(s^2) = sqrt(s^2 + eps^2), solved coarse to fine with red-black
point relaxation of the lagged-nonlinearity Euler-Lagrange equations. The
match term anchors the field to the epipolar-verified correspondences; the
coarsest level starts from their inverse-distance interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import FlowField, ImagePair
from .errors import ShapeError
from .matching import MatchSet, build_pyramid
from .tensor_ops import bilinear_resize_array, bilinear_sample_array, to_gray_array


@dataclass(frozen=True)
class DensifyConfig:
    pyramid_levels: int = 4
    alpha: float = 8.0           # smoothness weight
    beta: float = 50.0           # match fidelity weight
    iters_per_level: int = 200   # relaxation sweeps per pyramid level
    epsilon: float = 1e-3        # robust-penalty constant

    def __post_init__(self):
        if min(self.pyramid_levels, self.iters_per_level) < 1:
            raise ValueError("pyramid_levels and iters_per_level must be >= 1")
        if min(self.alpha, self.beta, self.epsilon) <= 0:
            raise ValueError("alpha, beta and epsilon must be positive")


def _charbonnier(sq: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(sq + eps * eps)


def _forward_diffs(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(a)
    dy = np.zeros_like(a)
    dx[:, :-1] = a[:, 1:] - a[:, :-1]
    dy[:-1, :] = a[1:, :] - a[:-1, :]
    return dx, dy


def _match_arrays(inliers: MatchSet) -> tuple[np.ndarray, np.ndarray]:
    """Anchor positions (N, 2) and displacements (N, 2) of the fidelity term.

    Sets carrying RANSAC flags contribute only their flagged matches; a set
    with no flags set is taken as already filtered and used whole.
    """
    kept = inliers.only_inliers() if any(m.inlier for m in inliers.matches) else inliers
    p, q = kept.points()
    return p, q - p


def flow_energy(
    flow: FlowField, pair: ImagePair, inliers: MatchSet, cfg: DensifyConfig = DensifyConfig()
) -> float:
    """Evaluate the variational energy at full resolution."""
    if (flow.width, flow.height) != (pair.width, pair.height):
        raise ShapeError("flow dims do not match the image pair")
    g0 = to_gray_array(pair.t0)
    g1 = to_gray_array(pair.t1)
    h, w = g0.shape

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = bilinear_sample_array(g1, xs + flow.u, ys + flow.v)
    data = _charbonnier((warped - g0) ** 2, cfg.epsilon).sum()

    ux, uy = _forward_diffs(flow.u.astype(np.float64))
    vx, vy = _forward_diffs(flow.v.astype(np.float64))
    smooth = _charbonnier(ux * ux + uy * uy + vx * vx + vy * vy, cfg.epsilon).sum()

    pts, disp = _match_arrays(inliers)
    match = 0.0
    if len(pts):
        px = np.clip(np.rint(pts[:, 0]).astype(np.intp), 0, w - 1)
        py = np.clip(np.rint(pts[:, 1]).astype(np.intp), 0, h - 1)
        du = flow.u[py, px] - disp[:, 0]
        dv = flow.v[py, px] - disp[:, 1]
        match = float((du * du + dv * dv).sum())

    return float(data + cfg.alpha * smooth + cfg.beta * match)


def _idw_field(
    shape: tuple[int, int], pts: np.ndarray, disp: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance-squared interpolation of sparse displacements."""
    h, w = shape
    if len(pts) == 0:
        return np.zeros((h, w)), np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    wsum = np.zeros((h, w))
    for (px, py), (du, dv) in zip(pts, disp):
        d2 = (xs - px) ** 2 + (ys - py) ** 2 + 1e-6
        wk = 1.0 / d2
        u += wk * du
        v += wk * dv
        wsum += wk
    return u / wsum, v / wsum


def _rasterize_matches(
    shape: tuple[int, int], pts: np.ndarray, disp: np.ndarray, beta: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel quadratic match weights 2*beta*count and weighted targets."""
    h, w = shape
    weight = np.zeros((h, w))
    tu = np.zeros((h, w))
    tv = np.zeros((h, w))
    if len(pts):
        px = np.clip(np.rint(pts[:, 0]).astype(np.intp), 0, w - 1)
        py = np.clip(np.rint(pts[:, 1]).astype(np.intp), 0, h - 1)
        np.add.at(weight, (py, px), 2.0 * beta)
        np.add.at(tu, (py, px), 2.0 * beta * disp[:, 0])
        np.add.at(tv, (py, px), 2.0 * beta * disp[:, 1])
    return weight, tu, tv


def _relax_level(
    g0: np.ndarray,
    g1: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    mw: np.ndarray,
    mtu: np.ndarray,
    mtv: np.ndarray,
    cfg: DensifyConfig,
) -> tuple[np.ndarray, np.ndarray]:
    h, w = g0.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    g1x, g1y = np.gradient(g1, axis=1), np.gradient(g1, axis=0)
    red = (xs.astype(np.intp) + ys.astype(np.intp)) % 2 == 0
    eps = cfg.epsilon
    alpha = cfg.alpha

    for _ in range(cfg.iters_per_level):
        # Lagged quantities: warp basepoint, data weight, edge diffusivities.
        wx, wy = xs + u, ys + v
        rt = bilinear_sample_array(g1, wx, wy) - g0
        ix = bilinear_sample_array(g1x, wx, wy)
        iy = bilinear_sample_array(g1y, wx, wy)
        wd = 1.0 / np.sqrt(rt * rt + eps * eps)

        ux, uy = _forward_diffs(u)
        vx, vy = _forward_diffs(v)
        ws = 1.0 / np.sqrt(ux * ux + uy * uy + vx * vx + vy * vy + eps * eps)
        g_r = np.zeros((h, w)); g_r[:, :-1] = ws[:, :-1]
        g_d = np.zeros((h, w)); g_d[:-1, :] = ws[:-1, :]
        g_l = np.zeros((h, w)); g_l[:, 1:] = ws[:, :-1]
        g_u = np.zeros((h, w)); g_u[1:, :] = ws[:-1, :]
        gsum = g_r + g_d + g_l + g_u

        a11 = wd * ix * ix + alpha * gsum + mw
        a12 = wd * ix * iy
        a22 = wd * iy * iy + alpha * gsum + mw
        b1_fix = wd * (ix * ix * u + ix * iy * v - ix * rt) + mtu
        b2_fix = wd * (ix * iy * u + iy * iy * v - iy * rt) + mtv
        det = a11 * a22 - a12 * a12
        det = np.where(det > 1e-12, det, 1e-12)

        for color in (red, ~red):
            nb_u = np.zeros((h, w))
            nb_v = np.zeros((h, w))
            nb_u[:, :-1] += g_r[:, :-1] * u[:, 1:]
            nb_u[:, 1:] += g_l[:, 1:] * u[:, :-1]
            nb_u[:-1, :] += g_d[:-1, :] * u[1:, :]
            nb_u[1:, :] += g_u[1:, :] * u[:-1, :]
            nb_v[:, :-1] += g_r[:, :-1] * v[:, 1:]
            nb_v[:, 1:] += g_l[:, 1:] * v[:, :-1]
            nb_v[:-1, :] += g_d[:-1, :] * v[1:, :]
            nb_v[1:, :] += g_u[1:, :] * v[:-1, :]
            b1 = b1_fix + alpha * nb_u
            b2 = b2_fix + alpha * nb_v
            u_new = (a22 * b1 - a12 * b2) / det
            v_new = (a11 * b2 - a12 * b1) / det
            u = np.where(color, u_new, u)
            v = np.where(color, v_new, v)
    return u, v


def densify(
    pair: ImagePair, inliers: MatchSet, cfg: DensifyConfig = DensifyConfig()
) -> FlowField:
    """Coarse-to-fine relaxation seeded by inlier interpolation.

    The returned field never has higher energy than the finest-level
    initialization (the inverse-distance field, or zero without matches).
    """
    pts, disp = _match_arrays(inliers)
    levels = cfg.pyramid_levels
    while levels > 1 and min(pair.width, pair.height) // 2 ** (levels - 1) < 8:
        levels -= 1
    pyr0 = build_pyramid(pair.t0, levels)
    pyr1 = build_pyramid(pair.t1, levels)

    scale = 2.0 ** (levels - 1)
    u, v = _idw_field(pyr0[-1].shape, pts / scale, disp / scale)

    for level in range(levels - 1, -1, -1):
        s = 2.0 ** level
        g0, g1 = pyr0[level], pyr1[level]
        if u.shape != g0.shape:
            u = bilinear_resize_array(u, *g0.shape) * 2.0
            v = bilinear_resize_array(v, *g0.shape) * 2.0
        mw, mtu, mtv = _rasterize_matches(g0.shape, pts / s, disp / s, cfg.beta)
        u, v = _relax_level(g0, g1, u, v, mw, mtu, mtv, cfg)

    out = FlowField(u.astype(np.float32), v.astype(np.float32))
    init_u, init_v = _idw_field(pyr0[0].shape, pts, disp)
    init = FlowField(init_u.astype(np.float32), init_v.astype(np.float32))
    if flow_energy(out, pair, inliers, cfg) <= flow_energy(init, pair, inliers, cfg):
        return out
    return init
