import numpy as np
import pytest

from conftest import shifted_copy, smooth_texture
from viewchange.containers import FlowField, Image, ImagePair
from viewchange.densify import DensifyConfig, densify, flow_energy
from viewchange.matching import Match, MatchSet

FAST = DensifyConfig(iters_per_level=60)


def _brute_force_energy(flow, pair, inliers, cfg):
    """Independent per-pixel loop evaluation of the variational energy."""
    from viewchange.tensor_ops import to_gray_array

    g0 = to_gray_array(pair.t0)
    g1 = to_gray_array(pair.t1)
    h, w = g0.shape
    psi = lambda s2: np.sqrt(s2 + cfg.epsilon ** 2)

    def sample(img, x, y):
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        fx, fy = x - x0, y - y0
        top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
        bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    total = 0.0
    for y in range(h):
        for x in range(w):
            r = sample(g1, x + flow.u[y, x], y + flow.v[y, x]) - g0[y, x]
            total += psi(r * r)
            ux = flow.u[y, x + 1] - flow.u[y, x] if x + 1 < w else 0.0
            uy = flow.u[y + 1, x] - flow.u[y, x] if y + 1 < h else 0.0
            vx = flow.v[y, x + 1] - flow.v[y, x] if x + 1 < w else 0.0
            vy = flow.v[y + 1, x] - flow.v[y, x] if y + 1 < h else 0.0
            total += cfg.alpha * psi(ux * ux + uy * uy + vx * vx + vy * vy)
    for m in inliers.matches:
        if not m.inlier:
            continue
        px, py = int(round(m.p[0])), int(round(m.p[1]))
        du = flow.u[py, px] - (m.q[0] - m.p[0])
        dv = flow.v[py, px] - (m.q[1] - m.p[1])
        total += cfg.beta * (du * du + dv * dv)
    return total


class TestFlowEnergy:
    def test_matches_brute_force_oracle(self):
        img = smooth_texture(0, 20, 16)
        pair = ImagePair(img, shifted_copy(img, 2, 1))
        rng = np.random.default_rng(0)
        flow = FlowField(rng.normal(size=(16, 20)), rng.normal(size=(16, 20)))
        matches = MatchSet(
            (Match((4.0, 5.0), (6.0, 6.0), 1.0, inlier=True),
             Match((10.0, 8.0), (12.0, 9.0), 1.0, inlier=True)),
            (20, 16),
        )
        cfg = DensifyConfig()
        got = flow_energy(flow, pair, matches, cfg)
        want = _brute_force_energy(flow, pair, matches, cfg)
        assert got == pytest.approx(want, rel=1e-8)

    def test_identical_images_zero_flow_value(self):
        # Data and smoothness both sit at the Charbonnier floor, so the
        # energy is exactly (1 + alpha) * eps * H * W.
        img = smooth_texture(1, 12, 10)
        pair = ImagePair(img, img)
        flow = FlowField(np.zeros((10, 12)), np.zeros((10, 12)))
        cfg = DensifyConfig()
        expect = (1.0 + cfg.alpha) * cfg.epsilon * 12 * 10
        assert flow_energy(flow, pair, MatchSet((), (12, 10)), cfg) == pytest.approx(expect)

    def test_constant_flow_smoothness_at_floor(self):
        img = smooth_texture(2, 12, 10)
        pair = ImagePair(img, img)
        cfg = DensifyConfig()
        base = flow_energy(
            FlowField(np.zeros((10, 12)), np.zeros((10, 12))), pair, MatchSet((), (12, 10)), cfg
        )
        rough = np.zeros((10, 12))
        rough[5:, :] = 1.5
        bumpy = flow_energy(
            FlowField(rough, np.zeros((10, 12))), pair, MatchSet((), (12, 10)), cfg
        )
        assert bumpy > base

    def test_exact_match_fidelity_contributes_zero(self):
        img = smooth_texture(3, 16, 12)
        pair = ImagePair(img, img)
        cfg = DensifyConfig()
        flow = FlowField(np.full((12, 16), 2.0), np.full((12, 16), -1.0))
        ms = MatchSet((Match((5.0, 5.0), (7.0, 4.0), 1.0, inlier=True),), (16, 12))
        with_match = flow_energy(flow, pair, ms, cfg)
        without = flow_energy(flow, pair, MatchSet((), (16, 12)), cfg)
        assert with_match == pytest.approx(without)


class TestDensify:
    def test_identical_images_no_matches_fixed_point(self):
        img = smooth_texture(4, 80, 64)
        flow = densify(ImagePair(img, img), MatchSet((), (80, 64)), FAST)
        assert np.percentile(flow.magnitude(), 99) < 0.1

    def test_global_shift_recovered(self):
        from viewchange.matching import match_images

        img = smooth_texture(5, 104, 80)
        moved = shifted_copy(img, 5, 0)
        pair = ImagePair(img, moved)
        ms = match_images(img, moved)
        ms = ms.with_inliers(np.ones(len(ms), dtype=bool))
        assert len(ms) >= 50
        flow = densify(pair, ms, FAST)
        inner = np.s_[8:-8, 12:-17]
        epe = np.hypot(flow.u[inner] - 5.0, flow.v[inner]).mean()
        assert epe < 0.5

    def test_single_match_flat_images_propagates(self):
        img = Image(np.full((48, 64, 3), 128, dtype=np.uint8))
        ms = MatchSet((Match((32.0, 24.0), (35.0, 26.0), 1.0, inlier=True),), (64, 48))
        flow = densify(ImagePair(img, img), ms, FAST)
        epe = np.hypot(flow.u - 3.0, flow.v - 2.0).mean()
        assert epe < 0.5

    def test_energy_descent_invariant(self):
        from viewchange.matching import match_images

        img = smooth_texture(6, 72, 56)
        moved = shifted_copy(img, 3, 2)
        pair = ImagePair(img, moved)
        ms = match_images(img, moved)
        ms = ms.with_inliers(np.ones(len(ms), dtype=bool))
        flow = densify(pair, ms, FAST)

        from viewchange.densify import _idw_field, _match_arrays

        pts, disp = _match_arrays(ms)
        iu, iv = _idw_field((56, 72), pts, disp)
        init = FlowField(iu.astype(np.float32), iv.astype(np.float32))
        assert flow_energy(flow, pair, ms, FAST) <= flow_energy(init, pair, ms, FAST)

    def test_shift_equivariance(self):
        img = smooth_texture(7, 96, 72)
        b = shifted_copy(img, 2, 1)
        ms = MatchSet(
            (Match((48.0, 36.0), (50.0, 37.0), 1.0, inlier=True),), (96, 72)
        )
        cfg = DensifyConfig(pyramid_levels=2, iters_per_level=50)
        flow_a = densify(ImagePair(img, b), ms, cfg)

        d = 4  # multiple of 2^(levels-1) keeps the pyramids aligned
        img_s = shifted_copy(img, d, 0)
        b_s = shifted_copy(b, d, 0)
        ms_s = MatchSet(
            (Match((48.0 + d, 36.0), (50.0 + d, 37.0), 1.0, inlier=True),), (96, 72)
        )
        flow_b = densify(ImagePair(img_s, b_s), ms_s, cfg)
        inner_a = np.s_[12:-12, 12 : 96 - 12 - d]
        inner_b = np.s_[12:-12, 12 + d : 96 - 12]
        assert np.abs(flow_a.u[inner_a] - flow_b.u[inner_b]).max() < 0.1
        assert np.abs(flow_a.v[inner_a] - flow_b.v[inner_b]).max() < 0.1

    def test_output_dims_and_finite(self):
        img = smooth_texture(8, 40, 56)
        flow = densify(ImagePair(img, img), MatchSet((), (40, 56)), FAST)
        assert (flow.width, flow.height) == (40, 56)
        assert np.isfinite(flow.u).all() and np.isfinite(flow.v).all()


def test_config_validation():
    with pytest.raises(ValueError):
        DensifyConfig(alpha=0.0)
    with pytest.raises(ValueError):
        DensifyConfig(iters_per_level=0)
