import math

import numpy as np
import pytest

from conftest import random_rotation
from viewchange.epipolar import (
    CameraModel,
    EssentialMatrix,
    RansacConfig,
    adaptive_iteration_bound,
    bearings_to_pixels,
    epipolar_residual,
    epipolar_residuals,
    five_point_essential,
    pixel_to_bearing,
    pixels_to_bearings,
    ransac_essential,
    skew,
)
from viewchange.errors import DegenerateSampleError, InsufficientDataError
from viewchange.matching import Match, MatchSet


def synthesize_pose(seed, n=5, rotation_scale=0.3):
    """Bearing pairs from a random pose; returns (p, q, E_true)."""
    rng = np.random.default_rng([seed, 17])
    rot = random_rotation(rng, rotation_scale)
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    pts = np.stack(
        [rng.uniform(-1.5, 1.5, n), rng.uniform(-1.5, 1.5, n), rng.uniform(2.0, 6.0, n)],
        axis=1,
    )
    p = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    q_pts = pts @ rot.T + t
    q = q_pts / np.linalg.norm(q_pts, axis=1, keepdims=True)
    e_true = skew(t) @ rot
    return p, q, e_true / np.linalg.norm(e_true)


class TestCameraModels:
    def test_pinhole_principal_point(self):
        cam = CameraModel.pinhole(640, 480, fx=500, fy=500)
        np.testing.assert_allclose(pixel_to_bearing((320, 240), cam), [0, 0, 1])

    def test_pinhole_one_focal_right(self):
        cam = CameraModel.pinhole(640, 480, fx=500, fy=400, cx=320, cy=240)
        b = pixel_to_bearing((820, 240), cam)
        np.testing.assert_allclose(b, np.array([1, 0, 1]) / math.sqrt(2), atol=1e-12)

    def test_equirectangular_center(self):
        cam = CameraModel.equirectangular(1024, 224)
        np.testing.assert_allclose(pixel_to_bearing((512, 112), cam), [0, 0, 1], atol=1e-12)

    def test_equirectangular_default_vertical_span(self):
        cam = CameraModel.equirectangular(1024, 224)
        assert cam.span_v == pytest.approx(2 * math.pi * 224 / 1024)

    def test_bearings_unit_norm(self, rng):
        for cam in (
            CameraModel.pinhole(320, 240, fx=200, fy=220),
            CameraModel.equirectangular(320, 160),
        ):
            pts = rng.uniform([0, 0], [320, 160], size=(50, 2))
            b = pixels_to_bearings(pts, cam)
            np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-12)

    def test_projection_round_trip(self, rng):
        cam = CameraModel.equirectangular(640, 320)
        pts = rng.uniform([1, 1], [639, 319], size=(40, 2))
        back = bearings_to_pixels(pixels_to_bearings(pts, cam), cam)
        np.testing.assert_allclose(back, pts, atol=1e-9)


class TestEssentialMatrix:
    def test_accepts_valid_and_normalizes(self):
        e = EssentialMatrix(5.0 * skew([1.0, 0, 0]))
        assert np.linalg.norm(e.m) == pytest.approx(1.0)

    def test_rejects_full_rank(self):
        with pytest.raises(ValueError):
            EssentialMatrix(np.eye(3))


class TestFivePoint:
    def test_identity_rotation_translation_x(self):
        rng = np.random.default_rng(5)
        pts = np.stack(
            [rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5), rng.uniform(2, 6, 5)], axis=1
        )
        p = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        q_pts = pts + np.array([1.0, 0.0, 0.0])
        q = q_pts / np.linalg.norm(q_pts, axis=1, keepdims=True)
        e_true = skew([1.0, 0, 0])
        e_true /= np.linalg.norm(e_true)
        cands = five_point_essential(p, q)
        assert cands
        best = min(
            min(np.linalg.norm(c.m - e_true), np.linalg.norm(c.m + e_true)) for c in cands
        )
        assert best < 1e-10
        assert all(
            np.abs(np.einsum("ni,ij,nj->n", q, c.m, p)).max() < 1e-10 for c in cands
        )

    def test_known_pose_recovered_over_seeds(self):
        hits = 0
        for seed in range(100):
            p, q, e_true = synthesize_pose(seed)
            cands = five_point_essential(p, q)
            best = min(
                (
                    min(np.linalg.norm(c.m - e_true), np.linalg.norm(c.m + e_true))
                    for c in cands
                ),
                default=np.inf,
            )
            if best < 1e-6:
                hits += 1
        assert hits == 100

    def test_candidates_satisfy_invariants(self):
        p, q, _ = synthesize_pose(7)
        for cand in five_point_essential(p, q):
            m = cand.m
            assert abs(np.linalg.det(m)) < 1e-8
            eet = m @ m.T
            assert np.abs(2 * eet @ m - np.trace(eet) * m).max() < 1e-6

    def test_duplicate_points_degenerate(self):
        p = np.tile(np.array([[0.0, 0.0, 1.0]]), (5, 1))
        q = p.copy()
        with pytest.raises(DegenerateSampleError):
            five_point_essential(p, q)


class TestResidual:
    def test_exact_inlier_near_zero(self):
        p, q, e_true = synthesize_pose(11, n=20)
        r = epipolar_residuals(e_true, p, q)
        assert r.max() < 1e-9

    def test_orthogonal_is_half_pi(self):
        e = skew([0.0, 0.0, 1.0])
        p = np.array([1.0, 0.0, 0.0])
        ep = e @ p  # (0, 1, 0)
        q = ep / np.linalg.norm(ep)
        assert epipolar_residual(e, p, q) == pytest.approx(math.pi / 2)

    def test_epipole_ray_is_half_pi(self):
        e = skew([0.0, 0.0, 1.0])
        p = np.array([0.0, 0.0, 1.0])  # E p = 0
        q = np.array([1.0, 0.0, 0.0])
        assert epipolar_residual(e, p, q) == pytest.approx(math.pi / 2)


class TestRansac:
    def _match_set(self, seed, n_in=70, n_out=30):
        cam = CameraModel.pinhole(640, 480, fx=500, fy=500)
        rng = np.random.default_rng([seed, 23])
        rot = random_rotation(rng, 0.2)
        t = rng.normal(size=3)
        t /= np.linalg.norm(t)
        matches = []
        while len(matches) < n_in:
            pt = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(3, 10)])
            qt = rot @ pt + t
            if qt[2] <= 0.5:
                continue
            try:
                px = bearings_to_pixels((pt / np.linalg.norm(pt))[None], cam)[0]
                qx = bearings_to_pixels((qt / np.linalg.norm(qt))[None], cam)[0]
            except ValueError:
                continue
            if (0 <= px).all() and px[0] < 640 and px[1] < 480 \
                    and (0 <= qx).all() and qx[0] < 640 and qx[1] < 480:
                matches.append(Match(tuple(px), tuple(qx), 1.0))
        for _ in range(n_out):
            matches.append(
                Match(
                    (rng.uniform(0, 640), rng.uniform(0, 480)),
                    (rng.uniform(0, 640), rng.uniform(0, 480)),
                    0.5,
                )
            )
        return MatchSet(tuple(matches), (640, 480)), cam

    def test_all_inliers_flagged_on_clean_set(self):
        ms, cam = self._match_set(0, n_in=100, n_out=0)
        res = ransac_essential(ms, cam, RansacConfig(seed=0))
        assert res.best_inlier_count == 100
        assert res.inlier_flags.all()

    def test_contaminated_set_separated(self):
        recall_hits = fp_total = 0
        total_out = 0
        for seed in range(20):
            ms, cam = self._match_set(seed)
            res = ransac_essential(ms, cam, RansacConfig(seed=seed))
            flags = res.inlier_flags
            recall_hits += int(flags[:70].sum())
            fp_total += int(flags[70:].sum())
            total_out += 30
        assert recall_hits / (20 * 70) >= 0.95
        assert fp_total / total_out <= 0.02

    def test_determinism(self):
        ms, cam = self._match_set(3)
        a = ransac_essential(ms, cam, RansacConfig(seed=9))
        b = ransac_essential(ms, cam, RansacConfig(seed=9))
        np.testing.assert_array_equal(a.inlier_flags, b.inlier_flags)
        np.testing.assert_array_equal(a.model.m, b.model.m)
        assert a.iterations_run == b.iterations_run

    def test_insufficient_data(self):
        ms = MatchSet(tuple(Match((0, 0), (1, 1), 1.0) for _ in range(4)), (10, 10))
        with pytest.raises(InsufficientDataError):
            ransac_essential(ms, CameraModel.pinhole(10, 10, fx=5, fy=5))

    def test_flag_count_matches_best(self):
        ms, cam = self._match_set(4)
        res = ransac_essential(ms, cam, RansacConfig(seed=4))
        assert res.best_inlier_count == int(res.inlier_flags.sum())


def test_adaptive_bound_values():
    assert adaptive_iteration_bound(0.99, 0.5) == 146
    assert adaptive_iteration_bound(0.99, 0.0) == math.inf
    assert adaptive_iteration_bound(0.99, 1.0) == 0.0
