import numpy as np
import pytest

from conftest import shifted_copy, smooth_texture
from viewchange.containers import Image
from viewchange.errors import FormatError, ShapeError
from viewchange.matching import (
    MatchConfig,
    MatchSet,
    build_pyramid,
    match_images,
    matches_to_text,
    ncc,
    read_matches,
    write_matches,
)


class TestPyramid:
    def test_level_sizes_halve(self):
        img = smooth_texture(0, 64, 64)
        pyr = build_pyramid(img, 3)
        assert [p.shape for p in pyr] == [(64, 64), (32, 32), (16, 16)]

    def test_constant_image_stays_constant(self):
        img = Image(np.full((32, 32), 77, dtype=np.uint8))
        for level in build_pyramid(img, 3):
            np.testing.assert_allclose(level, 77 / 255.0)

    def test_single_level_is_grayscale(self):
        img = smooth_texture(1, 16, 16)
        pyr = build_pyramid(img, 1)
        assert len(pyr) == 1 and pyr[0].shape == (16, 16)

    def test_too_small_rejected(self):
        img = Image(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            build_pyramid(img, 4)


class TestNcc:
    def test_self_correlation(self, rng):
        p = rng.normal(size=(9, 9))
        assert ncc(p, p) == pytest.approx(1.0)

    def test_anti_correlation(self, rng):
        p = rng.normal(size=(9, 9))
        p -= p.mean()
        assert ncc(p, -p) == pytest.approx(-1.0)

    def test_constant_patch_scores_zero(self, rng):
        p = rng.normal(size=(9, 9))
        assert ncc(p, np.zeros((9, 9))) == 0.0
        assert ncc(np.ones((9, 9)), np.ones((9, 9))) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            ncc(np.zeros((9, 9)), np.zeros((7, 7)))


class TestMatchImages:
    def test_identity_pair_all_exact(self):
        img = smooth_texture(2, 96, 64)
        ms = match_images(img, img)
        assert len(ms) > 50
        for m in ms.matches:
            assert m.q == m.p
            assert m.score == pytest.approx(1.0)

    def test_integer_shift_recovered_exactly(self):
        img = smooth_texture(3, 104, 80)
        shifted = shifted_copy(img, 10, 0)
        ms = match_images(img, shifted)
        interior = [
            m for m in ms.matches
            if 16 <= m.p[0] < 104 - 26 and 8 <= m.p[1] < 80 - 8
        ]
        assert len(interior) >= 40
        assert all(
            (m.q[0] - m.p[0], m.q[1] - m.p[1]) == (10.0, 0.0) for m in interior
        )

    def test_noise_pair_rarely_matches(self):
        emitted = total = 0
        for seed in range(6):
            rng = np.random.default_rng([seed, 5])
            a = Image(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
            b = Image(
                np.random.default_rng([seed, 6]).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
            )
            ms = match_images(a, b)
            emitted += len(ms)
            total += (64 // 8) ** 2
        assert emitted / total < 0.20

    def test_min_score_monotonicity(self):
        img = smooth_texture(4, 64, 64)
        b = shifted_copy(img, 3, 2)
        low = match_images(img, b, MatchConfig(min_score=0.3))
        high = match_images(img, b, MatchConfig(min_score=0.7))
        low_keys = {m.p for m in low.matches}
        assert all(m.p in low_keys for m in high.matches)
        assert len(high) <= len(low)

    def test_deterministic(self):
        img = smooth_texture(5, 64, 48)
        b = shifted_copy(img, -4, 3)
        assert match_images(img, b) == match_images(img, b)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            match_images(smooth_texture(0, 32, 32), smooth_texture(0, 64, 32))


class TestMatchesSerialization:
    def test_round_trip(self, tmp_path):
        img = smooth_texture(6, 64, 48)
        ms = match_images(img, shifted_copy(img, 5, 1))
        flags = np.zeros(len(ms), dtype=bool)
        flags[::2] = True
        ms = ms.with_inliers(flags)
        path = tmp_path / "m.txt"
        write_matches(ms, path)
        back = read_matches(path)
        assert back.source_dims == ms.source_dims
        assert len(back) == len(ms)
        for a, b in zip(ms.matches, back.matches):
            assert a.p == b.p and a.q == b.q and a.inlier == b.inlier
            assert a.score == pytest.approx(b.score, abs=1e-6)

    def test_header_format(self):
        ms = MatchSet((), (640, 480))
        text = matches_to_text(ms)
        assert text.splitlines()[0] == "# viewchange-matches v1 640 480"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense\n")
        with pytest.raises(FormatError):
            read_matches(path)
