import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewchange.containers import ChangeMask, FlowField, Image
from viewchange.errors import FormatError
from viewchange.fileio import (
    flo_bytes,
    parse_flo,
    read_flo,
    read_mask_png,
    read_png,
    write_flo,
    write_mask_png,
    write_png,
)


class TestFlo:
    def test_round_trip_zero_field_bytes_identical(self, tmp_path):
        f = FlowField(np.zeros((2, 3)), np.zeros((2, 3)))
        path = tmp_path / "zero.flo"
        write_flo(f, path)
        raw = path.read_bytes()
        back = read_flo(path)
        assert flo_bytes(back) == raw

    def test_exact_values_survive(self, tmp_path):
        f = FlowField(np.array([[1.5, -2.25]]), np.array([[0.0, 3.75]]))
        path = tmp_path / "vals.flo"
        write_flo(f, path)
        back = read_flo(path)
        np.testing.assert_array_equal(back.u, f.u)
        np.testing.assert_array_equal(back.v, f.v)

    def test_bad_magic(self, tmp_path):
        payload = struct.pack("<fii", 123.0, 1, 1) + b"\0" * 8
        with pytest.raises(FormatError, match="magic"):
            parse_flo(payload)

    def test_truncated_payload(self):
        payload = struct.pack("<fii", 202021.25, 3, 2) + b"\0" * 8
        with pytest.raises(FormatError, match="payload"):
            parse_flo(payload)

    def test_header_layout(self):
        f = FlowField(np.array([[1.0, 2.0]], dtype=np.float32), np.array([[3.0, 4.0]], dtype=np.float32))
        raw = flo_bytes(f)
        magic, w, h = struct.unpack_from("<fii", raw)
        assert (w, h) == (2, 1)
        vals = np.frombuffer(raw[12:], dtype="<f4")
        np.testing.assert_array_equal(vals, [1.0, 3.0, 2.0, 4.0])  # interleaved (u, v)

    @settings(deadline=None, max_examples=30)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_round_trip_property(self, w, h, seed, tmp_path_factory=None):
        rng = np.random.default_rng(seed)
        f = FlowField(
            rng.normal(scale=10, size=(h, w)).astype(np.float32),
            rng.normal(scale=10, size=(h, w)).astype(np.float32),
        )
        assert flo_bytes(parse_flo(flo_bytes(f))) == flo_bytes(f)


class TestPng:
    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Image(rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8))
        path = tmp_path / "x.png"
        write_png(img, path)
        back = read_png(path)
        np.testing.assert_array_equal(back.data, img.data)

    def test_gray_round_trip(self, tmp_path):
        img = Image(np.arange(12, dtype=np.uint8).reshape(3, 4))
        path = tmp_path / "g.png"
        write_png(img, path)
        back = read_png(path)
        assert back.channels == 1
        np.testing.assert_array_equal(back.data, img.data)

    def test_mask_round_trip(self, tmp_path):
        mask = ChangeMask(np.array([[0.0, 127.0], [255.0, 3.0]], dtype=np.float32))
        path = tmp_path / "m.png"
        write_mask_png(mask, path)
        back = read_mask_png(path)
        np.testing.assert_array_equal(back.values, mask.values)

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        img = Image(np.zeros((2, 2), dtype=np.uint8))
        write_png(img, tmp_path / "a.png")
        leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
        assert leftovers == []
