import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewchange.containers import ChangeMask, FlowField, Image, Tensor4
from viewchange.errors import ShapeError
from viewchange.tensor_ops import (
    add,
    bilinear_resize,
    bilinear_resize_array,
    concat_inputs,
    crop,
    denormalize_image,
    flow_to_color,
    mul,
    normalize_flow,
    normalize_image,
    pad,
    rotate90,
    rotate90_array,
    rotate_flow_90,
    to_gray_array,
)


def _img(values) -> Image:
    return Image(np.asarray(values, dtype=np.uint8))


class TestNormalizeImage:
    def test_range_endpoints(self):
        t = normalize_image(_img([[[0, 255, 128]]]))
        np.testing.assert_allclose(
            t.data[0, :, 0, 0], [-1.0, 1.0, 128 / 127.5 - 1.0], atol=1e-6
        )

    def test_round_trip_within_one_ulp(self):
        samples = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
        t = normalize_image(Image(samples), dtype=np.float32)
        back = denormalize_image(t)[0, 0]
        expect = samples[:, :, 0].astype(np.float32)
        ulp = np.spacing(np.maximum(np.abs(expect), 1.0).astype(np.float32))
        assert np.all(np.abs(back - expect) <= ulp)


class TestNormalizeFlow:
    def test_values(self):
        f = FlowField(np.array([[0.0, 64.0, 128.0]]), np.array([[-64.0, -200.0, 32.0]]))
        t = normalize_flow(f, d_max=64.0)
        np.testing.assert_allclose(t.data[0, 0, 0], [0.0, 1.0, 1.0])
        np.testing.assert_allclose(t.data[0, 1, 0], [-1.0, -1.0, 0.5])

    def test_rejects_bad_dmax(self):
        f = FlowField(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            normalize_flow(f, d_max=0.0)


class TestConcatInputs:
    def test_channel_counts(self):
        a = Tensor4(np.zeros((1, 3, 4, 4), dtype=np.float32))
        b = Tensor4(np.ones((1, 3, 4, 4), dtype=np.float32))
        f = Tensor4(np.full((1, 2, 4, 4), 0.5, dtype=np.float32))
        assert concat_inputs(a, b, f).dims == (1, 8, 4, 4)
        assert concat_inputs(a, b).dims == (1, 6, 4, 4)

    def test_preserves_values_at_offsets(self):
        rng = np.random.default_rng(0)
        a = Tensor4(rng.normal(size=(1, 3, 4, 4)).astype(np.float32))
        b = Tensor4(rng.normal(size=(1, 3, 4, 4)).astype(np.float32))
        f = Tensor4(rng.normal(size=(1, 2, 4, 4)).astype(np.float32))
        out = concat_inputs(a, b, f).data
        np.testing.assert_array_equal(out[:, 0:3], a.data)
        np.testing.assert_array_equal(out[:, 3:6], b.data)
        np.testing.assert_array_equal(out[:, 6:8], f.data)

    def test_shape_mismatch(self):
        a = Tensor4(np.zeros((1, 3, 4, 4), dtype=np.float32))
        b = Tensor4(np.zeros((1, 3, 8, 8), dtype=np.float32))
        with pytest.raises(ShapeError):
            concat_inputs(a, b)


class TestPlumbing:
    def test_add_mul(self):
        a = Tensor4(np.full((1, 1, 2, 2), 2.0, dtype=np.float32))
        b = Tensor4(np.full((1, 1, 2, 2), 3.0, dtype=np.float32))
        assert float(add(a, b).data[0, 0, 0, 0]) == 5.0
        assert float(mul(a, b).data[0, 0, 0, 0]) == 6.0

    def test_pad_crop_round_trip(self):
        t = Tensor4(np.random.default_rng(0).normal(size=(1, 2, 3, 4)).astype(np.float32))
        padded = pad(t, 1, 2, 3, 4)
        assert padded.dims == (1, 2, 6, 11)
        back = crop(padded, 1, 3, 3, 4)
        np.testing.assert_array_equal(back.data, t.data)

    def test_resize_identity(self):
        t = Tensor4(np.random.default_rng(1).normal(size=(1, 2, 5, 7)).astype(np.float32))
        out = bilinear_resize(t, 5, 7)
        np.testing.assert_allclose(out.data, t.data, atol=1e-6)

    def test_resize_constant_preserved(self):
        arr = np.full((5, 8), 3.25)
        out = bilinear_resize_array(arr, 11, 3)
        np.testing.assert_allclose(out, 3.25)

    def test_rotate90_four_times_is_identity(self):
        t = Tensor4(np.random.default_rng(2).normal(size=(1, 3, 4, 6)).astype(np.float32))
        out = t
        for _ in range(4):
            out = rotate90(out)
        np.testing.assert_array_equal(out.data, t.data)


class TestRotateFlow:
    def test_quarter_turn_vector_rule(self):
        # A rightward unit flow becomes a downward unit flow after one turn.
        f = FlowField(np.ones((2, 2)), np.zeros((2, 2)))
        r = rotate_flow_90(f)
        np.testing.assert_allclose(r.u, 0.0)
        np.testing.assert_allclose(r.v, 1.0)

    def test_four_turns_identity(self):
        rng = np.random.default_rng(3)
        f = FlowField(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
        r = rotate_flow_90(f, 4)
        np.testing.assert_array_equal(r.u, f.u)
        np.testing.assert_array_equal(r.v, f.v)

    def test_matches_shifted_scene_geometry(self):
        # Rotating a pure-translation flow field must match the flow of the
        # rotated translation: d' = R d.
        du, dv = 3.0, -2.0
        f = FlowField(np.full((6, 6), du), np.full((6, 6), dv))
        r = rotate_flow_90(f)
        np.testing.assert_allclose(r.u, -dv)
        np.testing.assert_allclose(r.v, du)


class TestFlowColor:
    def test_zero_flow_is_white(self):
        img = flow_to_color(FlowField(np.zeros((3, 3)), np.zeros((3, 3))), max_mag=1.0)
        assert np.all(img.data == 255)

    def test_pure_u_at_max_mag_is_saturated_zero_hue(self):
        img = flow_to_color(FlowField(np.full((1, 1), 2.0), np.zeros((1, 1))), max_mag=2.0)
        np.testing.assert_array_equal(img.data[0, 0], [255, 0, 0])

    def test_negation_rotates_hue_by_pi(self):
        rng = np.random.default_rng(4)
        u = rng.normal(size=(5, 5))
        v = rng.normal(size=(5, 5))
        a = flow_to_color(FlowField(u, v), max_mag=10.0).data.astype(int)
        b = flow_to_color(FlowField(-u, -v), max_mag=10.0).data.astype(int)
        # Opposite hues at equal saturation satisfy rgb_a + rgb_b = white + gray level:
        # with value 1, c + c_opposite = 1 + (1 - s) per channel.
        mag = np.hypot(u, v) / 10.0
        expect = np.rint(255 * (2.0 - np.clip(mag, 0, 1)))
        expect = np.broadcast_to(expect[:, :, None], a.shape)
        np.testing.assert_allclose(a + b, expect, atol=2)


def test_gray_weights():
    img = _img([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]])
    gray = to_gray_array(img)
    np.testing.assert_allclose(gray[0], [0.299, 0.587, 0.114], atol=1e-9)


@settings(deadline=None, max_examples=25)
@given(
    st.integers(1, 30), st.integers(1, 30),
    st.integers(0, 3),
)
def test_rotate_group_action_property(w, h, turns):
    rng = np.random.default_rng(w * 31 + h)
    arr = rng.normal(size=(h, w, 2))
    out = arr
    for _ in range(4):
        out = rotate90_array(out, 1)
    np.testing.assert_array_equal(out, arr)
    once = rotate90_array(arr, turns)
    step = arr
    for _ in range(turns):
        step = rotate90_array(step, 1)
    np.testing.assert_array_equal(once, step)
