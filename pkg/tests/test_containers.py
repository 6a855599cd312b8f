import numpy as np
import pytest

from viewchange.containers import ChangeMask, FlowField, Image, ImagePair, Tensor4
from viewchange.errors import ShapeError


def test_image_accepts_gray_and_rgb():
    gray = Image(np.zeros((4, 6), dtype=np.uint8))
    assert (gray.height, gray.width, gray.channels) == (4, 6, 1)
    rgb = Image(np.zeros((4, 6, 3), dtype=np.uint8))
    assert rgb.channels == 3


def test_image_rejects_bad_shapes_and_dtypes():
    with pytest.raises(ShapeError):
        Image(np.zeros((4, 6, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        Image(np.zeros((4, 6, 3), dtype=np.float32))


def test_image_data_is_read_only():
    img = Image(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1


def test_flow_field_validates():
    f = FlowField(np.zeros((3, 4)), np.zeros((3, 4)))
    assert (f.width, f.height) == (4, 3)
    with pytest.raises(ShapeError):
        FlowField(np.zeros((3, 4)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        FlowField(np.full((2, 2), np.nan), np.zeros((2, 2)))


def test_change_mask_range_enforced():
    ChangeMask(np.array([[0.0, 255.0]], dtype=np.float32))
    with pytest.raises(ValueError):
        ChangeMask(np.array([[256.0]]))
    with pytest.raises(ValueError):
        ChangeMask(np.array([[-1.0]]))
    m = ChangeMask(np.array([[3.0]]), s_max=4.0)
    assert m.s_max == 4.0


def test_tensor4_dims_and_finiteness():
    t = Tensor4(np.zeros((2, 3, 4, 5), dtype=np.float32))
    assert t.dims == (2, 3, 4, 5)
    with pytest.raises(ShapeError):
        Tensor4(np.zeros((3, 4, 5), dtype=np.float32))
    with pytest.raises(ValueError):
        Tensor4(np.full((1, 1, 1, 1), np.inf, dtype=np.float32))


def test_image_pair_requires_equal_dims():
    a = Image(np.zeros((4, 4, 3), dtype=np.uint8))
    b = Image(np.zeros((4, 5, 3), dtype=np.uint8))
    with pytest.raises(ShapeError):
        ImagePair(a, b)
