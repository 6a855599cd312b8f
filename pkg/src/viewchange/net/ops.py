"""Differentiable primitives on (B, C, H, W) arrays.

Convolutions are im2col + GEMM so the heavy lifting stays inside BLAS;
every backward pass is the exact adjoint of the implemented forward and is
validated against central finite differences in the test suite. Arrays stay
in whatever float dtype they arrive in (float32 for training, float64 for
gradient checks).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ShapeError(
            f"size {size} incompatible with kernel {kernel}, stride {stride}, pad {pad}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(B, C*kh*kw, Ho*Wo) patch matrix of the padded input."""
    b, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(b, c * kh * kw, ho * wo)


def _col2im(
    cols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the input."""
    b, c, h, w = x_shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    blocks = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += blocks[
                :, :, i, j
            ]
    return xp[:, :, pad : pad + h, pad : pad + w] if pad else xp


# Below this spatial-size threshold the batch axis is folded into the GEMM
# column dimension; the deep 512-channel layers have tiny spatial extents
# and per-sample GEMMs there waste most of their time re-reading weights.
_FOLD_LIMIT = 1024


def _fold(a: np.ndarray) -> np.ndarray:
    """(B, C, P) -> (C, B*P) contiguous."""
    return np.ascontiguousarray(a.transpose(1, 0, 2)).reshape(a.shape[1], -1)


def _unfold(a: np.ndarray, b: int) -> np.ndarray:
    """(C, B*P) -> (B, C, P) contiguous."""
    c = a.shape[0]
    return np.ascontiguousarray(a.reshape(c, b, -1).transpose(1, 0, 2))


def conv2d(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
    stride: int = 1, pad: int = 0, return_cols: bool = False,
):
    """Cross-correlation; kernel is (Cout, Cin, kh, kw).

    ``return_cols=True`` also hands back the im2col patch matrix so a
    training step can reuse it in :func:`conv2d_grad`.
    """
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d shapes {x.shape} vs kernel {kernel.shape}")
    co, ci, kh, kw = kernel.shape
    b = x.shape[0]
    ho = _out_size(x.shape[2], kh, stride, pad)
    wo = _out_size(x.shape[3], kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    if b > 1 and ho * wo <= _FOLD_LIMIT:
        out = _unfold(np.matmul(kernel.reshape(co, -1), _fold(cols)), b)
    else:
        out = np.matmul(kernel.reshape(co, -1), cols)
    out = out.reshape(b, co, ho, wo)
    if bias is not None:
        out += bias[None, :, None, None]
    return (out, cols) if return_cols else out


def conv2d_grad(
    dout: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: int = 0,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernel, dbias) of conv2d for upstream ``dout``."""
    co, ci, kh, kw = kernel.shape
    b = x.shape[0]
    dflat = np.ascontiguousarray(dout.reshape(b, co, -1))
    if cols is None:
        cols = _im2col(x, kh, kw, stride, pad)
    p = dflat.shape[2]
    if b > 1 and p <= _FOLD_LIMIT:
        dff = _fold(dflat)
        dkernel = np.matmul(dff, _fold(cols).T).reshape(kernel.shape)
    else:
        dkernel = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
    dbias = dout.sum(axis=(0, 2, 3))
    if stride == 1 and kh == kw:
        # Input gradient of a stride-1 correlation is a correlation with the
        # spatially flipped, channel-transposed kernel; this avoids building
        # the (B, C*kh*kw, H*W) gradient patch matrix.
        flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = conv2d(dout, flipped, stride=1, pad=kh - 1 - pad)
    else:
        if b > 1 and p <= _FOLD_LIMIT:
            dcols = _unfold(np.matmul(kernel.reshape(co, -1).T, _fold(dflat)), b)
        else:
            dcols = np.matmul(kernel.reshape(co, -1).T, dflat)
        dx = _col2im(dcols, x.shape, kh, kw, stride, pad)
    return dx, dkernel, dbias


def conv2d_s1(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None
) -> np.ndarray:
    """Stride-1 same-size convolution that picks the cheaper data path.

    Equivalent to conv2d(x, kernel, bias, stride=1, pad=(k-1)//2). Narrow
    inputs go through the patch matrix; wide inputs with few outputs use
    k*k shifted GEMMs so the k^2-fold patch matrix is never built.
    """
    co, ci, kh, kw = kernel.shape
    b, _, h, w = x.shape
    r = (kh - 1) // 2
    if ci * kh * kw <= 16 * co:
        return conv2d(x, kernel, bias, stride=1, pad=r)
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.zeros((b, co, h * w), dtype=x.dtype)
    tmp = np.empty_like(out)
    for ki in range(kh):
        for kj in range(kw):
            xs = np.ascontiguousarray(xp[:, :, ki : ki + h, kj : kj + w]).reshape(b, ci, -1)
            np.matmul(kernel[:, :, ki, kj], xs, out=tmp)
            out += tmp
    out = out.reshape(b, co, h, w)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_s1_grad(
    dout: np.ndarray, x: np.ndarray, kernel: np.ndarray, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_s1`; ``need_dx=False`` skips the input
    gradient (the first layer of a network feeds no one below it)."""
    co, ci, kh, kw = kernel.shape
    b, _, h, w = x.shape
    r = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    dflat = np.ascontiguousarray(dout.reshape(b, co, -1))
    dkernel = np.empty_like(kernel)
    for ki in range(kh):
        for kj in range(kw):
            xs = np.ascontiguousarray(xp[:, :, ki : ki + h, kj : kj + w]).reshape(b, ci, -1)
            dkernel[:, :, ki, kj] = np.matmul(dflat, xs.transpose(0, 2, 1)).sum(axis=0)
    dbias = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = conv2d_s1(dout, flipped)
    return dx, dkernel, dbias


def transposed_conv2d(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
    stride: int = 1, pad: int = 0,
) -> np.ndarray:
    """Adjoint map of conv2d with the same (Cout, Cin, kh, kw) kernel.

    Input carries Cout channels, output Cin; a stride-2, kernel-4, pad-1
    layer exactly doubles the spatial dims.
    """
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"transposed_conv2d shapes {x.shape} vs kernel {kernel.shape}")
    co, ci, kh, kw = kernel.shape
    b, _, h, w = x.shape
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    xflat = np.ascontiguousarray(x.reshape(b, co, -1))
    if b > 1 and h * w <= _FOLD_LIMIT:
        dcols = _unfold(np.matmul(kernel.reshape(co, -1).T, _fold(xflat)), b)
    else:
        dcols = np.matmul(kernel.reshape(co, -1).T, xflat)
    out = _col2im(dcols, (b, ci, ho, wo), kh, kw, stride, pad)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def transposed_conv2d_grad(
    dout: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernel, dbias) of transposed_conv2d."""
    co, ci, kh, kw = kernel.shape
    b = x.shape[0]
    cols = _im2col(dout, kh, kw, stride, pad)
    xflat = np.ascontiguousarray(x.reshape(b, co, -1))
    p = xflat.shape[2]
    if b > 1 and p <= _FOLD_LIMIT:
        colsf = _fold(cols)
        dx = _unfold(np.matmul(kernel.reshape(co, -1), colsf), b).reshape(x.shape)
        dkernel = np.matmul(_fold(xflat), colsf.T).reshape(kernel.shape)
    else:
        dx = np.matmul(kernel.reshape(co, -1), cols).reshape(x.shape)
        dkernel = np.matmul(xflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
    dbias = dout.sum(axis=(0, 2, 3))
    return dx, dkernel, dbias


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batch_norm(
    x: np.ndarray,
    scale: np.ndarray,
    shift: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
):
    """Per-channel normalization.

    Train mode normalizes by batch statistics over (B, H, W) and returns
    updated running statistics; eval mode uses the running statistics
    unchanged. Returns (y, cache, running_mean, running_var).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    b, c, h, w = x.shape
    if mode == "train":
        if b * h * w < 2:
            raise ValueError("train-mode batch norm needs at least 2 values per channel")
        n = b * h * w
        mean = x.mean(axis=(0, 2, 3))
        var = np.einsum("bchw,bchw->c", x, x) / n - mean * mean
        var = np.maximum(var, 0.0)
        running_mean = (1.0 - momentum) * running_mean + momentum * mean
        running_var = (1.0 - momentum) * running_var + momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    cache = (xhat, inv_std, scale, mode)
    return y, cache, running_mean, running_var


def batch_norm_grad(dout: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dscale, dshift); train mode differentiates through
    the batch statistics, eval mode through the affine map only."""
    xhat, inv_std, scale, mode = cache
    b, c, h, w = dout.shape
    dshift = dout.sum(axis=(0, 2, 3))
    dscale = np.einsum("bchw,bchw->c", dout, xhat)
    dxhat = dout * scale[None, :, None, None]
    if mode == "eval":
        dxhat *= inv_std[None, :, None, None]
        return dxhat, dscale, dshift
    n = b * h * w
    sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dxhat_xhat = np.einsum("bchw,bchw->c", dxhat, xhat)[None, :, None, None]
    dx = (inv_std[None, :, None, None] / n) * (
        n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
    )
    return dx, dscale, dshift


# ---------------------------------------------------------------------------
# Activations, dropout, loss
# ---------------------------------------------------------------------------

def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """In-place leaky ReLU; safe on freshly owned arrays."""
    np.multiply(x, x.dtype.type(slope), out=x, where=x < 0)
    return x


def leaky_relu_grad(dout: np.ndarray, x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Upstream gradient; ``x`` may be the input or the output (signs agree)."""
    return np.where(x > 0, dout, slope * dout)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0, out=x)


def relu_grad(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dout, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(
    x: np.ndarray, rate: float, rng: np.random.Generator | None, mode: str = "train"
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: kept units are scaled by 1/(1-rate); identity in eval.

    Returns (y, mask); the mask already includes the 1/(1-rate) scaling and
    reapplies in the backward pass.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit RNG")
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = (rng.random(x.shape, dtype=draw_dtype) >= rate).astype(x.dtype) / x.dtype.type(
        1.0 - rate
    )
    return x * keep, keep


def dropout_grad(dout: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dout if mask is None else dout * mask


def l1_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error over every element, with its subgradient.

    For a (B, 1, H, W) prediction this is the per-image mean over the H*W
    grid, averaged over the batch. Ties contribute subgradient 0.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return loss, grad
