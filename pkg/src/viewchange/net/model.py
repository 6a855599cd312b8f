"""The 8-layer encoder / 8-layer decoder change network.

Blocks are written C / CR / CBR / CBRD for convolution, batch norm, ReLU
and dropout applied in that order. Encoder ReLUs are leaky (slope 0.2),
decoder ReLUs plain. Decoder stage k consumes the previous decoder output
concatenated with the encoder activation at the mirrored resolution, and
the head squashes the final convolution through a sigmoid scaled to
[0, s_max] so predictions live in change-mask units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..containers import Tensor4, as_nchw
from ..errors import ShapeError
from . import ops


@dataclass(frozen=True)
class LayerSpec:
    block: str          # "C" | "CR" | "CBR" | "CBRD"
    out_channels: int
    kernel: int
    stride: int
    direction: str      # "encode" | "decode"

    def __post_init__(self):
        if self.block not in ("C", "CR", "CBR", "CBRD"):
            raise ValueError(f"unknown block {self.block!r}")
        if self.direction not in ("encode", "decode"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def has_bn(self) -> bool:
        return "B" in self.block

    @property
    def has_relu(self) -> bool:
        return "R" in self.block

    @property
    def has_dropout(self) -> bool:
        return "D" in self.block

    @property
    def pad(self) -> int:
        # kernel 4 halves/doubles with stride 2; kernel 3 preserves dims.
        return 1


def _enc(block, ch, k, s):
    return LayerSpec(block, ch, k, s, "encode")


def _dec(block, ch, k, s):
    return LayerSpec(block, ch, k, s, "decode")


ENCODER_LAYERS = (
    _enc("CR", 64, 3, 1),
    _enc("CBR", 128, 4, 2),
    _enc("CBR", 256, 4, 2),
    _enc("CBR", 512, 4, 2),
    _enc("CBR", 512, 4, 2),
    _enc("CBR", 512, 4, 2),
    _enc("CBR", 512, 4, 2),
    _enc("CBR", 512, 4, 2),
)

DECODER_LAYERS = (
    _dec("CBRD", 512, 4, 2),
    _dec("CBRD", 512, 4, 2),
    _dec("CBRD", 512, 4, 2),
    _dec("CBR", 512, 4, 2),
    _dec("CBR", 256, 4, 2),
    _dec("CBR", 128, 4, 2),
    _dec("CBR", 64, 4, 2),
    _dec("C", 1, 3, 1),
)

SPATIAL_FACTOR = 2 ** sum(1 for l in ENCODER_LAYERS if l.stride == 2)


@dataclass(frozen=True)
class NetworkConfig:
    """Hyper-parameters around the fixed layer tables.

    ``in_channels`` is 8 when the flow image is part of the input and 6 for
    the image-pair-only variant; nothing else differs between the two.
    """

    in_channels: int = 8
    s_max: float = 255.0
    leaky_slope: float = 0.2
    dropout_rate: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    encoder: tuple[LayerSpec, ...] = ENCODER_LAYERS
    decoder: tuple[LayerSpec, ...] = DECODER_LAYERS

    def __post_init__(self):
        if self.in_channels not in (6, 8):
            raise ValueError("in_channels must be 6 or 8")
        if self.encoder != ENCODER_LAYERS or self.decoder != DECODER_LAYERS:
            raise ValueError("the layer tables are fixed")
        if self.s_max <= 0:
            raise ValueError("s_max must be positive")

    def encoder_in_channels(self) -> list[int]:
        ins = [self.in_channels]
        for layer in self.encoder[:-1]:
            ins.append(layer.out_channels)
        return ins

    def decoder_in_channels(self) -> list[int]:
        enc_out = [l.out_channels for l in self.encoder]
        ins = [enc_out[-1]]
        prev = self.decoder[0].out_channels
        for k in range(1, len(self.decoder)):
            ins.append(prev + enc_out[len(enc_out) - 1 - k])
            prev = self.decoder[k].out_channels
        return ins


def _layer_names(config: NetworkConfig):
    for i in range(len(config.encoder)):
        yield f"enc{i}", config.encoder[i]
    for i in range(len(config.decoder)):
        yield f"dec{i}", config.decoder[i]


LEARNABLE_SUFFIXES = ("weight", "bias", "bn_scale", "bn_shift")
STATE_SUFFIXES = ("bn_mean", "bn_var")


class NetworkParams:
    """Named parameter tensors plus batch-norm running statistics."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def learnable_names(self) -> list[str]:
        return [n for n in self.tensors if n.rsplit(".", 1)[1] in LEARNABLE_SUFFIXES]

    def count(self) -> int:
        return sum(self.tensors[n].size for n in self.learnable_names())

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def _weight_shape(layer: LayerSpec, in_ch: int) -> tuple[int, int, int, int]:
    if layer.direction == "decode" and layer.stride == 2:
        # transposed convolution: (in, out, kh, kw)
        return (in_ch, layer.out_channels, layer.kernel, layer.kernel)
    return (layer.out_channels, in_ch, layer.kernel, layer.kernel)


def init_params(
    config: NetworkConfig, seed: int = 0, dtype=np.float32
) -> NetworkParams:
    """Zero-mean Gaussian kernels (sigma 0.02), zero biases, identity norms."""
    rng = np.random.default_rng(seed)
    ins = config.encoder_in_channels() + config.decoder_in_channels()
    tensors: dict[str, np.ndarray] = {}
    for (name, layer), in_ch in zip(_layer_names(config), ins):
        tensors[f"{name}.weight"] = rng.normal(
            0.0, 0.02, size=_weight_shape(layer, in_ch)
        ).astype(dtype)
        tensors[f"{name}.bias"] = np.zeros(layer.out_channels, dtype=dtype)
        if layer.has_bn:
            c = layer.out_channels
            tensors[f"{name}.bn_scale"] = np.ones(c, dtype=dtype)
            tensors[f"{name}.bn_shift"] = np.zeros(c, dtype=dtype)
            tensors[f"{name}.bn_mean"] = np.zeros(c, dtype=dtype)
            tensors[f"{name}.bn_var"] = np.ones(c, dtype=dtype)
    return NetworkParams(tensors)


def parameter_count(config: NetworkConfig) -> int:
    """Learnable parameter total, computed from the layer tables alone."""
    total = 0
    ins = config.encoder_in_channels() + config.decoder_in_channels()
    for (_, layer), in_ch in zip(_layer_names(config), ins):
        total += layer.kernel * layer.kernel * in_ch * layer.out_channels
        total += layer.out_channels
        if layer.has_bn:
            total += 2 * layer.out_channels
    return total


def _apply_layer(name, layer, params, x, mode, rng, config, cache):
    entry = {"x": x, "layer": layer, "name": name}
    w = params[f"{name}.weight"]
    b = params[f"{name}.bias"]
    if layer.direction == "decode" and layer.stride == 2:
        out = ops.transposed_conv2d(x, w, b, stride=2, pad=layer.pad)
    elif layer.stride == 1:
        out = ops.conv2d_s1(x, w, b)
    elif cache is not None:
        out, cols = ops.conv2d(x, w, b, stride=layer.stride, pad=layer.pad, return_cols=True)
        entry["cols"] = cols
    else:
        out = ops.conv2d(x, w, b, stride=layer.stride, pad=layer.pad)
    if layer.has_bn:
        out, bn_cache, rm, rv = ops.batch_norm(
            out,
            params[f"{name}.bn_scale"],
            params[f"{name}.bn_shift"],
            params[f"{name}.bn_mean"],
            params[f"{name}.bn_var"],
            mode=mode,
            eps=config.bn_eps,
            momentum=config.bn_momentum,
        )
        entry["bn_cache"] = bn_cache
        if mode == "train":
            params[f"{name}.bn_mean"] = rm.astype(w.dtype)
            params[f"{name}.bn_var"] = rv.astype(w.dtype)
    if layer.has_relu:
        # In-place activation on the freshly owned array; the backward pass
        # reads activation signs from the output, which ReLU kinds preserve.
        if layer.direction == "encode":
            out = ops.leaky_relu_(out, config.leaky_slope)
        else:
            out = ops.relu_(out)
        entry["act_out"] = out
    if layer.has_dropout and mode == "train":
        out, mask = ops.dropout(out, config.dropout_rate, rng, mode)
        entry["drop_mask"] = mask
    if cache is not None:
        cache.append(entry)
    return out


def forward(
    config: NetworkConfig,
    params: NetworkParams,
    x,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    with_cache: bool = False,
):
    """Run the network; returns the [0, s_max] prediction map.

    ``x`` may be a Tensor4 or a (B, C, H, W) array with H and W divisible
    by 128; the result matches the input container kind. With
    ``with_cache=True`` returns (prediction, cache) for :func:`backward`.
    """
    arr = as_nchw(x)
    if arr.shape[1] != config.in_channels:
        raise ShapeError(
            f"input has {arr.shape[1]} channels, config wants {config.in_channels}"
        )
    if arr.shape[2] % SPATIAL_FACTOR or arr.shape[3] % SPATIAL_FACTOR:
        raise ShapeError(
            f"spatial dims must be divisible by {SPATIAL_FACTOR}, got {arr.shape[2:]}"
        )
    cache: list | None = [] if with_cache else None

    acts = []
    out = arr
    for i, layer in enumerate(config.encoder):
        out = _apply_layer(f"enc{i}", layer, params, out, mode, rng, config, cache)
        acts.append(out)

    n = len(acts)
    for k, layer in enumerate(config.decoder):
        if k > 0:
            skip = acts[n - 1 - k]
            if cache is not None:
                cache.append({"concat": out.shape[1], "name": f"skip{k}"})
            out = np.concatenate([out, skip], axis=1)
        out = _apply_layer(f"dec{k}", layer, params, out, mode, rng, config, cache)

    sig = ops.sigmoid(out)
    pred = config.s_max * sig
    if cache is not None:
        cache.append({"head_sig": sig, "name": "head"})
    result = Tensor4(pred) if isinstance(x, Tensor4) else pred
    return (result, cache) if with_cache else result


def backward(
    config: NetworkConfig, params: NetworkParams, cache: list, dpred: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of every learnable tensor for upstream d(prediction)."""
    grads: dict[str, np.ndarray] = {}
    entries = list(cache)

    head = entries.pop()
    sig = head["head_sig"]
    dout = dpred * config.s_max * sig * (1.0 - sig)

    skip_grads: dict[int, np.ndarray] = {}
    n = len(config.encoder)
    # Decoder entries (with interleaved concat markers), in reverse.
    for k in range(len(config.decoder) - 1, -1, -1):
        entry = entries.pop()
        dout = _layer_backward(entry, params, config, grads, dout)
        if k > 0:
            marker = entries.pop()
            split = marker["concat"]
            skip_grads[n - 1 - k] = dout[:, split:]
            dout = dout[:, :split]

    denc = dout  # gradient flowing into the deepest encoder activation
    for i in range(n - 1, -1, -1):
        if i in skip_grads:
            denc = denc + skip_grads[i]
        entry = entries.pop()
        denc = _layer_backward(entry, params, config, grads, denc, need_dx=i > 0)
    return grads


def _layer_backward(entry, params, config, grads, dout, need_dx: bool = True):
    layer = entry["layer"]
    name = entry["name"]
    if "drop_mask" in entry:
        dout = ops.dropout_grad(dout, entry["drop_mask"])
    if layer.has_relu:
        if layer.direction == "encode":
            dout = ops.leaky_relu_grad(dout, entry["act_out"], config.leaky_slope)
        else:
            dout = ops.relu_grad(dout, entry["act_out"])
    if layer.has_bn:
        dout, dscale, dshift = ops.batch_norm_grad(dout, entry["bn_cache"])
        grads[f"{name}.bn_scale"] = dscale
        grads[f"{name}.bn_shift"] = dshift
    w = params[f"{name}.weight"]
    if layer.direction == "decode" and layer.stride == 2:
        dx, dw, db = ops.transposed_conv2d_grad(dout, entry["x"], w, stride=2, pad=layer.pad)
    elif layer.stride == 1:
        dx, dw, db = ops.conv2d_s1_grad(dout, entry["x"], w, need_dx=need_dx)
    else:
        dx, dw, db = ops.conv2d_grad(
            dout, entry["x"], w, stride=layer.stride, pad=layer.pad,
            cols=entry.get("cols"),
        )
    grads[f"{name}.weight"] = dw
    grads[f"{name}.bias"] = db
    return dx


def change_probability(pred, s_max: float = 255.0):
    """Map a [0, s_max] prediction to per-pixel change probability."""
    arr = pred.data if isinstance(pred, Tensor4) else np.asarray(pred)
    out = arr / s_max
    return Tensor4(out) if isinstance(pred, Tensor4) else out


def sliding_window_predict(
    config: NetworkConfig,
    params: NetworkParams,
    channels_hw: np.ndarray,
    window: int = 256,
    stride: int = 128,
) -> np.ndarray:
    """Eval-mode prediction map for an arbitrary-size (C, H, W) input.

    The input is edge-padded to cover at least one window, windows slide by
    ``stride`` (a final window is clamped to the far edge) and overlapping
    predictions are averaged uniformly. Returns (H, W) values in [0, s_max].
    """
    c, h, w = channels_hw.shape
    if c != config.in_channels:
        raise ShapeError(f"{c} channels vs config {config.in_channels}")
    ph, pw = max(h, window), max(w, window)
    padded = np.pad(channels_hw, ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")

    def positions(size):
        pos = list(range(0, size - window + 1, stride))
        if pos[-1] != size - window:
            pos.append(size - window)
        return pos

    acc = np.zeros((ph, pw), dtype=np.float64)
    cover = np.zeros((ph, pw), dtype=np.float64)
    for y in positions(ph):
        for x in positions(pw):
            tile = padded[None, :, y : y + window, x : x + window]
            pred = forward(config, params, tile.astype(np.float32), mode="eval")
            acc[y : y + window, x : x + window] += pred[0, 0]
            cover[y : y + window, x : x + window] += 1.0
    return (acc / cover)[:h, :w]
