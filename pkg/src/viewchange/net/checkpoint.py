"""Parameter checkpoints: `cdnet-ckpt-v1` sized binary container.

Layout: 14-byte magic ``cdnet-ckpt-v1\\n``, a little-endian uint32 manifest
length, a UTF-8 JSON manifest (network config, free-form extras, and per
tensor name/shape/offset/nbytes), then the concatenated little-endian
float32 payloads.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..fileio import atomic_write_bytes
from .model import NetworkConfig, NetworkParams

MAGIC = b"cdnet-ckpt-v1\n"


def checkpoint_bytes(
    config: NetworkConfig, params: NetworkParams, extras: dict | None = None
) -> bytes:
    tensors = []
    payload = bytearray()
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": arr.nbytes,
            }
        )
        payload += arr.tobytes()
    manifest = {
        "format": "cdnet-ckpt-v1",
        "config": {
            "in_channels": config.in_channels,
            "s_max": config.s_max,
            "leaky_slope": config.leaky_slope,
            "dropout_rate": config.dropout_rate,
            "bn_eps": config.bn_eps,
            "bn_momentum": config.bn_momentum,
        },
        "extras": extras or {},
        "tensors": tensors,
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + bytes(payload)


def save_checkpoint(
    path: str | Path,
    config: NetworkConfig,
    params: NetworkParams,
    extras: dict | None = None,
) -> None:
    atomic_write_bytes(path, checkpoint_bytes(config, params, extras))


def load_checkpoint(path: str | Path) -> tuple[NetworkConfig, NetworkParams, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a {MAGIC.strip().decode()} checkpoint")
    if len(raw) < len(MAGIC) + 4:
        raise FormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        manifest = json.loads(raw[start : start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad manifest") from exc
    body = raw[start + mlen :]

    cfg = manifest.get("config", {})
    config = NetworkConfig(
        in_channels=int(cfg.get("in_channels", 8)),
        s_max=float(cfg.get("s_max", 255.0)),
        leaky_slope=float(cfg.get("leaky_slope", 0.2)),
        dropout_rate=float(cfg.get("dropout_rate", 0.5)),
        bn_eps=float(cfg.get("bn_eps", 1e-5)),
        bn_momentum=float(cfg.get("bn_momentum", 0.1)),
    )
    tensors: dict[str, np.ndarray] = {}
    for spec in manifest.get("tensors", []):
        off, nbytes = int(spec["offset"]), int(spec["nbytes"])
        if off + nbytes > len(body):
            raise FormatError(f"{path}: tensor {spec['name']} exceeds payload")
        arr = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off)
        tensors[spec["name"]] = arr.reshape([int(s) for s in spec["shape"]]).copy()
    return config, NetworkParams(tensors), manifest.get("extras", {})
