"""Encoder-decoder change network: primitives, model, training, checkpoints."""

from .model import NetworkConfig, NetworkParams, LayerSpec, forward, init_params, parameter_count
from .train import TrainConfig, train
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "NetworkConfig",
    "NetworkParams",
    "LayerSpec",
    "forward",
    "init_params",
    "parameter_count",
    "TrainConfig",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]
