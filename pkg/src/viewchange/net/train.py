"""Adam training loop for the change network."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import TrainingDivergedError
from ..fileio import atomic_write_bytes
from . import kernels, ops
from .model import NetworkConfig, NetworkParams, backward, forward


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule knobs.

    ``iterations`` counts optimizer steps; when ``epochs`` is set it wins
    and the step count becomes epochs * ceil(n_samples / batch_size).
    Execution is single-threaded and fully seeded, so runs with equal
    seeds are bitwise reproducible; the ``deterministic`` flag is a
    contract marker kept in configs and checkpoints.
    """

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    iterations: int = 500
    epochs: int | None = None
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ValueError("lr, batch_size and iterations must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be positive when given")


@dataclass(frozen=True)
class LossRow:
    epoch: int
    iteration: int
    loss: float


def _batches(n: int, batch_size: int, steps: int, seed: int):
    """Seeded sample indices per step; reshuffles at every epoch boundary."""
    order = np.random.default_rng([seed, 0]).permutation(n)
    cursor = 0
    epoch = 0
    for _ in range(steps):
        if cursor + batch_size > n and cursor > 0:
            cursor = 0
            epoch += 1
            order = np.random.default_rng([seed, epoch]).permutation(n)
        take = order[cursor : cursor + batch_size]
        if len(take) < batch_size:  # dataset smaller than a batch: cycle
            reps = math.ceil(batch_size / n)
            take = np.tile(order, reps)[:batch_size]
        cursor += batch_size
        yield epoch, take


def train(
    config: NetworkConfig,
    params: NetworkParams,
    train_cfg: TrainConfig,
    dataset: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[NetworkParams, list[LossRow]]:
    """Minimize the mean-absolute loss of predictions against mask targets.

    ``dataset`` holds (input, target) pairs: input (C, H, W) float32 already
    normalized to [-1, 1], target (H, W) float32 in [0, s_max]. Returns the
    trained parameters and the per-step loss log. Raises
    :class:`TrainingDivergedError` as soon as the loss stops being finite.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    params = params.copy()
    steps = train_cfg.iterations
    if train_cfg.epochs is not None:
        steps = train_cfg.epochs * math.ceil(len(dataset) / train_cfg.batch_size)

    names = params.learnable_names()
    m = {n: np.zeros_like(params[n]) for n in names}
    v = {n: np.zeros_like(params[n]) for n in names}
    log: list[LossRow] = []

    for step, (epoch, idx) in enumerate(
        _batches(len(dataset), train_cfg.batch_size, steps, train_cfg.seed)
    ):
        x = np.stack([dataset[i][0] for i in idx])
        target = np.stack([dataset[i][1] for i in idx])[:, None]
        rng = np.random.default_rng([train_cfg.seed, 1, step])

        pred, cache = forward(config, params, x, mode="train", rng=rng, with_cache=True)
        loss, dpred = ops.l1_loss(pred, target.astype(pred.dtype))
        if not math.isfinite(loss):
            tail = [f"{r.iteration}:{r.loss:.4g}" for r in log[-5:]]
            raise TrainingDivergedError(
                f"non-finite loss at iteration {step} (recent: {', '.join(tail) or 'none'})"
            )
        grads = backward(config, params, cache, dpred)

        t = step + 1
        bc1 = 1.0 - train_cfg.beta1 ** t
        bc2 = 1.0 - train_cfg.beta2 ** t
        for name in names:
            g = np.ascontiguousarray(grads[name], dtype=params[name].dtype)
            kernels.adam_step(
                params[name], g, m[name], v[name],
                train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps,
                bc1, bc2,
            )
        log.append(LossRow(epoch=epoch, iteration=step, loss=loss))
    return params, log


def dataset_loss(
    config: NetworkConfig,
    params: NetworkParams,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    mode: str = "eval",
) -> float:
    """Mean per-sample L1 loss over a dataset with fixed parameters."""
    total = 0.0
    for x, target in dataset:
        pred = forward(config, params, x[None], mode=mode)
        loss, _ = ops.l1_loss(pred, target[None, None].astype(pred.dtype))
        total += loss
    return total / len(dataset)


def write_loss_log(rows: list[LossRow], path) -> None:
    lines = ["epoch,iteration,loss"]
    lines += [f"{r.epoch},{r.iteration},{r.loss:.8g}" for r in rows]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())
