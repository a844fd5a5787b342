"""Dataset splitting, the minibatch training loop and embedding export."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .model import SceneNet
from .optim import AdamState, adam_step, lr_schedule

LOSSES = {"rgb": F.mse_loss, "depth": F.l1_loss}


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


def split_indices(n: int, fractions=(0.8, 0.1, 0.1), seed: int | None = None):
    """Train/val/test index arrays. Contiguous by default, shuffled when ``seed`` is given."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError("split fractions must be >= 0 and sum to 1")
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def scene_targets(scenes, kind: str) -> np.ndarray:
    """(N, C, H, W) float64 targets from scene images."""
    if kind == "rgb":
        return np.stack([s.rgb.transpose(2, 0, 1) for s in scenes]).astype(np.float64)
    if kind == "depth":
        return np.stack([s.depth.transpose(2, 0, 1) for s in scenes]).astype(np.float64)
    raise ValueError(f"unknown target kind {kind!r}")


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)  # mean minibatch loss per epoch
    val_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    final_val_loss: float | None = None  # after batch-norm recalibration


def evaluate_loss(model: SceneNet, inputs, targets, kind: str, batch_size: int = 32) -> float:
    loss_fn = LOSSES[kind]
    total = 0.0
    for i in range(0, len(inputs), batch_size):
        x = np.asarray(inputs[i:i + batch_size], dtype=np.float64)
        pred = model.forward(x, training=False)
        total += loss_fn(pred, targets[i:i + batch_size])[0] * len(x)
    return total / len(inputs)


def train(
    model: SceneNet,
    inputs,
    targets,
    kind: str,
    epochs: int,
    batch_size: int = 32,
    seed: int = 0,
    val=None,
    schedule=lr_schedule,
    log=None,
    recalibrate: bool = True,
) -> TrainResult:
    """Minibatch Adam training with a seeded shuffle every epoch.

    ``inputs`` is (N, 4, H, W) (any float dtype, cast per batch), ``targets`` is
    (N, C, H, W). ``val`` is an optional ``(inputs, targets)`` pair scored in eval
    mode after each epoch. A trailing batch of one sample is dropped because
    batch statistics of a single sample at the 1x1 bottleneck are degenerate.

    With ``recalibrate`` the batch-norm running statistics are recomputed over
    the training inputs once training ends (see :meth:`SceneNet.recalibrate`);
    per-epoch validation losses use the momentum-averaged statistics, and
    ``final_val_loss`` is scored after recalibration.
    """
    loss_fn = LOSSES[kind]
    n = len(inputs)
    if n == 0 or len(targets) != n:
        raise ValueError("inputs and targets must be non-empty and of equal length")
    rng = np.random.default_rng(seed)
    state = AdamState()
    result = TrainResult()
    for epoch in range(epochs):
        lr = schedule(epoch)
        order = rng.permutation(n)
        batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
        if len(batches) > 1 and len(batches[-1]) == 1:
            batches.pop()
        total, count = 0.0, 0
        for step, idx in enumerate(batches):
            x = np.asarray(inputs[idx], dtype=np.float64)
            y = np.asarray(targets[idx], dtype=np.float64)
            model.params.zero_grad()
            pred = model.forward(x, training=True)
            loss, grad = loss_fn(pred, y)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}: {loss}")
            model.backward(grad)
            adam_step(model.params, lr, state)
            result.step_loss.append(loss)
            total += loss * len(idx)
            count += len(idx)
        result.train_loss.append(total / count)
        if val is not None:
            result.val_loss.append(evaluate_loss(model, val[0], val[1], kind, batch_size))
        if log is not None:
            log(epoch, result)
    if recalibrate and epochs > 0:
        model.recalibrate(inputs, batch_size)
        if val is not None:
            result.final_val_loss = evaluate_loss(model, val[0], val[1], kind, batch_size)
    return result


def export_embedding(model: SceneNet, tensor) -> np.ndarray:
    """Flattened C-vector of the 1x1 bottleneck for one input tensor."""
    x = tensor.to_network() if hasattr(tensor, "to_network") else np.asarray(tensor, dtype=np.float64)
    return model.embedding(x)
