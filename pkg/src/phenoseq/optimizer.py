"""Adam updates and the epoch/minibatch training loop.

Training is deterministic given the config seed: epoch shuffles, batch
composition, and any augmentation draws all come from derived RNG streams.
The last partial minibatch is kept, and gradients are averaged (not summed)
inside the model's batch loss, so the learning rate is batch-size free.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .tensor import RngStream, ShapeMismatchError

__all__ = ["AdamState", "TrainConfig", "TrainingDiverged", "train", "write_loss_csv"]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    learning_rate: float = 1e-4
    freeze_extractor: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class AdamState:
    """First/second moment estimates per parameter, with bias correction.

    Moments are allocated lazily per parameter name, so parameters that never
    receive a gradient (e.g. a frozen extractor) are left untouched.
    """

    def __init__(self, learning_rate: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict):
        """One update; t is incremented before bias correction. In-place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"gradient shape {g.shape} != parameter shape {p.shape} for {name}"
                )
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _batch_step(model, inputs, labels, freeze_extractor):
    if model.kind == "cnn_lstm":
        return model.loss_and_grads(inputs, labels, freeze_extractor=freeze_extractor)
    return model.loss_and_grads(np.stack(inputs), labels)


def train(model, samples, config: TrainConfig, augment_fn=None):
    """Minimize cross-entropy over (input, class-index) samples.

    ``augment_fn(input, rng) -> input`` is applied on the fly with a stream
    derived per (epoch, sample), mirroring train-time augmentation. Returns
    the per-epoch mean training loss; raises TrainingDiverged on non-finite
    loss.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    rng = RngStream(config.seed).derive("train")
    adam = AdamState(learning_rate=config.learning_rate)
    params = model.params()
    history = []
    for epoch in range(config.epochs):
        order = rng.derive("shuffle", epoch).permutation(len(samples))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            inputs, labels = [], []
            for i in batch_idx:
                x, y = samples[int(i)]
                if augment_fn is not None:
                    x = augment_fn(x, rng.derive("augment", epoch, int(i)))
                inputs.append(x)
                labels.append(y)
            loss, grads = _batch_step(model, inputs, labels, config.freeze_extractor)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {start}"
                )
            adam.step(params, grads)
            total_loss += loss * len(batch_idx)
        history.append(total_loss / len(samples))
    return history


def write_loss_csv(path, history):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(loss))])
