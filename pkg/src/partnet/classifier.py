"""Global-average-pool + single FC classifier.

This is the image-level model of the ensemble: it predicts from the
channel means of a whole feature map. Part-level models reuse the same
class on RoI-pooled crops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import SeededRng, softmax_rows, softmax_rows_grad
from .train import LossConfig, OptimState, bce_loss, sgd_step

__all__ = ["GapClassifier"]


@dataclass
class GapClassifier:
    weight: np.ndarray  # (C, N)
    bias: np.ndarray    # (C,)

    @classmethod
    def init(cls, classes: int, channels: int, rng: SeededRng) -> "GapClassifier":
        bound = 1.0 / np.sqrt(channels)
        return cls(weight=rng.uniform(-bound, bound, (classes, channels)),
                   bias=np.zeros(classes))

    def params(self) -> dict:
        return {"w": self.weight, "b": self.bias}

    def copy(self) -> "GapClassifier":
        return GapClassifier(self.weight.copy(), self.bias.copy())

    def forward(self, map_data: np.ndarray):
        """Returns (probs, gap) for an (N, a, b) activation volume."""
        data = np.asarray(map_data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != self.weight.shape[1]:
            raise ShapeError(
                f"classifier expects ({self.weight.shape[1]}, a, b) input, "
                f"got {data.shape}"
            )
        gap = data.mean(axis=(1, 2))
        logits = self.weight @ gap + self.bias
        probs = softmax_rows(logits[None, :])[0]
        return probs, gap

    def predict(self, map_data: np.ndarray) -> np.ndarray:
        return self.forward(map_data)[0]

    def train_epoch(self, inputs, labels, order, batch_size: int,
                    state: OptimState, lr: float, loss_config: LossConfig):
        """One pass over ``inputs`` in the given order; returns mean loss."""
        params = self.params()
        classes = self.bias.shape[0]
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads = {"w": np.zeros_like(self.weight),
                     "b": np.zeros_like(self.bias)}
            for idx in batch:
                probs, gap = self.forward(inputs[idx])
                target = np.zeros(classes)
                target[labels[idx]] = 1.0
                loss, _, d_probs = bce_loss(probs, target, params, loss_config)
                total += loss
                d_logits = softmax_rows_grad(d_probs[None, :], probs[None, :])[0]
                grads["w"] += np.outer(d_logits, gap)
                grads["b"] += d_logits
            for name in grads:
                grads[name] /= len(batch)
            sgd_step(params, grads, state, lr, loss_config.weight_decay)
        return total / max(len(order), 1)
