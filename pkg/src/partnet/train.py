"""Loss, optimizer and schedule for the scoring head.

The objective is binary cross entropy over the image-level class
probabilities plus an L2 penalty on all weight matrices (biases are not
regularized). The penalty gradient is folded into the SGD update rather
than applied as decoupled decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .svb import svb_project

__all__ = ["LossConfig", "OptimState", "SvbConfig", "bce_loss", "lr_schedule",
           "sgd_step", "weight_norm_sq"]


@dataclass(frozen=True)
class LossConfig:
    weight_decay: float = 1e-4
    clamp_eps: float = 1e-12

    def __post_init__(self):
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class SvbConfig:
    """Which matrices get periodically projected, how often, and how tight."""

    epsilon: float = 0.05
    period_epochs: int = 1
    targets: tuple = ("cls_w2",)

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ConfigError(f"singular value band must be positive, got {self.epsilon}")
        if self.period_epochs < 1:
            raise ConfigError(f"projection period must be >= 1, got {self.period_epochs}")

    def apply(self, params: dict) -> None:
        for name in self.targets:
            params[name][...] = svb_project(params[name], self.epsilon)


def weight_norm_sq(params: dict) -> float:
    """Sum of squared entries over weight matrices only (names ending _w*)."""
    return float(sum((v * v).sum() for k, v in params.items() if _is_weight(k)))


def _is_weight(name: str) -> bool:
    return "_w" in name or name.endswith("w")


def bce_loss(image_probs: np.ndarray, target: np.ndarray, params: dict | None,
             config: LossConfig):
    """Binary cross entropy over classes, plus (wd/2)*||weights||^2.

    ``target`` must be one-hot. Probabilities are clamped to
    [eps, 1 - eps] before the logs; the returned gradient
    d(loss)/d(probs) = -g/y + (1-g)/(1-y) is evaluated at the clamped
    values. Returns (loss, data_loss, d_probs).
    """
    y = np.asarray(image_probs, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if y.shape != g.shape or y.ndim != 1:
        raise ShapeError(f"probs {y.shape} and target {g.shape} must be equal 1-D")
    ones = np.isclose(g, 1.0)
    if ones.sum() != 1 or not np.isclose(g[~ones], 0.0).all():
        raise DataError("target must be a one-hot vector")
    yc = np.clip(y, config.clamp_eps, 1.0 - config.clamp_eps)
    data_loss = float(-(g * np.log(yc) + (1.0 - g) * np.log(1.0 - yc)).sum())
    reg = 0.0
    if params is not None and config.weight_decay > 0.0:
        reg = 0.5 * config.weight_decay * weight_norm_sq(params)
    d_probs = -g / yc + (1.0 - g) / (1.0 - yc)
    return data_loss + reg, data_loss, d_probs


@dataclass
class OptimState:
    """Per-parameter velocities for SGD with momentum."""

    momentum: float = 0.9
    velocities: dict = field(default_factory=dict)

    def velocity(self, name: str, like: np.ndarray) -> np.ndarray:
        if name not in self.velocities:
            self.velocities[name] = np.zeros_like(like)
        elif self.velocities[name].shape != like.shape:
            raise ShapeError(
                f"velocity for {name} has shape {self.velocities[name].shape}, "
                f"parameter has {like.shape}"
            )
        return self.velocities[name]


def sgd_step(params: dict, grads: dict, state: OptimState, lr: float,
             weight_decay: float) -> None:
    """In-place update: v <- mu*v - lr*(grad + wd*param); param <- param + v.

    Weight decay only touches weight matrices, mirroring the loss term.
    With momentum 0 and decay 0 this is plain gradient descent.
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(
                f"gradient for {name} has shape {grad.shape}, parameter has "
                f"{param.shape}"
            )
        wd = weight_decay if _is_weight(name) else 0.0
        v = state.velocity(name, param)
        v *= state.momentum
        v -= lr * (grad + wd * param)
        param += v


def lr_schedule(epoch: int, base_backbone: float = 1e-3, base_head: float = 1e-1,
                drops: tuple = (80, 120)):
    """Learning rates (backbone-derived, newly initialized) at an epoch.

    Both groups decay by 10x once the epoch index reaches each drop
    boundary; the stock recipe trains 160 epochs with drops at 80/120.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    factor = 0.1 ** sum(1 for d in drops if epoch >= d)
    return base_backbone * factor, base_head * factor
