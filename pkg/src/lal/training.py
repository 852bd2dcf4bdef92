"""Label adversarial loss and the training loop.

Every optimisation step draws one adversarial weight ``w ~ U[0, 1]``, feeds it
to the network and to the loss, so a single set of weights learns the whole
skeleton-to-pixel family.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .network import ModelParams, NetworkConfig, build_unet_lal, forward_tensor
from .tensor import Graph, Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class LabelPair:
    pixel: np.ndarray
    skeleton: np.ndarray

    def __post_init__(self):
        for name in ("pixel", "skeleton"):
            a = np.asarray(getattr(self, name))
            if a.dtype != bool:
                if not np.isin(a, (0, 1)).all():
                    raise ValueError(f"{name} label must be binary")
                a = a.astype(bool)
            setattr(self, name, a)
        if self.pixel.shape != self.skeleton.shape:
            raise ValueError("pixel and skeleton labels differ in shape")
        if (self.skeleton & ~self.pixel).any():
            raise ValueError("skeleton label is not contained in the pixel label")


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 4
    optimizer: str = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need learning_rate >= 0, epochs >= 1, batch_size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class TrainingDiverged(RuntimeError):
    pass


def _check_w(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"adversarial weight must lie in [0, 1], got {w}")
    return w


def _as_tensor(pred) -> Tensor:
    return pred if isinstance(pred, Tensor) else Tensor(pred)


def bce(pred, label, graph: Graph | None = None) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    g = Graph() if graph is None else graph
    return g.bce(_as_tensor(pred), np.asarray(label, dtype=np.float64))


def lal_loss(pred, labels: LabelPair, w: float, graph: Graph | None = None) -> Tensor:
    """``(1 - w) * bce(pred, skeleton) + w * bce(pred, pixel)``; ``w`` is a constant."""
    w = _check_w(w)
    g = Graph() if graph is None else graph
    p = _as_tensor(pred)
    sk = g.bce(p, np.asarray(labels.skeleton, dtype=np.float64).reshape(p.shape))
    px = g.bce(p, np.asarray(labels.pixel, dtype=np.float64).reshape(p.shape))
    return g.weighted_sum(sk, px, 1.0 - w, w)


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: ModelParams, state: OptimizerState, config: TrainConfig) -> None:
    """Update ``params`` in place from their ``.grad`` buffers."""
    state.step += 1
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for t in params:
            if t.grad is not None:
                t.data -= lr * t.grad
        return
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


def _stack(dataset, idx):
    images = np.stack([dataset[i][0] for i in idx])[:, None]
    sk = np.stack([dataset[i][1].skeleton for i in idx])[:, None].astype(np.float64)
    px = np.stack([dataset[i][1].pixel for i in idx])[:, None].astype(np.float64)
    return images, LabelPair(px.astype(bool), sk.astype(bool))


def train(
    dataset: Sequence[tuple[np.ndarray, LabelPair]],
    config: TrainConfig = TrainConfig(),
    net_config: NetworkConfig = NetworkConfig(),
    params: ModelParams | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[ModelParams, list[float]]:
    """Train UNet-LAL; returns the parameters and the mean loss of every epoch."""
    if not dataset:
        raise ValueError("empty dataset")
    shapes = {np.shape(img) for img, _ in dataset}
    if len(shapes) != 1:
        raise ValueError(f"all images must share one size, got {sorted(shapes)}")
    hgt, wid = shapes.pop()
    if hgt % net_config.multiple or wid % net_config.multiple:
        raise ValueError(f"image size {hgt}x{wid} is not divisible by {net_config.multiple}")

    params = build_unet_lal(net_config, config.seed) if params is None else params
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    tensors = list(params)
    history: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images, labels = _stack(dataset, idx)
            w = float(rng.uniform(0.0, 1.0))
            g = Graph()
            pred = forward_tensor(g, params, Tensor(images), w)
            loss = lal_loss(pred, labels, w, graph=g)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at step {step} (epoch {epoch}); "
                    "the learning rate is probably too large"
                )
            backward(g, loss, tensors)
            optimizer_step(params, state, config)
            losses.append(value * len(idx))
            step += 1
        history.append(sum(losses) / len(dataset))
        log.info("epoch %d loss %.5f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return params, history
