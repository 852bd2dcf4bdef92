"""UNet-LAL: a small U-Net whose convolution blocks all carry the adjustment layer.

Each block is ``conv -> relu -> scale first n channels by w -> conv -> relu``.
The second convolution sees the scaled and the unscaled channels together,
which is where the weighted features get fused back in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import Graph, Tensor


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_channels: int = 16
    in_channels: int = 1
    out_channels: int = 1
    kernel_size: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 2:
            raise ValueError("depth must be >= 1 and base_channels >= 2")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.in_channels != 1 or self.out_channels != 1:
            raise ValueError("only single-channel input and output are supported")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth


@dataclass(frozen=True)
class AdjustmentBlockConfig:
    in_channels: int
    out_channels: int
    split_n: int
    kernel_size: int = 3

    def __post_init__(self):
        if not 0 < self.split_n < self.out_channels:
            raise ValueError(
                f"split_n must satisfy 0 < n < N, got n={self.split_n}, N={self.out_channels}"
            )

    @classmethod
    def half(cls, in_channels: int, out_channels: int, kernel_size: int = 3):
        return cls(in_channels, out_channels, math.ceil(out_channels / 2), kernel_size)


def block_layout(config: NetworkConfig) -> list[tuple[str, AdjustmentBlockConfig]]:
    """Named adjustment blocks in forward order: encoders, bottleneck, decoders."""
    b, k = config.base_channels, config.kernel_size
    blocks = []
    cin = config.in_channels
    for i in range(config.depth):
        blocks.append((f"enc{i}", AdjustmentBlockConfig.half(cin, b * 2**i, k)))
        cin = b * 2**i
    blocks.append(("mid", AdjustmentBlockConfig.half(cin, b * 2**config.depth, k)))
    below = b * 2**config.depth
    for i in reversed(range(config.depth)):
        skip = b * 2**i
        blocks.append((f"dec{i}", AdjustmentBlockConfig.half(below + skip, skip, k)))
        below = skip
    return blocks


def param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, blk in block_layout(config):
        k = blk.kernel_size
        shapes[f"{name}.conv1.weight"] = (blk.out_channels, blk.in_channels, k, k)
        shapes[f"{name}.conv1.bias"] = (blk.out_channels,)
        shapes[f"{name}.conv2.weight"] = (blk.out_channels, blk.out_channels, k, k)
        shapes[f"{name}.conv2.bias"] = (blk.out_channels,)
    shapes["head.weight"] = (config.out_channels, config.base_channels, 1, 1)
    shapes["head.bias"] = (config.out_channels,)
    return shapes


@dataclass
class ModelParams:
    config: NetworkConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
        )


def build_unet_lal(config: NetworkConfig = NetworkConfig(), seed: int = 0) -> ModelParams:
    """He-normal weights (std = sqrt(2 / fan_in)) and zero biases, drawn in layout order.

    The 1x1 head starts at zero, so an untrained network outputs 0.5 everywhere
    whatever ``w`` is; training moves it off that constant immediately.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("bias") or name.startswith("head."):
            data = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors)


def _check_w(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"adversarial weight must lie in [0, 1], got {w}")
    return w


def adjustment_block_forward(
    graph: Graph,
    x: Tensor,
    w: float,
    params: ModelParams,
    name: str,
    split_n: int,
    adjust: bool = True,
) -> Tensor:
    """conv1 -> relu -> channel_scale(first split_n by w) -> conv2 -> relu.

    ``adjust=False`` drops the scaling entirely; it exists so tests can compare
    against the unconditioned network.
    """
    w = _check_w(w)
    h = graph.relu(graph.conv2d(x, params[f"{name}.conv1.weight"], params[f"{name}.conv1.bias"]))
    if adjust:
        h = graph.channel_scale(h, split_n, w)
    return graph.relu(graph.conv2d(h, params[f"{name}.conv2.weight"], params[f"{name}.conv2.bias"]))


def forward_tensor(graph: Graph, params: ModelParams, x: Tensor, w: float, adjust: bool = True) -> Tensor:
    """Run the network on a ``(N,) 1 x H x W`` tensor, returning probabilities of the same shape."""
    cfg = params.config
    w = _check_w(w)
    hgt, wid = x.shape[-2:]
    m = cfg.multiple
    if hgt % m or wid % m:
        raise ValueError(
            f"image size {hgt}x{wid} is not divisible by {m} (2**depth for depth={cfg.depth})"
        )
    layout = dict(block_layout(cfg))
    skips = []
    h = x
    for i in range(cfg.depth):
        name = f"enc{i}"
        h = adjustment_block_forward(graph, h, w, params, name, layout[name].split_n, adjust)
        skips.append(h)
        h = graph.maxpool2x2(h)
    h = adjustment_block_forward(graph, h, w, params, "mid", layout["mid"].split_n, adjust)
    for i in reversed(range(cfg.depth)):
        name = f"dec{i}"
        h = graph.concat_channels(graph.upsample2x2(h), skips[i])
        h = adjustment_block_forward(graph, h, w, params, name, layout[name].split_n, adjust)
    logits = graph.conv2d(h, params["head.weight"], params["head.bias"])
    return graph.sigmoid(logits)


def forward(params: ModelParams, image: np.ndarray, w: float, adjust: bool = True) -> np.ndarray:
    """Probability map (H x W, values in (0, 1)) for one image at adversarial weight ``w``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected an H x W image, got shape {image.shape}")
    g = Graph(record=False)
    out = forward_tensor(g, params, Tensor(image[None]), w, adjust)
    return out.data[0]
