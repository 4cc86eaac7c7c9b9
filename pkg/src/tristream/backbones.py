"""Small convolutional backbones.

Two topologies are preserved at reduced scale: a shared stem feeding two
branches with identical architecture but disjoint parameters (stride 16
total, used by the global and head streams), and a higher-resolution
dense-map extractor (stride 4, used by the part stream). Every backbone
output passes through a terminal ReLU, so feature maps are nonnegative —
the pooling/erasing heads rely on that.
"""

from __future__ import annotations

import json

import numpy as np

from .config import ModelConfig
from .errors import ShapeError
from .layers import Conv2dLayer
from .tensor import Tensor


def _conv_stack(channel_plan, rng: np.random.Generator):
    """Chain of 3x3 stride-2 ReLU convs; each halves the spatial dims."""
    layers = []
    for cin, cout in zip(channel_plan[:-1], channel_plan[1:]):
        layers.append(Conv2dLayer(cin, cout, kernel_size=3, stride=2, padding=1, rng=rng))
    return layers


def _run_stack(layers, x):
    for layer in layers:
        x = layer(x)
    return x


class StreamBackbone:
    """Shared stem, then two branches with equal architecture and separate weights."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c1, c2 = cfg.stem_channels
        cb = cfg.branch_channels
        self.input_hw = (cfg.input_h, cfg.input_w)
        self.stem = _conv_stack((3, c1, c2), rng)
        self.branch_a = _conv_stack((c2, cb, cb), rng)
        self.branch_b = _conv_stack((c2, cb, cb), rng)

    def __call__(self, image) -> tuple[Tensor, Tensor]:
        """Return the two branch maps for one image [H,W,3] or a batch [N,H,W,3]."""
        hw = image.shape[-3:-1]
        if tuple(hw) != self.input_hw:
            raise ShapeError(f"expected {self.input_hw} input, got {tuple(hw)}")
        shared = _run_stack(self.stem, image)
        return _run_stack(self.branch_a, shared), _run_stack(self.branch_b, shared)

    def describe(self) -> str:
        return json.dumps(
            {
                "stem": [l.describe() for l in self.stem],
                "branch": [l.describe() for l in self.branch_a],
            }
        )

    def describe_branch(self, which: str) -> str:
        layers = self.branch_a if which == "a" else self.branch_b
        return json.dumps([l.describe() for l in layers])

    def named_params(self, prefix: str):
        for i, l in enumerate(self.stem):
            yield from l.named_params(f"{prefix}.stem{i}")
        for i, l in enumerate(self.branch_a):
            yield from l.named_params(f"{prefix}.branch_a{i}")
        for i, l in enumerate(self.branch_b):
            yield from l.named_params(f"{prefix}.branch_b{i}")


class DenseBackbone:
    """High-resolution extractor: output spatial dims = input / 4."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.input_hw = (cfg.input_h, cfg.input_w)
        self.layers = _conv_stack((3, cfg.dense_hidden, cfg.dense_channels), rng)

    def __call__(self, image) -> Tensor:
        hw = image.shape[-3:-1]
        if tuple(hw) != self.input_hw:
            raise ShapeError(f"expected {self.input_hw} input, got {tuple(hw)}")
        return _run_stack(self.layers, image)

    def describe(self) -> str:
        return json.dumps([l.describe() for l in self.layers])

    def named_params(self, prefix: str):
        for i, l in enumerate(self.layers):
            yield from l.named_params(f"{prefix}.conv{i}")
