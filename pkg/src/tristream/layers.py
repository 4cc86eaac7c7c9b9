"""Parameter-holding layers built on the tensor ops."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import BNState, Tensor


class Conv2dLayer:
    """3x3-style convolution with bias and optional trailing ReLU."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int,
        padding: int,
        rng: np.random.Generator,
        activation: bool = True,
    ):
        fan_in = kernel_size * kernel_size * in_channels
        self.kernel = Tensor(
            T.kaiming_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.activation = activation

    def __call__(self, x) -> Tensor:
        out = T.conv2d(x, self.kernel, stride=self.stride, padding=self.padding)
        out = T.add(out, self.bias)
        return T.relu(out) if self.activation else out

    def describe(self) -> dict:
        kh, kw, cin, cout = self.kernel.shape
        return {
            "type": "conv2d",
            "kernel": [kh, kw, cin, cout],
            "stride": self.stride,
            "padding": self.padding,
            "relu": self.activation,
        }

    def named_params(self, prefix: str):
        yield f"{prefix}.kernel", self.kernel
        yield f"{prefix}.bias", self.bias


class LinearLayer:
    """Affine map [N, D] -> [N, C]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(T.kaiming_uniform(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class BatchNorm1d:
    """Batch norm over [N, D] with learnable affine and running stats."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.state = BNState.create(dim, eps=eps, momentum=momentum)

    def __call__(self, x, training: bool) -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.state, training)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_stats(self, prefix: str):
        yield prefix, self.state
