"""Parameterized building blocks shared by the search and evaluation networks.

Each layer registers its parameters in a ParamStore under a dotted prefix at
construction time; construction order therefore fixes both the parameter
names and the RNG consumption, which keeps runs reproducible.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .optim import ParamStore
from .tensor import Tensor, concat, relu


def _conv_init(rng: np.random.Generator, cout: int, cin_g: int, kh: int, kw: int) -> np.ndarray:
    fan_in = cin_g * kh * kw
    return rng.standard_normal((cout, cin_g, kh, kw)) * np.sqrt(2.0 / fan_in)


class Conv:
    """Bias-free conv layer owning one weight."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 dilation: int = 1, groups: int = 1):
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        self.weight = store.create(
            f"{prefix}.weight", _conv_init(rng, cout, cin // groups, k, k))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.stride, self.padding,
                          self.dilation, self.groups)


class BatchNorm:
    """Per-channel batch norm; affine parameters only when requested."""

    def __init__(self, store: ParamStore, prefix: str, channels: int,
                 affine: bool, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum, self.eps = momentum, eps
        self.weight = store.create(f"{prefix}.weight", np.ones(channels)) if affine else None
        self.bias = store.create(f"{prefix}.bias", np.zeros(channels)) if affine else None
        self.running_mean = store.create_buffer(f"{prefix}.running_mean", np.zeros(channels))
        self.running_var = store.create_buffer(f"{prefix}.running_var", np.ones(channels))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean,
                              self.running_var, training, self.momentum, self.eps)


class Dense:
    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 din: int, dout: int):
        self.weight = store.create(
            f"{prefix}.weight", rng.standard_normal((din, dout)) * np.sqrt(1.0 / din))
        self.bias = store.create(f"{prefix}.bias", np.zeros(dout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class ReLUConvBN:
    """ReLU -> conv -> batch norm (the standard preprocessing block)."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 cin: int, cout: int, k: int = 1, stride: int = 1,
                 padding: int = 0, affine: bool = False):
        self.conv = Conv(store, f"{prefix}.conv", rng, cin, cout, k, stride, padding)
        self.bn = BatchNorm(store, f"{prefix}.bn", cout, affine)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.bn(self.conv(relu(x)), training)


class FactorizedReduce:
    """Channel-preserving 2x spatial downsample: two offset 1x1 stride-2 convs,
    concatenated, then batch norm. Requires even input spatial size."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 cin: int, cout: int, affine: bool = False):
        half = cout // 2
        self.conv1 = Conv(store, f"{prefix}.conv1", rng, cin, half, 1, stride=2)
        self.conv2 = Conv(store, f"{prefix}.conv2", rng, cin, cout - half, 1, stride=2)
        self.bn = BatchNorm(store, f"{prefix}.bn", cout, affine)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(
                f"factorized reduce needs even spatial dims, got {h}x{w}")
        x = relu(x)
        out = concat([self.conv1(x), self.conv2(ops.shift2d(x, 1, 1))], axis=1)
        return self.bn(out, training)
