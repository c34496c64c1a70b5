"""The candidate operation set and its factories.

Eight candidates with a fixed canonical index order; the index is the
tie-breaker everywhere a ranking needs one (pruning, genotype derivation).
"""

from __future__ import annotations

import enum

import numpy as np

from . import ops
from .layers import BatchNorm, Conv, FactorizedReduce
from .optim import ParamStore
from .tensor import Tensor, relu


class OpKind(enum.IntEnum):
    """Candidate operations; the integer value is the canonical index."""

    ZERO = 0
    SKIP_CONNECT = 1
    MAX_POOL_3X3 = 2
    AVG_POOL_3X3 = 3
    SEP_CONV_3X3 = 4
    SEP_CONV_5X5 = 5
    DIL_CONV_3X3 = 6
    DIL_CONV_5X5 = 7

    @property
    def op_name(self) -> str:
        return self.name.lower()


ALL_KINDS: tuple[OpKind, ...] = tuple(OpKind)
NAME_TO_KIND = {k.op_name: k for k in ALL_KINDS}


def kind_from_name(name: str) -> OpKind:
    if name not in NAME_TO_KIND:
        raise ValueError(f"unknown operation name {name!r}")
    return NAME_TO_KIND[name]


class OpInstance:
    """One candidate operation bound to a channel count and stride."""

    def __init__(self, kind: OpKind, channels: int, stride: int):
        self.kind = kind
        self.channels = channels
        self.stride = stride

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError


class _Zero(OpInstance):
    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, c, h, w = x.shape
        s = self.stride
        shape = (n, c, -(-h // s), -(-w // s))
        data = np.zeros(shape, dtype=x.data.dtype)

        def backward(g):  # no gradient flows through a zero branch
            pass

        return Tensor._make(data, (x,), backward)


class _Identity(OpInstance):
    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return x


class _FactorizedSkip(OpInstance):
    def __init__(self, kind, channels, stride, store, prefix, rng, affine):
        super().__init__(kind, channels, stride)
        self.reduce = FactorizedReduce(store, prefix, rng, channels, channels, affine)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.reduce(x, training)


class _PoolBN(OpInstance):
    def __init__(self, kind, channels, stride, store, prefix, affine):
        super().__init__(kind, channels, stride)
        self.pool_kind = "max" if kind == OpKind.MAX_POOL_3X3 else "avg"
        self.bn = BatchNorm(store, f"{prefix}.bn", channels, affine)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.bn(ops.pool2d(x, self.pool_kind, 3, self.stride, 1), training)


class _SepConv(OpInstance):
    """Two stacked (ReLU -> depthwise kxk -> pointwise 1x1 -> BN) blocks;
    only the first block carries the stride."""

    def __init__(self, kind, channels, stride, store, prefix, rng, affine):
        super().__init__(kind, channels, stride)
        k = 3 if kind == OpKind.SEP_CONV_3X3 else 5
        pad = k // 2
        c = channels
        self.blocks = []
        for b, s in enumerate((stride, 1)):
            dw = Conv(store, f"{prefix}.dw{b}", rng, c, c, k, s, pad, groups=c)
            pw = Conv(store, f"{prefix}.pw{b}", rng, c, c, 1)
            bn = BatchNorm(store, f"{prefix}.bn{b}", c, affine)
            self.blocks.append((dw, pw, bn))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for dw, pw, bn in self.blocks:
            x = bn(pw(dw(relu(x))), training)
        return x


class _DilConv(OpInstance):
    """ReLU -> depthwise kxk dilation-2 -> pointwise 1x1 -> BN."""

    def __init__(self, kind, channels, stride, store, prefix, rng, affine):
        super().__init__(kind, channels, stride)
        k = 3 if kind == OpKind.DIL_CONV_3X3 else 5
        pad = k - 1  # dilation 2 keeps spatial size at stride 1
        c = channels
        self.dw = Conv(store, f"{prefix}.dw", rng, c, c, k, stride, pad,
                       dilation=2, groups=c)
        self.pw = Conv(store, f"{prefix}.pw", rng, c, c, 1)
        self.bn = BatchNorm(store, f"{prefix}.bn", c, affine)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.bn(self.pw(self.dw(relu(x))), training)


def instantiate_op(kind: OpKind, channels: int, stride: int, affine: bool,
                   store: ParamStore, prefix: str,
                   rng: np.random.Generator) -> OpInstance:
    """Build one candidate operation, registering its parameters under `prefix`."""
    if channels <= 0:
        raise ValueError(f"channels must be > 0, got {channels}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if kind == OpKind.ZERO:
        return _Zero(kind, channels, stride)
    if kind == OpKind.SKIP_CONNECT:
        if stride == 1:
            return _Identity(kind, channels, stride)
        return _FactorizedSkip(kind, channels, stride, store, prefix, rng, affine)
    if kind in (OpKind.MAX_POOL_3X3, OpKind.AVG_POOL_3X3):
        return _PoolBN(kind, channels, stride, store, prefix, affine)
    if kind in (OpKind.SEP_CONV_3X3, OpKind.SEP_CONV_5X5):
        return _SepConv(kind, channels, stride, store, prefix, rng, affine)
    if kind in (OpKind.DIL_CONV_3X3, OpKind.DIL_CONV_5X5):
        return _DilConv(kind, channels, stride, store, prefix, rng, affine)
    raise ValueError(f"unknown op kind {kind!r}")


def op_param_count(kind: OpKind, channels: int, stride: int = 1,
                   affine: bool = False) -> int:
    """Exact trainable-scalar count of the op `instantiate_op` would build."""
    store = ParamStore()
    instantiate_op(kind, channels, stride, affine, store, "count",
                   np.random.default_rng(0))
    return store.num_scalars()


def op_activation_count(kind: OpKind, channels: int, h: int, w: int,
                        stride: int) -> int:
    """Scalars produced by every primitive inside one candidate op (batch 1).

    This is the per-branch term of the supernet memory proxy: each ReLU,
    convolution, pooling, and batch-norm output counts once; identity
    produces nothing.
    """
    c = channels
    s_in = h * w
    ho, wo = -(-h // stride), -(-w // stride)
    s_out = ho * wo
    if kind == OpKind.ZERO:
        return c * s_out
    if kind == OpKind.SKIP_CONNECT:
        if stride == 1:
            return 0
        # relu + two half-channel convs (concatenated) + bn
        return c * s_in + 2 * c * s_out
    if kind in (OpKind.MAX_POOL_3X3, OpKind.AVG_POOL_3X3):
        return 2 * c * s_out  # pool + bn
    if kind in (OpKind.SEP_CONV_3X3, OpKind.SEP_CONV_5X5):
        # block 1: relu(in) + dw(out) + pw(out) + bn(out); block 2 all at out size
        return c * s_in + 3 * c * s_out + 4 * c * s_out
    if kind in (OpKind.DIL_CONV_3X3, OpKind.DIL_CONV_5X5):
        return c * s_in + 3 * c * s_out
    raise ValueError(f"unknown op kind {kind!r}")
