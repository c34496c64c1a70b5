"""Parameter store, SGD/Adam steps, cosine schedule, and checkpoint I/O.

Checkpoint layout (little-endian, stable across versions):

    magic   8 bytes  b"PSTORE01"
    count   uint32   number of entries
    entry:
        name_len  uint16
        name      utf-8 bytes
        kind      uint8   0 = trainable parameter, 1 = buffer
        dtype     uint8   0 = float32, 1 = float64
        ndim      uint8
        dims      uint32 * ndim
        data      row-major raw scalars

Entries are written sorted by name. Optimizer moments are not part of the
checkpoint; training resumes re-create them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, default_dtype

_MAGIC = b"PSTORE01"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.float32, 1: np.float64}


class ParamStore:
    """Named parameters plus per-parameter optimizer state.

    Names are stable paths ("cell0.edge0_2.sep_conv_3x3.dw1.weight"); the
    construction order of a network determines both the names and the RNG
    draws, so identical seeds give identical stores.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.steps: dict[str, int] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)
        self.params[name] = t
        return t

    def create_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=default_dtype()).copy()
        self.buffers[name] = arr
        return arr

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.size for t in self.params.values())

    def slot(self, name: str, key: str) -> np.ndarray:
        """Fetch-or-create a moment buffer shaped like the parameter."""
        per = self.state.setdefault(name, {})
        if key not in per:
            per[key] = np.zeros_like(self.params[name].data)
        buf = per[key]
        if buf.shape != self.params[name].shape:
            raise ValueError(
                f"moment buffer {key!r} for {name!r} has shape {buf.shape}, "
                f"parameter has {self.params[name].shape}")
        return buf

    # -- checkpoint I/O -------------------------------------------------------

    def save(self, path) -> None:
        entries = [(n, 0, t.data) for n, t in self.params.items()]
        entries += [(n, 1, a) for n, a in self.buffers.items()]
        entries.sort(key=lambda e: e[0])
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<I", len(entries)))
            for name, kind, arr in entries:
                nb = name.encode("utf-8")
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                f.write(struct.pack("<BBB", kind, _DTYPE_CODES[arr.dtype], arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())

    def load(self, path) -> None:
        """Load values into existing entries (names and shapes must match)."""
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
        off = 8
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            kind, dcode, ndim = struct.unpack_from("<BBB", raw, off)
            off += 3
            dims = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            dtype = np.dtype(_CODE_DTYPES[dcode]).newbyteorder("<")
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            arr = np.frombuffer(raw[off:off + nbytes], dtype=dtype).reshape(dims)
            off += nbytes
            target = self.params.get(name).data if kind == 0 and name in self.params \
                else self.buffers.get(name)
            if target is None:
                raise ValueError(f"{path}: unknown entry {name!r}")
            if target.shape != tuple(dims):
                raise ValueError(
                    f"{path}: entry {name!r} has shape {tuple(dims)}, "
                    f"expected {target.shape}")
            target[...] = arr.astype(target.dtype)


@dataclass
class OptimizerConfig:
    """Settings for one optimizer (weights or architecture parameters)."""

    kind: str = "sgd"                      # "sgd" | "adam"
    lr: float = 0.025
    lr_min: float = 0.0
    schedule: str = "constant"             # "constant" | "cosine"
    total_steps: int = 1                   # cosine period T
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be sgd or adam, got {self.kind!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.betas[1] < 1.0:
            raise ValueError(f"beta2 must be in (0, 1), got {self.betas[1]}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"schedule must be constant or cosine, got {self.schedule!r}")
        if self.schedule == "cosine" and self.total_steps <= 0:
            raise ValueError(f"cosine schedule needs total_steps > 0, got {self.total_steps}")

    def lr_at(self, t: int) -> float:
        if self.schedule == "cosine":
            return cosine_lr(t, self.total_steps, self.lr, self.lr_min)
        return self.lr


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing: lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2."""
    if total <= 0:
        raise ValueError(f"cosine_lr: total must be > 0, got {total}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def sgd_step(store: ParamStore, cfg: OptimizerConfig, t: int) -> None:
    """One SGD-with-momentum step on every parameter with a gradient.

    Weight decay is coupled L2 (added to the gradient before the momentum
    update), matching the usual convolutional-net convention.
    """
    lr = cfg.lr_at(t)
    for name, p in store.params.items():
        if p.grad is None:
            continue
        g = p.grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if cfg.momentum:
            v = store.slot(name, "momentum")
            v *= cfg.momentum
            v += g
            g = v
        p.data -= (lr * g).astype(p.data.dtype)
        store.steps[name] = store.steps.get(name, 0) + 1


def adam_step(store: ParamStore, cfg: OptimizerConfig, t: int | None = None) -> None:
    """One Adam step with bias correction; L2 decay added to the gradient."""
    b1, b2 = cfg.betas
    for name, p in store.params.items():
        if p.grad is None:
            continue
        g = p.grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        step = store.steps.get(name, 0) + 1
        store.steps[name] = step
        m = store.slot(name, "m")
        v = store.slot(name, "v")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** step)
        vhat = v / (1.0 - b2 ** step)
        lr = cfg.lr_at(t if t is not None else step - 1)
        p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.data.dtype)
