"""Discrete evaluation network built from a genotype, and its training loop
(cutout, per-sample drop-path, optional auxiliary classifier)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .catalog import OpKind, instantiate_op, kind_from_name
from .data import Dataset
from .genotype import Genotype, validate_genotype
from .layers import BatchNorm, Conv, Dense, FactorizedReduce, ReLUConvBN
from .optim import OptimizerConfig, ParamStore, sgd_step
from .tensor import Tensor, concat, mask, relu

log = logging.getLogger(__name__)

EVAL_METRIC_COLUMNS = ("epoch", "train_loss", "test_acc", "lr")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation-network shape and training recipe (desk-scale defaults;
    the reference recipe uses 20 cells / 36 channels / 600 epochs)."""

    cells: int = 8
    channels: int = 16
    epochs: int = 30
    batch_size: int = 32
    cutout: int = 0
    drop_path: float = 0.0
    aux_weight: float = 0.0
    lr: float = 0.025
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4

    def __post_init__(self):
        if self.cells < 2:
            raise ValueError(f"need at least 2 cells, got {self.cells}")
        if self.aux_weight < 0:
            raise ValueError(f"auxiliary weight must be >= 0, got {self.aux_weight}")
        if not 0.0 <= self.drop_path < 1.0:
            raise ValueError(f"drop-path probability must be in [0, 1), got {self.drop_path}")
        if self.cutout < 0:
            raise ValueError(f"cutout length must be >= 0, got {self.cutout}")

    @property
    def reduction_positions(self) -> tuple[int, int]:
        return (self.cells // 3, 2 * self.cells // 3)

    @property
    def aux_position(self) -> int:
        return 2 * self.cells // 3


def drop_path(x: Tensor, p: float, rng: np.random.Generator | None,
              training: bool) -> Tensor:
    """Zero a whole sample's branch with probability p (training only),
    scaling survivors by 1/(1-p); identity at inference or p=0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop-path probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("drop_path requires an RNG while training")
    keep = (rng.random(x.shape[0]) >= p).astype(x.data.dtype) / (1.0 - p)
    return mask(x, keep.reshape(-1, 1, 1, 1))


def cutout(image: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Zero a length x length square centered at a uniformly random pixel,
    clipped to the image bounds. [C, H, W] in, new array out."""
    if length < 0:
        raise ValueError(f"cutout length must be >= 0, got {length}")
    out = image.copy()
    if length == 0:
        return out
    h, w = image.shape[-2:]
    cy = int(rng.integers(h))
    cx = int(rng.integers(w))
    y0, x0 = cy - length // 2, cx - length // 2
    y1, x1 = y0 + length, x0 + length
    out[..., max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = 0.0
    return out


class DiscreteCell:
    """One evaluation cell: only the picked ops are instantiated (affine batch
    norm everywhere); drop-path applies per branch except plain identity."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 genotype: Genotype, cell_type: str, c_prev_prev: int,
                 c_prev: int, channels: int, reduction_prev: bool):
        self.cell_type = cell_type
        self.reduction = cell_type == "reduce"
        self.channels = channels
        self.nodes = genotype.nodes
        if reduction_prev:
            self.pre0 = FactorizedReduce(store, f"{prefix}.pre0", rng,
                                         c_prev_prev, channels, affine=True)
        else:
            self.pre0 = ReLUConvBN(store, f"{prefix}.pre0", rng, c_prev_prev,
                                   channels, 1, affine=True)
        self.pre1 = ReLUConvBN(store, f"{prefix}.pre1", rng, c_prev, channels,
                               1, affine=True)
        self.picks = []  # (op instance, source, is_identity)
        for pos, picks in enumerate(genotype.cell(cell_type)):
            node = pos + 2
            for name, src in picks:
                kind = kind_from_name(name)
                stride = 2 if self.reduction and src < 2 else 1
                op = instantiate_op(kind, channels, stride, True, store,
                                    f"{prefix}.n{node}.{name}_from{src}", rng)
                identity = kind == OpKind.SKIP_CONNECT and stride == 1
                self.picks.append((op, src, identity))

    @property
    def out_channels(self) -> int:
        return self.nodes * self.channels

    def forward(self, s0: Tensor, s1: Tensor, training: bool,
                drop_p: float, rng: np.random.Generator | None) -> Tensor:
        states = [self.pre0(s0, training), self.pre1(s1, training)]
        it = iter(self.picks)
        for _ in range(self.nodes):
            acc = None
            for op, src, identity in (next(it), next(it)):
                y = op(states[src], training)
                if not identity:
                    y = drop_path(y, drop_p, rng, training)
                acc = y if acc is None else acc + y
            states.append(acc)
        return concat(states[2:], axis=1)


class EvalNet:
    """Stem, stacked discrete cells, optional auxiliary head, classifier."""

    def __init__(self, genotype: Genotype, cfg: EvalConfig, store: ParamStore,
                 rng: np.random.Generator, num_classes: int, in_channels: int,
                 input_size: int):
        validate_genotype(genotype)
        self.cfg = cfg
        self.input_shape = (in_channels, input_size, input_size)
        self.stem_conv = Conv(store, "stem.conv", rng, in_channels,
                              cfg.channels, 3, padding=1)
        self.stem_bn = BatchNorm(store, "stem.bn", cfg.channels, affine=True)
        self.cells: list[DiscreteCell] = []
        c_pp = c_p = cfg.channels
        c_curr = cfg.channels
        reduction_prev = False
        self.aux_head = None
        aux_channels = None
        for idx in range(cfg.cells):
            reduction = idx in cfg.reduction_positions
            if reduction:
                c_curr *= 2
            cell = DiscreteCell(store, f"cell{idx}", rng, genotype,
                                "reduce" if reduction else "normal",
                                c_pp, c_p, c_curr, reduction_prev)
            self.cells.append(cell)
            c_pp, c_p = c_p, cell.out_channels
            reduction_prev = reduction
            if idx == cfg.aux_position and cfg.aux_weight > 0:
                aux_channels = c_p
        if aux_channels is not None:
            self.aux_head = Dense(store, "aux.classifier", rng, aux_channels,
                                  num_classes)
        self.classifier = Dense(store, "classifier", rng, c_p, num_classes)

    def forward(self, x: Tensor, training: bool = False,
                rng: np.random.Generator | None = None):
        if x.shape[1:] != self.input_shape:
            raise ValueError(
                f"input shape {x.shape[1:]} does not match {self.input_shape}")
        drop_p = self.cfg.drop_path if training else 0.0
        s0 = s1 = self.stem_bn(self.stem_conv(x), training)
        aux_logits = None
        for idx, cell in enumerate(self.cells):
            s0, s1 = s1, cell.forward(s0, s1, training, drop_p, rng)
            if self.aux_head is not None and idx == self.cfg.aux_position and training:
                aux_logits = self.aux_head(ops.global_avg_pool(relu(s1)))
        logits = self.classifier(ops.global_avg_pool(s1))
        return logits, aux_logits


def build_eval_net(genotype: Genotype, cfg: EvalConfig, store: ParamStore,
                   rng: np.random.Generator, num_classes: int = 10,
                   in_channels: int = 3, input_size: int = 32) -> EvalNet:
    return EvalNet(genotype, cfg, store, rng, num_classes, in_channels, input_size)


def _accuracy(net: EvalNet, ds: Dataset, batch_size: int) -> float:
    hits = 0
    for i in range(0, len(ds), batch_size):
        logits, _ = net.forward(Tensor(ds.images[i:i + batch_size]), training=False)
        hits += int((logits.data.argmax(axis=1) == ds.labels[i:i + batch_size]).sum())
    return hits / len(ds)


def train_eval(net: EvalNet, store: ParamStore, train_ds: Dataset,
               test_ds: Dataset, cfg: EvalConfig, seed: int) -> list[dict]:
    """SGD + cosine training of the discrete network; one metrics row per
    epoch: (epoch, train_loss, test_acc, lr). The logged loss is the total
    (main plus aux_weight times the auxiliary loss)."""
    opt = OptimizerConfig(kind="sgd", lr=cfg.lr, lr_min=cfg.lr_min,
                          schedule="cosine", total_steps=cfg.epochs,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    opt.validate()
    data_rng = np.random.default_rng([seed, 40])
    aug_rng = np.random.default_rng([seed, 41])
    rows = []
    for epoch in range(cfg.epochs):
        lr = opt.lr_at(epoch)
        perm = data_rng.permutation(len(train_ds))
        losses = []
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            images = train_ds.images[idx]
            if cfg.cutout > 0:
                images = np.stack([cutout(im, cfg.cutout, aug_rng) for im in images])
            logits, aux = net.forward(Tensor(images), training=True, rng=aug_rng)
            loss = ops.cross_entropy(logits, train_ds.labels[idx])
            if aux is not None:
                from .tensor import scale
                loss = loss + scale(ops.cross_entropy(aux, train_ds.labels[idx]),
                                    cfg.aux_weight)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"epoch {epoch}: non-finite training loss")
            store.zero_grad()
            loss.backward()
            sgd_step(store, opt, epoch)
            losses.append(loss.item())
        rows.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "test_acc": _accuracy(net, test_ds, cfg.batch_size),
            "lr": lr,
        })
    return rows
