"""Stacking cells into the stage super-network, plus the activation-count
proxy used to reason about search-stage memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .catalog import ALL_KINDS, OpKind, op_activation_count
from .cell import AlphaTable, Cell, CellSpec, Schema
from .layers import BatchNorm, Conv, Dense
from .optim import ParamStore
from .tensor import Tensor


@dataclass(frozen=True)
class SearchNetConfig:
    """Shape of one stage's super-network."""

    cells: int
    channels: int
    nodes: int = 4
    num_classes: int = 10
    in_channels: int = 3
    input_size: int = 32

    def __post_init__(self):
        if self.cells < 2:
            raise ValueError(f"need at least 2 cells, got {self.cells}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.input_size < 4:
            raise ValueError(f"input size must be >= 4, got {self.input_size}")

    @property
    def reduction_positions(self) -> tuple[int, int]:
        return (self.cells // 3, 2 * self.cells // 3)


def _plan_cells(cfg: SearchNetConfig):
    """Per-cell (cell_type, c_prev_prev, c_prev, channels, reduction_prev, h_in)."""
    plan = []
    c_pp = c_p = cfg.channels
    c_curr = cfg.channels
    h = cfg.input_size
    reduction_prev = False
    for idx in range(cfg.cells):
        reduction = idx in cfg.reduction_positions
        if reduction:
            c_curr *= 2
        cell_type = "reduce" if reduction else "normal"
        plan.append((cell_type, c_pp, c_p, c_curr, reduction_prev, h))
        if reduction:
            h = -(-h // 2)
        c_pp, c_p = c_p, cfg.nodes * c_curr
        reduction_prev = reduction
    return plan, c_p, h


class SuperNet:
    """Stem, L mixed cells (normal/reduction), global pooling, classifier."""

    def __init__(self, cfg: SearchNetConfig, schema: Schema, store: ParamStore,
                 rng: np.random.Generator):
        if schema.nodes != cfg.nodes:
            raise ValueError(
                f"schema has {schema.nodes} nodes, config asks for {cfg.nodes}")
        self.cfg = cfg
        self.schema = schema
        self.store = store
        self.stem_conv = Conv(store, "stem.conv", rng, cfg.in_channels,
                              cfg.channels, 3, padding=1)
        self.stem_bn = BatchNorm(store, "stem.bn", cfg.channels, affine=False)
        plan, c_final, _ = _plan_cells(cfg)
        self.cells = [
            Cell(store, f"cell{idx}", rng, schema, cell_type, c_pp, c_p,
                 c_curr, red_prev, affine=False)
            for idx, (cell_type, c_pp, c_p, c_curr, red_prev, _) in enumerate(plan)
        ]
        self.classifier = Dense(store, "classifier", rng, c_final, cfg.num_classes)

    def forward(self, x: Tensor, alphas: AlphaTable, training: bool = False,
                skip_dropout: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
        if alphas.schema != self.schema:
            raise ValueError("alpha table schema does not match the built network")
        n, c, h, w = x.shape
        if (c, h, w) != (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size):
            raise ValueError(
                f"input shape {(c, h, w)} does not match config "
                f"{(self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size)}")
        s0 = s1 = self.stem_bn(self.stem_conv(x), training)
        for cell in self.cells:
            mixed = alphas.edges(cell.cell_type)
            s0, s1 = s1, cell.forward(s0, s1, mixed, training, skip_dropout, rng)
        pooled = ops.global_avg_pool(s1)
        logits = self.classifier(pooled)
        if not np.all(np.isfinite(logits.data)):
            raise FloatingPointError("non-finite activations in supernet forward")
        return logits


def build_supernet(cfg: SearchNetConfig, schema: Schema, store: ParamStore,
                   rng: np.random.Generator) -> SuperNet:
    return SuperNet(cfg, schema, store, rng)


def dry_run(cfg: SearchNetConfig, schema: Schema) -> dict:
    """Shape-only build check: walks the full cell plan and validates every
    spatial constraint without allocating parameters or activations.

    Returns a summary dict (per-cell shapes, final feature width).
    """
    if schema.nodes != cfg.nodes:
        raise ValueError(f"schema has {schema.nodes} nodes, config asks for {cfg.nodes}")
    plan, c_final, h_final = _plan_cells(cfg)
    kinds_present = {k for table in (schema.normal, schema.reduce)
                     for cands in table for k in cands}
    max_extent = 1
    for k in kinds_present:
        if k in (OpKind.SEP_CONV_3X3, OpKind.MAX_POOL_3X3, OpKind.AVG_POOL_3X3):
            max_extent = max(max_extent, 3)
        elif k == OpKind.SEP_CONV_5X5:
            max_extent = max(max_extent, 5)
        elif k == OpKind.DIL_CONV_3X3:
            max_extent = max(max_extent, 5)
        elif k == OpKind.DIL_CONV_5X5:
            max_extent = max(max_extent, 9)
    rows = []
    for idx, (cell_type, c_pp, c_p, c_curr, red_prev, h) in enumerate(plan):
        pad = max_extent // 2
        if h + 2 * pad < max_extent:
            raise ValueError(
                f"cell {idx}: spatial size {h} too small for kernel extent {max_extent}")
        if cell_type == "reduce" and h % 2:
            raise ValueError(
                f"cell {idx}: reduction at odd spatial size {h} is unsupported")
        h_out = -(-h // 2) if cell_type == "reduce" else h
        rows.append({"cell": idx, "type": cell_type, "channels": c_curr,
                     "in_size": h, "out_size": h_out,
                     "out_channels": cfg.nodes * c_curr})
    return {"cells": rows, "final_channels": c_final, "final_size": h_final,
            "stem_channels": cfg.channels}


def activation_count_proxy(cfg: SearchNetConfig, candidates_per_edge: int) -> int:
    """Forward activations retained for backward, batch 1, as a memory proxy.

    Counts every primitive output (ReLU, conv, pooling, batch-norm, node sums,
    concatenations, stem and classifier). Because the proxy only knows *how
    many* candidates each edge keeps, each edge is charged the mean cost over
    the full candidate set times the kept count, plus the mixture-combination
    buffers ((O+1) output-sized arrays when O > 1; a single-candidate edge
    collapses to its operation alone, matching a plain network).
    """
    o = candidates_per_edge
    if o < 1:
        raise ValueError(f"candidates_per_edge must be >= 1, got {o}")
    plan, c_final, h_final = _plan_cells(cfg)
    total = 0.0
    # stem: conv + bn outputs
    total += 2 * cfg.channels * cfg.input_size ** 2
    for cell_type, c_pp, c_p, c_curr, red_prev, h in plan:
        h_out = -(-h // 2) if cell_type == "reduce" else h
        # preprocessing: relu + conv + bn outputs for both inputs; when the
        # previous cell reduced, pre0's source (two cells back) sits at 2h
        if red_prev:
            total += c_pp * (2 * h) ** 2 + 2 * c_curr * h * h
        else:
            total += 3 * c_curr * h * h
        total += 3 * c_curr * h * h
        spec = CellSpec(cfg.nodes)
        for i, j in spec.edges:
            stride = 2 if cell_type == "reduce" and i < 2 else 1
            edge_h = h  # all node states inside a reduction cell sit at h_out
            if cell_type == "reduce" and i >= 2:
                edge_h = h_out
            mean_cost = np.mean([
                op_activation_count(k, c_curr, edge_h, edge_h, stride)
                for k in ALL_KINDS
            ])
            total += o * mean_cost
            if o > 1:
                total += (o + 1) * c_curr * h_out * h_out
        # node sums + concat
        total += cfg.nodes * c_curr * h_out * h_out
        total += cfg.nodes * c_curr * h_out * h_out
    total += c_final  # global average pool
    total += cfg.num_classes
    return int(round(total))
