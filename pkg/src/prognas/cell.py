"""The searchable DAG cell: mixed edges, shared architecture parameters, and
the softmax-weighted continuous relaxation of the candidate choice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import ALL_KINDS, OpInstance, OpKind, instantiate_op
from .layers import FactorizedReduce, ReLUConvBN
from .optim import ParamStore
from .tensor import Tensor, concat, mask, softmax, weighted_sum

ALPHA_INIT_STD = 1e-3


@dataclass(frozen=True)
class CellSpec:
    """Topology constants: inputs {0,1}, intermediates {2..nodes+1}, output =
    channel concat of the intermediates."""

    nodes: int = 4

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError(f"cell needs at least one intermediate node, got {self.nodes}")

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for j in range(2, self.nodes + 2) for i in range(j))

    @property
    def concat_nodes(self) -> tuple[int, ...]:
        return tuple(range(2, self.nodes + 2))


@dataclass(frozen=True)
class Schema:
    """Per-edge candidate lists for both cell types (one search stage)."""

    nodes: int
    normal: tuple[tuple[OpKind, ...], ...]
    reduce: tuple[tuple[OpKind, ...], ...]

    def __post_init__(self):
        spec = CellSpec(self.nodes)
        for cell_type, table in (("normal", self.normal), ("reduce", self.reduce)):
            if len(table) != len(spec.edges):
                raise ValueError(
                    f"{cell_type} schema has {len(table)} edges, cell has {len(spec.edges)}")
            for e, cands in enumerate(table):
                if len(cands) < 1:
                    raise ValueError(f"{cell_type} edge {spec.edges[e]}: empty candidate list")
                if list(cands) != sorted(set(cands), key=int):
                    raise ValueError(
                        f"{cell_type} edge {spec.edges[e]}: candidates must be "
                        f"unique and in canonical order")

    def counts(self, cell_type: str) -> tuple[int, ...]:
        return tuple(len(c) for c in getattr(self, cell_type))


def full_schema(nodes: int = 4) -> Schema:
    per_edge = tuple(ALL_KINDS)
    n_edges = len(CellSpec(nodes).edges)
    return Schema(nodes, (per_edge,) * n_edges, (per_edge,) * n_edges)


class MixedEdge:
    """One edge's candidate subset plus its architecture-parameter vector."""

    def __init__(self, edge: tuple[int, int], candidates: Sequence[OpKind],
                 alpha: Tensor):
        if len(candidates) < 1:
            raise ValueError(f"edge {edge}: empty candidate list")
        if alpha.shape != (len(candidates),):
            raise ValueError(
                f"edge {edge}: alpha shape {alpha.shape} does not match "
                f"{len(candidates)} candidates")
        self.edge = edge
        self.candidates = tuple(candidates)
        self.alpha = alpha

    def weight_values(self) -> np.ndarray:
        """Softmax mixture weights as plain numbers (no graph)."""
        a = self.alpha.data.astype(np.float64)
        e = np.exp(a - a.max())
        return e / e.sum()


class AlphaTable:
    """Architecture parameters: one mixed-edge set per cell type, shared by
    every cell of that type in the super-network."""

    def __init__(self, schema: Schema, store: ParamStore,
                 normal: list[MixedEdge], reduce: list[MixedEdge]):
        self.schema = schema
        self.store = store
        self.normal = normal
        self.reduce = reduce

    def edges(self, cell_type: str) -> list[MixedEdge]:
        return self.normal if cell_type == "normal" else self.reduce

    def mean_entropy(self) -> float:
        hs = []
        for table in (self.normal, self.reduce):
            for me in table:
                w = me.weight_values()
                hs.append(float(-(w * np.log(np.maximum(w, 1e-12))).sum()))
        return float(np.mean(hs))

    def snapshot(self) -> dict:
        return {
            "nodes": self.schema.nodes,
            "normal": [{"edge": list(me.edge),
                        "candidates": [k.op_name for k in me.candidates],
                        "alpha": [float(a) for a in me.alpha.data]}
                       for me in self.normal],
            "reduce": [{"edge": list(me.edge),
                        "candidates": [k.op_name for k in me.candidates],
                        "alpha": [float(a) for a in me.alpha.data]}
                       for me in self.reduce],
        }


def alpha_table_from_snapshot(snap: dict) -> AlphaTable:
    from .catalog import kind_from_name
    nodes = int(snap["nodes"])
    store = ParamStore()
    tables = {}
    cand_lists = {}
    for cell_type in ("normal", "reduce"):
        edges_meta = snap[cell_type]
        mes = []
        cands_all = []
        for meta in edges_meta:
            edge = tuple(meta["edge"])
            cands = tuple(kind_from_name(n) for n in meta["candidates"])
            t = store.create(f"{cell_type}.e{edge[0]}_{edge[1]}",
                             np.asarray(meta["alpha"]))
            mes.append(MixedEdge(edge, cands, t))
            cands_all.append(cands)
        tables[cell_type] = mes
        cand_lists[cell_type] = tuple(cands_all)
    schema = Schema(nodes, cand_lists["normal"], cand_lists["reduce"])
    return AlphaTable(schema, store, tables["normal"], tables["reduce"])


def init_alphas(schema: Schema, rng: np.random.Generator) -> AlphaTable:
    """Fresh table with i.i.d. Gaussian(0, 1e-3) entries (near-uniform mixtures)."""
    spec = CellSpec(schema.nodes)
    store = ParamStore()
    tables = {}
    for cell_type in ("normal", "reduce"):
        mes = []
        for edge, cands in zip(spec.edges, getattr(schema, cell_type)):
            init = rng.standard_normal(len(cands)) * ALPHA_INIT_STD
            t = store.create(f"{cell_type}.e{edge[0]}_{edge[1]}", init)
            mes.append(MixedEdge(edge, cands, t))
        tables[cell_type] = mes
    return AlphaTable(schema, store, tables["normal"], tables["reduce"])


def edge_mix_forward(mixed: MixedEdge, branch_ops: Sequence[OpInstance],
                     x: Tensor, training: bool = False,
                     skip_dropout: float = 0.0,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Softmax(alpha)-weighted sum of the candidate outputs.

    While training, the skip-connect branch output passes through
    operation-level dropout: each sample's branch is zeroed with probability
    `skip_dropout` and rescaled by 1/(1-p) when kept.
    """
    if len(branch_ops) != len(mixed.candidates):
        raise ValueError(
            f"edge {mixed.edge}: {len(branch_ops)} instantiated ops for "
            f"{len(mixed.candidates)} candidates")
    outs = []
    for op in branch_ops:
        y = op(x, training)
        if (op.kind == OpKind.SKIP_CONNECT and training and skip_dropout > 0.0):
            if rng is None:
                raise ValueError("skip dropout requires an RNG")
            keep = (rng.random(x.shape[0]) >= skip_dropout)
            m = keep.astype(y.data.dtype) / (1.0 - skip_dropout)
            y = mask(y, m.reshape(-1, 1, 1, 1))
        outs.append(y)
    if len(outs) == 1:
        return outs[0]
    return weighted_sum(outs, softmax(mixed.alpha))


class Cell:
    """One super-network cell: preprocessing of the two inputs, mixed ops on
    every edge, node summation, and channel concat of the intermediates."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 schema: Schema, cell_type: str, c_prev_prev: int, c_prev: int,
                 channels: int, reduction_prev: bool, affine: bool = False):
        self.spec = CellSpec(schema.nodes)
        self.cell_type = cell_type
        self.reduction = cell_type == "reduce"
        self.channels = channels
        if reduction_prev:
            self.pre0 = FactorizedReduce(store, f"{prefix}.pre0", rng,
                                         c_prev_prev, channels, affine)
        else:
            self.pre0 = ReLUConvBN(store, f"{prefix}.pre0", rng,
                                   c_prev_prev, channels, 1, affine=affine)
        self.pre1 = ReLUConvBN(store, f"{prefix}.pre1", rng, c_prev, channels,
                               1, affine=affine)
        self.edge_ops: list[list[OpInstance]] = []
        for edge, cands in zip(self.spec.edges, getattr(schema, cell_type)):
            stride = 2 if self.reduction and edge[0] < 2 else 1
            ops_for_edge = [
                instantiate_op(k, channels, stride, affine, store,
                               f"{prefix}.e{edge[0]}_{edge[1]}.{k.op_name}", rng)
                for k in cands
            ]
            self.edge_ops.append(ops_for_edge)

    @property
    def out_channels(self) -> int:
        return self.spec.nodes * self.channels

    def forward(self, s0: Tensor, s1: Tensor, mixed_edges: list[MixedEdge],
                training: bool = False, skip_dropout: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
        if len(mixed_edges) != len(self.edge_ops):
            raise ValueError(
                f"cell got {len(mixed_edges)} mixed edges, built with "
                f"{len(self.edge_ops)}")
        states = [self.pre0(s0, training), self.pre1(s1, training)]
        if states[0].shape != states[1].shape:
            raise ValueError(
                f"preprocessed inputs disagree: {states[0].shape} vs {states[1].shape}")
        e = 0
        for j in range(2, self.spec.nodes + 2):
            acc = None
            for i in range(j):
                contrib = edge_mix_forward(mixed_edges[e], self.edge_ops[e],
                                           states[i], training, skip_dropout, rng)
                acc = contrib if acc is None else acc + contrib
                e += 1
            states.append(acc)
        return concat(states[2:], axis=1)


def cell_forward(cell: Cell, mixed_edges: list[MixedEdge],
                 inputs: tuple[Tensor, Tensor], training: bool = False,
                 skip_dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
    return cell.forward(inputs[0], inputs[1], mixed_edges, training,
                        skip_dropout, rng)
