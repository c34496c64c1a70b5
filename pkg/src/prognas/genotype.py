"""Discrete architectures: derivation from architecture weights, skip-connect
refinement, connection-level analytics, and the text format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import OpKind, kind_from_name
from .cell import AlphaTable, CellSpec

Pick = tuple[str, int]  # (op name, source node)


@dataclass(frozen=True)
class Genotype:
    """Two (op, source) picks per intermediate node, for both cell types."""

    normal: tuple[tuple[Pick, Pick], ...]
    reduce: tuple[tuple[Pick, Pick], ...]
    concat: tuple[int, ...]

    @property
    def nodes(self) -> int:
        return len(self.normal)

    def cell(self, cell_type: str) -> tuple[tuple[Pick, Pick], ...]:
        return self.normal if cell_type == "normal" else self.reduce


def validate_genotype(g: Genotype) -> None:
    if len(g.normal) != len(g.reduce):
        raise ValueError(
            f"normal cell has {len(g.normal)} nodes, reduce has {len(g.reduce)}")
    if g.nodes < 1:
        raise ValueError("genotype has no intermediate nodes")
    for cell_type in ("normal", "reduce"):
        for pos, picks in enumerate(g.cell(cell_type)):
            node = pos + 2
            where = f"{cell_type} node {node}"
            if len(picks) != 2:
                raise ValueError(f"{where}: expected exactly 2 picks, got {len(picks)}")
            srcs = []
            for name, src in picks:
                kind = kind_from_name(name)  # raises on unknown names
                if kind == OpKind.ZERO:
                    raise ValueError(f"{where}: zero operation is not allowed")
                if not 0 <= src < node:
                    raise ValueError(
                        f"{where}: source {src} must precede the node (< {node})")
                srcs.append(src)
            if srcs[0] == srcs[1]:
                raise ValueError(f"{where}: picks share source {srcs[0]}")
    inter = set(range(2, g.nodes + 2))
    if len(set(g.concat)) != len(g.concat) or not set(g.concat) <= inter:
        raise ValueError(
            f"concat {list(g.concat)} must be distinct intermediate nodes {sorted(inter)}")


def count_skips(g: Genotype, cell_type: str) -> int:
    return sum(1 for picks in g.cell(cell_type)
               for name, _ in picks if name == OpKind.SKIP_CONNECT.op_name)


# -- derivation ----------------------------------------------------------------

# internal view: per edge, (edge, candidates, float64 weights)
_EdgeView = tuple[tuple[int, int], tuple[OpKind, ...], np.ndarray]


def _views(table) -> list[_EdgeView]:
    return [(me.edge, me.candidates, me.weight_values()) for me in table]


def _best_non_zero(cands: tuple[OpKind, ...], w: np.ndarray):
    """(weight, kind) of the argmax non-zero candidate; ties -> lower index.

    Candidates arrive in canonical order, so strict `>` keeps the lowest
    canonical index on ties.
    """
    best = None
    for k, wk in zip(cands, w):
        if k == OpKind.ZERO:
            continue
        if best is None or wk > best[0]:
            best = (float(wk), k)
    return best


def _derive_cell(views: list[_EdgeView], nodes: int) -> tuple[tuple[Pick, Pick], ...]:
    by_target: dict[int, list[_EdgeView]] = {}
    for view in views:
        by_target.setdefault(view[0][1], []).append(view)
    result = []
    for j in range(2, nodes + 2):
        incoming = by_target[j]
        scored = []
        for (i, _), cands, w in incoming:
            best = _best_non_zero(cands, w)
            score = -np.inf if best is None else best[0]
            scored.append((score, i, cands, w))
        scored.sort(key=lambda s: (-s[0], s[1]))
        picks = []
        for score, i, cands, w in scored[:2]:
            best = _best_non_zero(cands, w)
            if best is None:
                raise ValueError(
                    f"edge ({i}, {j}) must be selected but its only candidate "
                    f"is the zero operation")
            picks.append((best[1].op_name, i))
        picks.sort(key=lambda p: p[1])
        result.append(tuple(picks))
    return tuple(result)


def derive_genotype(alphas: AlphaTable) -> Genotype:
    """Discrete cells from the architecture weights.

    Per intermediate node, the two incoming edges with the largest non-zero
    softmax weight are kept (ties: lower source index); each kept edge
    contributes its argmax non-zero candidate (ties: lower canonical index).
    """
    g = Genotype(
        normal=_derive_cell(_views(alphas.normal), alphas.schema.nodes),
        reduce=_derive_cell(_views(alphas.reduce), alphas.schema.nodes),
        concat=CellSpec(alphas.schema.nodes).concat_nodes,
    )
    validate_genotype(g)
    return g


def refine_skips(alphas: AlphaTable, limit: int, cell_type: str = "normal") -> Genotype:
    """Cap the skip-connect count of one cell at `limit`.

    Iteratively: derive, and while the target cell holds more than `limit`
    skip picks, keep the `limit` largest-weight ones, null out the weights of
    the other selected skips, and re-derive. Never promotes skips (a cell
    already at or under the limit is returned unchanged) and never touches
    the weights of non-skip candidates. Operates on a copy of the weights.
    """
    if limit < 0:
        raise ValueError(f"skip limit must be >= 0, got {limit}")
    if cell_type not in ("normal", "reduce"):
        raise ValueError(f"cell_type must be normal or reduce, got {cell_type!r}")
    nodes = alphas.schema.nodes
    target = [(me.edge, me.candidates, me.weight_values()) for me in alphas.edges(cell_type)]
    other_type = "reduce" if cell_type == "normal" else "normal"
    other = _derive_cell(_views(alphas.edges(other_type)), nodes)

    skip_name = OpKind.SKIP_CONNECT.op_name
    for _ in range(nodes + 1):
        derived = _derive_cell(target, nodes)
        selected_skips = []
        for pos, picks in enumerate(derived):
            for name, src in picks:
                if name == skip_name:
                    edge = (src, pos + 2)
                    view = next(v for v in target if v[0] == edge)
                    w = view[2][view[1].index(OpKind.SKIP_CONNECT)]
                    selected_skips.append((float(w), edge))
        if len(selected_skips) <= limit:
            cells = {cell_type: derived, other_type: other}
            g = Genotype(normal=cells["normal"], reduce=cells["reduce"],
                         concat=CellSpec(nodes).concat_nodes)
            validate_genotype(g)
            return g
        selected_skips.sort(key=lambda s: (-s[0], s[1]))
        for _, edge in selected_skips[limit:]:
            view = next(v for v in target if v[0] == edge)
            view[2][view[1].index(OpKind.SKIP_CONNECT)] = 0.0
    raise RuntimeError(
        f"skip refinement did not settle within {nodes} rounds; a selected "
        f"edge has no usable replacement candidate")


# -- analytics -----------------------------------------------------------------


@dataclass(frozen=True)
class ConnectionLevelHistogram:
    """Edge counts by connection level (1 + source-node level), per cell."""

    normal: dict[int, int]
    reduce: dict[int, int]

    def cell(self, cell_type: str) -> dict[int, int]:
        return self.normal if cell_type == "normal" else self.reduce


def _levels_for_cell(picks_per_node) -> dict[int, int]:
    node_level = {0: 0, 1: 0}
    hist: dict[int, int] = {}
    for pos, picks in enumerate(picks_per_node):
        node = pos + 2
        src_levels = []
        for _, src in picks:
            lvl = 1 + node_level[src]
            hist[lvl] = hist.get(lvl, 0) + 1
            src_levels.append(node_level[src])
        node_level[node] = 1 + max(src_levels)
    return dict(sorted(hist.items()))


def connection_levels(g: Genotype) -> ConnectionLevelHistogram:
    validate_genotype(g)
    return ConnectionLevelHistogram(
        normal=_levels_for_cell(g.normal),
        reduce=_levels_for_cell(g.reduce),
    )


# -- text format -----------------------------------------------------------------


def genotype_serialize(g: Genotype) -> str:
    validate_genotype(g)
    doc = {
        "nodes": g.nodes,
        "normal": [[[name, src] for name, src in picks] for picks in g.normal],
        "reduce": [[[name, src] for name, src in picks] for picks in g.reduce],
        "concat": list(g.concat),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def genotype_parse(text: str) -> Genotype:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed genotype text at line {e.lineno}, "
                         f"column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ValueError("genotype text must be a JSON object")
    for key in ("nodes", "normal", "reduce", "concat"):
        if key not in doc:
            raise ValueError(f"genotype text is missing field {key!r}")

    def read_cell(cell_type: str):
        out = []
        for pos, picks in enumerate(doc[cell_type]):
            if not isinstance(picks, list):
                raise ValueError(f"{cell_type}[{pos}]: expected a list of picks")
            pairs = []
            for p, pick in enumerate(picks):
                if (not isinstance(pick, list) or len(pick) != 2
                        or not isinstance(pick[0], str)
                        or not isinstance(pick[1], int)):
                    raise ValueError(
                        f"{cell_type}[{pos}][{p}]: pick must be [op_name, source]")
                pairs.append((pick[0], pick[1]))
            out.append(tuple(pairs))
        return tuple(out)

    g = Genotype(normal=read_cell("normal"), reduce=read_cell("reduce"),
                 concat=tuple(doc["concat"]))
    if g.nodes != doc["nodes"]:
        raise ValueError(
            f"declared nodes={doc['nodes']} but normal cell lists {g.nodes}")
    validate_genotype(g)
    return g


def random_genotype(rng: np.random.Generator, nodes: int = 4) -> Genotype:
    """Uniformly random valid genotype (non-zero ops, distinct sources)."""
    usable = [k for k in OpKind if k != OpKind.ZERO]

    def cell():
        out = []
        for j in range(2, nodes + 2):
            srcs = sorted(rng.choice(j, size=2, replace=False).tolist())
            out.append(tuple((usable[rng.integers(len(usable))].op_name, s)
                             for s in srcs))
        return tuple(out)

    g = Genotype(normal=cell(), reduce=cell(),
                 concat=CellSpec(nodes).concat_nodes)
    validate_genotype(g)
    return g
