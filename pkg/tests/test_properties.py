"""Property tests over the pure functions (hypothesis-driven)."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from prognas.catalog import ALL_KINDS, OpKind
from prognas.cell import AlphaTable, CellSpec, MixedEdge, Schema
from prognas.genotype import (connection_levels, genotype_parse,
                              genotype_serialize, random_genotype)
from prognas.optim import ParamStore, cosine_lr
from prognas.search import DropoutPolicy, prune_operations
from prognas.tensor import Tensor


@given(st.integers(0, 200), st.integers(1, 200),
       st.floats(1e-6, 1.0), st.floats(0.0, 1e-2))
def test_cosine_lr_stays_within_band(t, total, lr_max, lr_min):
    t = min(t, total)
    lr_min = min(lr_min, lr_max)
    lr = cosine_lr(t, total, lr_max, lr_min)
    assert lr_min - 1e-12 <= lr <= lr_max + 1e-12


@given(st.floats(0.0, 0.95), st.integers(1, 60))
def test_dropout_policy_monotone_and_bounded(p0, epochs):
    policy = DropoutPolicy(p0, epochs)
    rates = [policy.rate(e) for e in range(epochs + 1)]
    assert rates[0] == p0
    assert all(a >= b - 1e-12 for a, b in zip(rates, rates[1:]))
    assert all(0.0 <= r <= p0 + 1e-12 for r in rates)


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]))
@settings(max_examples=60)
def test_genotype_round_trip(seed, nodes):
    g = random_genotype(np.random.default_rng(seed), nodes)
    assert genotype_parse(genotype_serialize(g)) == g


@given(st.integers(0, 10_000))
@settings(max_examples=60)
def test_connection_levels_total_and_range(seed):
    g = random_genotype(np.random.default_rng(seed), 4)
    hist = connection_levels(g)
    for cell in (hist.normal, hist.reduce):
        assert sum(cell.values()) == 8
        assert min(cell) >= 1 and max(cell) <= 4


def _table_from_alphas(alpha_rows):
    nodes = 1  # two edges
    schema = Schema(nodes, (tuple(ALL_KINDS),) * 2, (tuple(ALL_KINDS),) * 2)
    store = ParamStore()
    edges = {"normal": [], "reduce": []}
    spec = CellSpec(nodes)
    for cell_type in ("normal", "reduce"):
        for e, edge in enumerate(spec.edges):
            t = store.create(f"{cell_type}.{e}",
                             np.asarray(alpha_rows[e], dtype=np.float64))
            edges[cell_type].append(MixedEdge(edge, tuple(ALL_KINDS), t))
    return AlphaTable(schema, store, edges["normal"], edges["reduce"])


@given(st.lists(st.lists(st.floats(-5, 5), min_size=8, max_size=8),
                min_size=2, max_size=2),
       st.integers(1, 7))
@settings(max_examples=80)
def test_prune_keeps_exactly_topk_complement(alpha_rows, keep):
    table = _table_from_alphas(alpha_rows)
    schema = prune_operations(table, keep)
    for me, kept in zip(table.normal, schema.normal):
        assert len(kept) == keep
        w = me.weight_values()
        order = sorted(range(8), key=lambda i: (-w[i], i))
        top = {me.candidates[i] for i in order[:keep]}
        assert set(kept) == top
        dropped = set(me.candidates) - set(kept)
        assert dropped == {me.candidates[i] for i in order[keep:]}


@given(st.lists(st.floats(-3, 3), min_size=8, max_size=8),
       st.floats(-10, 10))
def test_edge_top1_invariant_under_constant_shift(alphas, shift):
    me = MixedEdge((0, 2), tuple(ALL_KINDS),
                   Tensor(np.asarray(alphas, dtype=np.float64)))
    before = int(np.argmax(me.weight_values()))
    me.alpha.data += shift
    assert int(np.argmax(me.weight_values())) == before
