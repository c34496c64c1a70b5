import numpy as np
import pytest

from prognas.catalog import OpKind, instantiate_op
from prognas.cell import (ALPHA_INIT_STD, Cell, CellSpec, MixedEdge, Schema,
                          alpha_table_from_snapshot, edge_mix_forward,
                          full_schema, init_alphas)
from prognas.gradcheck import check_coords
from prognas.optim import ParamStore
from prognas.tensor import Tensor, mul, precision, tsum


def make_edge(cands, alpha_values, channels=4, stride=1, seed=0):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    ops_for_edge = [instantiate_op(k, channels, stride, False, store,
                                   f"e.{k.op_name}", rng) for k in cands]
    me = MixedEdge((0, 2), cands, Tensor(np.asarray(alpha_values),
                                         requires_grad=True))
    return me, ops_for_edge


class TestCellSpec:
    def test_edge_count_formula(self):
        # sum over nodes of (n + 2): 14 edges for 4 nodes, 5 for 2
        assert len(CellSpec(4).edges) == 14
        assert len(CellSpec(2).edges) == 5

    def test_edges_are_acyclic(self):
        for i, j in CellSpec(4).edges:
            assert i < j

    def test_rejects_zero_nodes(self):
        with pytest.raises(ValueError):
            CellSpec(0)


class TestEdgeMixForward:
    def test_equal_alphas_give_uniform_weights(self):
        cands = (OpKind.ZERO, OpKind.SKIP_CONNECT, OpKind.AVG_POOL_3X3)
        me, _ = make_edge(cands, [1.7, 1.7, 1.7])
        assert np.allclose(me.weight_values(), 1 / 3, atol=1e-7)

    def test_single_candidate_returns_branch_output(self):
        me, ops_ = make_edge((OpKind.SKIP_CONNECT,), [0.3])
        x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 6, 6)))
        out = edge_mix_forward(me, ops_, x)
        assert out is x  # weight 1.0, identity branch

    def test_softmax_evaluation_oracle(self):
        # alpha (0, ln 2): softmax = (1, 2) / 3
        me, _ = make_edge((OpKind.ZERO, OpKind.SKIP_CONNECT), [0.0, np.log(2.0)])
        assert np.allclose(me.weight_values(), [1 / 3, 2 / 3], atol=1e-7)

    def test_mixture_matches_manual_combination(self):
        cands = (OpKind.ZERO, OpKind.SKIP_CONNECT)
        me, ops_ = make_edge(cands, [0.0, np.log(2.0)])
        x = Tensor(np.random.default_rng(2).standard_normal((2, 4, 6, 6)))
        out = edge_mix_forward(me, ops_, x)
        assert np.allclose(out.data, (2 / 3) * x.data, atol=1e-6)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            me, _ = make_edge(tuple(OpKind), rng.standard_normal(8) * 2)
            assert abs(me.weight_values().sum() - 1.0) <= 1e-6

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError, match="empty candidate"):
            MixedEdge((0, 2), (), Tensor(np.zeros(0)))

    def test_dropout_zeroes_or_rescales_skip_branch(self):
        me, ops_ = make_edge((OpKind.SKIP_CONNECT,), [0.0])
        x = Tensor(np.ones((64, 4, 2, 2)))
        out = edge_mix_forward(me, ops_, x, training=True, skip_dropout=0.5,
                               rng=np.random.default_rng(4))
        per_sample = out.data.reshape(64, -1)[:, 0]
        assert set(np.round(per_sample, 5)) <= {0.0, 2.0}

    def test_dropout_inactive_at_inference(self):
        me, ops_ = make_edge((OpKind.SKIP_CONNECT,), [0.0])
        x = Tensor(np.ones((8, 4, 2, 2)))
        out = edge_mix_forward(me, ops_, x, training=False, skip_dropout=0.9,
                               rng=np.random.default_rng(5))
        assert np.array_equal(out.data, x.data)

    def test_differentiable_in_x_and_alpha(self):
        with precision("f64"):
            rng = np.random.default_rng(6)
            cands = (OpKind.ZERO, OpKind.SKIP_CONNECT, OpKind.SEP_CONV_3X3)
            me, ops_ = make_edge(cands, rng.standard_normal(3) * 0.3)
            x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
            r = Tensor(rng.standard_normal((2, 4, 6, 6)))

            def f():
                return tsum(mul(edge_mix_forward(me, ops_, x, True), r))

            assert check_coords(f, [x, me.alpha]) <= 1e-5

    def test_pruning_perturbation_bound(self):
        # dropping a weight-w candidate moves the output by at most w * max|o(x)|
        rng = np.random.default_rng(7)
        for seed in range(10):
            r = np.random.default_rng(seed)
            cands = (OpKind.SKIP_CONNECT, OpKind.MAX_POOL_3X3, OpKind.AVG_POOL_3X3)
            alphas = r.standard_normal(3)
            me, ops_ = make_edge(cands, alphas, seed=seed)
            x = Tensor(r.standard_normal((1, 4, 6, 6)))
            full = edge_mix_forward(me, ops_, x).data
            w = me.weight_values()
            drop = int(np.argmin(w))
            kept = [i for i in range(3) if i != drop]
            me2 = MixedEdge((0, 2), tuple(cands[i] for i in kept),
                            Tensor(alphas[kept]))
            pruned = edge_mix_forward(me2, [ops_[i] for i in kept], x).data
            branch_norms = [np.abs(op(x, False).data).max() for op in ops_]
            bound = w[drop] * max(branch_norms)
            # renormalizing the survivors adds at most the same order again
            assert np.abs(full - pruned).max() <= 2 * bound + 1e-6


class TestInitAlphas:
    def test_seeded_init_is_bit_identical(self):
        a = init_alphas(full_schema(4), np.random.default_rng(11))
        b = init_alphas(full_schema(4), np.random.default_rng(11))
        for ma, mb in zip(a.normal + a.reduce, b.normal + b.reduce):
            assert np.array_equal(ma.alpha.data, mb.alpha.data)

    def test_initial_mixtures_near_uniform(self):
        table = init_alphas(full_schema(4), np.random.default_rng(12))
        for me in table.normal + table.reduce:
            assert np.abs(me.weight_values() - 1 / 8).max() <= 1e-3

    def test_scalar_count_for_full_schema(self):
        table = init_alphas(full_schema(4), np.random.default_rng(13))
        assert sum(me.alpha.size for me in table.normal) == 112
        assert sum(me.alpha.size for me in table.reduce) == 112

    def test_init_scale(self):
        table = init_alphas(full_schema(4), np.random.default_rng(14))
        flat = np.concatenate([me.alpha.data for me in table.normal])
        assert np.abs(flat).max() < 10 * ALPHA_INIT_STD

    def test_snapshot_round_trip(self):
        table = init_alphas(full_schema(2), np.random.default_rng(15))
        clone = alpha_table_from_snapshot(table.snapshot())
        assert clone.schema == table.schema
        for a, b in zip(table.normal + table.reduce, clone.normal + clone.reduce):
            assert np.array_equal(a.alpha.data, b.alpha.data)


class TestSchema:
    def test_rejects_wrong_edge_count(self):
        with pytest.raises(ValueError, match="edges"):
            Schema(2, ((OpKind.ZERO,),) * 4, ((OpKind.ZERO,),) * 5)

    def test_rejects_unsorted_candidates(self):
        bad = tuple([(OpKind.SKIP_CONNECT, OpKind.ZERO)] * 5)
        with pytest.raises(ValueError, match="canonical"):
            Schema(2, bad, bad)


class TestCellForward:
    def _build(self, schema, cell_type="normal", channels=4, seed=0):
        store = ParamStore()
        cell = Cell(store, "cell", np.random.default_rng(seed), schema,
                    cell_type, channels, channels, channels,
                    reduction_prev=False)
        return cell, store

    def test_single_node_output_is_sum_of_two_edges(self):
        schema = full_schema(1)
        cell, _ = self._build(schema)
        table = init_alphas(schema, np.random.default_rng(21))
        rng = np.random.default_rng(22)
        x0 = Tensor(rng.standard_normal((2, 4, 6, 6)))
        x1 = Tensor(rng.standard_normal((2, 4, 6, 6)))
        out = cell.forward(x0, x1, table.normal)
        s0 = cell.pre0(x0, False)
        s1 = cell.pre1(x1, False)
        e0 = edge_mix_forward(table.normal[0], cell.edge_ops[0], s0)
        e1 = edge_mix_forward(table.normal[1], cell.edge_ops[1], s1)
        assert np.allclose(out.data, e0.data + e1.data, atol=1e-5)

    def test_all_zero_candidates_give_zero_output(self):
        per_edge = ((OpKind.ZERO,),) * 5
        schema = Schema(2, per_edge, per_edge)
        cell, _ = self._build(schema)
        table = init_alphas(schema, np.random.default_rng(23))
        rng = np.random.default_rng(24)
        x = Tensor(rng.standard_normal((2, 4, 6, 6)))
        out = cell.forward(x, x, table.normal)
        assert out.shape == (2, 8, 6, 6)
        assert not out.data.any()

    def test_two_node_symbolic_expansion(self):
        # identity/zero candidates with hand-set alphas: the output must equal
        # the weighted sums of the preprocessed states, concatenated
        per_edge = ((OpKind.ZERO, OpKind.SKIP_CONNECT),) * 5
        schema = Schema(2, per_edge, per_edge)
        cell, _ = self._build(schema)
        table = init_alphas(schema, np.random.default_rng(25))
        w_skip = []
        for k, me in enumerate(table.normal):
            me.alpha.data[:] = [0.0, np.log(2.0) * (k + 1)]
            w_skip.append(np.exp(me.alpha.data[1])
                          / (np.exp(me.alpha.data[0]) + np.exp(me.alpha.data[1])))
        rng = np.random.default_rng(26)
        x0 = Tensor(rng.standard_normal((1, 4, 6, 6)))
        x1 = Tensor(rng.standard_normal((1, 4, 6, 6)))
        out = cell.forward(x0, x1, table.normal)
        s0 = cell.pre0(x0, False).data
        s1 = cell.pre1(x1, False).data
        n2 = w_skip[0] * s0 + w_skip[1] * s1
        n3 = w_skip[2] * s0 + w_skip[3] * s1 + w_skip[4] * n2
        expected = np.concatenate([n2, n3], axis=1)
        assert np.allclose(out.data, expected, atol=1e-5)

    def test_mismatched_edge_count_rejected(self):
        schema = full_schema(2)
        cell, _ = self._build(schema)
        table = init_alphas(schema, np.random.default_rng(27))
        x = Tensor(np.zeros((1, 4, 6, 6)))
        with pytest.raises(ValueError, match="mixed edges"):
            cell.forward(x, x, table.normal[:-1])
