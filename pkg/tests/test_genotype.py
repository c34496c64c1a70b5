import itertools
import json

import numpy as np
import pytest

from oracles import (derive_cell_by_enumeration, make_table,
                     random_weight_table, refine_by_oracle)
from prognas.catalog import ALL_KINDS, OpKind
from prognas.cell import CellSpec, Schema, full_schema, init_alphas
from prognas.genotype import (ConnectionLevelHistogram, Genotype,
                              connection_levels, count_skips, derive_genotype,
                              genotype_parse, genotype_serialize,
                              random_genotype, refine_skips, validate_genotype)

SKIP = OpKind.SKIP_CONNECT.op_name


# -- derivation -----------------------------------------------------------------


class TestDerive:
    def test_single_node_keeps_both_edges(self):
        # with one intermediate node both incoming edges are forced
        table = make_table(1, [[0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.05, 0.05],
                               [0.97, 0.005, 0.005, 0.005, 0.005, 0.004,
                                0.003, 0.003]])
        g = derive_genotype(table)
        assert len(g.normal) == 1 and len(g.normal[0]) == 2
        assert {src for _, src in g.normal[0]} == {0, 1}

    def test_zero_is_excluded_even_when_dominant(self):
        weights = [[0.9, 0.1, 0, 0, 0, 0, 0, 0] for _ in range(5)]
        for w in weights:
            w[2:] = [1e-6] * 6
        table = make_table(2, weights)
        g = derive_genotype(table)
        for picks in g.normal + g.reduce:
            for name, _ in picks:
                assert name != "zero"
        assert g.normal[0][0][0] == SKIP  # zero 0.9 loses to skip 0.1

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_exhaustive_enumeration(self, seed):
        table = random_weight_table(np.random.default_rng(seed))
        g = derive_genotype(table)
        views = [(me.edge, me.candidates, me.weight_values())
                 for me in table.normal]
        assert g.normal == derive_cell_by_enumeration(views, 2)
        views_r = [(me.edge, me.candidates, me.weight_values())
                   for me in table.reduce]
        assert g.reduce == derive_cell_by_enumeration(views_r, 2)

    def test_invariant_under_per_edge_constant_shift(self):
        rng = np.random.default_rng(999)
        table = random_weight_table(rng)
        g1 = derive_genotype(table)
        for k, me in enumerate(table.normal + table.reduce):
            me.alpha.data += 3.7 + 0.1 * k
        assert derive_genotype(table) == g1

    def test_only_zero_forced_edge_rejected(self):
        per_edge = [(OpKind.ZERO,)] * 5
        per_edge[2] = tuple(ALL_KINDS)  # (0,3)
        per_edge[3] = tuple(ALL_KINDS)  # (1,3)
        per_edge[4] = tuple(ALL_KINDS)  # (2,3)
        schema = Schema(2, tuple(per_edge), (tuple(ALL_KINDS),) * 5)
        table = init_alphas(schema, np.random.default_rng(1))
        with pytest.raises(ValueError, match="zero operation"):
            derive_genotype(table)


# -- refinement -----------------------------------------------------------------


def rigged_four_skip_table():
    """B=2 table whose derived normal cell starts with 4 skip picks of
    distinct weights; replacement candidates are convolutions."""
    w = []
    # edges (0,2), (1,2): forced; skip dominates with weights .8 / .7
    w.append([.01, .80, .02, .02, .05, .05, .03, .02])
    w.append([.01, .70, .02, .02, .10, .05, .05, .05])
    # edges (0,3), (1,3) carry skips .6 / .5; (2,3) a weaker conv edge
    w.append([.01, .60, .02, .02, .15, .10, .05, .05])
    w.append([.01, .50, .02, .02, .20, .10, .10, .05])
    w.append([.01, .02, .02, .02, .45, .28, .10, .10])
    return make_table(2, w)


class TestRefine:
    def test_fixed_point_below_limit(self):
        table = rigged_four_skip_table()
        raw = derive_genotype(table)
        assert count_skips(raw, "normal") == 4
        assert refine_skips(table, 4, "normal") == raw

    def test_limit_zero_removes_all_skips(self):
        table = rigged_four_skip_table()
        g = refine_skips(table, 0, "normal")
        assert count_skips(g, "normal") == 0

    def test_rigged_top_two_survive(self):
        table = rigged_four_skip_table()
        g = refine_skips(table, 2, "normal")
        assert count_skips(g, "normal") == 2
        kept = {(src, pos + 2) for pos, picks in enumerate(g.normal)
                for name, src in picks if name == SKIP}
        assert kept == {(0, 2), (1, 2)}  # the .8 and .7 skips

    def test_rigged_matches_suppression_subset_brute_force(self):
        table = rigged_four_skip_table()
        g = refine_skips(table, 2, "normal")
        # brute force: of all suppression subsets reaching <= 2 skips, the rule
        # suppresses exactly the complement of the top-2 selected skips
        views = [(me.edge, me.candidates, me.weight_values())
                 for me in table.normal]
        selected = {(0, 2): .8, (1, 2): .7, (0, 3): .6, (1, 3): .5}
        for subset_size in range(1, 5):
            for subset in itertools.combinations(selected, subset_size):
                trial = [(e, c, w.copy()) for e, c, w in views]
                for edge in subset:
                    v = next(v for v in trial if v[0] == edge)
                    v[2][v[1].index(OpKind.SKIP_CONNECT)] = 0.0
                derived = derive_cell_by_enumeration(trial, 2)
                n_skips = sum(1 for picks in derived for nm, _ in picks if nm == SKIP)
                if set(subset) == {(0, 3), (1, 3)}:
                    assert derived == g.normal and n_skips == 2

    @pytest.mark.parametrize("seed", range(60))
    @pytest.mark.parametrize("limit", [0, 1, 2, 3, 4])
    def test_matches_independent_oracle(self, seed, limit):
        table = random_weight_table(np.random.default_rng(1000 + seed))
        assert refine_skips(table, limit) == refine_by_oracle(table, limit)

    @pytest.mark.parametrize("seed", range(60))
    def test_never_alters_non_skip_picks(self, seed):
        table = random_weight_table(np.random.default_rng(2000 + seed))
        before = derive_genotype(table)
        for limit in (0, 1, 2):
            after = refine_skips(table, limit)
            assert count_skips(after, "normal") <= limit
            kept = set()
            for pos, picks in enumerate(after.normal):
                kept |= {(pos, name, src) for name, src in picks}
            for pos, picks in enumerate(before.normal):
                for name, src in picks:
                    if name != SKIP:
                        assert (pos, name, src) in kept
            # the untouched cell derives identically
            assert after.reduce == before.reduce

    def test_negative_limit_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            refine_skips(rigged_four_skip_table(), -1)


# -- connection levels -----------------------------------------------------------


def flat_genotype(nodes):
    cells = tuple(((("sep_conv_3x3", 0), ("skip_connect", 1)),) * nodes)
    return Genotype(cells, cells, tuple(range(2, nodes + 2)))


def chain_genotype(nodes):
    picks = [(("sep_conv_3x3", 0), ("skip_connect", 1))]
    for j in range(3, nodes + 2):
        picks.append((("max_pool_3x3", 0), ("sep_conv_5x5", j - 1)))
    cells = tuple(picks)
    return Genotype(cells, cells, tuple(range(2, nodes + 2)))


class TestConnectionLevels:
    def test_flat_topology_all_level_one(self):
        hist = connection_levels(flat_genotype(4))
        assert hist.normal == {1: 8}
        assert hist.reduce == {1: 8}

    def test_maximal_chain_hand_walk(self):
        # hand walk for B=4: node2 level 1; node j feeds node j-1, so one edge
        # at each level 2..4 plus the remaining five input-level edges
        hist = connection_levels(chain_genotype(4))
        assert hist.normal == {1: 5, 2: 1, 3: 1, 4: 1}

    def test_maximal_chain_b2(self):
        hist = connection_levels(chain_genotype(2))
        assert hist.normal == {1: 3, 2: 1}

    @pytest.mark.parametrize("nodes", [1, 2, 4])
    def test_totals_are_two_per_node(self, nodes):
        rng = np.random.default_rng(7)
        for _ in range(100):
            g = random_genotype(rng, nodes)
            hist = connection_levels(g)
            assert sum(hist.normal.values()) == 2 * nodes
            assert sum(hist.reduce.values()) == 2 * nodes
            assert min(hist.normal) >= 1 and max(hist.normal) <= nodes


# -- text format -----------------------------------------------------------------


class TestSerialization:
    @pytest.mark.parametrize("nodes", [1, 2, 4])
    def test_round_trip_identity(self, nodes):
        rng = np.random.default_rng(8)
        for _ in range(100):
            g = random_genotype(rng, nodes)
            assert genotype_parse(genotype_serialize(g)) == g

    def test_serialized_text_is_stable(self):
        g = flat_genotype(2)
        assert genotype_serialize(g) == genotype_serialize(g)
        doc = json.loads(genotype_serialize(g))
        assert set(doc) == {"nodes", "normal", "reduce", "concat"}

    def test_three_picks_rejected(self):
        doc = json.loads(genotype_serialize(flat_genotype(2)))
        doc["normal"][0].append(["max_pool_3x3", 0])
        with pytest.raises(ValueError, match="exactly 2 picks"):
            genotype_parse(json.dumps(doc))

    def test_unknown_op_rejected(self):
        doc = json.loads(genotype_serialize(flat_genotype(2)))
        doc["normal"][0][0][0] = "sep_conv_7x7"
        with pytest.raises(ValueError, match="unknown operation name 'sep_conv_7x7'"):
            genotype_parse(json.dumps(doc))

    def test_malformed_text_rejected_with_position(self):
        with pytest.raises(ValueError, match="line"):
            genotype_parse("{not json")

    def test_zero_op_rejected(self):
        doc = json.loads(genotype_serialize(flat_genotype(2)))
        doc["normal"][0][0][0] = "zero"
        with pytest.raises(ValueError, match="zero operation"):
            genotype_parse(json.dumps(doc))

    def test_duplicate_sources_rejected(self):
        doc = json.loads(genotype_serialize(flat_genotype(2)))
        doc["normal"][0][1][1] = 0
        with pytest.raises(ValueError, match="share source"):
            genotype_parse(json.dumps(doc))

    def test_source_after_target_rejected(self):
        doc = json.loads(genotype_serialize(flat_genotype(2)))
        doc["normal"][0][1][1] = 5
        with pytest.raises(ValueError, match="precede"):
            genotype_parse(json.dumps(doc))

    def test_validate_rejects_bad_concat(self):
        g = Genotype(flat_genotype(2).normal, flat_genotype(2).reduce, (9,))
        with pytest.raises(ValueError, match="concat"):
            validate_genotype(g)
