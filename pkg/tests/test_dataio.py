import json

import numpy as np
import pytest

from dgcl.dataio import (
    InteractionDataset,
    block_dataset,
    build_norm_adjacency,
    load_interactions,
    parse_interactions,
    sample_bpr_batch,
    split_train_test,
)
from dgcl.errors import DatasetError, ParseError, SamplingError

from conftest import random_bipartite


def test_load_remaps_in_first_seen_order(tmp_path):
    path = tmp_path / "r.txt"
    path.write_text("# comment\na b\na c\n\nz b 5 1234\n", encoding="utf-8")
    log = load_interactions(path)
    assert (log.num_users, log.num_items, len(log.edges)) == (2, 2, 3)
    assert log.user_ids == {"a": 0, "z": 1}
    assert log.edges.tolist() == [[0, 0], [0, 1], [1, 0]]
    for raw, idx in log.item_ids.items():
        assert log.decode_item(idx) == raw


def test_duplicates_are_dropped():
    assert len(parse_interactions(["a b", "a b"]).edges) == 1


def test_malformed_line_reports_line_number():
    with pytest.raises(ParseError, match="line 2"):
        parse_interactions(["a b", "lonely"])


def test_empty_file_is_dataset_error(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("# nothing\n")
    with pytest.raises(DatasetError):
        load_interactions(path)


def test_split_counts_and_single_interaction_users():
    edges = [(0, i) for i in range(10)] + [(1, 3)]
    ds = split_train_test((2, 10, edges), ratio=0.8, seed=3)
    assert len(ds.train_by_user[0]) == 8 and len(ds.test_by_user[0]) == 2
    assert ds.train_by_user[1].tolist() == [3] and len(ds.test_by_user[1]) == 0


def test_split_is_deterministic_and_preserves_edges():
    rng = np.random.default_rng(0)
    edges = np.unique(rng.integers(0, 15, size=(120, 2)), axis=0)
    a = split_train_test((15, 15, edges), 0.7, seed=9)
    b = split_train_test((15, 15, edges), 0.7, seed=9)
    assert np.array_equal(a.train_edges, b.train_edges)
    assert np.array_equal(a.test_edges, b.test_edges)
    both = np.concatenate([a.train_edges, a.test_edges])
    assert sorted(map(tuple, both)) == sorted(map(tuple, edges))
    assert not set(map(tuple, a.train_edges)) & set(map(tuple, a.test_edges))


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split_train_test((1, 1, [(0, 0)]), ratio=1.0)


def test_adjacency_single_edge_and_star():
    ds = InteractionDataset(1, 1, [(0, 0)], [])
    adj = build_norm_adjacency(ds)
    assert adj.to_dense().tolist() == [[0.0, 1.0], [1.0, 0.0]]
    ds = InteractionDataset(1, 2, [(0, 0), (0, 1)], [])
    dense = build_norm_adjacency(ds).to_dense()
    assert abs(dense[0, 1] - 0.70711) < 1e-5


def test_adjacency_coefficients_match_brute_force_degrees():
    ds = random_bipartite(6, 9, 0.4, seed=11)
    adj = build_norm_adjacency(ds)
    dense = adj.to_dense()
    nu = ds.num_users
    edges = set(map(tuple, ds.train_edges))
    for u in range(nu):
        for i in range(ds.num_items):
            du = sum(1 for (a, _) in edges if a == u)
            di = sum(1 for (_, b) in edges if b == i)
            expect = 1.0 / np.sqrt(du * di) if (u, i) in edges else 0.0
            assert dense[u, nu + i] == pytest.approx(expect, abs=1e-15)
    np.testing.assert_array_equal(dense, dense.T)
    for r in range(adj.shape[0]):
        cols = adj.row(r)[0]
        assert np.all(np.diff(cols) > 0)


def test_isolated_nodes_have_empty_rows():
    ds = InteractionDataset(3, 3, [(0, 0)], [])
    adj = build_norm_adjacency(ds)
    assert np.all(np.diff(adj.indptr)[[1, 2, 4, 5]] == 0)
    assert np.all(np.diag(adj.to_dense()) == 0)


def test_propagation_equals_neighbour_double_loop():
    ds = random_bipartite(4, 6, 0.4, seed=5)
    adj = build_norm_adjacency(ds)
    e = np.random.default_rng(2).normal(size=(10, 3))
    nu = ds.num_users
    nbr_u = [set(ds.train_by_user[u]) for u in range(nu)]
    nbr_i = [{u for u in range(nu) if i in nbr_u[u]} for i in range(ds.num_items)]
    brute = np.zeros_like(e)
    for u in range(nu):
        for i in nbr_u[u]:
            brute[u] += e[nu + i] / np.sqrt(len(nbr_u[u]) * len(nbr_i[i]))
    for i in range(ds.num_items):
        for u in nbr_i[i]:
            brute[nu + i] += e[u] / np.sqrt(len(nbr_u[u]) * len(nbr_i[i]))
    assert np.max(np.abs(adj.matmul(e) - brute)) < 1e-12


def test_bpr_sampler_forced_negative():
    ds = InteractionDataset(1, 2, [(0, 0)], [])
    rng = np.random.default_rng(0)
    for _ in range(20):
        batch = sample_bpr_batch(ds, 4, 1, rng)
        assert batch.neg_candidates.tolist() == [[1]] * 4


def test_bpr_sampler_membership_over_many_draws():
    ds = block_dataset(seed=4)
    rng = np.random.default_rng(1)
    train = set(map(tuple, ds.train_edges))
    batch = sample_bpr_batch(ds, 10_000, 3, rng)
    assert all((u, i) in train for u, i in zip(batch.users, batch.pos_items))
    for u, cands in zip(batch.users, batch.neg_candidates):
        assert not any((u, j) in train for j in cands)


def test_bpr_sampler_is_deterministic():
    ds = block_dataset(seed=4)
    a = sample_bpr_batch(ds, 16, 4, np.random.default_rng(5))
    b = sample_bpr_batch(ds, 16, 4, np.random.default_rng(5))
    assert np.array_equal(a.neg_candidates, b.neg_candidates) and np.array_equal(a.users, b.users)


def test_bpr_sampler_gives_up_on_saturated_user():
    ds = InteractionDataset(1, 2, [(0, 0), (0, 1)], [])
    with pytest.raises(SamplingError, match="user 0"):
        sample_bpr_batch(ds, 1, 1, np.random.default_rng(0), max_retries=5)


def test_summary_json():
    ds = InteractionDataset(2, 3, [(0, 0), (1, 2)], [(0, 1)])
    assert json.loads(ds.summary_json()) == {"num_users": 2, "num_items": 3, "train_edges": 2, "test_edges": 1}


def test_block_dataset_has_no_cross_block_edges():
    ds = block_dataset(32, 32, 2, 0.5, seed=0)
    all_edges = np.concatenate([ds.train_edges, ds.test_edges])
    assert np.all((all_edges[:, 0] < 16) == (all_edges[:, 1] < 16))
