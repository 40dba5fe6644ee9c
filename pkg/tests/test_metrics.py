import itertools
import math

import numpy as np
import pytest

from dgcl.dataio import InteractionDataset, block_dataset
from dgcl.metrics import (
    evaluate_embeddings,
    evaluate_scores,
    ndcg_at_k,
    random_recall_baseline,
    rank_items,
    recall_at_k,
)


def test_recall_examples():
    assert recall_at_k([1, 2, 3], {1, 2}, 3) == 1.0
    assert recall_at_k([1, 2, 3], {7}, 3) == 0.0
    assert recall_at_k(["i3", "i1", "i7"], {"i1", "i9"}, 2) == 0.5
    with pytest.raises(ValueError):
        recall_at_k([1], set(), 1)


def test_ndcg_examples():
    assert ndcg_at_k([4, 1, 2], {4}, 3) == 1.0
    assert ndcg_at_k([1, 4], {4}, 2) == pytest.approx(0.63093, abs=1e-5)
    assert ndcg_at_k([1, 4], {4}, 2) == pytest.approx(1 / math.log2(3), abs=1e-15)


def _dcg(order, rel, k):
    return sum((1.0 if x in rel else 0.0) / math.log2(pos + 2) for pos, x in enumerate(order[:k]))


@pytest.mark.parametrize("n", range(1, 7))
def test_metrics_match_exhaustive_enumeration(n):
    items = list(range(n))
    rel_sets = [set(s) for r in range(1, n + 1) for s in itertools.combinations(items, r)]
    perms = list(itertools.permutations(items))
    for rel in rel_sets:
        for k in range(1, n + 1):
            best = max(_dcg(p, rel, k) for p in perms)
            for p in perms:
                hits = sum(1 for x in p[:k] if x in rel)
                assert recall_at_k(p, rel, k) == hits / len(rel)
                assert ndcg_at_k(p, rel, k) == pytest.approx(_dcg(p, rel, k) / best, abs=1e-15)


def test_irrelevant_item_below_k_changes_nothing():
    ranked, rel = [5, 2, 9, 1], {2, 1}
    for k in (2, 3):
        extended = ranked[:k] + [42] + ranked[k:]
        assert recall_at_k(extended, rel, k) == recall_at_k(ranked, rel, k)
        assert ndcg_at_k(extended, rel, k) == ndcg_at_k(ranked, rel, k)


def test_ndcg_ignores_shuffles_below_last_hit():
    rel = {3, 8}
    base = [3, 8, 0, 1, 2, 4]
    for tail in itertools.permutations([0, 1, 2, 4]):
        assert ndcg_at_k([3, 8] + list(tail), rel, 5) == ndcg_at_k(base, rel, 5)


def test_oracle_scores_give_perfect_recall():
    ds = block_dataset(seed=2)
    scores = np.zeros((ds.num_users, ds.num_items))
    for u, i in ds.test_edges:
        scores[u, i] = 1.0
    assert max(len(t) for t in ds.test_by_user) <= 10
    res = evaluate_scores(scores, ds)
    assert res.recall[10] == 1.0 and res.ndcg[10] == 1.0


def test_ranked_lists_never_contain_train_items():
    ds = block_dataset(seed=5)
    r = np.random.default_rng(0)
    ranked = rank_items(r.normal(size=(32, 4)), r.normal(size=(32, 4)), ds.train_csr, 20)
    for u in range(ds.num_users):
        assert not set(ranked[u].tolist()) & set(ds.train_by_user[u].tolist())


def test_empty_test_users_are_excluded():
    ds = InteractionDataset(2, 4, [(0, 0), (1, 1)], [(0, 2)])
    scores = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    res = evaluate_scores(scores, ds, cutoffs=(1,))
    assert res.num_users == 1 and res.recall[1] == 1.0
    assert res.as_dict() == {"users": 1, "recall@1": 1.0, "ndcg@1": 1.0}


def test_evaluation_is_deterministic():
    ds = block_dataset(seed=1)
    r = np.random.default_rng(3)
    u, i = r.normal(size=(32, 4)), r.normal(size=(32, 4))
    assert evaluate_embeddings(u, i, ds).as_dict() == evaluate_embeddings(u, i, ds).as_dict()


def test_random_embeddings_hit_analytic_baseline():
    ds = block_dataset(seed=0)
    vals = []
    for seed in range(50):
        r = np.random.default_rng(seed)
        vals.append(evaluate_embeddings(r.normal(size=(32, 8)), r.normal(size=(32, 8)), ds).recall[10])
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - random_recall_baseline(ds, 10)) < 3 * se
