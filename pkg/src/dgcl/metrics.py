"""Full-ranking top-K evaluation."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


def recall_at_k(ranked, relevant, k):
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined for an empty relevant set")
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k):
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    dcg = 0.0
    for rank, item in enumerate(list(ranked)[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


@dataclass
class RankingResult:
    cutoffs: tuple
    recall: dict
    ndcg: dict
    num_users: int
    ranked: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        out = {"users": self.num_users}
        for k in self.cutoffs:
            out[f"recall@{k}"] = self.recall[k]
            out[f"ndcg@{k}"] = self.ndcg[k]
        return out


def rank_items(user_emb, item_emb, train_csr, k):
    """Top-``k`` item ids per user by inner product, training items excluded."""
    scores = np.asarray(user_emb) @ np.asarray(item_emb).T
    return _kernels.masked_topk(scores, train_csr.indptr, train_csr.indices, k)


def evaluate_scores(scores, ds, cutoffs=(10, 20)):
    """Metrics for a precomputed ``users x items`` score matrix."""
    cutoffs = tuple(sorted(cutoffs))
    csr = ds.train_csr
    ranked = _kernels.masked_topk(np.asarray(scores, dtype=np.float64), csr.indptr, csr.indices, max(cutoffs))
    users = [u for u in range(ds.num_users) if len(ds.test_by_user[u])]
    recall = {}
    ndcg = {}
    for k in cutoffs:
        recall[k] = float(np.mean([recall_at_k(ranked[u], ds.test_by_user[u], k) for u in users])) if users else 0.0
        ndcg[k] = float(np.mean([ndcg_at_k(ranked[u], ds.test_by_user[u], k) for u in users])) if users else 0.0
    return RankingResult(cutoffs, recall, ndcg, len(users), ranked)


def evaluate_embeddings(user_emb, item_emb, ds, cutoffs=(10, 20)):
    return evaluate_scores(np.asarray(user_emb) @ np.asarray(item_emb).T, ds, cutoffs)


def random_recall_baseline(ds, k):
    """Expected Recall@k of a uniformly random ranking over non-training items."""
    vals = []
    for u in range(ds.num_users):
        if len(ds.test_by_user[u]):
            vals.append(min(1.0, k / (ds.num_items - len(ds.train_by_user[u]))))
    return float(np.mean(vals))
