"""Interaction files, train/test splits, the normalized bipartite adjacency,
and BPR batch sampling."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DatasetError, ParseError, SamplingError
from .sparse import CSRMatrix


@dataclass
class InteractionLog:
    """Deduplicated raw interactions with dense ids (before splitting)."""

    user_ids: dict
    item_ids: dict
    edges: np.ndarray  # (n, 2) int64, first-seen order

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    def decode_user(self, u):
        return self._inverse("user")[u]

    def decode_item(self, i):
        return self._inverse("item")[i]

    def _inverse(self, kind):
        mapping = self.user_ids if kind == "user" else self.item_ids
        out = [None] * len(mapping)
        for raw, idx in mapping.items():
            out[idx] = raw
        return out


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    train_edges: np.ndarray
    test_edges: np.ndarray
    train_by_user: list = field(init=False, repr=False)
    test_by_user: list = field(init=False, repr=False)

    def __post_init__(self):
        self.train_edges = np.asarray(self.train_edges, dtype=np.int64).reshape(-1, 2)
        self.test_edges = np.asarray(self.test_edges, dtype=np.int64).reshape(-1, 2)
        for name, e in (("train", self.train_edges), ("test", self.test_edges)):
            if e.size and (e[:, 0].min() < 0 or e[:, 0].max() >= self.num_users
                           or e[:, 1].min() < 0 or e[:, 1].max() >= self.num_items):
                raise DatasetError(f"{name} edge id out of range")
        self.train_by_user = _group(self.train_edges, self.num_users)
        self.test_by_user = _group(self.test_edges, self.num_users)
        self._train_csr = CSRMatrix.from_coo(
            self.train_edges[:, 0], self.train_edges[:, 1],
            np.ones(len(self.train_edges)), (self.num_users, self.num_items),
        )

    @property
    def num_nodes(self):
        return self.num_users + self.num_items

    @property
    def train_csr(self):
        """User x item 0/1 matrix of training interactions."""
        return self._train_csr

    def is_train_edge(self, users, items):
        return _kernels.csr_contains(self._train_csr.indptr, self._train_csr.indices, users, items)

    def summary(self):
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "train_edges": int(len(self.train_edges)),
            "test_edges": int(len(self.test_edges)),
        }

    def summary_json(self):
        return json.dumps(self.summary(), sort_keys=True)


def _group(edges, n):
    out = [[] for _ in range(n)]
    for u, i in edges:
        out[u].append(int(i))
    return [np.array(sorted(x), dtype=np.int64) for x in out]


def parse_interactions(lines):
    """Turn an iterable of text lines into an :class:`InteractionLog`."""
    user_ids, item_ids = {}, {}
    seen = set()
    edges = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        tokens = text.split()
        if len(tokens) < 2:
            raise ParseError(f"expected at least 2 columns, got {len(tokens)}: {text!r}", line=lineno)
        u = user_ids.setdefault(tokens[0], len(user_ids))
        i = item_ids.setdefault(tokens[1], len(item_ids))
        if (u, i) not in seen:
            seen.add((u, i))
            edges.append((u, i))
    if not edges:
        raise DatasetError("no interactions found")
    return InteractionLog(user_ids, item_ids, np.array(edges, dtype=np.int64))


def load_interactions(path):
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh)


def split_train_test(log, ratio=0.8, seed=0):
    """Per-user random holdout keeping ``round(ratio * n)`` edges in train.

    Users with one interaction keep it in train.  Accepts an
    :class:`InteractionLog` or a ``(num_users, num_items, edges)`` tuple.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if isinstance(log, InteractionLog):
        num_users, num_items, edges = log.num_users, log.num_items, log.edges
    else:
        num_users, num_items, edges = log
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for u in range(num_users):
        items = edges[edges[:, 0] == u, 1]
        n = len(items)
        if n == 0:
            continue
        items = items[rng.permutation(n)]
        n_train = n if n == 1 else max(1, min(n, int(np.floor(ratio * n + 0.5))))
        train.extend((u, int(i)) for i in items[:n_train])
        test.extend((u, int(i)) for i in items[n_train:])
    return InteractionDataset(num_users, num_items, np.array(train).reshape(-1, 2),
                              np.array(test).reshape(-1, 2))


def block_dataset(num_users=32, num_items=32, blocks=2, p=0.5, seed=0, ratio=0.8):
    """Synthetic block-diagonal interactions: user/item groups of equal size,
    each within-group pair observed with probability ``p``, none across groups."""
    rng = np.random.default_rng(seed)
    ub = np.arange(num_users) * blocks // num_users
    ib = np.arange(num_items) * blocks // num_items
    mask = (ub[:, None] == ib[None, :]) & (rng.random((num_users, num_items)) < p)
    users, items = np.nonzero(mask)
    edges = np.stack([users, items], axis=1)
    return split_train_test((num_users, num_items, edges), ratio=ratio, seed=seed + 1)


@dataclass(frozen=True)
class NormalizedAdjacency(CSRMatrix):
    """Symmetric ``D^-1/2 A D^-1/2`` over users (first) then items."""

    num_users: int = 0
    num_items: int = 0


def build_norm_adjacency(ds):
    if len(ds.train_edges) == 0:
        raise DatasetError("cannot build adjacency without training edges")
    u = ds.train_edges[:, 0]
    i = ds.train_edges[:, 1]
    deg_u = np.bincount(u, minlength=ds.num_users).astype(np.float64)
    deg_i = np.bincount(i, minlength=ds.num_items).astype(np.float64)
    coef = 1.0 / np.sqrt(deg_u[u] * deg_i[i])
    item_nodes = i + ds.num_users
    rows = np.concatenate([u, item_nodes])
    cols = np.concatenate([item_nodes, u])
    vals = np.concatenate([coef, coef])
    n = ds.num_nodes
    m = CSRMatrix.from_coo(rows, cols, vals, (n, n))
    return NormalizedAdjacency(m.indptr, m.indices, m.data, m.shape, ds.num_users, ds.num_items)


@dataclass
class BprBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_candidates: np.ndarray  # (b, M)

    def __len__(self):
        return len(self.users)


def sample_bpr_batch(ds, batch_size, num_candidates, rng, max_retries=100):
    """Uniformly sample ``batch_size`` training edges plus ``num_candidates``
    non-interacted items per edge (rejection sampling)."""
    if batch_size < 1 or num_candidates < 1:
        raise ValueError("batch_size and num_candidates must be >= 1")
    picks = rng.integers(0, len(ds.train_edges), size=batch_size)
    users = ds.train_edges[picks, 0]
    pos = ds.train_edges[picks, 1]
    return BprBatch(users, pos, sample_negatives(ds, users, num_candidates, rng, max_retries))


def sample_negatives(ds, users, num_candidates, rng, max_retries=100):
    users = np.asarray(users, dtype=np.int64)
    flat_users = np.repeat(users, num_candidates)
    cand = rng.integers(0, ds.num_items, size=flat_users.size)
    bad = ds.is_train_edge(flat_users, cand)
    tries = 0
    while bad.any():
        tries += 1
        if tries > max_retries:
            u = int(flat_users[np.flatnonzero(bad)[0]])
            raise SamplingError(f"could not find a negative item for user {u} after {max_retries} retries")
        idx = np.flatnonzero(bad)
        cand[idx] = rng.integers(0, ds.num_items, size=idx.size)
        bad[idx] = ds.is_train_edge(flat_users[idx], cand[idx])
    return cand.reshape(len(users), num_candidates)


def iter_epoch_batches(ds, batch_size, num_candidates, rng):
    """One pass over a shuffled copy of the training edges."""
    order = rng.permutation(len(ds.train_edges))
    for start in range(0, len(order), batch_size):
        picks = order[start:start + batch_size]
        users = ds.train_edges[picks, 0]
        pos = ds.train_edges[picks, 1]
        yield BprBatch(users, pos, sample_negatives(ds, users, num_candidates, rng))
