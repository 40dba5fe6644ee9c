"""LightGCN propagation, layer averaging and positive-mixing hard negatives."""

from dataclasses import dataclass

import numpy as np

from . import ndtape as nd
from .errors import ContractError, DimensionError


def init_embeddings(num_nodes, dim, rng, std=0.1):
    """Users first, then items; i.i.d. normal entries."""
    return rng.normal(0.0, std, size=(num_nodes, dim))


def propagate(adj, e_l):
    """One LightGCN layer: ``adj @ e_l`` recorded on the tape when tracked."""
    e_l = nd.as_tensor(e_l)
    if e_l.data.ndim != 2 or e_l.shape[0] != adj.shape[1]:
        raise DimensionError(f"embedding rows {e_l.shape} do not match adjacency {adj.shape}")
    return nd.spmm(adj, e_l)


def layer_stack(adj, e0, layers):
    """``[e0, A e0, A^2 e0, ...]`` with ``layers + 1`` entries."""
    stack = [nd.as_tensor(e0)]
    for _ in range(layers):
        stack.append(propagate(adj, stack[-1]))
    return stack


def aggregate_layers(stack, include_layer_zero=False):
    """Mean of layers ``1..L`` (or ``0..L`` with ``include_layer_zero``)."""
    layers = len(stack) - 1
    if layers < 1:
        raise ContractError("aggregate_layers needs at least one propagated layer")
    parts = stack if include_layer_zero else stack[1:]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total * (1.0 / len(parts))


def encode(adj, e0, layers, include_layer_zero=False):
    return aggregate_layers(layer_stack(adj, e0, layers), include_layer_zero)


def draw_mix_weights(rng, shape):
    """Uniform(0, 1) draws with exact endpoints resampled away."""
    alpha = rng.random(shape)
    bad = (alpha <= 0.0) | (alpha >= 1.0)
    while bad.any():
        alpha[bad] = rng.random(int(bad.sum()))
        bad = (alpha <= 0.0) | (alpha >= 1.0)
    return alpha


def positive_mix(pos_stack, neg_stack, rng=None, alphas=None):
    """Blend each negative layer toward the positive layer.

    ``alphas`` (one length-``rows`` array per layer) overrides the random draw.
    Returns ``(mixed_stack, alphas)``.
    """
    if len(pos_stack) != len(neg_stack):
        raise DimensionError("positive and negative stacks differ in depth")
    rows = neg_stack[0].shape[0]
    if alphas is None:
        alphas = [draw_mix_weights(rng, rows) for _ in neg_stack]
    mixed = []
    for pos, neg, a in zip(pos_stack, neg_stack, alphas):
        pos, neg = nd.as_tensor(pos), nd.as_tensor(neg)
        if pos.shape != neg.shape:
            raise DimensionError(f"layer shapes differ: {pos.shape} vs {neg.shape}")
        w = np.repeat(np.asarray(a, dtype=np.float64).reshape(-1, 1), pos.shape[1], axis=1)
        mixed.append(nd.mul(pos, nd.Tensor(w)) + nd.mul(neg, nd.Tensor(1.0 - w)))
    return mixed, alphas


def select_hard_negative(user_embed, candidates):
    """Index of the candidate with the largest inner product (lowest index on ties).

    ``user_embed`` is ``(d,)`` or ``(b, d)``; ``candidates`` is ``(M, d)`` or
    ``(b, M, d)``.
    """
    u = np.asarray(user_embed, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    if c.shape[-2] < 1:
        raise ContractError("need at least one candidate")
    if u.ndim == 1:
        return int(np.argmax(c @ u))
    scores = np.einsum("bmd,bd->bm", c, u)
    return np.argmax(scores, axis=1)


@dataclass
class HardNegatives:
    embedding: nd.Tensor  # (b, d) layer-aggregated hard negative
    items: np.ndarray  # (b,) item id of the chosen candidate
    choice: np.ndarray  # (b,) index into the candidate list


def mix_hard_negatives(stack, num_users, users, pos_items, candidates, rng,
                       include_layer_zero=False, mix=True):
    """Synthesize one hard negative per batch row from its ``M`` candidates.

    Positive mixing runs per layer on every candidate, the mixed stacks are
    layer-aggregated, and the candidate closest to the user (inner product) is
    kept.  With ``mix=False`` the first raw candidate is used as-is.
    """
    b, m = candidates.shape
    if not mix:
        neg_nodes = candidates[:, 0] + num_users
        layers = [nd.gather_rows(e, neg_nodes) for e in stack]
        return HardNegatives(aggregate_layers(layers, include_layer_zero),
                             candidates[:, 0].copy(), np.zeros(b, dtype=np.int64))
    pos_nodes = np.repeat(pos_items, m) + num_users
    cand_nodes = candidates.reshape(-1) + num_users
    pos_layers = [nd.gather_rows(e, pos_nodes) for e in stack]
    neg_layers = [nd.gather_rows(e, cand_nodes) for e in stack]
    mixed, _ = positive_mix(pos_layers, neg_layers, rng)
    mixed_agg = aggregate_layers(mixed, include_layer_zero)
    user_agg = aggregate_layers([nd.gather_rows(e, users) for e in stack], include_layer_zero)
    d = mixed_agg.shape[1]
    choice = select_hard_negative(user_agg.data, mixed_agg.data.reshape(b, m, d))
    rows = np.arange(b) * m + choice
    return HardNegatives(nd.gather_rows(mixed_agg, rows), candidates[np.arange(b), choice], choice)
