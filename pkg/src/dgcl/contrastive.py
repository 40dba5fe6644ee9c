"""In-batch InfoNCE over two augmented views."""

from dataclasses import dataclass

import numpy as np

from . import ndtape as nd
from .errors import ContractError


@dataclass
class ViewPair:
    view_a: nd.Tensor
    view_b: nd.Tensor
    kind: str = "user"
    tau: float = 0.2

    def __post_init__(self):
        self.view_a = nd.as_tensor(self.view_a)
        self.view_b = nd.as_tensor(self.view_b)
        if self.view_a.shape != self.view_b.shape:
            raise ContractError(f"view shapes differ: {self.view_a.shape} vs {self.view_b.shape}")
        if self.view_a.data.ndim != 2 or self.view_a.shape[0] < 1:
            raise ContractError(f"views must be non-empty matrices, got {self.view_a.shape}")
        if not self.tau > 0:
            raise ContractError(f"temperature must be positive, got {self.tau}")


def info_nce(pair, raw_dot=False):
    """Sum over rows r of ``-log softmax_j(<a_r, b_j> / tau)[r]``.

    One-sided: row r of ``view_a`` is contrasted against every row of
    ``view_b``.  Rows are L2-normalized first unless ``raw_dot``.
    """
    a, b = pair.view_a, pair.view_b
    if not raw_dot:
        a, b = nd.l2_normalize_rows(a), nd.l2_normalize_rows(b)
    logits = (a @ b.T) * (1.0 / pair.tau)
    logp = nd.log_softmax_rows(logits)
    n = a.shape[0]
    diag = np.zeros((n, n))
    diag[np.arange(n), np.arange(n)] = 1.0
    return -nd.sum(nd.mul(logp, nd.Tensor(diag)))


def total_cl_loss(user_pair, item_pair, raw_dot=False):
    return info_nce(user_pair, raw_dot) + info_nce(item_pair, raw_dot)
