"""Compressed sparse row matrices (read-only after construction)."""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError


@dataclass(frozen=True)
class CSRMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        """Build from coordinate triplets; entries are sorted by (row, col).

        Duplicate coordinates are not merged.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        indptr = np.zeros(shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=shape[0]), out=indptr[1:])
        return cls(indptr, cols, values, (int(shape[0]), int(shape[1])))

    @property
    def nnz(self):
        return int(self.indices.shape[0])

    def row(self, r):
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def matmul(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.shape[1]:
            raise DimensionError(
                f"cannot multiply sparse {self.shape} by dense {x.shape}"
            )
        return _kernels.csr_matmul(self.indptr, self.indices, self.data, x)

    def transpose(self):
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        return CSRMatrix.from_coo(
            self.indices, rows, self.data, (self.shape[1], self.shape[0])
        )

    @property
    def T(self):
        return self.transpose()

    def to_dense(self):
        out = np.zeros(self.shape, dtype=np.float64)
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out
