"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--nodes 4000]

Each kernel is checked for equal output first, then timed (best of
``--repeat`` after one warm-up call that also absorbs JIT compilation).
"""

import argparse
import sys
import timeit

import numpy as np

from dgcl import _kernels as K
from dgcl.dataio import block_dataset, build_norm_adjacency


def cases(nodes, dim, rng):
    half = nodes // 2
    ds = block_dataset(half, half, blocks=8, p=0.05, seed=0)
    adj = build_norm_adjacency(ds)
    x = rng.normal(size=(nodes, dim))
    ids = rng.integers(0, nodes, size=8 * nodes)
    grad = rng.normal(size=(ids.size, dim))
    rows = rng.integers(0, half, size=20 * nodes)
    cols = rng.integers(0, half, size=20 * nodes)
    csr = ds.train_csr
    scores = rng.normal(size=(half, half))
    return {
        "csr_matmul": ((adj.indptr, adj.indices, adj.data, x), K.csr_matmul_numpy, "csr_matmul_numba"),
        "scatter_add_rows": ((nodes, ids, grad), K.scatter_add_rows_numpy, "scatter_add_rows_numba"),
        "csr_contains": ((csr.indptr, csr.indices, rows, cols), K.csr_contains_numpy, "csr_contains_numba"),
        "masked_topk": ((scores, csr.indptr, csr.indices, 20), K.masked_topk_numpy, "masked_topk_numba"),
    }


def best_time(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--nodes", type=int, default=4000)
    ap.add_argument("--dim", type=int, default=64)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (call_args, slow, fast_name) in cases(args.nodes, args.dim, rng).items():
        fast = getattr(K, fast_name)
        np.testing.assert_allclose(fast(*call_args), slow(*call_args), atol=1e-12)
        t_slow = best_time(slow, call_args, args.repeat)
        t_fast = best_time(fast, call_args, args.repeat)
        print(f"{name:<18} {1e3 * t_slow:>10.3f} {1e3 * t_fast:>10.3f} {t_slow / t_fast:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
