"""Dense float64 tensors with a reverse-mode tape and an Adam optimizer.

A :class:`Tape` is created per training step.  Parameters enter it through
:meth:`Tape.watch`; anything else is a constant.  Operations are plain
functions (``matmul``, ``softmax_rows`` ...) plus the usual operator
overloads on :class:`Tensor`.  After :meth:`Tape.backward` the tape holds one
gradient per tracked tensor that the loss depends on.

Broadcasting is limited to adding a length-``n`` bias to every row of an
``m x n`` tensor and to scaling by Python scalars.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NumericError

LAYER_NORM_EPS = 1e-5


class Tensor:
    """Immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100

    def __init__(self, data, tape=None, node=None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self):
        return self.node is not None

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations.  Single owner; never share across steps."""

    def __init__(self):
        self.nodes = []
        self.grads = {}

    def watch(self, array):
        """Start tracking ``array`` as a leaf."""
        node = len(self.nodes)
        self.nodes.append(((), None))
        return Tensor(array, self, node)

    def _record(self, data, inputs, vjp):
        ids = tuple([t.node if t.tape is self else None for t in inputs])
        node = len(self.nodes)
        self.nodes.append((ids, vjp))
        return Tensor(data, self, node)

    def backward(self, loss):
        """Accumulate d(loss)/d(tensor) for every tracked ancestor of ``loss``."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError("backward() needs a loss tracked on this tape")
        if loss.data.size != 1:
            raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {loss.node: np.ones_like(loss.data)}
        for node_id in range(loss.node, -1, -1):
            g = grads.get(node_id)
            if g is None:
                continue
            inputs, vjp = self.nodes[node_id]
            if not inputs:
                continue
            needs = tuple([i is not None for i in inputs])
            if not any(needs):
                continue
            for inp, gi in zip(inputs, vjp(g, needs)):
                if inp is None or gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        self.grads = grads
        return grads

    def grad(self, tensor):
        """Gradient of the last backward() w.r.t. ``tensor``; None when absent."""
        if tensor.tape is not self or tensor.node is None:
            return None
        return self.grads.get(tensor.node)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None and t.node is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands belong to different tapes")
            tape = t.tape
    return tape


def _apply(data, inputs, vjp):
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(data)
    return tape._record(data, inputs, vjp)


# ------------------------------------------------------------------ arithmetic


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias vector added to every row."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape or b.data.ndim == 0:
        out = a.data + b.data
        row_bias = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        out = a.data + b.data[None, :]
        row_bias = True
    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    scalar_b = b.data.ndim == 0 and a.data.ndim != 0

    def vjp(g, needs):
        gb = None
        if needs[1]:
            gb = g.sum(axis=0) if row_bias else (g.sum() if scalar_b else g)
        return g, gb

    return _apply(out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _apply(-a.data, (a,), lambda g, needs: (-g,))


def sub(a, b):
    return add(a, neg(b))


def scale(a, c):
    """Multiply by a Python / numpy scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _apply(a.data * c, (a,), lambda g, needs: (g * c,))


def mul(a, b):
    """Elementwise product of equal-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"elementwise product needs equal shapes, got {a.shape} and {b.shape}")

    def vjp(g, needs):
        return (g * b.data if needs[0] else None, g * a.data if needs[1] else None)

    return _apply(a.data * b.data, (a, b), vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g, needs):
        return (g @ b.data.T if needs[0] else None, a.data.T @ g if needs[1] else None)

    return _apply(a.data @ b.data, (a, b), vjp)


def transpose(a):
    a = as_tensor(a)
    return _apply(a.data.T.copy(), (a,), lambda g, needs: (g.T,))


def sum(a):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    return _apply(np.asarray(a.data.sum()), (a,), lambda g, needs: (np.full(shape, float(g)),))


def mean(a):
    a = as_tensor(a)
    return scale(sum(a), 1.0 / max(a.data.size, 1))


def row_dot(a, b):
    """Per-row inner products of two ``m x n`` tensors -> length-``m`` vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise DimensionError(f"row_dot needs equal 2-D shapes, got {a.shape} and {b.shape}")

    def vjp(g, needs):
        g = g[:, None]
        return (g * b.data if needs[0] else None, g * a.data if needs[1] else None)

    return _apply(np.einsum("ij,ij->i", a.data, b.data), (a, b), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _apply(out, (a,), lambda g, needs: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _apply(np.log(a.data), (a,), lambda g, needs: (g / a.data,))


def softplus(a):
    """log(1 + exp(x)) without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _apply(out, (a,), lambda g, needs: (g * sig,))


def silu(a):
    a = as_tensor(a)
    x = a.data
    sig = np.exp(-np.logaddexp(0.0, -x))
    out = x * sig
    return _apply(out, (a,), lambda g, needs: (g * (sig + x * sig * (1.0 - sig)),))


# ------------------------------------------------------------------ row-wise


def _check_finite(x, what):
    if np.isnan(x).any():
        raise NumericError(f"{what}: NaN in input")


def softmax_rows(x):
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {x.shape}")
    _check_finite(x.data, "softmax_rows")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g, needs):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _apply(out, (x,), vjp)


def log_softmax_rows(x):
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a matrix, got {x.shape}")
    _check_finite(x.data, "log_softmax_rows")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def vjp(g, needs):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _apply(out, (x,), vjp)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"layer_norm expects m x n with n >= 2, got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({x.shape[1]},), got {gain.shape}, {bias.shape}"
        )
    n = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g, needs):
        gx = None
        if needs[0]:
            gh = g * gain.data
            gx = inv / n * (n * gh - gh.sum(axis=1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=1, keepdims=True))
        gg = (g * xhat).sum(axis=0) if needs[1] else None
        gb = g.sum(axis=0) if needs[2] else None
        return gx, gg, gb

    return _apply(out, (x, gain, bias), vjp)


def l2_normalize_rows(x):
    """Scale every row to unit Euclidean norm; a zero row is an error."""
    x = as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    zero = np.flatnonzero(norms[:, 0] == 0.0)
    if zero.size:
        raise NumericError(f"cannot normalize zero-norm row {int(zero[0])}")
    out = x.data / norms

    def vjp(g, needs):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return _apply(out, (x,), vjp)


# ------------------------------------------------------------------ indexing


def gather_rows(table, ids):
    """Rows ``table[ids]``; the backward pass scatter-adds into the table."""
    from . import _kernels

    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise IndexError(f"row id {int(bad[0])} out of range for table with {n} rows")
    out = table.data[ids] if ids.size else np.zeros((0,) + table.shape[1:])

    def vjp(g, needs):
        return (_kernels.scatter_add_rows(n, ids, g.reshape(ids.size, -1)).reshape(table.shape),)

    return _apply(out, (table,), vjp)


def scatter_rows(grad, ids, n_rows):
    """Plain-array adjoint of :func:`gather_rows` (no tape)."""
    from . import _kernels

    return _kernels.scatter_add_rows(n_rows, np.asarray(ids, dtype=np.int64), grad)


def slice_cols(x, start, stop):
    x = as_tensor(x)
    shape = x.shape

    def vjp(g, needs):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _apply(x.data[:, start:stop].copy(), (x,), vjp)


def slice_rows(x, start, stop):
    x = as_tensor(x)
    shape = x.shape

    def vjp(g, needs):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _apply(x.data[start:stop].copy(), (x,), vjp)


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g, needs):
        return tuple(g[:, widths[k]:widths[k + 1]] for k in range(len(parts)))

    return _apply(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    heights = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g, needs):
        return tuple(g[heights[k]:heights[k + 1]] for k in range(len(parts)))

    return _apply(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def spmm(matrix, x):
    """Sparse-constant times dense tensor.  ``matrix`` is a :class:`~dgcl.sparse.CSRMatrix`."""
    x = as_tensor(x)
    out = matrix.matmul(x.data)
    cache = {}

    def vjp(g, needs):
        mt = cache.get("T")
        if mt is None:
            mt = cache["T"] = matrix.transpose()
        return (mt.matmul(g),)

    return _apply(out, (x,), vjp)


# ------------------------------------------------------------------ fused layers


def linear(x, w, b=None):
    """``x @ w + b`` as a single tape node."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is None:
        def vjp(g, needs):
            return (g @ w.data.T if needs[0] else None, x.data.T @ g if needs[1] else None)

        return _apply(out, (x, w), vjp)
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise DimensionError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
    out = out + b.data

    def vjp_b(g, needs):
        return (g @ w.data.T if needs[0] else None,
                x.data.T @ g if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)

    return _apply(out, (x, w, b), vjp_b)


def axpby(x, a, y, b):
    """``a * x + b * y`` for scalar constants ``a`` and ``b``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"axpby needs equal shapes, got {x.shape} and {y.shape}")
    a, b = float(a), float(b)
    return _apply(a * x.data + b * y.data, (x, y),
                  lambda g, needs: (g * a if needs[0] else None, g * b if needs[1] else None))


def multi_head_attention(q, k, v, heads):
    """Scaled dot-product attention over the rows of ``q, k, v`` (n x d),
    split into ``heads`` column blocks.  Returns the concatenated heads."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    n, d = q.shape
    if d % heads:
        raise DimensionError(f"width {d} is not divisible by {heads} heads")
    dk = d // heads
    c = 1.0 / np.sqrt(dk)

    def split(a):
        return a.reshape(n, heads, dk).transpose(1, 0, 2)

    Q, K, V = split(q.data), split(k.data), split(v.data)
    _check_finite(q.data, "attention")
    s = Q @ K.transpose(0, 2, 1) * c
    s -= s.max(axis=2, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=2, keepdims=True)
    out = (p @ V).transpose(1, 0, 2).reshape(n, d)

    def vjp(g, needs):
        dO = split(g)
        dP = dO @ V.transpose(0, 2, 1)
        dS = p * (dP - (dP * p).sum(axis=2, keepdims=True)) * c
        merge = lambda a: a.transpose(1, 0, 2).reshape(n, d)  # noqa: E731
        return (merge(dS @ K) if needs[0] else None,
                merge(dS.transpose(0, 2, 1) @ Q) if needs[1] else None,
                merge(p.transpose(0, 2, 1) @ dO) if needs[2] else None)

    return _apply(out, (q, k, v), vjp)


def film(x, gamma, eta):
    """Feature-wise modulation ``(gamma + 1) * x + eta``."""
    x, gamma, eta = as_tensor(x), as_tensor(gamma), as_tensor(eta)
    if not x.shape == gamma.shape == eta.shape:
        raise DimensionError(f"film shapes differ: {x.shape}, {gamma.shape}, {eta.shape}")
    scale_ = gamma.data + 1.0

    def vjp(g, needs):
        return (g * scale_ if needs[0] else None, g * x.data if needs[1] else None, g)

    return _apply(scale_ * x.data + eta.data, (x, gamma, eta), vjp)


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def init(self, params):
        for name, p in params.items():
            self.m[name] = np.zeros_like(p)
            self.v[name] = np.zeros_like(p)
        return self

    def copy(self):
        return AdamState(
            self.lr, self.beta1, self.beta2, self.eps, self.step,
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
        )


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied in place to ``params`` (name -> array).

    Every parameter needs an entry in ``grads``; pass zeros for parameters the
    loss did not touch.
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise ContractError(f"no gradient for parameter(s): {', '.join(sorted(missing))}")
    if not state.m:
        state.init(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or g.shape != p.shape:
            raise DimensionError(f"Adam state for {name!r} has shape {m.shape}, parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def watch_all(tape, params):
    """Watch every array of a name -> array mapping; returns name -> Tensor."""
    return {name: tape.watch(p) for name, p in params.items()}


def collect_grads(tape, tensors):
    """Gradient per watched tensor, zeros where the loss did not reach."""
    out = {}
    for name, t in tensors.items():
        g = tape.grad(t)
        out[name] = np.zeros_like(t.data) if g is None else g
    return out
