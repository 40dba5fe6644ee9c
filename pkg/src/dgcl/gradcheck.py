"""Central finite-difference gradient checks for tape-built functions."""

import numpy as np

from .ndtape import Tape


def numerical_gradient(f, arrays, step=1e-5):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array.

    ``f`` must accept plain numpy arrays and return a float; it is evaluated
    without any tape.
    """
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            args_hi = [a.copy() for a in arrays]
            args_lo = [a.copy() for a in arrays]
            args_hi[k][idx] += step
            args_lo[k][idx] -= step
            g[idx] = (float(f(*args_hi)) - float(f(*args_lo))) / (2.0 * step)
        grads.append(g)
    return grads


def analytic_gradient(f, arrays):
    tape = Tape()
    inputs = [tape.watch(a) for a in arrays]
    loss = f(*inputs)
    tape.backward(loss)
    return [tape.grad(t) if tape.grad(t) is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(a, b):
    """Norm-wise relative error ``|a-b| / (|a|+|b|)``, 0 when both vanish."""
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = np.linalg.norm(np.ravel(a)) + np.linalg.norm(np.ravel(b))
    return 0.0 if den == 0.0 else float(num / den)


def check_gradients(f, arrays, step=1e-5):
    """Max relative error between tape and finite-difference gradients.

    ``f`` receives Tensors and returns a scalar Tensor; the finite-difference
    side calls the same ``f`` on untracked Tensors.
    """
    from .ndtape import Tensor

    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    analytic = analytic_gradient(f, arrays)
    numeric = numerical_gradient(lambda *xs: f(*[Tensor(x) for x in xs]).item(), arrays, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
