"""Central finite-difference gradient oracle shared by the test suite.

Stays strictly independent of the tape: the numeric side re-evaluates the
forward function from fresh inputs, never reusing recorded graphs.
"""

import numpy as np

from textspot.autodiff import Tensor, backward


def numeric_grads(fn, arrays, h=1e-6):
    """Central differences of a scalar-valued fn(*arrays) at each element."""
    grads = []
    for i, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for j in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[i].reshape(-1)[j] += h
            hi = fn(*bumped)
            bumped[i].reshape(-1)[j] -= 2 * h
            lo = fn(*bumped)
            flat[j] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def check_grads(build, arrays, tol=1e-5, h=1e-6):
    """Assert tape gradients of build(*tensors) match central differences.

    ``build`` maps Tensors to a scalar Tensor. Relative error uses a unit
    floor so near-zero gradients are compared absolutely.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    assert loss.data.size == 1
    backward(loss)

    def scalar_fn(*arrs):
        return float(build(*[Tensor(a) for a in arrs]).data)

    numeric = numeric_grads(scalar_fn, arrays, h=h)
    for t, num in zip(tensors, numeric):
        ana = t.grad if t.grad is not None else np.zeros_like(num)
        denom = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(num)))
        rel = np.abs(ana - num) / denom
        assert rel.max() < tol, f"gradient mismatch: max rel err {rel.max():.3g} (tol {tol})"
