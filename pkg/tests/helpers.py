"""Shared test utilities: finite-difference oracles and comparison helpers."""

import numpy as np


def numeric_grad(f, arr, h=1e-5, indices=None):
    """Central finite differences of the scalar function f() w.r.t. arr.

    f must read arr by reference (it is mutated in place and restored).
    With `indices`, only those flat positions are probed; the rest stay 0.
    """
    flat = arr.reshape(-1)
    out = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(arr.shape)


def rel_err(analytic, numeric, floor=1e-3):
    """Worst-case elementwise relative error with an absolute floor."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def fd_check(make_loss, params, h=1e-5, floor=1e-3, indices=None):
    """Compare analytic grads of make_loss() against central differences.

    make_loss() must rebuild the graph from the *current* parameter data and
    return (loss_tensor, [param_tensor, ...]). Returns worst relative error.
    """
    from ctdenoise import tensor as T

    loss, wrt = make_loss()
    grads = T.grad(loss, wrt)
    worst = 0.0
    for p, g in zip(wrt, grads):
        num = numeric_grad(lambda: float(make_loss()[0].data), p.data, h,
                           indices=indices)
        if indices is None:
            worst = max(worst, rel_err(g.data, num, floor))
        else:
            ga = g.data.reshape(-1)[list(indices)]
            na = num.reshape(-1)[list(indices)]
            worst = max(worst, rel_err(ga, na, floor))
    return worst
