"""Central finite-difference gradient checking.

The oracle evaluates the forward function only; it never touches the
autodiff tape, so it stays an independent check of every adjoint.
"""

import numpy as np

from . import tensor as T


def numeric_grad(f, params, h=1e-5):
    """Central differences d f / d p for each tensor in `params` (dict name -> Tensor)."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            hi = float(f().data)
            flat[i] = old - h
            lo = float(f().data)
            flat[i] = old
            gflat[i] = (hi - lo) / (2.0 * h)
        grads[name] = g
    return grads


def analytic_grad(f, params):
    """Run one backward pass of scalar f() and collect grads for `params`."""
    for p in params.values():
        p.zero_grad()
    loss = f()
    T.backward(loss)
    return {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for name, p in params.items()}


def max_rel_err(analytic, numeric, floor=1e-8):
    """Largest relative error over entries where either gradient exceeds `floor`."""
    worst = 0.0
    for name in analytic:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        scale = np.maximum(np.abs(a), np.abs(n))
        mask = scale > floor
        if not mask.any():
            continue
        rel = np.abs(a - n)[mask] / scale[mask]
        worst = max(worst, float(rel.max()))
    return worst


def check(f, params, h=1e-5, floor=1e-8):
    """Compare analytic vs central-difference gradients; returns the max relative error."""
    ana = analytic_grad(f, params)
    num = numeric_grad(f, params, h=h)
    return max_rel_err(ana, num, floor=floor)
