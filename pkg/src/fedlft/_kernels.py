"""Compiled per-element SGD loops.

All loops accumulate the prediction over r = 0..R-1 in order and form each
gradient component with the same expression, so any two paths that visit the
same elements in the same order produce bit-identical factors.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


@_jit
def _residual(y, d, e, t):
    pred = 0.0
    for r in range(d.shape[0]):
        pred += d[r] * e[r] * t[r]
    return y - pred


@_jit
def _grad(err, a, b, own, lam):
    # d(eps)/d(own_r) for eps = err^2 + lam*|.|^2, with a, b the other two rows
    return 2.0 * (err * (-(a * b)) + lam * own)


@_jit
def client_pass(services, times, values, order, d, E, T, lr, lam, sequential, out_ge, out_gt, offset):
    """One pass of a client over its shard.

    ``d`` is updated in place; ``E`` and ``T`` are only read. The (grad_e,
    grad_t) pair for the p-th visited element lands in row ``offset + p``.
    """
    R = d.shape[0]
    gd = np.empty(R)
    for p in range(order.shape[0]):
        idx = order[p]
        j = services[idx]
        k = times[idx]
        e = E[j]
        t = T[k]
        err = _residual(values[idx], d, e, t)
        row = offset + p
        if sequential:
            for r in range(R):
                gd[r] = _grad(err, e[r], t[r], d[r], lam)
            for r in range(R):
                d[r] = d[r] - lr * gd[r]
            err = _residual(values[idx], d, e, t)
            for r in range(R):
                out_ge[row, r] = _grad(err, d[r], t[r], e[r], lam)
                out_gt[row, r] = _grad(err, d[r], e[r], t[r], lam)
        else:
            for r in range(R):
                gd[r] = _grad(err, e[r], t[r], d[r], lam)
                out_ge[row, r] = _grad(err, d[r], t[r], e[r], lam)
                out_gt[row, r] = _grad(err, d[r], e[r], t[r], lam)
            for r in range(R):
                d[r] = d[r] - lr * gd[r]


@_jit
def server_apply(services, times, grad_e, grad_t, E, T, lr):
    """Apply uploaded gradient records one at a time, in order."""
    R = E.shape[1]
    for p in range(services.shape[0]):
        j = services[p]
        k = times[p]
        for r in range(R):
            E[j, r] = E[j, r] - lr * grad_e[p, r]
        for r in range(R):
            T[k, r] = T[k, r] - lr * grad_t[p, r]


@_jit
def central_snapshot_pass(users, services, times, values, order, D, E_snap, T_snap, E, T,
                          lr, lam, sequential):
    """Centralized pass with gradients taken against a frozen (E, T).

    D and the live (E, T) are updated element by element.
    """
    R = D.shape[1]
    gd = np.empty(R)
    ge = np.empty(R)
    gt = np.empty(R)
    for p in range(order.shape[0]):
        idx = order[p]
        i = users[idx]
        j = services[idx]
        k = times[idx]
        d = D[i]
        e = E_snap[j]
        t = T_snap[k]
        err = _residual(values[idx], d, e, t)
        if sequential:
            for r in range(R):
                gd[r] = _grad(err, e[r], t[r], d[r], lam)
            for r in range(R):
                d[r] = d[r] - lr * gd[r]
            err = _residual(values[idx], d, e, t)
            for r in range(R):
                ge[r] = _grad(err, d[r], t[r], e[r], lam)
                gt[r] = _grad(err, d[r], e[r], t[r], lam)
        else:
            for r in range(R):
                gd[r] = _grad(err, e[r], t[r], d[r], lam)
                ge[r] = _grad(err, d[r], t[r], e[r], lam)
                gt[r] = _grad(err, d[r], e[r], t[r], lam)
            for r in range(R):
                d[r] = d[r] - lr * gd[r]
        for r in range(R):
            E[j, r] = E[j, r] - lr * ge[r]
        for r in range(R):
            T[k, r] = T[k, r] - lr * gt[r]


@_jit
def central_fresh_pass(users, services, times, values, order, D, E, T, lr, lam):
    """Classic SGD: all three rows updated immediately from the same residual."""
    R = D.shape[1]
    gd = np.empty(R)
    ge = np.empty(R)
    gt = np.empty(R)
    for p in range(order.shape[0]):
        idx = order[p]
        d = D[users[idx]]
        e = E[services[idx]]
        t = T[times[idx]]
        err = _residual(values[idx], d, e, t)
        for r in range(R):
            gd[r] = _grad(err, e[r], t[r], d[r], lam)
            ge[r] = _grad(err, d[r], t[r], e[r], lam)
            gt[r] = _grad(err, d[r], e[r], t[r], lam)
        for r in range(R):
            d[r] = d[r] - lr * gd[r]
            e[r] = e[r] - lr * ge[r]
            t[r] = t[r] - lr * gt[r]
