"""Compiled composed Stormer-Verlet for ``H = |p|^2/2 + sum K q^2/2 + sum (Dq)^4/4``."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _force(q, K, D, out):
    n = q.size
    for i in range(n):
        out[i] = -K[i] * q[i]
    for r in range(D.shape[0]):
        d = 0.0
        for i in range(n):
            d += D[r, i] * q[i]
        d3 = d * d * d
        for i in range(n):
            out[i] -= D[r, i] * d3


@njit(cache=True)
def composed_leapfrog(p0, q0, h, n_steps, gammas, K, D, every):
    """Run n_steps composed steps of size h; keep the state every ``every`` steps."""
    n = p0.size
    p = p0.copy()
    q = q0.copy()
    f = np.empty(n)
    _force(q, K, D, f)
    out = np.empty((n_steps // every + 1, 2 * n))
    out[0, :n] = p
    out[0, n:] = q
    k = 1
    for step in range(1, n_steps + 1):
        for g in gammas:
            dt = g * h
            for i in range(n):
                p[i] += 0.5 * dt * f[i]
                q[i] += dt * p[i]
            _force(q, K, D, f)
            for i in range(n):
                p[i] += 0.5 * dt * f[i]
        if step % every == 0:
            out[k, :n] = p
            out[k, n:] = q
            k += 1
    return out
