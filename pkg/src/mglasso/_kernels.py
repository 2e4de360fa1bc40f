"""Compiled FISTA iterations for the smoothed problem.

Fusion blocks are held in a length-``p`` layout: for the pair ``(i, j)``,
entry ``k`` is ``w (B[i, k] - B[j, k])`` for ``k`` outside ``{i, j}``, entry
``j`` is ``w (B[i, j] - B[j, i])`` and entry ``i`` is zero. Up to the
position of the zero this is the aligned difference, so norms and
gradients agree with the sparse operator used elsewhere.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def blocks_full(B, I, J, W, Z):
    nb = I.shape[0]
    p = B.shape[0]
    for b in range(nb):
        i = I[b]
        j = J[b]
        w = W[b]
        for k in range(p):
            Z[b, k] = w * (B[i, k] - B[j, k])
        Z[b, i] = 0.0
        Z[b, j] = w * (B[i, j] - B[j, i])


@njit(cache=True)
def _huber_sum(Z, mu):
    tot = 0.0
    for b in range(Z.shape[0]):
        s = 0.0
        for k in range(Z.shape[1]):
            s += Z[b, k] * Z[b, k]
        nz = np.sqrt(s)
        if nz >= mu:
            tot += nz - 0.5 * mu
        else:
            tot += s / (2.0 * mu)
    return tot


@njit(cache=True)
def _add_adjoint(G, Z, I, J, W, mu):
    nb = I.shape[0]
    p = G.shape[0]
    for b in range(nb):
        s = 0.0
        for k in range(p):
            s += Z[b, k] * Z[b, k]
        den = max(mu, np.sqrt(s))
        i = I[b]
        j = J[b]
        w = W[b] / den
        for k in range(p):
            if k != i and k != j:
                a = w * Z[b, k]
                G[i, k] += a
                G[j, k] -= a
        a = w * Z[b, j]
        G[i, j] += a
        G[j, i] -= a


@njit(cache=True)
def fista_chunk(S, I, J, W, mu, step, lam1, x, zx, y, zy, t, fx, hx, l1x,
                y_is_x, n_iter, trace):
    """Run up to ``n_iter`` FISTA iterations with monotone restart.

    Returns the updated state ``(x, zx, y, zy, t, fx, hx, l1x, y_is_x,
    n_trace, ok)``; ``trace`` receives the accepted objective values.
    """
    p = S.shape[0]
    thr = lam1 * step
    n_trace = 0
    z = np.empty_like(x)
    zz = np.empty_like(zx)
    for _ in range(n_iter):
        G = np.dot(y, S)
        for i in range(p):
            for k in range(p):
                G[i, k] -= S[i, k]
        _add_adjoint(G, zy, I, J, W, mu)
        l1z = 0.0
        for i in range(p):
            for k in range(p):
                if i == k:
                    z[i, k] = 0.0
                else:
                    v = y[i, k] - step * G[i, k]
                    if v > thr:
                        z[i, k] = v - thr
                    elif v < -thr:
                        z[i, k] = v + thr
                    else:
                        z[i, k] = 0.0
                    l1z += abs(z[i, k])
        blocks_full(z, I, J, W, zz)
        hz = _huber_sum(zz, mu)
        d = z - x
        dS = np.dot(d, S)
        delta = 0.0
        for i in range(p):
            delta -= dS[i, i]
            for k in range(p):
                delta += dS[i, k] * 0.5 * (z[i, k] + x[i, k])
        delta += lam1 * (l1z - l1x) + (hz - hx)
        if not np.isfinite(delta):
            return x, zx, y, zy, t, fx, hx, l1x, y_is_x, n_trace, False
        if delta > 0 and not y_is_x:
            y = x.copy()
            zy = zx.copy()
            t = 1.0
            y_is_x = True
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        c = (t - 1.0) / t_next
        y = z + c * d
        zy = zz + c * (zz - zx)
        x = z.copy()
        zx = zz.copy()
        hx = hz
        l1x = l1z
        t = t_next
        y_is_x = c == 0.0
        fx += delta
        trace[n_trace] = fx
        n_trace += 1
    return x, zx, y, zy, t, fx, hx, l1x, y_is_x, n_trace, True
