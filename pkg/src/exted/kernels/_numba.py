"""Numba-jitted kernel implementations.

Hot inner loops of the package: dense products, the LSTM cell, softmax
cross-entropy and the Adam update. Signatures and accumulation order match
``_numpy`` exactly; no ``fastmath`` and no ``parallel`` so results stay
bit-reproducible run to run. Products accumulate ascending over the
contracted index, which keeps ``matmul`` bitwise equal to the numpy twin
(transcendentals may differ from numpy's in the last ulp, so the two
backends agree to ~1e-15 relative rather than bitwise through gates).
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[i, kk] * b[kk, j]
            out[i, j] = s
    return out


@njit(cache=True)
def matmul_tn(a, b):
    k, m = a.shape
    n = b.shape[1]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[kk, i] * b[kk, j]
            out[i, j] = s
    return out


@njit(cache=True)
def outer(u, v):
    m = u.shape[0]
    n = v.shape[0]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            out[i, j] = u[i, 0] * v[j, 0]
    return out


@njit(cache=True)
def lstm_forward(x, h_prev, c_prev, w_x, w_h, b):
    hidden = h_prev.shape[0]
    e = x.shape[0]
    z = np.empty((4 * hidden, 1))
    for r in range(4 * hidden):
        sx = 0.0
        for kk in range(e):
            sx += w_x[r, kk] * x[kk, 0]
        sh = 0.0
        for kk in range(hidden):
            sh += w_h[r, kk] * h_prev[kk, 0]
        z[r, 0] = (sx + sh) + b[r, 0]
    gi = np.empty((hidden, 1))
    gf = np.empty((hidden, 1))
    go = np.empty((hidden, 1))
    gg = np.empty((hidden, 1))
    c = np.empty((hidden, 1))
    tanh_c = np.empty((hidden, 1))
    h = np.empty((hidden, 1))
    for j in range(hidden):
        gi[j, 0] = 0.5 * (np.tanh(0.5 * z[j, 0]) + 1.0)
        gf[j, 0] = 0.5 * (np.tanh(0.5 * z[hidden + j, 0]) + 1.0)
        go[j, 0] = 0.5 * (np.tanh(0.5 * z[2 * hidden + j, 0]) + 1.0)
        gg[j, 0] = np.tanh(z[3 * hidden + j, 0])
        cj = gf[j, 0] * c_prev[j, 0] + gi[j, 0] * gg[j, 0]
        c[j, 0] = cj
        tcj = np.tanh(cj)
        tanh_c[j, 0] = tcj
        h[j, 0] = go[j, 0] * tcj
    return h, c, gi, gf, go, gg, tanh_c


@njit(cache=True)
def lstm_backward(dh, dc_up, gi, gf, go, gg, c_prev, tanh_c, x, h_prev, w_x, w_h):
    hidden = dh.shape[0]
    e = x.shape[0]
    dz = np.empty((4 * hidden, 1))
    dc_prev = np.empty((hidden, 1))
    for j in range(hidden):
        d_o = dh[j, 0] * tanh_c[j, 0]
        dc = dc_up[j, 0] + (dh[j, 0] * go[j, 0]) * (1.0 - tanh_c[j, 0] * tanh_c[j, 0])
        d_i = dc * gg[j, 0]
        d_g = dc * gi[j, 0]
        d_f = dc * c_prev[j, 0]
        dc_prev[j, 0] = dc * gf[j, 0]
        dz[j, 0] = (d_i * gi[j, 0]) * (1.0 - gi[j, 0])
        dz[hidden + j, 0] = (d_f * gf[j, 0]) * (1.0 - gf[j, 0])
        dz[2 * hidden + j, 0] = (d_o * go[j, 0]) * (1.0 - go[j, 0])
        dz[3 * hidden + j, 0] = d_g * (1.0 - gg[j, 0] * gg[j, 0])
    dw_x = np.empty((4 * hidden, e))
    dw_h = np.empty((4 * hidden, hidden))
    db = np.empty((4 * hidden, 1))
    for r in range(4 * hidden):
        for kk in range(e):
            dw_x[r, kk] = dz[r, 0] * x[kk, 0]
        for kk in range(hidden):
            dw_h[r, kk] = dz[r, 0] * h_prev[kk, 0]
        db[r, 0] = dz[r, 0]
    dx = np.empty((e, 1))
    for i in range(e):
        s = 0.0
        for kk in range(4 * hidden):
            s += w_x[kk, i] * dz[kk, 0]
        dx[i, 0] = s
    dh_prev = np.empty((hidden, 1))
    for i in range(hidden):
        s = 0.0
        for kk in range(4 * hidden):
            s += w_h[kk, i] * dz[kk, 0]
        dh_prev[i, 0] = s
    return dx, dh_prev, dc_prev, dw_x, dw_h, db


@njit(cache=True)
def softmax_xent(logits, target):
    n = logits.shape[0]
    mx = logits[0, 0]
    for r in range(1, n):
        if logits[r, 0] > mx:
            mx = logits[r, 0]
    e = np.empty((n, 1))
    s = 0.0
    for r in range(n):
        e[r, 0] = np.exp(logits[r, 0] - mx)
        s += e[r, 0]
    probs = e / s
    loss = (np.log(s) + mx) - logits[target, 0]
    return loss, probs


@njit(cache=True)
def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    rows, cols = p.shape
    m2 = np.empty((rows, cols))
    v2 = np.empty((rows, cols))
    p2 = np.empty((rows, cols))
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i in range(rows):
        for j in range(cols):
            gm = beta1 * m[i, j] + (1.0 - beta1) * g[i, j]
            gv = beta2 * v[i, j] + (1.0 - beta2) * (g[i, j] * g[i, j])
            m2[i, j] = gm
            v2[i, j] = gv
            m_hat = gm / bc1
            v_hat = gv / bc2
            p2[i, j] = p[i, j] - lr * (m_hat / (np.sqrt(v_hat) + eps))
    return p2, m2, v2
