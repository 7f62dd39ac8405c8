"""Shared test utilities: independent scalar oracles and gradient comparators."""

import math

import numpy as np


def triple_loop_matmul(a, b):
    """Brute-force product, k innermost ascending; the bitwise reference."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[i, kk] * b[kk, j]
            out[i, j] = s
    return out


def scalar_lstm_forward(x, h_prev, c_prev, w_x, w_h, b):
    """Scalar-by-scalar LSTM step using math.* and the classic 1/(1+e^-z)
    sigmoid; independent of the package kernels."""
    hidden = h_prev.shape[0]
    e = x.shape[0]
    z = [0.0] * (4 * hidden)
    for r in range(4 * hidden):
        s = 0.0
        for k in range(e):
            s += w_x[r, k] * x[k, 0]
        for k in range(hidden):
            s += w_h[r, k] * h_prev[k, 0]
        z[r] = s + b[r, 0]
    h = np.zeros((hidden, 1))
    c = np.zeros((hidden, 1))
    for j in range(hidden):
        gi = 1.0 / (1.0 + math.exp(-z[j]))
        gf = 1.0 / (1.0 + math.exp(-z[hidden + j]))
        go = 1.0 / (1.0 + math.exp(-z[2 * hidden + j]))
        gg = math.tanh(z[3 * hidden + j])
        cj = gf * c_prev[j, 0] + gi * gg
        c[j, 0] = cj
        h[j, 0] = go * math.tanh(cj)
    return h, c


def max_rel_err(analytic, fd, floor=1e-7):
    """Worst relative disagreement, ignoring coordinates where both sides
    are below the finite-difference noise floor."""
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    diff = np.abs(analytic - fd)
    denom = np.maximum(np.abs(analytic), np.abs(fd))
    mask = diff > floor
    if not mask.any():
        return 0.0
    return float(np.max(diff[mask] / denom[mask]))


def assert_grad_close(analytic, fd, tol=1e-4, floor=1e-7):
    err = max_rel_err(analytic, fd, floor=floor)
    assert err < tol, f"gradient mismatch: max rel err {err:.3e} >= {tol}"
