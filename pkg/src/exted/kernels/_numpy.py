"""Pure-numpy kernel implementations.

Fallback twin of ``_numba``: every function here has the same signature and
the same deterministic summation order (ascending over the contracted index)
as its jitted counterpart.  Reductions never go through BLAS or ``np.sum``
pairwise folding, so results are reproducible bit for bit across runs and
match a naive scalar triple loop exactly.  Sigmoids use the tanh form
``0.5 * (tanh(z / 2) + 1)`` which never overflows.
"""

import numpy as np

BACKEND_NAME = "numpy"


def matmul(a, b):
    """a @ b with left-to-right accumulation over the shared dimension."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk : kk + 1, :]
    return out


def matmul_tn(a, b):
    """a.T @ b, accumulated ascending over a's row index."""
    k, m = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for kk in range(k):
        out += a[kk : kk + 1, :].T * b[kk : kk + 1, :]
    return out


def outer(u, v):
    """u @ v.T for column vectors u (m,1), v (n,1); no reduction involved."""
    return u * v.T


def lstm_forward(x, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step. Gate block order in the 4H axis: input, forget, output,
    candidate. Returns (h, c, i, f, o, g, tanh_c)."""
    hidden = h_prev.shape[0]
    z = (matmul(w_x, x) + matmul(w_h, h_prev)) + b
    gi = 0.5 * (np.tanh(0.5 * z[:hidden]) + 1.0)
    gf = 0.5 * (np.tanh(0.5 * z[hidden : 2 * hidden]) + 1.0)
    go = 0.5 * (np.tanh(0.5 * z[2 * hidden : 3 * hidden]) + 1.0)
    gg = np.tanh(z[3 * hidden :])
    c = gf * c_prev + gi * gg
    tanh_c = np.tanh(c)
    h = go * tanh_c
    return h, c, gi, gf, go, gg, tanh_c


def lstm_backward(dh, dc_up, gi, gf, go, gg, c_prev, tanh_c, x, h_prev, w_x, w_h):
    """Exact cell gradients. Transcendental-free: gate values and tanh(c)
    come from the forward cache. Returns (dx, dh_prev, dc_prev, dw_x, dw_h, db)."""
    hidden = dh.shape[0]
    d_o = dh * tanh_c
    dc = dc_up + (dh * go) * (1.0 - tanh_c * tanh_c)
    d_i = dc * gg
    d_g = dc * gi
    d_f = dc * c_prev
    dc_prev = dc * gf
    dz = np.empty((4 * hidden, 1))
    dz[:hidden] = (d_i * gi) * (1.0 - gi)
    dz[hidden : 2 * hidden] = (d_f * gf) * (1.0 - gf)
    dz[2 * hidden : 3 * hidden] = (d_o * go) * (1.0 - go)
    dz[3 * hidden :] = d_g * (1.0 - gg * gg)
    dw_x = outer(dz, x)
    dw_h = outer(dz, h_prev)
    db = dz.copy()
    dx = matmul_tn(w_x, dz)
    dh_prev = matmul_tn(w_h, dz)
    return dx, dh_prev, dc_prev, dw_x, dw_h, db


def softmax_xent(logits, target):
    """Cross-entropy against a one-hot target, max-subtracted for stability.

    Returns (loss, probs); the loss gradient is probs minus the one-hot.
    """
    mx = float(np.max(logits))
    e = np.exp(logits - mx)
    s = float(np.sum(e))
    probs = e / s
    loss = (np.log(s) + mx) - logits[target, 0]
    return loss, probs


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step at step count t (1-based). Out of place."""
    m2 = beta1 * m + (1.0 - beta1) * g
    v2 = beta2 * v + (1.0 - beta2) * (g * g)
    m_hat = m2 / (1.0 - beta1**t)
    v_hat = v2 / (1.0 - beta2**t)
    p2 = p - lr * (m_hat / (np.sqrt(v_hat) + eps))
    return p2, m2, v2
