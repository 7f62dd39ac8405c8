"""Kernel backend benchmark: jitted vs pure-numpy.

Times every hot kernel on both backends at representative desk-scale shapes,
checks that the two agree numerically, and times one full training step
(forward + backward + Adam) on the active backend.

Run:  python -m exted.benchmark [--repeats N]
"""

import argparse
import sys
import time

import numpy as np

from .kernels import _numpy as knp

try:
    from .kernels import _numba as knb
except ImportError:
    knb = None


def _time(fn, repeats):
    fn()  # warm up (and trigger jit compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def _rel_dev(a, b):
    scale = np.maximum(np.abs(a), np.abs(b))
    mask = scale > 0
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a - b)[mask] / scale[mask]))


def kernel_cases(rng):
    h, e, d, v = 32, 24, 16, 300
    din = e + h + d
    x = rng.standard_normal((din, 1))
    h_prev = rng.standard_normal((h, 1))
    c_prev = rng.standard_normal((h, 1))
    w_x = rng.standard_normal((4 * h, din)) * 0.3
    w_h = rng.standard_normal((4 * h, h)) * 0.3
    b = rng.standard_normal((4 * h, 1)) * 0.3
    logits = rng.standard_normal((v, 1)) * 3
    p = rng.standard_normal((v, h))
    g = rng.standard_normal((v, h))
    m = np.zeros_like(p)
    vv = np.zeros_like(p)
    fwd = knp.lstm_forward(x, h_prev, c_prev, w_x, w_h, b)
    _, _, gi, gf, go, gg, tanh_c = fwd
    dh = rng.standard_normal((h, 1))
    dc = rng.standard_normal((h, 1))
    return [
        ("matmul 128x72 @ 72x1", lambda k: k.matmul(w_x, x)),
        ("matmul_tn (72x128).T-style", lambda k: k.matmul_tn(w_x, b)),
        ("outer 128x72", lambda k: k.outer(b, x)),
        ("lstm_forward H=32", lambda k: k.lstm_forward(x, h_prev, c_prev, w_x, w_h, b)),
        (
            "lstm_backward H=32",
            lambda k: k.lstm_backward(dh, dc, gi, gf, go, gg, c_prev, tanh_c, x, h_prev, w_x, w_h),
        ),
        ("softmax_xent V=300", lambda k: k.softmax_xent(logits, 7)),
        ("adam_update 300x32", lambda k: k.adam_update(p, g, m, vv, 3, 1e-3, 0.9, 0.999, 1e-8)),
    ]


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, call in kernel_cases(rng):
        t_np = _time(lambda: call(knp), repeats)
        if knb is None:
            rows.append((name, t_np, None, None, None))
            continue
        t_nb = _time(lambda: call(knb), repeats)
        out_np = call(knp)
        out_nb = call(knb)
        if not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        dev = max(
            _rel_dev(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
            for a, b in zip(out_np, out_nb)
        )
        rows.append((name, t_np, t_nb, t_np / t_nb, dev))
    return rows


def bench_training_step(repeats):
    from .model import (
        AdamHyper,
        AdamState,
        ModelConfig,
        adam_step,
        backward,
        forward_losses,
        init_params,
    )
    from .numeric import RngState

    cfg = ModelConfig(vocab_size=300, embed_dim=24, hidden_dim=32, ec_dim=16, mode="ext_ed")
    params = init_params(cfg, RngState(0))
    state = AdamState.zeros_like(params)
    hyper = AdamHyper()
    rng = np.random.default_rng(1)
    ctx = list(rng.integers(4, 300, size=6))
    resp = list(rng.integers(4, 300, size=4))
    ec = rng.standard_normal((16, 1))

    def step():
        _, caches = forward_losses(params, ctx, resp, ec, cfg)
        grads = backward(params, caches, cfg)
        adam_step(params, grads, state, hyper)

    return _time(step, repeats)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args(argv)

    print(f"numba available: {knb is not None}")
    print()
    print(f"{'kernel':34s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s} {'rel dev':>10s}")
    for name, t_np, t_nb, speedup, dev in bench_kernels(args.repeats):
        if t_nb is None:
            print(f"{name:34s} {t_np * 1e6:10.1f}us {'-':>12s} {'-':>9s} {'-':>10s}")
        else:
            print(
                f"{name:34s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us "
                f"{speedup:8.1f}x {dev:10.2e}"
            )
    print()
    from .kernels import BACKEND

    t_step = bench_training_step(max(10, args.repeats // 10))
    print(f"full train step (V=300 H=32, {BACKEND} backend): {t_step * 1e3:.2f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
