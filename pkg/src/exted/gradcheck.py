"""Finite-difference verification of the full model gradients.

Builds small random instances (params, token sequences, true external
vector), computes analytic gradients via backward(), and compares every
tensor against the central-difference gradient of the total loss. Instances
are resampled away from the two kinks of the objective (the L3 cap and the
L2 norm at zero) so the comparison happens where the loss is smooth.
"""

from dataclasses import dataclass

import math
import numpy as np

from .errors import InputError
from .model import ExtEdParams, ModelConfig, backward, forward_losses
from .numeric import LstmParams, RngState, finite_diff_grad

KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class TensorCheck:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    mode: str
    seed: int
    checks: list
    passed: bool

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)


def _rel_err(analytic, fd, floor):
    diff = np.abs(analytic - fd)
    denom = np.maximum(np.abs(analytic), np.abs(fd))
    mask = diff > floor
    if not mask.any():
        return 0.0
    return float(np.max(diff[mask] / denom[mask]))


def _random_params(cfg: ModelConfig, np_rng, scale: float = 0.9) -> ExtEdParams:
    """Generic dense random parameters (glorot would pin H0 to ln V)."""

    def t(rows, cols):
        return np_rng.standard_normal((rows, cols)) * scale

    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ec_dim
    din = cfg.decoder_input_dim
    return ExtEdParams(
        embedding=t(v, e),
        encoder=LstmParams(t(4 * h, e), t(4 * h, h), t(4 * h, 1)),
        f_weight=t(d, h),
        f_bias=t(d, 1),
        decoder=LstmParams(t(4 * h, din), t(4 * h, h), t(4 * h, 1)),
        proj_w=t(v, h),
        proj_b=t(v, 1),
    )


def _random_instance(cfg, rng, n_pairs):
    """Params plus a tiny corpus sitting clear of both loss kinks."""
    np_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
    for _ in range(50):
        params = _random_params(cfg, np_rng)
        data = []
        for _ in range(n_pairs):
            ctx = list(np_rng.integers(4, cfg.vocab_size, size=np_rng.integers(2, 5)))
            resp = list(np_rng.integers(4, cfg.vocab_size, size=np_rng.integers(1, 4)))
            ec = np_rng.standard_normal((cfg.ec_dim, 1))
            data.append((ctx, resp, ec))
        clear = True
        for ctx, resp, ec in data:
            breakdown, caches = forward_losses(params, ctx, resp, ec, cfg)
            if cfg.mode == "ext_ed" and abs(caches.h0 - math.log(cfg.vocab_size)) < KINK_MARGIN:
                clear = False
            if cfg.mode != "vanilla" and breakdown.l2 < KINK_MARGIN:
                clear = False
        if clear:
            return params, data
    raise InputError("could not sample an instance away from the loss kinks")


def check_model_gradients(
    cfg: ModelConfig,
    seed: int,
    n_pairs: int = 2,
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-7,
) -> GradCheckReport:
    """Compare analytic and finite-difference gradients of the summed total
    loss over a small random corpus, tensor by tensor.

    A tensor passes when every coordinate agrees within `tol` relative
    error, coordinates below the finite-difference noise floor exempt.
    """
    rng = RngState(seed)
    params, data = _random_instance(cfg, rng, n_pairs)

    analytic = None
    for ctx, resp, ec in data:
        _, caches = forward_losses(params, ctx, resp, ec, cfg)
        grads = backward(params, caches, cfg)
        if analytic is None:
            analytic = grads
        else:
            for name in grads.tensors:
                analytic.tensors[name] += grads.tensors[name]

    names = [name for name, _ in params.named_tensors()]
    tensors = dict(params.named_tensors())

    def total_loss_with(name, tensor):
        trial = dict(tensors)
        trial[name] = tensor
        p = ExtEdParams.from_named(trial)
        return sum(
            forward_losses(p, ctx, resp, ec, cfg)[0].total for ctx, resp, ec in data
        )

    checks = []
    for name in names:
        fd = finite_diff_grad(lambda t, _n=name: total_loss_with(_n, t), tensors[name], eps)
        err = _rel_err(analytic.tensors[name], fd, floor)
        checks.append(TensorCheck(name, err, err < tol))
    return GradCheckReport(cfg.mode, seed, checks, all(c.passed for c in checks))


def run_gradcheck_suite(seed: int = 0, configs_per_mode: int = 4, tol: float = 1e-4):
    """Random small configs across all three modes; the acceptance gate for
    gradient fidelity. Returns (reports, all_passed)."""
    np_rng = np.random.default_rng(seed)
    reports = []
    for mode in ("vanilla", "ext_ed", "ext_ed_minus_L3"):
        for k in range(configs_per_mode):
            cfg = ModelConfig(
                vocab_size=int(np_rng.integers(6, 13)),
                embed_dim=int(np_rng.integers(2, 7)),
                hidden_dim=int(np_rng.integers(2, 9)),
                ec_dim=int(np_rng.integers(2, 6)),
                lambda2=float(np_rng.uniform(0.3, 1.5)),
                lambda3=float(np_rng.uniform(0.3, 1.5)),
                mode=mode,
                train_ec_feed="predicted" if k % 2 == 0 else "true",
            )
            reports.append(check_model_gradients(cfg, seed=int(np_rng.integers(0, 10_000)), tol=tol))
    return reports, all(r.passed for r in reports)
