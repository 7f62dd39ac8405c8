"""The extended encoder-decoder model.

An encoder LSTM consumes the context; a linear head predicts an external
context vector from the final encoder state; the decoder LSTM receives, at
every step, the previous token embedding, the final encoder state, and an
external context vector, and projects its hidden state to vocabulary
logits.

Training minimizes, per example,

    total = L1 + lambda2 * L2 + lambda3 * L3

where L1 is the teacher-forced negative log-likelihood of the response plus
EOS, L2 the Euclidean distance between predicted and true external vectors,
and L3 = -min(H0, ln V) with H0 the mean per-token cross-entropy of a
second decoder pass that receives the zero external vector. L3 rewards
divergence of the zero-vector distribution and its cap stops the incentive
at the uniform-entropy level, where it contributes no gradient.

Three modes: "vanilla" (no external vector anywhere, decoder input width
E+H), "ext_ed" (all three losses), and "ext_ed_minus_L3" (lambda3 forced
to zero, no second decoder pass).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, InputError, NumericError
from .numeric import (
    LstmParams,
    RngState,
    glorot_init,
    lstm_cell_backward,
    lstm_cell_forward,
)
from .text import EOS, SOS

MODES = ("vanilla", "ext_ed", "ext_ed_minus_L3")
EC_FEEDS = ("predicted", "true")
EC_EVAL_MODES = ("predicted", "oracle", "zero")

PARAM_ORDER = (
    "embedding",
    "enc_w_x",
    "enc_w_h",
    "enc_b",
    "f_weight",
    "f_bias",
    "dec_w_x",
    "dec_w_h",
    "dec_b",
    "proj_w",
    "proj_b",
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 100
    hidden_dim: int = 128
    ec_dim: int = 100
    lambda2: float = 1.0
    lambda3: float = 1.0
    mode: str = "ext_ed"
    train_ec_feed: str = "predicted"
    eval_ec_mode: str = "predicted"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.train_ec_feed not in EC_FEEDS:
            raise ContractError(f"train_ec_feed must be one of {EC_FEEDS}")
        if self.eval_ec_mode not in EC_EVAL_MODES:
            raise ContractError(f"eval_ec_mode must be one of {EC_EVAL_MODES}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "ec_dim"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.vocab_size < 4:
            raise ContractError("vocab_size must cover the 4 reserved ids")
        if self.lambda2 < 0 or self.lambda3 < 0:
            raise ContractError("loss weights must be nonnegative")

    @property
    def decoder_input_dim(self) -> int:
        ec_slot = 0 if self.mode == "vanilla" else self.ec_dim
        return self.embed_dim + self.hidden_dim + ec_slot

    @property
    def lambda2_effective(self) -> float:
        return 0.0 if self.mode == "vanilla" else self.lambda2

    @property
    def lambda3_effective(self) -> float:
        return self.lambda3 if self.mode == "ext_ed" else 0.0

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "ec_dim": self.ec_dim,
            "lambda2": self.lambda2,
            "lambda3": self.lambda3,
            "mode": self.mode,
            "train_ec_feed": self.train_ec_feed,
            "eval_ec_mode": self.eval_ec_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ExtEdParams:
    """All trainable tensors. Checkpoint order is PARAM_ORDER."""

    embedding: np.ndarray  # (V, E)
    encoder: LstmParams  # input size E
    f_weight: np.ndarray  # (D_ec, H)
    f_bias: np.ndarray  # (D_ec, 1)
    decoder: LstmParams  # input size E + H (+ D_ec outside vanilla)
    proj_w: np.ndarray  # (V, H)
    proj_b: np.ndarray  # (V, 1)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("embedding", self.embedding),
            ("enc_w_x", self.encoder.w_x),
            ("enc_w_h", self.encoder.w_h),
            ("enc_b", self.encoder.b),
            ("f_weight", self.f_weight),
            ("f_bias", self.f_bias),
            ("dec_w_x", self.decoder.w_x),
            ("dec_w_h", self.decoder.w_h),
            ("dec_b", self.decoder.b),
            ("proj_w", self.proj_w),
            ("proj_b", self.proj_b),
        ]

    @classmethod
    def from_named(cls, tensors: dict) -> "ExtEdParams":
        return cls(
            embedding=tensors["embedding"],
            encoder=LstmParams(tensors["enc_w_x"], tensors["enc_w_h"], tensors["enc_b"]),
            f_weight=tensors["f_weight"],
            f_bias=tensors["f_bias"],
            decoder=LstmParams(tensors["dec_w_x"], tensors["dec_w_h"], tensors["dec_b"]),
            proj_w=tensors["proj_w"],
            proj_b=tensors["proj_b"],
        )

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_size

    @property
    def ec_dim(self) -> int:
        return self.f_weight.shape[0]

    @property
    def is_vanilla(self) -> bool:
        return self.decoder.input_size == self.embed_dim + self.hidden_dim

    def check_config(self, cfg: ModelConfig) -> None:
        expected = {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
        }
        for name, have in expected.items():
            if getattr(cfg, name) != have:
                raise DimensionError(
                    f"params have {name}={have}, config says {getattr(cfg, name)}"
                )
        if self.decoder.input_size != cfg.decoder_input_dim:
            raise DimensionError(
                f"decoder input width {self.decoder.input_size} does not match "
                f"mode {cfg.mode!r} (expected {cfg.decoder_input_dim})"
            )


def init_params(cfg: ModelConfig, rng: RngState) -> ExtEdParams:
    """Glorot-uniform weights, zero biases. Draw order is fixed (embedding,
    encoder weights, predictor, decoder weights, projection) so a seed fully
    determines the result."""
    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ec_dim
    embedding = glorot_init(rng, v, e)
    enc_w_x = glorot_init(rng, 4 * h, e)
    enc_w_h = glorot_init(rng, 4 * h, h)
    f_weight = glorot_init(rng, d, h)
    dec_w_x = glorot_init(rng, 4 * h, cfg.decoder_input_dim)
    dec_w_h = glorot_init(rng, 4 * h, h)
    proj_w = glorot_init(rng, v, h)
    return ExtEdParams(
        embedding=embedding,
        encoder=LstmParams(enc_w_x, enc_w_h, np.zeros((4 * h, 1))),
        f_weight=f_weight,
        f_bias=np.zeros((d, 1)),
        decoder=LstmParams(dec_w_x, dec_w_h, np.zeros((4 * h, 1))),
        proj_w=proj_w,
        proj_b=np.zeros((v, 1)),
    )


@dataclass
class Gradients:
    """d(total)/d(parameter) for every tensor, PARAM_ORDER layout."""

    tensors: dict

    @classmethod
    def zeros_like(cls, params: ExtEdParams) -> "Gradients":
        return cls({name: np.zeros_like(t) for name, t in params.named_tensors()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _embed(params: ExtEdParams, token_id: int) -> np.ndarray:
    return params.embedding[token_id].reshape(-1, 1)


def _check_ids(ids, vocab_size, what):
    if len(ids) == 0:
        raise InputError(f"empty {what}")
    for tid in ids:
        if not 0 <= tid < vocab_size:
            raise InputError(f"{what} id {tid} out of range for vocab {vocab_size}")


def encode(params: ExtEdParams, context_ids):
    """Run the encoder over the embedded context from the zero state.

    Returns (h_final, c_final, caches); caches pair each step's token id
    with its cell cache for BPTT.
    """
    _check_ids(context_ids, params.vocab_size, "context")
    h = np.zeros((params.hidden_dim, 1))
    c = np.zeros((params.hidden_dim, 1))
    caches = []
    for tid in context_ids:
        h, c, cache = lstm_cell_forward(_embed(params, tid), h, c, params.encoder)
        caches.append((tid, cache))
    return h, c, caches


def predict_external_context(params: ExtEdParams, h_final) -> np.ndarray:
    """Linear head: ec_hat = f_weight @ h_final + f_bias."""
    if h_final.shape != (params.hidden_dim, 1):
        raise DimensionError(
            f"h_final shape {h_final.shape}, expected ({params.hidden_dim}, 1)"
        )
    return kernels.matmul(params.f_weight, h_final) + params.f_bias


def decode_step(params: ExtEdParams, prev_id: int, dec_state, h_enc_final, ec):
    """One decoder step on input [embedding(prev); h_enc; ec].

    dec_state is an (h, c) tuple (zeros at the first step). In vanilla
    params ec must be None; otherwise it must be a (D_ec, 1) column. The
    external vector is re-supplied unchanged at every step.
    """
    if not 0 <= prev_id < params.vocab_size:
        raise InputError(f"prev_id {prev_id} out of range")
    if params.is_vanilla:
        if ec is not None:
            raise ContractError("external context supplied to a vanilla decoder")
        x = np.concatenate([_embed(params, prev_id), h_enc_final])
    else:
        if ec is None:
            raise ContractError("non-vanilla decoder requires an external context")
        if ec.shape != (params.ec_dim, 1):
            raise DimensionError(f"ec shape {ec.shape}, expected ({params.ec_dim}, 1)")
        x = np.concatenate([_embed(params, prev_id), h_enc_final, ec])
    h_prev, c_prev = dec_state
    h, c, cache = lstm_cell_forward(x, h_prev, c_prev, params.decoder)
    logits = kernels.matmul(params.proj_w, h) + params.proj_b
    return logits, (h, c), (prev_id, cache, h)


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    total: float
    tokens: int


@dataclass
class ForwardCaches:
    """Everything backward() needs; tied to the params that produced it."""

    params: ExtEdParams
    cfg: ModelConfig
    context_ids: list
    enc_caches: list
    h_enc: np.ndarray
    ec_hat: np.ndarray | None
    ec_true: np.ndarray | None
    ec_feed_predicted: bool
    targets: list
    prev_ids: list
    dec_caches: list
    dec_probs: list
    zero_caches: list = field(default_factory=list)
    zero_probs: list = field(default_factory=list)
    h0: float = 0.0
    cap_active: bool = True
    l2_diff: np.ndarray | None = None
    l2_value: float = 0.0


def _as_ec_column(ec, dim):
    if ec is None:
        return None
    values = getattr(ec, "values", ec)
    col = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    if col.shape != (dim, 1):
        raise DimensionError(f"external vector has dim {col.shape[0]}, expected {dim}")
    return col


def _teacher_forced_pass(params, prev_ids, targets, h_enc, ec, keep):
    """Decode with ground-truth prev tokens; returns (nll_sum, probs, caches)."""
    state = (np.zeros((params.hidden_dim, 1)), np.zeros((params.hidden_dim, 1)))
    nll = 0.0
    probs_list = []
    caches = []
    for prev_id, target in zip(prev_ids, targets):
        logits, state, cache = decode_step(params, prev_id, state, h_enc, ec)
        loss, probs = kernels.softmax_xent(logits, target)
        nll += float(loss)
        if keep:
            probs_list.append(probs)
            caches.append(cache)
    return nll, probs_list, caches


def forward_losses(params: ExtEdParams, context_ids, response_ids, ec_true, cfg: ModelConfig):
    """Compute the per-example loss breakdown and the caches for backward.

    The decoder is teacher-forced over the response plus EOS. Outside
    vanilla mode the decoder feed is the predicted vector (default) or the
    true one, per cfg.train_ec_feed; L2 is always the distance between the
    two, and in ext_ed mode a second pass with the zero vector yields L3.
    """
    params.check_config(cfg)
    _check_ids(response_ids, params.vocab_size, "response")
    h_enc, _, enc_caches = encode(params, context_ids)

    targets = list(response_ids) + [EOS]
    prev_ids = [SOS] + list(response_ids)

    ec_hat = None
    ec_true_col = None
    ec_feed = None
    if cfg.mode != "vanilla":
        if ec_true is None:
            raise InputError(f"mode {cfg.mode!r} requires a true external vector")
        ec_true_col = _as_ec_column(ec_true, cfg.ec_dim)
        ec_hat = predict_external_context(params, h_enc)
        ec_feed = ec_hat if cfg.train_ec_feed == "predicted" else ec_true_col

    l1, probs, dec_caches = _teacher_forced_pass(
        params, prev_ids, targets, h_enc, ec_feed, keep=True
    )

    caches = ForwardCaches(
        params=params,
        cfg=cfg,
        context_ids=list(context_ids),
        enc_caches=enc_caches,
        h_enc=h_enc,
        ec_hat=ec_hat,
        ec_true=ec_true_col,
        ec_feed_predicted=cfg.train_ec_feed == "predicted",
        targets=targets,
        prev_ids=prev_ids,
        dec_caches=dec_caches,
        dec_probs=probs,
    )

    l2 = 0.0
    l3 = 0.0
    if cfg.mode != "vanilla":
        diff = ec_hat - ec_true_col
        l2 = float(np.sqrt(np.sum(diff * diff)))
        caches.l2_diff = diff
        caches.l2_value = l2
    if cfg.mode == "ext_ed":
        nll0, probs0, caches0 = _teacher_forced_pass(
            params, prev_ids, targets, h_enc, np.zeros((cfg.ec_dim, 1)), keep=True
        )
        h0 = nll0 / len(targets)
        ln_v = math.log(cfg.vocab_size)
        cap_active = h0 >= ln_v
        l3 = -ln_v if cap_active else -h0
        caches.zero_caches = caches0
        caches.zero_probs = probs0
        caches.h0 = h0
        caches.cap_active = cap_active

    total = l1 + cfg.lambda2_effective * l2 + cfg.lambda3_effective * l3
    breakdown = LossBreakdown(l1, l2, l3, total, len(targets))
    return breakdown, caches


def _backprop_decoder(params, grads, dec_caches, dlogits_list, split_ec):
    """Reverse pass through one teacher-forced decode. Returns the summed
    gradient reaching the h_enc input slot and (optionally) the ec slot."""
    e, h = params.embed_dim, params.hidden_dim
    dh_next = np.zeros((h, 1))
    dc_next = np.zeros((h, 1))
    dh_enc = np.zeros((h, 1))
    d_ec = np.zeros((params.ec_dim, 1)) if split_ec else None
    for (prev_id, cache, h_dec), dlogits in zip(
        reversed(dec_caches), reversed(dlogits_list)
    ):
        grads.tensors["proj_w"] += kernels.outer(dlogits, h_dec)
        grads.tensors["proj_b"] += dlogits
        dh = kernels.matmul_tn(params.proj_w, dlogits) + dh_next
        dx, dh_next, dc_next, dp = lstm_cell_backward(cache, dh, dc_next)
        grads.tensors["dec_w_x"] += dp.w_x
        grads.tensors["dec_w_h"] += dp.w_h
        grads.tensors["dec_b"] += dp.b
        grads.tensors["embedding"][prev_id] += dx[:e, 0]
        dh_enc += dx[e : e + h]
        if split_ec:
            d_ec += dx[e + h :]
    return dh_enc, d_ec


def backward(params: ExtEdParams, caches: ForwardCaches, cfg: ModelConfig) -> Gradients:
    """Exact gradients of the total loss for every parameter tensor."""
    if caches.params is not params:
        raise ContractError("caches were produced by different parameters")
    if caches.cfg.mode != cfg.mode or caches.cfg.train_ec_feed != cfg.train_ec_feed:
        raise ContractError("caches were produced under a different config")

    grads = Gradients.zeros_like(params)
    vanilla = cfg.mode == "vanilla"

    # L1 decoder pass: d(nll)/d(logits) = probs - onehot per step
    dlogits = []
    for probs, target in zip(caches.dec_probs, caches.targets):
        d = probs.copy()
        d[target, 0] -= 1.0
        dlogits.append(d)
    dh_enc, d_ec_hat = _backprop_decoder(
        params, grads, caches.dec_caches, dlogits, split_ec=not vanilla
    )
    if not vanilla and not caches.ec_feed_predicted:
        d_ec_hat = np.zeros_like(d_ec_hat)  # stopped at the constant true vector

    # L3 zero-vector pass, only while the cap leaves an incentive
    lam3 = cfg.lambda3_effective
    if lam3 > 0.0 and not caches.cap_active:
        coeff = -lam3 / len(caches.targets)
        dlogits0 = []
        for probs, target in zip(caches.zero_probs, caches.targets):
            d = probs.copy()
            d[target, 0] -= 1.0
            dlogits0.append(coeff * d)
        dh_enc0, _ = _backprop_decoder(
            params, grads, caches.zero_caches, dlogits0, split_ec=True
        )
        dh_enc += dh_enc0  # the zero ec slot itself absorbs no gradient

    # L2 and the predictor head
    if not vanilla:
        if caches.l2_value > 0.0:
            d_ec_hat = d_ec_hat + (cfg.lambda2_effective / caches.l2_value) * caches.l2_diff
        grads.tensors["f_weight"] += kernels.outer(d_ec_hat, caches.h_enc)
        grads.tensors["f_bias"] += d_ec_hat
        dh_enc += kernels.matmul_tn(params.f_weight, d_ec_hat)

    # encoder BPTT
    dh_next = dh_enc
    dc_next = np.zeros_like(dh_enc)
    for tid, cache in reversed(caches.enc_caches):
        dx, dh_next, dc_next, dp = lstm_cell_backward(cache, dh_next, dc_next)
        grads.tensors["enc_w_x"] += dp.w_x
        grads.tensors["enc_w_h"] += dp.w_h
        grads.tensors["enc_b"] += dp.b
        grads.tensors["embedding"][tid] += dx[:, 0]
    return grads


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ExtEdParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t) for name, t in params.named_tensors()},
            v={name: np.zeros_like(t) for name, t in params.named_tensors()},
            t=0,
        )


def adam_step(params: ExtEdParams, grads: Gradients, state: AdamState, hyper: AdamHyper):
    """One bias-corrected Adam update over every tensor. Pure: returns new
    params and state, inputs untouched."""
    t = state.t + 1
    new_tensors = {}
    new_m = {}
    new_v = {}
    for name, tensor in params.named_tensors():
        g = grads.tensors[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        p2, m2, v2 = kernels.adam_update(
            tensor, g, state.m[name], state.v[name], t,
            hyper.lr, hyper.beta1, hyper.beta2, hyper.eps,
        )
        new_tensors[name] = p2
        new_m[name] = m2
        new_v[name] = v2
    return ExtEdParams.from_named(new_tensors), AdamState(new_m, new_v, t)


def resolve_eval_ec(params: ExtEdParams, h_enc, eval_ec_mode: str, ec_true):
    """The external vector a non-vanilla decoder sees at evaluation time."""
    if eval_ec_mode == "predicted":
        return predict_external_context(params, h_enc)
    if eval_ec_mode == "zero":
        return np.zeros((params.ec_dim, 1))
    if eval_ec_mode == "oracle":
        if ec_true is None:
            raise InputError("oracle evaluation requires a knowledge vector")
        return _as_ec_column(ec_true, params.ec_dim)
    raise ContractError(f"unknown eval_ec_mode {eval_ec_mode!r}")


def sequence_nll(params: ExtEdParams, context_ids, response_ids, ec_true, cfg: ModelConfig):
    """Teacher-forced (nll_sum, token_count) of response plus EOS, with the
    external vector chosen by cfg.eval_ec_mode."""
    params.check_config(cfg)
    _check_ids(response_ids, params.vocab_size, "response")
    h_enc, _, _ = encode(params, context_ids)
    ec = None
    if cfg.mode != "vanilla":
        ec = resolve_eval_ec(params, h_enc, cfg.eval_ec_mode, ec_true)
    targets = list(response_ids) + [EOS]
    prev_ids = [SOS] + list(response_ids)
    nll, _, _ = _teacher_forced_pass(params, prev_ids, targets, h_enc, ec, keep=False)
    return nll, len(targets)


def generate(params: ExtEdParams, context_ids, max_len: int, cfg: ModelConfig, ec_true=None):
    """Greedy decode from SOS; stops at EOS or max_len. Ties break to the
    lowest token id (argmax takes the first maximum)."""
    if max_len < 1:
        raise InputError(f"max_len must be at least 1, got {max_len}")
    params.check_config(cfg)
    h_enc, _, _ = encode(params, context_ids)
    ec = None
    if cfg.mode != "vanilla":
        ec = resolve_eval_ec(params, h_enc, cfg.eval_ec_mode, ec_true)
    state = (np.zeros((params.hidden_dim, 1)), np.zeros((params.hidden_dim, 1)))
    prev = SOS
    out = []
    for _ in range(max_len):
        logits, state, _ = decode_step(params, prev, state, h_enc, ec)
        nxt = int(np.argmax(logits[:, 0]))
        if nxt == EOS:
            break
        out.append(nxt)
        prev = nxt
    return out
